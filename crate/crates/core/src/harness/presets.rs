//! Built-in experiments. Each is a scenario file shipped with the crate,
//! optionally expanded over one parameter.

use super::scenario::Scenario;

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    files: &'static [(&'static str, &'static str)],
    expand: Expand,
}

enum Expand {
    None,
    Victims,
    Spin,
}

macro_rules! file {
    ($name:literal) => {
        ($name, include_str!(concat!("../../presets/", $name, ".scn")))
    };
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "fig3",
        description: "realistic attacker vs 0-5 victims, credit scheduler",
        files: &[file!("fig3")],
        expand: Expand::Victims,
    },
    Preset {
        name: "fig4",
        description: "work-loop attacker vs 0-5 victims, percent of baseline",
        files: &[file!("fig4")],
        expand: Expand::Victims,
    },
    Preset {
        name: "fig5",
        description: "ideal attacker, 9.8 ms run length, 5 victims",
        files: &[file!("fig5")],
        expand: Expand::None,
    },
    Preset {
        name: "fig5-sweep",
        description: "ideal attacker run length swept from 7.0 to 10.2 ms",
        files: &[file!("fig5")],
        expand: Expand::Spin,
    },
    Preset {
        name: "table1",
        description: "non-work-conserving mode with 33% caps",
        files: &[file!("table1")],
        expand: Expand::None,
    },
    Preset {
        name: "table2",
        description: "user-level attacker under all five schedulers",
        files: &[file!("table2")],
        expand: Expand::None,
    },
    Preset {
        name: "table2-kernel",
        description: "kernel-level attacker under all five schedulers",
        files: &[file!("table2-kernel")],
        expand: Expand::None,
    },
    Preset {
        name: "table3",
        description: "work-loop attacker under all five schedulers",
        files: &[file!("table3")],
        expand: Expand::None,
    },
    Preset {
        name: "table5-relative",
        description: "ping-pong round trips, same core and with a hog on the other core",
        files: &[file!("table5-config1"), file!("table5-config2"), file!("table5-contended")],
        expand: Expand::None,
    },
    Preset {
        name: "kernel-fig",
        description: "kernel-level attacker vs 0-5 victims",
        files: &[file!("kernel-fig")],
        expand: Expand::Victims,
    },
    Preset {
        name: "leak-bound",
        description: "grid-aware attacker under the slot-based samplers, 100 seeds",
        files: &[file!("leak-bound")],
        expand: Expand::None,
    },
];

impl Preset {
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for (name, text) in self.files {
            let base = Scenario::parse(text, &format!("{name}.scn")).expect("built-in preset parses");
            match self.expand {
                Expand::None => out.push(base),
                Expand::Victims => {
                    for n in 0..=5 {
                        let mut s = base.with_override("hogs", &n.to_string()).expect("valid override");
                        s.id = format!("{}-v{n}", base.id);
                        out.push(s);
                    }
                }
                Expand::Spin => {
                    for tenth in 70..=102 {
                        let spin = format!("{}.{}ms", tenth / 10, tenth % 10);
                        let mut s = base.with_override("vm.0.spin", &spin).expect("valid override");
                        s.id = format!("{}@spin={spin}", self.name);
                        out.push(s);
                    }
                }
            }
        }
        out
    }
}

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
