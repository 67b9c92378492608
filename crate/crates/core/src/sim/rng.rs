//! Deterministic random streams and the sampling-clock variates.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::time::Duration;

/// Counter-based generator. Each `(seed, stream)` pair yields an
/// independent, reproducible sequence.
#[derive(Clone, Debug)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SimRng { inner }
    }

    /// Stream for one component of one replica. Component ids must be < 2^32.
    pub fn for_component(seed: u64, replica: u32, component: u32) -> Self {
        Self::new(seed, (u64::from(replica) << 32) | u64::from(component))
    }

    /// Uniform variate on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        Open01.sample(&mut self.inner)
    }

    /// Uniform variate on [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        if n <= 1 {
            return 0;
        }
        self.inner.random_range(0..n)
    }

    /// Standard normal variate (Box-Muller on the open interval).
    pub fn std_normal(&mut self) -> f64 {
        let u1 = self.open01();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// `min(-mean * ln(u), max)`, floored to whole microseconds.
pub fn trunc_exp_from_uniform(u: f64, mean: Duration, max: Duration) -> Duration {
    let raw = -(mean.as_micros() as f64) * u.ln();
    let capped = raw.min(max.as_micros() as f64).max(0.0);
    Duration::from_micros(capped.floor() as u64)
}

/// Inter-arrival time of the truncated-exponential sampling clock.
pub fn sample_trunc_exp(rng: &mut SimRng, mean: Duration, max: Duration) -> Duration {
    trunc_exp_from_uniform(rng.open01(), mean, max)
}

/// Analytic mean of `min(X, max)` for `X ~ Exp(mean)`.
pub fn trunc_exp_mean(mean: Duration, max: Duration) -> f64 {
    let m = mean.as_micros() as f64;
    m * (1.0 - (-(max.as_micros() as f64) / m).exp())
}

/// Slot count `k >= 1` with `P(k) = (1-p)^(k-1) p`, by inversion of `u`.
pub fn geometric_from_uniform(u: f64, p: f64) -> u64 {
    if p >= 1.0 {
        return 1;
    }
    let k = (u.ln() / (1.0 - p).ln()).floor();
    if k.is_finite() && k >= 0.0 {
        k as u64 + 1
    } else {
        1
    }
}

/// Number of slots until the next Bernoulli sample.
pub fn sample_geometric_slots(rng: &mut SimRng, p: f64) -> u64 {
    geometric_from_uniform(rng.open01(), p)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MEAN: Duration = Duration::from_millis(10);
    const MAX: Duration = Duration::from_millis(30);

    #[test]
    fn trunc_exp_inverts_exactly() {
        let d = trunc_exp_from_uniform((-1.0f64).exp(), MEAN, MAX);
        assert_eq!(d, Duration::from_millis(10));
    }

    #[test]
    fn trunc_exp_truncates_at_max() {
        let d = trunc_exp_from_uniform((-5.0f64).exp(), MEAN, MAX);
        assert_eq!(d, Duration::from_millis(30));
    }

    #[test]
    fn geometric_p_one_is_always_one() {
        let mut rng = SimRng::new(7, 0);
        assert!((0..10_000).all(|_| sample_geometric_slots(&mut rng, 1.0) == 1));
    }

    #[test]
    fn geometric_inversion_boundaries() {
        // k = 1 iff u > q
        assert_eq!(geometric_from_uniform(0.95, 0.1), 1);
        assert_eq!(geometric_from_uniform(0.85, 0.1), 2);
        assert_eq!(geometric_from_uniform(0.9f64 * 0.9 - 1e-12, 0.1), 3);
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = SimRng::for_component(42, 0, 1);
        let mut b = SimRng::for_component(42, 0, 1);
        let mut c = SimRng::for_component(42, 1, 1);
        let xa: Vec<u64> = (0..8).map(|_| a.below(1 << 40)).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.below(1 << 40)).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.below(1 << 40)).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn open01_never_hits_endpoints() {
        let mut rng = SimRng::new(1, 2);
        for _ in 0..100_000 {
            let u = rng.open01();
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
