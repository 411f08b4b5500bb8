//! DDPM noise schedules and strided sampling plans.
//!
//! Timesteps are 1-based: `t = 1` is the least noisy step and `t = T` the
//! noisiest, matching the usual DDPM indexing. Products are accumulated in
//! `f64` before conversion.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Real;

/// Variance of the reverse-process noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReverseVariance {
    /// σ_t² = β̃_t = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t
    #[default]
    Posterior,
    /// σ_t² = β_t (t > 1)
    Beta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
    sigmas: Vec<T>,
    variance: ReverseVariance,
}

/// Coefficients of one reverse step `t → t_prev`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients<T> {
    pub t: usize,
    pub alpha: T,
    pub beta: T,
    pub alpha_bar: T,
    pub alpha_bar_prev: T,
    pub sigma: T,
}

impl<T: Real> NoiseSchedule<T> {
    /// Betas linearly spaced from `beta_start` to `beta_end` over `steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(CoreError::Config("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(CoreError::Config(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Ok(Self::from_betas_f64(&betas, ReverseVariance::Posterior))
    }

    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(CoreError::Config("betas must lie in (0, 1)".into()));
        }
        Ok(Self::from_betas_f64(betas, ReverseVariance::Posterior))
    }

    fn from_betas_f64(betas: &[f64], variance: ReverseVariance) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0f64;
        for b in betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        let sigmas: Vec<f64> = (0..betas.len())
            .map(|i| {
                if i == 0 {
                    0.0
                } else {
                    sigma_sq(variance, alpha_bars[i - 1], alpha_bars[i], betas[i]).sqrt()
                }
            })
            .collect();
        let cast = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        Self {
            alphas: betas.iter().map(|b| T::lit(1.0 - b)).collect(),
            betas: cast(betas),
            alpha_bars: cast(&alpha_bars),
            sigmas: cast(&sigmas),
            variance,
        }
    }

    pub fn with_variance(self, variance: ReverseVariance) -> Self {
        let betas: Vec<f64> = self.betas.iter().map(|b| b.as_f64()).collect();
        Self::from_betas_f64(&betas, variance)
    }

    pub fn variance(&self) -> ReverseVariance {
        self.variance
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.len() {
            Err(CoreError::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.len()
            )))
        } else {
            Ok(t - 1)
        }
    }

    pub fn beta(&self, t: usize) -> Result<T> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<T> {
        Ok(self.alphas[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<T> {
        Ok(self.alpha_bars[self.index(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<T> {
        Ok(self.sigmas[self.index(t)?])
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }

    /// Coefficients of the single reverse step `t → t − 1`.
    pub fn step(&self, t: usize) -> Result<StepCoefficients<T>> {
        let i = self.index(t)?;
        Ok(StepCoefficients {
            t,
            alpha: self.alphas[i],
            beta: self.betas[i],
            alpha_bar: self.alpha_bars[i],
            alpha_bar_prev: if i == 0 { T::one() } else { self.alpha_bars[i - 1] },
            sigma: self.sigmas[i],
        })
    }

    /// Uniformly strided plan with `steps` reverse steps, ordered from the
    /// noisiest timestep down to the smallest. Timesteps are
    /// `floor(k · T / steps)` for `k = 1..=steps`; effective α, β and σ are
    /// re-derived from the subsampled ᾱ sequence.
    pub fn strided(&self, steps: usize) -> Result<SamplingPlan<T>> {
        if steps == 0 || steps > self.len() {
            return Err(CoreError::Config(format!(
                "sampling steps must be in 1..={}, got {steps}",
                self.len()
            )));
        }
        let total = self.len();
        let timesteps: Vec<usize> = (1..=steps).map(|k| k * total / steps).collect();
        let mut plan = Vec::with_capacity(steps);
        let mut prev_t = 0usize;
        for &t in &timesteps {
            let coeffs = if t == prev_t + 1 {
                self.step(t)?
            } else {
                let ab = self.alpha_bars[t - 1].as_f64();
                let ab_prev = if prev_t == 0 {
                    1.0
                } else {
                    self.alpha_bars[prev_t - 1].as_f64()
                };
                let alpha = ab / ab_prev;
                let beta = 1.0 - alpha;
                let sigma = if prev_t == 0 {
                    0.0
                } else {
                    sigma_sq(self.variance, ab_prev, ab, beta).sqrt()
                };
                StepCoefficients {
                    t,
                    alpha: T::lit(alpha),
                    beta: T::lit(beta),
                    alpha_bar: T::lit(ab),
                    alpha_bar_prev: T::lit(ab_prev),
                    sigma: T::lit(sigma),
                }
            };
            plan.push(coeffs);
            prev_t = t;
        }
        plan.reverse();
        Ok(SamplingPlan { steps: plan })
    }
}

fn sigma_sq(variance: ReverseVariance, ab_prev: f64, ab: f64, beta: f64) -> f64 {
    match variance {
        ReverseVariance::Posterior => (1.0 - ab_prev) / (1.0 - ab) * beta,
        ReverseVariance::Beta => beta,
    }
}

/// Ordered reverse steps, noisiest first.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan<T> {
    pub steps: Vec<StepCoefficients<T>>,
}

impl<T> SamplingPlan<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let s = NoiseSchedule::<f64>::linear(1, 0.1, 0.1).unwrap();
        assert!((s.alpha_bar(1).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(s.sigma(1).unwrap(), 0.0);
    }

    #[test]
    fn two_step_product() {
        let s = NoiseSchedule::<f64>::linear(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(2).unwrap() - 0.72).abs() < 1e-15);
        // β̃_2 = (1 − 0.9) / (1 − 0.72) · 0.2
        let expected = (0.1f64 / 0.28 * 0.2).sqrt();
        assert!((s.sigma(2).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn thousand_step_alpha_bar() {
        // Frozen from a 50-digit mpmath product of (1 - beta_i).
        let oracle = 4.035_829_765_375_683e-5;
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02).unwrap();
        let got = s.alpha_bar(1000).unwrap();
        assert!((got - oracle).abs() / oracle < 1e-10, "{got}");
        let s32 = NoiseSchedule::<f32>::linear(1000, 1e-4, 0.02).unwrap();
        assert!((s32.alpha_bar(1000).unwrap() as f64 - oracle).abs() / oracle < 1e-5);
    }

    #[test]
    fn invalid_ranges() {
        assert!(NoiseSchedule::<f64>::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.1, 1.0).is_err());
        let s = NoiseSchedule::<f64>::linear(10, 0.1, 0.2).unwrap();
        assert!(s.step(0).is_err());
        assert!(s.step(11).is_err());
    }

    #[test]
    fn schedule_invariants() {
        for variance in [ReverseVariance::Posterior, ReverseVariance::Beta] {
            let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02)
                .unwrap()
                .with_variance(variance);
            for t in 2..=1000 {
                assert!(s.alpha_bar(t).unwrap() < s.alpha_bar(t - 1).unwrap());
                assert!(s.sigma(t).unwrap() <= s.beta(t).unwrap().sqrt() + 1e-15);
            }
            assert_eq!(s.sigma(1).unwrap(), 0.0);
        }
    }

    #[test]
    fn strided_full_matches_schedule() {
        let s = NoiseSchedule::<f64>::linear(20, 1e-3, 0.05).unwrap();
        let plan = s.strided(20).unwrap();
        assert_eq!(plan.len(), 20);
        for (k, step) in plan.steps.iter().enumerate() {
            assert_eq!(*step, s.step(20 - k).unwrap());
        }
    }

    #[test]
    fn strided_fifty_of_thousand() {
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02).unwrap();
        let plan = s.strided(50).unwrap();
        let ts: Vec<usize> = plan.steps.iter().map(|c| c.t).collect();
        assert_eq!(ts[0], 1000);
        assert_eq!(*ts.last().unwrap(), 20);
        assert!(ts.windows(2).all(|w| w[0] - w[1] == 20));
        let last = plan.steps.last().unwrap();
        assert_eq!(last.sigma, 0.0);
        assert_eq!(last.alpha_bar_prev, 1.0);
        for c in &plan.steps {
            assert!((c.alpha_bar / c.alpha_bar_prev - c.alpha).abs() < 1e-12);
            assert!(c.sigma * c.sigma <= c.beta + 1e-15);
        }
    }
}
