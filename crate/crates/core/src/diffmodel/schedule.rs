use crate::error::{Error, Result};

/// Linear-β DDPM noise schedule over `1..=steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f32,
    beta_end: f32,
    betas: Vec<f32>,
    alpha_bars: Vec<f32>,
}

impl NoiseSchedule {
    /// Reference endpoints for a 1000-step schedule.
    pub const REFERENCE_BETA_START: f32 = 1e-4;
    pub const REFERENCE_BETA_END: f32 = 0.02;
    pub const REFERENCE_STEPS: usize = 1000;

    pub fn linear(steps: usize, beta_start: f32, beta_end: f32) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::InvalidArgument(format!(
                "beta range [{beta_start}, {beta_end}] must satisfy 0 < start <= end < 1"
            )));
        }
        let betas: Vec<f32> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    let frac = i as f64 / (steps - 1) as f64;
                    (beta_start as f64 + frac * (beta_end as f64 - beta_start as f64)) as f32
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0f64;
        for &b in &betas {
            acc *= 1.0 - b as f64;
            alpha_bars.push(acc as f32);
        }
        Ok(Self {
            beta_start,
            beta_end,
            betas,
            alpha_bars,
        })
    }

    /// The reference β range rescaled to `steps` so the total noise injected
    /// matches a 1000-step schedule.
    pub fn scaled(steps: usize) -> Result<Self> {
        let k = Self::REFERENCE_STEPS as f32 / steps as f32;
        Self::linear(
            steps,
            (Self::REFERENCE_BETA_START * k).min(0.5),
            (Self::REFERENCE_BETA_END * k).min(0.999),
        )
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_range(&self) -> (f32, f32) {
        (self.beta_start, self.beta_end)
    }

    /// `β_t` for `t` in `1..=steps`.
    pub fn beta(&self, t: usize) -> f32 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f32 {
        1.0 - self.betas[t - 1]
    }

    /// `ᾱ_t`; `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f32 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_bar_matches_prefix_product() {
        for s in [NoiseSchedule::linear(64, 1e-4, 0.02).unwrap(), NoiseSchedule::scaled(64).unwrap()] {
            for t in 1..=s.steps() {
                let brute: f64 = (1..=t).map(|i| 1.0 - s.beta(i) as f64).product();
                assert!((brute - s.alpha_bar(t) as f64).abs() < 1e-6, "t={t}");
            }
        }
    }

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::scaled(64).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=s.steps() {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            if t > 1 {
                assert!(s.beta(t) > s.beta(t - 1));
            }
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        // nearly pure noise at the last step
        assert!(s.alpha_bar(s.steps()) < 0.01);
    }

    #[test]
    fn reference_endpoints() {
        let s = NoiseSchedule::linear(64, 1e-4, 0.02).unwrap();
        assert!((s.beta(1) - 1e-4).abs() < 1e-9);
        assert!((s.beta(64) - 0.02).abs() < 1e-9);
    }

    #[test]
    fn bad_ranges_are_rejected() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::scaled(64).unwrap().check_step(65).is_err());
        assert!(NoiseSchedule::scaled(64).unwrap().check_step(0).is_err());
    }
}
