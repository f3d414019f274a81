//! Probability of at least one upset across a parameter store.

use serde::Serialize;

use crate::error::{Error, Result};

/// Per-bit upset probability within one nanosecond for terrestrial
/// neutron exposure of SRAM.
pub const P_SINGLE_TERRESTRIAL: f64 = 1.33e-24;

/// Nanoseconds in a 30-day month.
pub const NS_PER_MONTH: f64 = 30.0 * 24.0 * 3600.0 * 1e9;

/// Above this expected-flip count the first-order approximation is flagged.
pub const APPROXIMATION_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeuExposure {
    /// Number of stored parameters `N`.
    pub parameters: f64,
    /// Bits per parameter `W`.
    pub width: f64,
    /// Device lifetime `T`, ns.
    pub lifetime_ns: f64,
    /// Test interval `t`, ns.
    pub interval_ns: f64,
    /// Per-bit, per-interval flip probability.
    pub p_single: f64,
}

impl SeuExposure {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("parameter count", self.parameters),
            ("bit width", self.width),
            ("lifetime", self.lifetime_ns),
            ("test interval", self.interval_ns),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidExposure(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.p_single > 0.0 && self.p_single < 1.0) {
            return Err(Error::InvalidExposure(format!(
                "per-bit flip probability must lie in (0, 1), got {}",
                self.p_single
            )));
        }
        Ok(())
    }

    /// Number of independent bit-intervals `N * W * T / t`.
    pub fn trials(&self) -> f64 {
        self.parameters * self.width * (self.lifetime_ns / self.interval_ns)
    }

    /// Expected flip count, which is also the first-order probability.
    pub fn expected_flips(&self) -> f64 {
        self.trials() * self.p_single
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbabilityMode {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeuProbability {
    pub mode: ProbabilityMode,
    pub value: f64,
    /// Set when `N * W * (T/t) * P_single` exceeds [`APPROXIMATION_LIMIT`],
    /// i.e. the linear approximation is no longer trustworthy.
    pub approximation_warning: bool,
}

/// `1 - (1 - p)^n` with `n = N * W * T / t`.
///
/// Exact mode evaluates `-expm1(n * ln_1p(-p))`, which stays accurate for
/// `p` far below machine epsilon, and clamps into `[0, 1]`. Approximate
/// mode returns `n * p` unclamped.
pub fn seu_flip_probability(exposure: &SeuExposure, mode: ProbabilityMode) -> Result<SeuProbability> {
    exposure.validate()?;
    let expected = exposure.expected_flips();
    let value = match mode {
        ProbabilityMode::Approximate => expected,
        ProbabilityMode::Exact => {
            let n = exposure.trials();
            if n == 1.0 {
                exposure.p_single
            } else {
                (-(n * (-exposure.p_single).ln_1p()).exp_m1()).clamp(0.0, 1.0)
            }
        }
    };
    Ok(SeuProbability {
        mode,
        value,
        approximation_warning: expected > APPROXIMATION_LIMIT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exposure(parameters: f64, width: f64, lifetime_ns: f64, interval_ns: f64, p_single: f64) -> SeuExposure {
        SeuExposure {
            parameters,
            width,
            lifetime_ns,
            interval_ns,
            p_single,
        }
    }

    #[test]
    fn single_trial_is_p_single() {
        for p in [0.5, 1.33e-24, 0.123] {
            let e = exposure(1.0, 1.0, 7.0, 7.0, p);
            assert_eq!(seu_flip_probability(&e, ProbabilityMode::Exact).unwrap().value, p);
            assert_eq!(seu_flip_probability(&e, ProbabilityMode::Approximate).unwrap().value, p);
        }
    }

    #[test]
    fn month_of_ten_million_parameters() {
        let e = exposure(1e7, 32.0, NS_PER_MONTH, 1.0, P_SINGLE_TERRESTRIAL);
        let approx = seu_flip_probability(&e, ProbabilityMode::Approximate).unwrap();
        let exact = seu_flip_probability(&e, ProbabilityMode::Exact).unwrap();
        assert!((approx.value - 1.1031).abs() < 1e-3, "{}", approx.value);
        assert!((exact.value - 0.6682).abs() < 1e-3, "{}", exact.value);
        assert!(approx.approximation_warning && exact.approximation_warning);
    }

    #[test]
    fn rejects_nonpositive_inputs() {
        assert!(seu_flip_probability(&exposure(0.0, 32.0, 1.0, 1.0, 0.1), ProbabilityMode::Exact).is_err());
        assert!(seu_flip_probability(&exposure(1.0, 32.0, 1.0, -1.0, 0.1), ProbabilityMode::Exact).is_err());
        assert!(seu_flip_probability(&exposure(1.0, 32.0, 1.0, 1.0, 1.0), ProbabilityMode::Exact).is_err());
        assert!(seu_flip_probability(&exposure(1.0, 32.0, 1.0, 1.0, 0.0), ProbabilityMode::Approximate).is_err());
    }
}
