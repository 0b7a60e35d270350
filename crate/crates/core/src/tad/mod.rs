//! Temperature accelerated dynamics: the original, modified and idealized
//! algorithms, plus direct and kinetic Monte Carlo reference simulations.
//! All of them produce a [`MetastablePath`].

mod exit_step;
mod path;
mod run;

pub use exit_step::{
    arrhenius_factors, check_barrier_bound, exit_step_idealized, exit_step_modified,
    exit_step_original, exit_step_with, guarantee_violations, replay_stop_rule, write_events_csv,
    ExitRecord, ExitStepResult, FirstExit, Replay, StartState,
};
pub use path::{MetastablePath, PathSegment, SegmentEnd};
pub use run::{
    kmc_rates_exact, kmc_rates_kramers, run_direct, run_direct_qsd_reentry, run_kmc, run_tad,
    run_tad_with, BasinModel, DirectRun, TadModel, TadRun,
};

use std::fmt;
use std::str::FromStr;

use crate::dynamics::SdeConfig;
use crate::error::{ensure, Error, Result};
use crate::qsd::arrhenius_factor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Original,
    Modified,
    Idealized,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Original, Variant::Modified, Variant::Idealized];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Modified => "modified",
            Variant::Idealized => "idealized",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown TAD variant `{s}` (expected original, modified or idealized)"
                ))
            })
    }
}

/// Whether the exit step honours its stop rule or keeps going until every
/// side has been observed (used to record full event logs for replay).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    Enabled,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TadConfig {
    pub beta_hi: f64,
    pub beta_lo: f64,
    /// Time step shared by both temperatures.
    pub dt: f64,
    /// Decorrelation time; `None` means `10 / gap` at `beta_lo` per basin.
    pub t_corr: Option<f64>,
    /// Relaxation time for rejection QSD sampling; `None` means `10 / gap`
    /// at `beta_hi` per basin.
    pub t_relax: Option<f64>,
    /// Prefactor lower bound for the original stop rule.
    pub nu_min: f64,
    /// Confidence parameter for the original stop rule.
    pub delta: f64,
    /// Barrier lower bound for the modified stop rule; `None` means the
    /// smallest barrier of the topology.
    pub e_min: Option<f64>,
    /// Low-temperature clock budget.
    #[serde(skip)]
    pub t_max: f64,
    /// Step limit for a single high-temperature exit attempt.
    pub max_steps: u64,
    /// Eigen-solver cells; `None` picks by beta.
    pub grid_n: Option<usize>,
    #[serde(skip)]
    pub seed: u64,
    #[serde(skip)]
    pub stream: u64,
}

impl Default for TadConfig {
    fn default() -> Self {
        Self {
            beta_hi: 4.0,
            beta_lo: 12.0,
            dt: 1e-3,
            t_corr: None,
            t_relax: None,
            nu_min: 1.0,
            delta: 0.01,
            e_min: None,
            t_max: 1e5,
            max_steps: 1_000_000_000,
            grid_n: None,
            seed: 0,
            stream: 0,
        }
    }
}

impl TadConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.beta_hi > 0.0 && self.beta_hi < self.beta_lo && self.beta_lo.is_finite(),
            "beta_hi",
            || {
                format!(
                    "need 0 < beta_hi < beta_lo, got beta_hi = {} and beta_lo = {}",
                    self.beta_hi, self.beta_lo
                )
            },
        )?;
        ensure(self.dt > 0.0 && self.dt.is_finite(), "dt", || {
            format!("{} must be positive", self.dt)
        })?;
        ensure(self.delta > 0.0 && self.delta < 1.0, "delta", || {
            format!("{} not in (0, 1)", self.delta)
        })?;
        ensure(
            self.nu_min > 0.0 && self.nu_min.is_finite(),
            "nu_min",
            || format!("{} must be positive", self.nu_min),
        )?;
        if let Some(e) = self.e_min {
            ensure(e > 0.0 && e.is_finite(), "e_min", || {
                format!("{e} must be positive")
            })?;
        }
        if let Some(t) = self.t_corr {
            ensure(t >= 0.0 && t.is_finite(), "t_corr", || {
                format!("{t} must be non-negative")
            })?;
        }
        if let Some(t) = self.t_relax {
            ensure(t >= 0.0 && t.is_finite(), "t_relax", || {
                format!("{t} must be non-negative")
            })?;
        }
        ensure(self.t_max >= 0.0 && !self.t_max.is_nan(), "t_max", || {
            format!("{} must be non-negative", self.t_max)
        })?;
        ensure(self.max_steps >= 1, "max_steps", || {
            "must be at least 1".into()
        })?;
        if let Some(n) = self.grid_n {
            ensure(n >= 200, "grid_n", || format!("{n} < 200"))?;
        }
        Ok(())
    }

    pub fn sde_hi(&self) -> SdeConfig {
        SdeConfig {
            beta: self.beta_hi,
            dt: self.dt,
            seed: self.seed,
            stream: self.stream,
        }
    }

    pub fn sde_lo(&self) -> SdeConfig {
        SdeConfig {
            beta: self.beta_lo,
            dt: self.dt,
            seed: self.seed,
            stream: self.stream,
        }
    }
}

/// `t_hi · exp(-(β_hi - β_lo) ΔV)`.
pub fn extrapolate_exit_time(t_hi: f64, barrier: f64, beta_hi: f64, beta_lo: f64) -> f64 {
    t_hi * arrhenius_factor(barrier, beta_hi, beta_lo)
}

/// `(log(1/δ)/ν_min) (ν_min T_min / log(1/δ))^{β_hi/β_lo}`; infinite while no
/// exit has been seen.
pub fn stop_time_original(
    t_min_lo: f64,
    nu_min: f64,
    delta: f64,
    beta_hi: f64,
    beta_lo: f64,
) -> f64 {
    if t_min_lo.is_infinite() {
        return f64::INFINITY;
    }
    let l = (1.0 / delta).ln();
    l / nu_min * (nu_min * t_min_lo / l).powf(beta_hi / beta_lo)
}

/// `T_min e^{(β_hi - β_lo) E_min}`.
pub fn stop_time_modified(t_min_lo: f64, e_min: f64, beta_hi: f64, beta_lo: f64) -> f64 {
    t_min_lo * ((beta_hi - beta_lo) * e_min).exp()
}

/// Stopping rule of an exit step as a function of the current `T_min^lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Confidence-based rule of original TAD.
    Original {
        nu_min: f64,
        delta: f64,
        beta_hi: f64,
        beta_lo: f64,
    },
    /// `T_stop = T_min / c` with `c` a lower bound on every extrapolation
    /// factor (modified and idealized TAD).
    Scaled { c: f64 },
}

impl StopRule {
    pub fn original(cfg: &TadConfig) -> Self {
        StopRule::Original {
            nu_min: cfg.nu_min,
            delta: cfg.delta,
            beta_hi: cfg.beta_hi,
            beta_lo: cfg.beta_lo,
        }
    }

    pub fn modified(e_min: f64, beta_hi: f64, beta_lo: f64) -> Self {
        StopRule::Scaled {
            c: arrhenius_factor(e_min, beta_hi, beta_lo),
        }
    }

    pub fn t_stop(&self, t_min_lo: f64) -> f64 {
        match *self {
            StopRule::Original {
                nu_min,
                delta,
                beta_hi,
                beta_lo,
            } => stop_time_original(t_min_lo, nu_min, delta, beta_hi, beta_lo),
            StopRule::Scaled { c } => t_min_lo / c,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extrapolation_examples() {
        assert!((extrapolate_exit_time(1.0, 1.0, 2.0, 6.0) - 54.598150033144236).abs() < 1e-12);
        assert_eq!(extrapolate_exit_time(3.5, 1.0, 4.0, 4.0), 3.5);
    }

    #[test]
    fn original_stop_examples() {
        let t = stop_time_original(100.0, 1.0, 0.01, 1.0, 3.0);
        assert!((t - 12.848).abs() < 1e-3, "{t}");
        assert_eq!(
            stop_time_original(f64::INFINITY, 1.0, 0.01, 1.0, 3.0),
            f64::INFINITY
        );
        assert!((stop_time_original(100.0, 1.0, 0.01, 3.0, 3.0) - 100.0).abs() < 1e-12);
        // Smaller delta, later stop.
        assert!(stop_time_original(100.0, 1.0, 1e-6, 1.0, 3.0) > t);
    }

    #[test]
    fn modified_stop_examples() {
        assert!((stop_time_modified(100.0, 1.0, 2.0, 6.0) - 1.8315638888734179).abs() < 1e-12);
        assert_eq!(stop_time_modified(7.0, 0.0, 2.0, 6.0), 7.0);
        let rule = StopRule::modified(1.0, 2.0, 6.0);
        assert!(
            (rule.t_stop(100.0) / stop_time_modified(100.0, 1.0, 2.0, 6.0) - 1.0).abs() < 1e-14
        );
    }

    #[test]
    fn config_validation() {
        assert!(TadConfig::default().validate().is_ok());
        assert!(TadConfig {
            beta_hi: 12.0,
            beta_lo: 4.0,
            ..TadConfig::default()
        }
        .validate()
        .is_err());
        assert!(TadConfig {
            delta: 1.0,
            ..TadConfig::default()
        }
        .validate()
        .is_err());
        assert!(TadConfig {
            e_min: Some(0.0),
            ..TadConfig::default()
        }
        .validate()
        .is_err());
        assert!(TadConfig {
            t_corr: Some(-1.0),
            ..TadConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!("modified".parse::<Variant>().unwrap(), Variant::Modified);
        assert!("direct".parse::<Variant>().is_err());
    }

    proptest! {
        #[test]
        fn extrapolation_is_linear(t in 1e-3f64..1e3, dv in 0.0f64..3.0, bh in 0.5f64..10.0, r in 1.0f64..4.0) {
            let bl = r * bh;
            let one = extrapolate_exit_time(t, dv, bh, bl);
            let two = extrapolate_exit_time(2.0 * t, dv, bh, bl);
            prop_assert!((two / one - 2.0).abs() < 1e-12);
            prop_assert!(one >= t);
        }

        #[test]
        fn original_stop_is_monotone(t in 1.0f64..1e4, dt in 1e-3f64..10.0, delta in 1e-6f64..0.5, bh in 0.5f64..10.0, r in 1.1f64..4.0) {
            let a = stop_time_original(t, 1.0, delta, bh, r * bh);
            let b = stop_time_original(t + dt, 1.0, delta, bh, r * bh);
            prop_assert!(b > a);
        }

        #[test]
        fn modified_guarantee(t_min in 1e-2f64..1e4, over in 1.0f64..100.0, e_min in 0.1f64..2.0, extra in 0.0f64..1.0, bh in 0.5f64..10.0, r in 1.1f64..4.0) {
            // An exit with barrier >= e_min seen after T_stop extrapolates to
            // at least T_min.
            let bl = r * bh;
            let t_stop = stop_time_modified(t_min, e_min, bh, bl);
            let t_hi = t_stop * over;
            prop_assert!(extrapolate_exit_time(t_hi, e_min + extra, bh, bl) >= t_min * (1.0 - 1e-12));
        }
    }
}
