use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::exit_step::{
    arrhenius_factors, check_barrier_bound, exit_step_with, ExitStepResult, StartState,
};
use super::path::{MetastablePath, PathBuilder, SegmentEnd};
use super::{StopMode, StopRule, TadConfig, Variant};
use crate::dynamics::{evolve_for, Evolution, QsdSampler, SdeConfig, Side};
use crate::error::{ensure, Error, Result};
use crate::potential::{assign_basin, Basin, BasinTopology, Potential};
use crate::qsd::{
    default_grid_n, exit_statistics, kramers_exit_rate, solve_principal_eigenpair, ThetaTable,
};

#[derive(Debug, Clone)]
pub struct DirectRun {
    pub path: MetastablePath,
    pub sde_steps: u64,
}

/// Brute-force simulation at `cfg.beta`, labelling every step. Outer walls
/// are absorbing.
pub fn run_direct(
    pot: &Potential,
    top: &BasinTopology,
    x_init: f64,
    t_max: f64,
    cfg: &SdeConfig,
    rng: &mut impl Rng,
) -> Result<DirectRun> {
    direct(pot, top, None, x_init, t_max, cfg, rng)
}

/// Validation variant of [`run_direct`]: the state is redrawn from the QSD
/// of every basin it enters (and of the first one), so each sojourn is an
/// exact QSD-started exit.
pub fn run_direct_qsd_reentry(
    pot: &Potential,
    top: &BasinTopology,
    samplers: &[QsdSampler],
    x_init: f64,
    t_max: f64,
    cfg: &SdeConfig,
    rng: &mut impl Rng,
) -> Result<DirectRun> {
    ensure(samplers.len() == top.len(), "samplers", || {
        format!("need {} samplers, got {}", top.len(), samplers.len())
    })?;
    direct(pot, top, Some(samplers), x_init, t_max, cfg, rng)
}

fn direct(
    pot: &Potential,
    top: &BasinTopology,
    samplers: Option<&[QsdSampler]>,
    x_init: f64,
    t_max: f64,
    cfg: &SdeConfig,
    rng: &mut impl Rng,
) -> Result<DirectRun> {
    cfg.validate()?;
    ensure(t_max >= 0.0, "t_max", || format!("{t_max} is negative"))?;
    let mut label = assign_basin(top, x_init)?;
    let mut path = PathBuilder::new(label);
    let mut x = match samplers {
        Some(s) => s[label].sample(rng),
        None => x_init,
    };
    let mut remaining = cfg.steps_for(t_max);
    let mut steps = 0u64;
    while remaining > 0 {
        let basin = &top.basins()[label];
        match evolve_for(x, basin, pot, cfg, rng, remaining)? {
            Evolution::Exited(e) => {
                steps += e.steps;
                remaining -= e.steps;
                path.stay(e.time);
                match path.leave(top, e.side) {
                    Some(next) => {
                        label = next;
                        x = match samplers {
                            Some(s) => s[label].sample(rng),
                            None => e.position,
                        };
                    }
                    None => {
                        return Ok(DirectRun {
                            path: path.finish(SegmentEnd::Horizon),
                            sde_steps: steps,
                        })
                    }
                }
            }
            Evolution::Survived { steps: s, .. } => {
                steps += s;
                remaining = 0;
                path.stay(s as f64 * cfg.dt);
            }
        }
    }
    Ok(DirectRun {
        path: path.finish(SegmentEnd::Horizon),
        sde_steps: steps,
    })
}

/// Kinetic Monte Carlo over the basins with per-side rates `rates[label]`
/// (`[left, right]`). A zero rate disables that side.
pub fn run_kmc(
    top: &BasinTopology,
    rates: &[[f64; 2]],
    t_max: f64,
    rng: &mut impl Rng,
    start_basin: usize,
) -> Result<MetastablePath> {
    ensure(rates.len() == top.len(), "rates", || {
        format!("need {} rate pairs, got {}", top.len(), rates.len())
    })?;
    ensure(start_basin < top.len(), "start_basin", || {
        format!("{start_basin} out of range")
    })?;
    for (k, r) in rates.iter().enumerate() {
        ensure(
            r.iter().all(|&x| x >= 0.0 && x.is_finite()) && r[0] + r[1] > 0.0,
            "rates",
            || format!("basin {k}: rates {r:?} must be non-negative with a positive sum"),
        )?;
    }
    let mut path = PathBuilder::new(start_basin);
    let mut clock = 0.0;
    loop {
        let r = rates[path.label()];
        let draw = |rate: f64, rng: &mut _| {
            if rate > 0.0 {
                Exp::new(rate).expect("positive rate").sample(rng)
            } else {
                f64::INFINITY
            }
        };
        let tl: f64 = draw(r[0], rng);
        let tr: f64 = draw(r[1], rng);
        let (t, side) = if tl < tr {
            (tl, Side::Left)
        } else {
            (tr, Side::Right)
        };
        if clock + t >= t_max {
            path.stay(t_max - clock);
            return Ok(path.finish(SegmentEnd::Horizon));
        }
        clock += t;
        path.stay(t);
        if path.leave(top, side).is_none() {
            return Ok(path.finish(SegmentEnd::Horizon));
        }
    }
}

/// Exact rates `λ p_i` per basin and side from the eigen solver.
pub fn kmc_rates_exact(
    pot: &Potential,
    top: &BasinTopology,
    beta: f64,
    n: Option<usize>,
) -> Result<Vec<[f64; 2]>> {
    top.basins()
        .iter()
        .map(|b| {
            let s = exit_statistics(&solve_principal_eigenpair(
                pot,
                b,
                beta,
                n.unwrap_or_else(|| default_grid_n(beta)),
            )?)?;
            Ok([s.rate(Side::Left), s.rate(Side::Right)])
        })
        .collect()
}

/// Harmonic saddle-hitting rates per basin and side.
pub fn kmc_rates_kramers(top: &BasinTopology, beta: f64) -> Result<Vec<[f64; 2]>> {
    top.basins()
        .iter()
        .map(|b| {
            Ok([
                kramers_exit_rate(b, Side::Left, beta)?,
                kramers_exit_rate(b, Side::Right, beta)?,
            ])
        })
        .collect()
}

/// Per-basin quantities a TAD run needs.
#[derive(Debug, Clone)]
pub struct BasinModel {
    pub basin: Basin,
    pub t_corr: f64,
    pub t_relax: f64,
    /// High-to-low extrapolation factor per side.
    pub factors: [f64; 2],
    pub rule: StopRule,
    pub sampler_hi: Option<QsdSampler>,
    pub theta: Option<ThetaTable>,
}

#[derive(Debug, Clone)]
pub struct TadModel {
    pub variant: Variant,
    pub cfg: TadConfig,
    pub basins: Vec<BasinModel>,
}

impl TadModel {
    /// Validates the configuration against the topology and precomputes
    /// what the variant needs (eigenpairs only where required).
    pub fn build(
        variant: Variant,
        pot: &Potential,
        top: &BasinTopology,
        cfg: &TadConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let e_min = cfg.e_min.unwrap_or_else(|| {
            top.basins()
                .iter()
                .map(Basin::min_barrier)
                .fold(f64::INFINITY, f64::min)
        });
        if variant == Variant::Modified {
            for b in top.basins() {
                check_barrier_bound(b, e_min)?;
            }
        }
        let n_hi = cfg.grid_n.unwrap_or_else(|| default_grid_n(cfg.beta_hi));
        let n_lo = cfg.grid_n.unwrap_or_else(|| default_grid_n(cfg.beta_lo));
        let basins = top
            .basins()
            .iter()
            .map(|b| {
                let need_lo = variant == Variant::Idealized
                    || (variant == Variant::Modified && cfg.t_corr.is_none());
                let need_hi = variant == Variant::Idealized
                    || (variant == Variant::Modified && cfg.t_relax.is_none());
                let eig_lo = if need_lo {
                    Some(solve_principal_eigenpair(pot, b, cfg.beta_lo, n_lo)?)
                } else {
                    None
                };
                let eig_hi = if need_hi {
                    Some(solve_principal_eigenpair(pot, b, cfg.beta_hi, n_hi)?)
                } else {
                    None
                };
                let t_corr = cfg
                    .t_corr
                    .or(eig_lo.as_ref().map(|e| e.relaxation_time()))
                    .unwrap_or(0.0);
                let t_relax = cfg
                    .t_relax
                    .or(eig_hi.as_ref().map(|e| e.relaxation_time()))
                    .unwrap_or(0.0);
                let (factors, rule, sampler_hi, theta) = match variant {
                    Variant::Original => (
                        arrhenius_factors(b, cfg),
                        StopRule::original(cfg),
                        None,
                        None,
                    ),
                    Variant::Modified => (
                        arrhenius_factors(b, cfg),
                        StopRule::modified(e_min, cfg.beta_hi, cfg.beta_lo),
                        None,
                        None,
                    ),
                    Variant::Idealized => {
                        let (hi, lo) = (
                            eig_hi.as_ref().expect("solved"),
                            eig_lo.as_ref().expect("solved"),
                        );
                        let theta = ThetaTable::from_statistics(
                            b,
                            exit_statistics(hi)?,
                            exit_statistics(lo)?,
                        );
                        let factors = Side::BOTH.map(|s| theta.theta(s));
                        let rule = StopRule::Scaled {
                            c: theta.min_theta(),
                        };
                        (factors, rule, Some(QsdSampler::new(hi)?), Some(theta))
                    }
                };
                Ok(BasinModel {
                    basin: *b,
                    t_corr,
                    t_relax,
                    factors,
                    rule,
                    sampler_hi,
                    theta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            variant,
            cfg: *cfg,
            basins,
        })
    }

    /// Runs one exit step in basin `label`; `x` is the current
    /// high-temperature state (only used by the original variant).
    pub fn exit_step(
        &self,
        label: usize,
        pot: &Potential,
        x: f64,
        mode: StopMode,
        rng: &mut impl Rng,
    ) -> Result<ExitStepResult> {
        let m = &self.basins[label];
        let start = match self.variant {
            Variant::Original => StartState::Continue { x },
            Variant::Modified => StartState::Rejection { t_relax: m.t_relax },
            Variant::Idealized => {
                StartState::Qsd(m.sampler_hi.as_ref().expect("idealized model has samplers"))
            }
        };
        exit_step_with(
            &m.basin, pot, &self.cfg, m.factors, m.rule, start, mode, rng,
        )
    }
}

#[derive(Debug, Clone)]
pub struct TadRun {
    pub path: MetastablePath,
    pub exit_steps: Vec<ExitStepResult>,
    pub sde_steps_hi: u64,
    pub sde_steps_lo: u64,
    /// Low-temperature clock at the end of the run.
    pub t_tad: f64,
    /// Set when a high-temperature search timed out and the path is partial.
    pub timeout: Option<Error>,
}

impl TadRun {
    pub fn sde_steps(&self) -> u64 {
        self.sde_steps_hi + self.sde_steps_lo
    }

    /// Steps a direct simulation would need to cover `t_tad`, over the steps
    /// actually used.
    pub fn boost(&self, dt: f64) -> f64 {
        (self.t_tad / dt) / self.sde_steps().max(1) as f64
    }
}

/// Builds the model and runs the variant from `x_init` until the
/// low-temperature clock reaches `cfg.t_max`.
pub fn run_tad(
    variant: Variant,
    pot: &Potential,
    top: &BasinTopology,
    cfg: &TadConfig,
    x_init: f64,
    rng: &mut impl Rng,
) -> Result<TadRun> {
    let model = TadModel::build(variant, pot, top, cfg)?;
    run_tad_with(&model, pot, top, x_init, rng)
}

/// [`run_tad`] with a prebuilt model, for ensembles.
pub fn run_tad_with(
    model: &TadModel,
    pot: &Potential,
    top: &BasinTopology,
    x_init: f64,
    rng: &mut impl Rng,
) -> Result<TadRun> {
    let cfg = &model.cfg;
    let sde_lo = cfg.sde_lo();
    let t_max = cfg.t_max;
    let mut label = assign_basin(top, x_init)?;
    let mut path = PathBuilder::new(label);
    let mut x = x_init;
    let mut t_tad = 0.0;
    let mut run = TadRun {
        path: MetastablePath::default(),
        exit_steps: Vec::new(),
        sde_steps_hi: 0,
        sde_steps_lo: 0,
        t_tad: 0.0,
        timeout: None,
    };
    let finish = |mut run: TadRun, path: PathBuilder, end, t_tad| {
        run.path = path.finish(end);
        run.t_tad = t_tad;
        Ok(run)
    };

    while t_tad < t_max {
        if model.variant != Variant::Original {
            // Decorrelation: exact low-temperature dynamics for t_corr,
            // restarted in the new basin after an early exit.
            let m = &model.basins[label];
            let budget = t_max - t_tad;
            let n = sde_lo.steps_for(m.t_corr.min(budget));
            match evolve_for(x, &m.basin, pot, &sde_lo, rng, n)? {
                Evolution::Exited(e) => {
                    run.sde_steps_lo += e.steps;
                    t_tad += e.time;
                    path.stay(e.time);
                    match path.leave(top, e.side) {
                        Some(next) => {
                            label = next;
                            x = e.position;
                            continue;
                        }
                        None => return finish(run, path, SegmentEnd::Horizon, t_tad),
                    }
                }
                Evolution::Survived { position, steps } => {
                    run.sde_steps_lo += steps;
                    let t = steps as f64 * sde_lo.dt;
                    t_tad += t;
                    path.stay(t);
                    if m.t_corr >= budget {
                        return finish(run, path, SegmentEnd::Horizon, t_tad);
                    }
                    x = position;
                }
            }
        }

        let step = match model.exit_step(label, pot, x, StopMode::Enabled, rng) {
            Ok(s) => s,
            Err(e @ Error::Timeout { .. }) => {
                run.timeout = Some(e);
                return finish(run, path, SegmentEnd::Timeout, t_tad);
            }
            Err(e) => return Err(e),
        };
        run.sde_steps_hi += step.sde_steps;
        let t = step.t_min_lo;
        let side = step.i_min_lo;
        let exit_position = step.exit_position();
        run.exit_steps.push(step);
        if t_tad + t >= t_max {
            path.stay(t_max - t_tad);
            return finish(run, path, SegmentEnd::Horizon, t_max);
        }
        t_tad += t;
        path.stay(t);
        let old = model.basins[label].basin;
        match path.leave(top, side) {
            Some(next) => {
                label = next;
                x = match model.variant {
                    // Point mass at the saddle: the 1D conditional exit law.
                    Variant::Idealized => old.saddle(side),
                    Variant::Modified => exit_position,
                    Variant::Original => model.basins[next].basin.minimum,
                };
            }
            None => return finish(run, path, SegmentEnd::Horizon, t_tad),
        }
    }
    finish(run, path, SegmentEnd::Horizon, t_tad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::stream_rng;

    fn triple() -> (Potential, BasinTopology) {
        let v = Potential::periodic_wells(2, 1.0).unwrap();
        let t = BasinTopology::from_potential(&v, 501).unwrap();
        (v, t)
    }

    #[test]
    fn direct_zero_budget() {
        let (v, t) = triple();
        let cfg = SdeConfig::new(6.0, 1e-3, 1, 0).unwrap();
        let r = run_direct(&v, &t, 1.0, 0.0, &cfg, &mut cfg.rng()).unwrap();
        assert_eq!(r.path.segments.len(), 1);
        assert_eq!(r.path.total_time, 0.0);
        let r = run_direct(&v, &t, 1.0, 4e-4, &cfg, &mut cfg.rng()).unwrap();
        assert_eq!(r.path.segments.len(), 1);
        r.path.validate(&t).unwrap();
    }

    #[test]
    fn direct_visits_both_basins() {
        let (v, t) = triple();
        let cfg = SdeConfig::new(4.0, 2e-3, 3, 0).unwrap();
        let r = run_direct(&v, &t, 1.0, 2000.0, &cfg, &mut cfg.rng()).unwrap();
        r.path.validate(&t).unwrap();
        assert!(r.path.segments.iter().any(|s| s.label == 1));
        assert!((r.sde_steps as f64 * cfg.dt - r.path.total_time).abs() < 1e-9);
    }

    #[test]
    fn kmc_statistics() {
        let (_, t) = triple();
        // Two-sided basin with rates (2, 1), a large budget and absorbing
        // walls: sample single sojourns from basin 0 by restarting.
        let rates = vec![[2.0, 1.0], [1.0, 2.0]];
        let mut rng = stream_rng(12, 0);
        let n = 10_000;
        let mut left = 0;
        let mut total = 0.0;
        for _ in 0..n {
            let p = run_kmc(&t, &rates, 1e9, &mut rng, 0).unwrap();
            let s = p.segments[0];
            total += s.duration;
            if matches!(
                s.end,
                SegmentEnd::Exit(Side::Left) | SegmentEnd::Absorbed(Side::Left)
            ) {
                left += 1;
            }
        }
        let frac = left as f64 / n as f64;
        assert!((frac - 2.0 / 3.0).abs() < 0.015, "{frac}");
        let mean = total / n as f64;
        let se = (1.0 / 3.0) / (n as f64).sqrt();
        assert!((mean - 1.0 / 3.0).abs() < 2.0 * se, "{mean}");
    }

    #[test]
    fn kmc_rejects_bad_rates() {
        let (_, t) = triple();
        let mut rng = stream_rng(0, 0);
        assert!(run_kmc(&t, &[[0.0, 0.0], [1.0, 1.0]], 1.0, &mut rng, 0).is_err());
        assert!(run_kmc(&t, &[[1.0, 1.0]], 1.0, &mut rng, 0).is_err());
    }

    #[test]
    fn tad_zero_budget() {
        let (v, t) = triple();
        for variant in Variant::ALL {
            let cfg = TadConfig {
                beta_hi: 3.0,
                beta_lo: 6.0,
                t_max: 0.0,
                t_corr: Some(1.0),
                t_relax: Some(1.0),
                ..Default::default()
            };
            let r = run_tad(variant, &v, &t, &cfg, 1.0, &mut stream_rng(0, 0)).unwrap();
            assert_eq!(r.path.segments.len(), 1);
            assert_eq!(r.path.transitions(), 0);
        }
    }

    #[test]
    fn tad_paths_are_valid_and_reproducible() {
        let (v, t) = triple();
        for variant in Variant::ALL {
            let cfg = TadConfig {
                beta_hi: 3.0,
                beta_lo: 6.0,
                t_max: 3000.0,
                dt: 2e-3,
                seed: 4,
                ..Default::default()
            };
            let a = run_tad(variant, &v, &t, &cfg, 1.0, &mut stream_rng(4, 0)).unwrap();
            let b = run_tad(variant, &v, &t, &cfg, 1.0, &mut stream_rng(4, 0)).unwrap();
            a.path.validate(&t).unwrap();
            assert_eq!(a.path, b.path);
            // Either the budget ran out or an outer wall absorbed the path.
            match a.path.last_end().unwrap() {
                SegmentEnd::Horizon => {
                    assert!((a.path.total_time - cfg.t_max).abs() < 1e-6, "{variant}")
                }
                SegmentEnd::Absorbed(_) => assert!(a.path.total_time < cfg.t_max),
                e => panic!("{variant}: unexpected end {e:?}"),
            }
        }
    }

    #[test]
    fn modified_rejects_barrier_bound_violation() {
        let (v, t) = triple();
        let cfg = TadConfig {
            beta_hi: 3.0,
            beta_lo: 6.0,
            e_min: Some(1.5),
            ..Default::default()
        };
        assert!(matches!(
            TadModel::build(Variant::Modified, &v, &t, &cfg),
            Err(Error::BarrierBoundViolated { .. })
        ));
    }

    #[test]
    fn tad_timeout_gives_partial_path() {
        let (v, t) = triple();
        let cfg = TadConfig {
            beta_hi: 3.0,
            beta_lo: 6.0,
            t_corr: Some(0.01),
            max_steps: 3,
            ..Default::default()
        };
        let r = run_tad(Variant::Idealized, &v, &t, &cfg, 1.0, &mut stream_rng(0, 0)).unwrap();
        assert!(r.path.is_truncated());
        assert!(r.timeout.is_some());
    }

    #[test]
    fn modified_boost_exceeds_five() {
        let v = Potential::quartic_well();
        let t = BasinTopology::from_potential(&v, 301).unwrap();
        let cfg = TadConfig {
            beta_hi: 4.0,
            beta_lo: 12.0,
            dt: 1e-2,
            t_max: 5e5,
            seed: 9,
            ..Default::default()
        };
        let r = run_tad(Variant::Modified, &v, &t, &cfg, 1.0, &mut stream_rng(9, 0)).unwrap();
        assert!(r.boost(cfg.dt) > 5.0, "boost {}", r.boost(cfg.dt));
    }
}
