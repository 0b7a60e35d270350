use std::io::Write;

use rand::Rng;

use super::{StopMode, StopRule, TadConfig};
use crate::dynamics::{evolve_for, reflect, sample_qsd_by_rejection, Evolution, QsdSampler, Side};
use crate::error::{Error, Result};
use crate::potential::{Basin, Potential};
use crate::qsd::csv_err;
use crate::qsd::{arrhenius_factor, ThetaTable};

/// One observed high-temperature exit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitRecord {
    /// 1-based attempt index within the exit step.
    pub attempt: usize,
    pub side: Side,
    /// Duration of this attempt.
    pub tau: f64,
    /// Cumulative high-temperature time after this exit.
    pub t_sim: f64,
    /// `t_sim` extrapolated to low temperature with this side's factor.
    pub t_lo: f64,
    /// First exit through `side`.
    pub first: bool,
    pub t_min_after: f64,
    pub t_stop_after: f64,
    pub position: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstExit {
    pub t_hi: f64,
    pub t_lo: f64,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitStepResult {
    pub t_min_lo: f64,
    pub i_min_lo: Side,
    pub n_attempts: usize,
    pub t_sim_final: f64,
    pub t_stop_final: f64,
    pub first_exits: [Option<FirstExit>; 2],
    pub events: Vec<ExitRecord>,
    /// SDE steps spent, QSD preparation included.
    pub sde_steps: u64,
}

impl ExitStepResult {
    pub fn first_exit(&self, side: Side) -> Option<&FirstExit> {
        self.first_exits[side.index()].as_ref()
    }

    /// High-temperature exit position of the accepted event.
    pub fn exit_position(&self) -> f64 {
        self.first_exits[self.i_min_lo.index()]
            .expect("accepted side was observed")
            .position
    }
}

/// How each attempt's initial state is produced.
#[derive(Debug, Clone, Copy)]
pub enum StartState<'a> {
    /// Exact draw from the high-temperature QSD.
    Qsd(&'a QsdSampler),
    /// Rejection sampling from the basin minimum.
    Rejection { t_relax: f64 },
    /// One continuing trajectory, reflected back after every exit.
    Continue { x: f64 },
}

/// The exit-step loop shared by all variants.
#[allow(clippy::too_many_arguments)]
pub fn exit_step_with(
    basin: &Basin,
    pot: &Potential,
    cfg: &TadConfig,
    factors: [f64; 2],
    rule: StopRule,
    start: StartState<'_>,
    mode: StopMode,
    rng: &mut impl Rng,
) -> Result<ExitStepResult> {
    let sde = cfg.sde_hi();
    let mut t_sim = 0.0;
    let mut t_min = f64::INFINITY;
    let mut i_min = Side::Left;
    let mut t_stop = f64::INFINITY;
    let mut first: [Option<FirstExit>; 2] = [None, None];
    let mut events = Vec::new();
    let mut steps = 0u64;
    let mut x = match start {
        StartState::Continue { x } => x,
        _ => basin.minimum,
    };
    loop {
        match start {
            StartState::Qsd(s) => x = s.sample(rng),
            StartState::Rejection { t_relax } => {
                let r = sample_qsd_by_rejection(basin, pot, &sde, rng, t_relax)?;
                steps += r.steps;
                x = r.position;
            }
            StartState::Continue { .. } => {}
        }
        let e = match evolve_for(x, basin, pot, &sde, rng, cfg.max_steps)? {
            Evolution::Exited(e) => e,
            Evolution::Survived { steps: s, .. } => {
                return Err(Error::Timeout {
                    steps: steps + s,
                    elapsed: t_sim + s as f64 * sde.dt,
                });
            }
        };
        steps += e.steps;
        t_sim += e.time;
        let k = e.side.index();
        let t_lo = t_sim * factors[k];
        let is_first = first[k].is_none();
        if is_first {
            first[k] = Some(FirstExit {
                t_hi: t_sim,
                t_lo,
                position: e.position,
            });
            if t_lo < t_min {
                t_min = t_lo;
                i_min = e.side;
            }
            t_stop = rule.t_stop(t_min);
        }
        events.push(ExitRecord {
            attempt: events.len() + 1,
            side: e.side,
            tau: e.time,
            t_sim,
            t_lo,
            first: is_first,
            t_min_after: t_min,
            t_stop_after: t_stop,
            position: e.position,
        });
        let done = match mode {
            StopMode::Enabled => t_sim > t_stop,
            StopMode::Disabled => first.iter().all(Option::is_some),
        };
        if done {
            break;
        }
        if let StartState::Continue { .. } = start {
            x = reflect(e.position, basin.left, basin.right);
        }
    }
    Ok(ExitStepResult {
        t_min_lo: t_min,
        i_min_lo: i_min,
        n_attempts: events.len(),
        t_sim_final: t_sim,
        t_stop_final: t_stop,
        first_exits: first,
        events,
        sde_steps: steps,
    })
}

/// Arrhenius extrapolation factors `exp(-(β_hi - β_lo) ΔV_i)` per side.
pub fn arrhenius_factors(basin: &Basin, cfg: &TadConfig) -> [f64; 2] {
    Side::BOTH.map(|s| arrhenius_factor(basin.barrier(s), cfg.beta_hi, cfg.beta_lo))
}

/// Checks the barrier lower bound against both sides of `basin`.
pub fn check_barrier_bound(basin: &Basin, e_min: f64) -> Result<()> {
    for side in Side::BOTH {
        let barrier = basin.barrier(side);
        if e_min > barrier {
            return Err(Error::BarrierBoundViolated {
                basin: basin.label,
                side,
                e_min,
                barrier,
            });
        }
    }
    Ok(())
}

/// Idealized exit step: exact QSD starts, Θ extrapolation, `C = min Θ`.
pub fn exit_step_idealized(
    basin: &Basin,
    pot: &Potential,
    cfg: &TadConfig,
    sampler_hi: &QsdSampler,
    theta: &ThetaTable,
    mode: StopMode,
    rng: &mut impl Rng,
) -> Result<ExitStepResult> {
    let factors = Side::BOTH.map(|s| theta.theta(s));
    let rule = StopRule::Scaled {
        c: theta.min_theta(),
    };
    exit_step_with(
        basin,
        pot,
        cfg,
        factors,
        rule,
        StartState::Qsd(sampler_hi),
        mode,
        rng,
    )
}

/// Modified exit step: rejection-sampled starts, Arrhenius extrapolation
/// with the true barriers, `C = exp(-(β_hi - β_lo) e_min)`.
pub fn exit_step_modified(
    basin: &Basin,
    pot: &Potential,
    cfg: &TadConfig,
    e_min: f64,
    t_relax: f64,
    mode: StopMode,
    rng: &mut impl Rng,
) -> Result<ExitStepResult> {
    check_barrier_bound(basin, e_min)?;
    let rule = StopRule::modified(e_min, cfg.beta_hi, cfg.beta_lo);
    exit_step_with(
        basin,
        pot,
        cfg,
        arrhenius_factors(basin, cfg),
        rule,
        StartState::Rejection { t_relax },
        mode,
        rng,
    )
}

/// Original exit step: one trajectory from `x_start`, reflected after each
/// exit, confidence-based stop rule.
pub fn exit_step_original(
    basin: &Basin,
    pot: &Potential,
    cfg: &TadConfig,
    x_start: f64,
    mode: StopMode,
    rng: &mut impl Rng,
) -> Result<ExitStepResult> {
    let rule = StopRule::original(cfg);
    exit_step_with(
        basin,
        pot,
        cfg,
        arrhenius_factors(basin, cfg),
        rule,
        StartState::Continue { x: x_start },
        mode,
        rng,
    )
}

/// Outcome of replaying a stop rule on an event log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replay {
    pub t_min_lo: f64,
    pub i_min_lo: Side,
    /// Number of events consumed before the rule fired (all of them if it
    /// never fired).
    pub stop_after: usize,
    pub stopped: bool,
}

/// Re-runs the stop rule on recorded `(side, t_sim)` pairs only.
pub fn replay_stop_rule(
    events: &[ExitRecord],
    factors: [f64; 2],
    rule: StopRule,
) -> Option<Replay> {
    let mut seen = [false; 2];
    let mut t_min = f64::INFINITY;
    let mut i_min = None;
    for (k, e) in events.iter().enumerate() {
        let s = e.side.index();
        if !seen[s] {
            seen[s] = true;
            let t_lo = e.t_sim * factors[s];
            if t_lo < t_min {
                t_min = t_lo;
                i_min = Some(e.side);
            }
        }
        if e.t_sim > rule.t_stop(t_min) {
            return Some(Replay {
                t_min_lo: t_min,
                i_min_lo: i_min?,
                stop_after: k + 1,
                stopped: true,
            });
        }
    }
    Some(Replay {
        t_min_lo: t_min,
        i_min_lo: i_min?,
        stop_after: events.len(),
        stopped: false,
    })
}

/// Events after the replayed stop point whose own extrapolated time beats
/// the accepted one.
pub fn guarantee_violations(events: &[ExitRecord], factors: [f64; 2], rule: StopRule) -> usize {
    let Some(r) = replay_stop_rule(events, factors, rule) else {
        return 0;
    };
    events[r.stop_after..]
        .iter()
        .filter(|e| e.t_sim * factors[e.side.index()] < r.t_min_lo)
        .count()
}

/// CSV with columns
/// `exit_step,attempt_index,side,t_sim,t_hi,t_lo,t_stop_after`, where
/// `t_hi` is the side's first-exit time `T_i^hi`.
pub fn write_events_csv<W: Write>(out: W, steps: &[ExitStepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "exit_step",
        "attempt_index",
        "side",
        "t_sim",
        "t_hi",
        "t_lo",
        "t_stop_after",
    ])
    .map_err(csv_err)?;
    for (k, r) in steps.iter().enumerate() {
        let mut t_hi = [f64::NAN; 2];
        for e in &r.events {
            let s = e.side.index();
            if e.first {
                t_hi[s] = e.t_sim;
            }
            w.write_record([
                k.to_string(),
                e.attempt.to_string(),
                e.side.to_string(),
                format!("{:.12e}", e.t_sim),
                format!("{:.12e}", t_hi[s]),
                format!("{:.12e}", e.t_lo),
                format!("{:.12e}", e.t_stop_after),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::stream_rng;
    use crate::potential::BasinTopology;
    use crate::qsd::{exit_statistics, solve_principal_eigenpair};

    fn setup(tilt: f64) -> (Potential, Basin) {
        let v = Potential::tilted_quartic(tilt);
        let b = BasinTopology::from_potential(&v, 301).unwrap().basins()[0];
        (v, b)
    }

    fn cfg(beta_hi: f64, beta_lo: f64) -> TadConfig {
        TadConfig {
            beta_hi,
            beta_lo,
            dt: 1e-3,
            ..TadConfig::default()
        }
    }

    #[test]
    fn modified_step_basic_properties() {
        let (v, b) = setup(0.0);
        let c = cfg(4.0, 8.0);
        for k in 0..20 {
            let mut rng = stream_rng(3, k);
            let r = exit_step_modified(&b, &v, &c, 1.0, 2.0, StopMode::Enabled, &mut rng).unwrap();
            assert!(r.n_attempts >= 1);
            assert!(r.t_sim_final > r.t_stop_final);
            let observed: Vec<f64> = r.first_exits.iter().flatten().map(|f| f.t_lo).collect();
            assert_eq!(
                r.t_min_lo,
                observed.iter().cloned().fold(f64::INFINITY, f64::min)
            );
            // Every earlier attempt ended at or below the stop bound.
            for e in &r.events[..r.n_attempts - 1] {
                assert!(e.t_sim <= e.t_stop_after);
            }
            assert!(r.sde_steps > 0);
        }
    }

    #[test]
    fn barrier_bound_is_enforced() {
        let (v, b) = setup(0.1);
        let c = cfg(4.0, 8.0);
        let mut rng = stream_rng(0, 0);
        let too_big = b.min_barrier() + 1e-3;
        assert!(matches!(
            exit_step_modified(&b, &v, &c, too_big, 1.0, StopMode::Enabled, &mut rng),
            Err(Error::BarrierBoundViolated { .. })
        ));
    }

    #[test]
    fn stop_disabled_prefix_matches_enabled_run() {
        let (v, b) = setup(0.1);
        let c = cfg(3.0, 9.0);
        let e_min = b.min_barrier();
        for k in 0..30 {
            let on = exit_step_modified(
                &b,
                &v,
                &c,
                e_min,
                1.0,
                StopMode::Enabled,
                &mut stream_rng(8, k),
            )
            .unwrap();
            let off = exit_step_modified(
                &b,
                &v,
                &c,
                e_min,
                1.0,
                StopMode::Disabled,
                &mut stream_rng(8, k),
            )
            .unwrap();
            let rule = StopRule::modified(e_min, c.beta_hi, c.beta_lo);
            let factors = arrhenius_factors(&b, &c);
            let rep = replay_stop_rule(&off.events, factors, rule).unwrap();
            assert_eq!((rep.t_min_lo, rep.i_min_lo), (off.t_min_lo, off.i_min_lo));
            assert_eq!((on.t_min_lo, on.i_min_lo), (off.t_min_lo, off.i_min_lo));
            // The enabled run is a prefix of the disabled one, unless the
            // disabled run stopped earlier because both sides were seen.
            let m = on.events.len().min(off.events.len());
            assert_eq!(on.events[..m], off.events[..m]);
            assert_eq!(guarantee_violations(&off.events, factors, rule), 0);
        }
    }

    #[test]
    fn idealized_step_uses_theta() {
        let (v, b) = setup(0.1);
        let c = cfg(3.0, 6.0);
        let eh = solve_principal_eigenpair(&v, &b, 3.0, 4000).unwrap();
        let el = solve_principal_eigenpair(&v, &b, 6.0, 4000).unwrap();
        let theta = ThetaTable::from_statistics(
            &b,
            exit_statistics(&eh).unwrap(),
            exit_statistics(&el).unwrap(),
        );
        let sampler = QsdSampler::new(&eh).unwrap();
        let r = exit_step_idealized(
            &b,
            &v,
            &c,
            &sampler,
            &theta,
            StopMode::Disabled,
            &mut stream_rng(1, 1),
        )
        .unwrap();
        for side in Side::BOTH {
            let f = r.first_exit(side).unwrap();
            assert_eq!(f.t_lo, f.t_hi * theta.theta(side));
        }
        assert!(r
            .events
            .iter()
            .all(|e| e.t_stop_after == e.t_min_after / theta.min_theta()));
    }

    #[test]
    fn original_step_reflects_and_continues() {
        let (v, b) = setup(0.0);
        let c = TadConfig {
            nu_min: 1.0,
            delta: 1e-6,
            ..cfg(4.0, 8.0)
        };
        let r =
            exit_step_original(&b, &v, &c, 1.0, StopMode::Enabled, &mut stream_rng(4, 0)).unwrap();
        assert!(r.n_attempts >= 1);
        let loose = TadConfig { delta: 0.5, ..c };
        let q = exit_step_original(
            &b,
            &v,
            &loose,
            1.0,
            StopMode::Enabled,
            &mut stream_rng(4, 0),
        )
        .unwrap();
        // Same trajectory, looser stop: never more attempts.
        assert!(q.n_attempts <= r.n_attempts);
        for (a, b) in q.events.iter().zip(&r.events) {
            assert_eq!((a.side, a.t_sim), (b.side, b.t_sim));
        }
    }

    #[test]
    fn timeouts_propagate() {
        let (v, b) = setup(0.0);
        let c = TadConfig {
            max_steps: 5,
            ..cfg(4.0, 8.0)
        };
        assert!(matches!(
            exit_step_original(&b, &v, &c, 1.0, StopMode::Enabled, &mut stream_rng(4, 0)),
            Err(Error::Timeout { .. })
        ));
    }

    #[test]
    fn replay_on_synthetic_log() {
        let ev = |attempt, side, t_sim| ExitRecord {
            attempt,
            side,
            tau: 0.0,
            t_sim,
            t_lo: 0.0,
            first: false,
            t_min_after: 0.0,
            t_stop_after: 0.0,
            position: 0.0,
        };
        let factors = [10.0, 100.0];
        let rule = StopRule::Scaled { c: 10.0 };
        // Left at t=1 -> T_min = 10, T_stop = 1; the next event at 2 stops.
        let log = [
            ev(1, Side::Left, 1.0),
            ev(2, Side::Right, 2.0),
            ev(3, Side::Right, 3.0),
        ];
        let r = replay_stop_rule(&log, factors, rule).unwrap();
        assert_eq!(
            (r.t_min_lo, r.i_min_lo, r.stop_after, r.stopped),
            (10.0, Side::Left, 2, true)
        );
        assert_eq!(guarantee_violations(&log, factors, rule), 0);
        // A rule too loose to guarantee anything.
        let bad = StopRule::Scaled { c: 1000.0 };
        let log = [ev(1, Side::Right, 1.0), ev(2, Side::Left, 1.5)];
        let r = replay_stop_rule(&log, factors, bad).unwrap();
        assert_eq!((r.t_min_lo, r.stop_after), (100.0, 1));
        assert_eq!(guarantee_violations(&log, factors, bad), 1);
    }

    #[test]
    fn events_csv_layout() {
        let (v, b) = setup(0.0);
        let c = cfg(4.0, 8.0);
        let r = exit_step_modified(
            &b,
            &v,
            &c,
            1.0,
            1.0,
            StopMode::Disabled,
            &mut stream_rng(2, 0),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_events_csv(&mut buf, std::slice::from_ref(&r)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("exit_step,attempt_index,side,t_sim,t_hi,t_lo,t_stop_after\n"));
        assert_eq!(text.lines().count(), r.events.len() + 1);
    }
}
