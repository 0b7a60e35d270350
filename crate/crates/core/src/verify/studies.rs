use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Deserialize;

use super::stats::{
    check_symmetric_identity, geometric_sum_law_test, independence_test, joint_exponential_test,
    ks_distance_two_sample, ks_one_sample_exponential, ks_two_sample, min_exponential_properties,
    two_proportion_z,
};
use super::{write_summary_csv, TestReport, Threshold, Verdict};
use crate::dynamics::{ensemble, evolve_until_exit, stream_rng, QsdSampler, SdeConfig, Side};
use crate::error::{ensure, Error, Result};
use crate::potential::{Basin, BasinTopology, Potential};
use crate::qsd::{
    comparison_error, csv_err, default_grid_n, exit_statistics, solve_principal_eigenpair, Segment,
    ThetaTable,
};
use crate::tad::{
    exit_step_idealized, exit_step_modified, guarantee_violations, replay_stop_rule,
    write_events_csv, StopMode, StopRule, TadConfig, TadModel, Variant,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    SymmetricIdentity,
    MinExponential,
    GeometricSum,
    ExitLaw,
    ExitPoint,
    IdealizedExitStep,
    FirstExitLaw,
    StopReplay,
    ThetaAsymptotics,
    LambdaDecay,
    QsdBounds,
    ModifiedGuarantee,
    Boost,
}

impl Study {
    pub const ALL: [Study; 13] = [
        Study::SymmetricIdentity,
        Study::MinExponential,
        Study::GeometricSum,
        Study::ExitLaw,
        Study::ExitPoint,
        Study::IdealizedExitStep,
        Study::FirstExitLaw,
        Study::StopReplay,
        Study::ThetaAsymptotics,
        Study::LambdaDecay,
        Study::QsdBounds,
        Study::ModifiedGuarantee,
        Study::Boost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::SymmetricIdentity => "symmetric_identity",
            Study::MinExponential => "min_exponential",
            Study::GeometricSum => "geometric_sum",
            Study::ExitLaw => "exit_law",
            Study::ExitPoint => "exit_point",
            Study::IdealizedExitStep => "idealized_exit_step",
            Study::FirstExitLaw => "first_exit_law",
            Study::StopReplay => "stop_replay",
            Study::ThetaAsymptotics => "theta_asymptotics",
            Study::LambdaDecay => "lambda_decay",
            Study::QsdBounds => "qsd_bounds",
            Study::ModifiedGuarantee => "modified_guarantee",
            Study::Boost => "boost",
        }
    }

    /// Position in [`Study::ALL`]; also selects the random streams.
    pub fn index(self) -> usize {
        Study::ALL.iter().position(|&s| s == self).expect("listed")
    }

    pub fn names() -> String {
        Study::ALL.map(Study::name).join(", ")
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown study `{s}`; valid studies: {}",
                    Study::names()
                ))
            })
    }
}

/// Parameters and pre-registered thresholds of every study. Defaults are
/// the desk-scale acceptance sizes.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    #[serde(skip)]
    pub seed: u64,
    pub alpha: f64,
    /// Sample size of the exit-law, exit-point, exit-step and first-exit studies.
    pub n_samples: usize,
    /// Linear tilt of the asymmetric quartic well.
    pub tilt: f64,
    /// Eigen-solver cells; `None` picks by beta.
    pub grid_n: Option<usize>,
    /// Step limit for any single exit.
    pub max_steps: u64,

    pub identity_vectors: usize,
    pub identity_tolerance: f64,

    pub exit_law_beta: f64,
    pub exit_law_dt: f64,

    pub exit_point_beta: f64,
    pub exit_point_dt: f64,
    /// Allowed `|left fraction - 1/2|` on the symmetric well.
    pub side_tolerance: f64,
    /// Allowed standard errors between empirical and predicted fractions.
    pub max_standard_errors: f64,

    pub step_beta_hi: f64,
    pub step_beta_lo: f64,
    pub step_dt: f64,
    pub first_exit_dt: f64,
    pub n_replay: usize,

    pub theta_ratio: f64,
    pub theta_betas: Vec<f64>,
    pub slope_window: [f64; 2],

    pub lambda_betas: Vec<f64>,
    pub lambda_slope_tolerance: f64,

    pub bounds_betas: Vec<f64>,
    pub u_bound: f64,
    pub comparison_betas: [f64; 2],

    pub guarantee_n: usize,
    pub guarantee_beta_hi: f64,
    pub guarantee_beta_lo: f64,
    pub guarantee_dt: f64,

    pub boost_n: usize,
    pub boost_beta_hi: f64,
    pub boost_beta_lo: f64,
    pub boost_dt: f64,
    pub boost_ks_tolerance: f64,
    pub boost_min: f64,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            seed: 2024,
            alpha: 0.01,
            n_samples: 10_000,
            tilt: 0.1,
            grid_n: None,
            max_steps: 10_000_000_000,
            identity_vectors: 100,
            identity_tolerance: 1e-9,
            exit_law_beta: 4.0,
            exit_law_dt: 2e-5,
            exit_point_beta: 4.0,
            exit_point_dt: 1e-3,
            side_tolerance: 0.015,
            max_standard_errors: 2.0,
            step_beta_hi: 10.0 / 3.0,
            step_beta_lo: 10.0,
            step_dt: 2e-3,
            first_exit_dt: 5e-5,
            n_replay: 1000,
            theta_ratio: 3.0,
            theta_betas: vec![8.0, 12.0, 16.0, 24.0],
            slope_window: [0.8, 1.2],
            lambda_betas: (6..=16).map(f64::from).collect(),
            lambda_slope_tolerance: 0.1,
            bounds_betas: (1..=8).map(|k| 4.0 * k as f64).collect(),
            u_bound: 1.2,
            comparison_betas: [8.0, 16.0],
            guarantee_n: 1000,
            guarantee_beta_hi: 4.0,
            guarantee_beta_lo: 12.0,
            guarantee_dt: 1e-3,
            boost_n: 4000,
            boost_beta_hi: 4.0,
            boost_beta_lo: 12.0,
            boost_dt: 1e-2,
            boost_ks_tolerance: 0.05,
            boost_min: 5.0,
        }
    }
}

impl StudySettings {
    pub fn validate(&self) -> Result<()> {
        ensure(self.alpha > 0.0 && self.alpha < 1.0, "alpha", || {
            format!("{} not in (0, 1)", self.alpha)
        })?;
        ensure(self.n_samples >= 100, "n_samples", || {
            format!("{} < 100", self.n_samples)
        })?;
        ensure(
            self.n_replay >= 1 && self.guarantee_n >= 1,
            "n_replay",
            || "need at least one run".into(),
        )?;
        ensure(self.boost_n >= 100, "boost_n", || {
            format!("{} < 100", self.boost_n)
        })?;
        ensure(self.theta_ratio > 1.0, "theta_ratio", || {
            format!("{} must exceed 1", self.theta_ratio)
        })?;
        for (name, b) in [
            ("step_beta_hi", self.step_beta_hi < self.step_beta_lo),
            (
                "guarantee_beta_hi",
                self.guarantee_beta_hi < self.guarantee_beta_lo,
            ),
            ("boost_beta_hi", self.boost_beta_hi < self.boost_beta_lo),
        ] {
            ensure(b, name, || "must be below the matching beta_lo".into())?;
        }
        for (name, dt) in [
            ("exit_law_dt", self.exit_law_dt),
            ("exit_point_dt", self.exit_point_dt),
            ("step_dt", self.step_dt),
            ("first_exit_dt", self.first_exit_dt),
            ("guarantee_dt", self.guarantee_dt),
            ("boost_dt", self.boost_dt),
        ] {
            ensure(dt > 0.0 && dt.is_finite(), name, || {
                format!("{dt} must be positive")
            })?;
        }
        Ok(())
    }

    fn grid(&self, beta: f64) -> usize {
        self.grid_n.unwrap_or_else(|| default_grid_n(beta))
    }
}

/// Reports of one study plus its data table (CSV text).
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub study: Study,
    pub reports: Vec<TestReport>,
    pub table: String,
}

impl StudyOutput {
    pub fn file_name(&self) -> String {
        format!("{}.csv", self.study.name())
    }
}

pub fn run_study(study: Study, s: &StudySettings) -> Result<StudyOutput> {
    s.validate()?;
    let (reports, table) = match study {
        Study::SymmetricIdentity => symmetric_identity(s)?,
        Study::MinExponential => min_exponential(s)?,
        Study::GeometricSum => geometric_sum(s)?,
        Study::ExitLaw => exit_law(s)?,
        Study::ExitPoint => exit_point(s)?,
        Study::IdealizedExitStep => idealized_exit_step(s)?,
        Study::FirstExitLaw => first_exit_law(s)?,
        Study::StopReplay => stop_replay(s)?,
        Study::ThetaAsymptotics => theta_study(s)?,
        Study::LambdaDecay => {
            let (pot, top) = well(0.0)?;
            lambda_decay_study(
                &pot,
                &top.basins()[0],
                &s.lambda_betas,
                s.grid_n,
                s.lambda_slope_tolerance,
            )?
        }
        Study::QsdBounds => {
            let (pot, top) = well(0.0)?;
            qsd_bounds_study(
                &pot,
                &top.basins()[0],
                &s.bounds_betas,
                s.comparison_betas,
                s.u_bound,
                s.grid_n,
            )?
        }
        Study::ModifiedGuarantee => modified_guarantee(s)?,
        Study::Boost => boost(s)?,
    };
    let reports = reports
        .into_iter()
        .map(|r| {
            let mut r = r.with("seed", s.seed);
            if !r.name.starts_with(study.name()) {
                r.name = format!("{}.{}", study.name(), r.name);
            }
            r
        })
        .collect();
    Ok(StudyOutput {
        study,
        reports,
        table,
    })
}

type Outcome = (Vec<TestReport>, String);

fn well(tilt: f64) -> Result<(Potential, BasinTopology)> {
    let pot = Potential::tilted_quartic(tilt);
    let top = BasinTopology::from_potential(&pot, 1001)?;
    Ok((pot, top))
}

/// Stream for replica `k` of sub-ensemble `part` of `study`.
fn stream(study: Study, part: u64, k: u64) -> u64 {
    ((study.index() as u64 + 1) << 40) | (part << 32) | k
}

fn table<F>(header: &[&str], rows: usize, mut row: F) -> Result<String>
where
    F: FnMut(usize) -> Vec<String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for k in 0..rows {
        w.write_record(row(k)).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
        .map_err(|e| Error::Io(e.to_string()))
}

fn summary_table(reports: &[TestReport]) -> Result<String> {
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, reports)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

fn symmetric_identity(s: &StudySettings) -> Result<Outcome> {
    let mut rng = stream_rng(s.seed, stream(Study::SymmetricIdentity, 0, 0));
    let mut errs = Vec::new();
    for k in 0..s.identity_vectors {
        let n = 3 + k % 5;
        let a: Vec<f64> = (0..n)
            .map(|_| 10f64.powf(rng.random_range(-3.0..3.0)))
            .collect();
        errs.push((n, check_symmetric_identity(&a)?));
    }
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let rep = TestReport::new(
        "symmetric_identity",
        worst,
        Threshold::LessThan(s.identity_tolerance),
        errs.len(),
    );
    let t = table(&["vector_index", "n", "relative_error"], errs.len(), |k| {
        vec![
            k.to_string(),
            errs[k].0.to_string(),
            format!("{:.6e}", errs[k].1),
        ]
    })?;
    Ok((vec![rep], t))
}

fn min_exponential(s: &StudySettings) -> Result<Outcome> {
    let cases: [&[f64]; 3] = [&[1.0, 1.0], &[2.0, 1.0], &[5.0]];
    let mut reports = Vec::new();
    for (k, rates) in cases.iter().enumerate() {
        let mut rng = stream_rng(s.seed, stream(Study::MinExponential, k as u64, 0));
        let mut r = min_exponential_properties(rates, s.n_samples, &mut rng, s.alpha)?;
        r.name = format!("min_exponential.case_{k}");
        reports.push(r);
    }
    let t = summary_table(&reports)?;
    Ok((reports, t))
}

fn geometric_sum(s: &StudySettings) -> Result<Outcome> {
    let cases: [&[f64]; 3] = [&[1.0], &[0.5, 0.5], &[0.9, 0.1]];
    let mut reports = Vec::new();
    for (k, probs) in cases.iter().enumerate() {
        let mut rng = stream_rng(s.seed, stream(Study::GeometricSum, k as u64, 0));
        let mut r = geometric_sum_law_test(1.0, probs, s.n_samples, &mut rng, s.alpha)?;
        r.name = format!("geometric_sum.case_{k}");
        reports.push(r);
    }
    let t = summary_table(&reports)?;
    Ok((reports, t))
}

/// `n` exits from exact QSD draws at `cfg.beta`: `(time, side, steps)`.
fn qsd_exits(
    pot: &Potential,
    basin: &Basin,
    sampler: &QsdSampler,
    cfg: &SdeConfig,
    n: usize,
    max_steps: u64,
    streams: impl Fn(u64) -> u64 + Sync,
) -> Result<Vec<(f64, Side, u64)>> {
    ensemble(n, |k| {
        let mut rng = stream_rng(cfg.seed, streams(k));
        let x = sampler.sample(&mut rng);
        let e = evolve_until_exit(x, basin, pot, cfg, &mut rng, max_steps)?;
        Ok((e.time, e.side, e.steps))
    })
    .into_iter()
    .collect()
}

fn exits_table(exits: &[(f64, Side, u64)]) -> Result<String> {
    table(&["index", "time", "side"], exits.len(), |k| {
        vec![
            k.to_string(),
            format!("{:.12e}", exits[k].0),
            exits[k].1.to_string(),
        ]
    })
}

fn exit_law(s: &StudySettings) -> Result<Outcome> {
    let (pot, top) = well(0.0)?;
    let basin = &top.basins()[0];
    let beta = s.exit_law_beta;
    let eig = solve_principal_eigenpair(&pot, basin, beta, s.grid(beta))?;
    let sampler = QsdSampler::new(&eig)?;
    let cfg = SdeConfig::new(beta, s.exit_law_dt, s.seed, 0)?;
    let exits = qsd_exits(&pot, basin, &sampler, &cfg, s.n_samples, s.max_steps, |k| {
        stream(Study::ExitLaw, 0, k)
    })?;
    let times: Vec<f64> = exits.iter().map(|e| e.0).collect();
    let mut rep = ks_one_sample_exponential(&times, eig.lambda(), s.alpha)?;
    rep.name = "exit_law.ks".into();
    let rep = rep
        .with("beta", beta)
        .with("dt", s.exit_law_dt)
        .with("lambda", eig.lambda());
    Ok((vec![rep], exits_table(&exits)?))
}

fn exit_point(s: &StudySettings) -> Result<Outcome> {
    let beta = s.exit_point_beta;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (part, tilt) in [(0u64, 0.0), (1u64, s.tilt)] {
        let (pot, top) = well(tilt)?;
        let basin = &top.basins()[0];
        let eig = solve_principal_eigenpair(&pot, basin, beta, s.grid(beta))?;
        let p_left = exit_statistics(&eig)?.p_left;
        let cfg = SdeConfig::new(beta, s.exit_point_dt, s.seed, 0)?;
        let sampler = QsdSampler::new(&eig)?;
        let exits = qsd_exits(&pot, basin, &sampler, &cfg, s.n_samples, s.max_steps, |k| {
            stream(Study::ExitPoint, part, k)
        })?;
        let n = exits.len() as f64;
        let frac = exits.iter().filter(|e| e.1 == Side::Left).count() as f64 / n;
        let rep = if tilt == 0.0 {
            TestReport::new(
                "exit_point.symmetric",
                (frac - 0.5).abs(),
                Threshold::AtMost(s.side_tolerance),
                exits.len(),
            )
        } else {
            let se = (p_left * (1.0 - p_left) / n).sqrt();
            TestReport::new(
                "exit_point.tilted",
                (frac - p_left).abs() / se,
                Threshold::AtMost(s.max_standard_errors),
                exits.len(),
            )
        };
        reports.push(
            rep.with("left_fraction", frac)
                .with("p_left", p_left)
                .with("tilt", tilt)
                .with("beta", beta)
                .with("dt", s.exit_point_dt),
        );
        rows.extend(exits.into_iter().map(|e| (tilt, e)));
    }
    let t = table(&["tilt", "index", "time", "side"], rows.len(), |k| {
        let (tilt, e) = rows[k];
        vec![
            tilt.to_string(),
            k.to_string(),
            format!("{:.12e}", e.0),
            e.1.to_string(),
        ]
    })?;
    Ok((reports, t))
}

/// Eigen data of the tilted well at the exit-step temperatures.
struct StepSetup {
    pot: Potential,
    basin: Basin,
    cfg: TadConfig,
    sampler_hi: QsdSampler,
    sampler_lo: QsdSampler,
    theta: ThetaTable,
    lambda_hi: f64,
    lambda_lo: f64,
}

fn step_setup(s: &StudySettings, dt: f64) -> Result<StepSetup> {
    let (pot, top) = well(s.tilt)?;
    let basin = top.basins()[0];
    let (bh, bl) = (s.step_beta_hi, s.step_beta_lo);
    let cfg = TadConfig {
        beta_hi: bh,
        beta_lo: bl,
        dt,
        max_steps: s.max_steps,
        seed: s.seed,
        ..TadConfig::default()
    };
    cfg.validate()?;
    let hi = solve_principal_eigenpair(&pot, &basin, bh, s.grid(bh))?;
    let lo = solve_principal_eigenpair(&pot, &basin, bl, s.grid(bl))?;
    let theta = ThetaTable::from_statistics(&basin, exit_statistics(&hi)?, exit_statistics(&lo)?);
    Ok(StepSetup {
        sampler_hi: QsdSampler::new(&hi)?,
        sampler_lo: QsdSampler::new(&lo)?,
        lambda_hi: hi.lambda(),
        lambda_lo: lo.lambda(),
        pot,
        basin,
        cfg,
        theta,
    })
}

fn idealized_exit_step(s: &StudySettings) -> Result<Outcome> {
    let st = step_setup(s, s.step_dt)?;
    let n = s.n_samples;
    let tad: Vec<(f64, Side)> = ensemble(n, |k| {
        let mut rng = stream_rng(s.seed, stream(Study::IdealizedExitStep, 0, k));
        let r = exit_step_idealized(
            &st.basin,
            &st.pot,
            &st.cfg,
            &st.sampler_hi,
            &st.theta,
            StopMode::Enabled,
            &mut rng,
        )?;
        Ok((r.t_min_lo, r.i_min_lo))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let lo_cfg = st.cfg.sde_lo();
    let direct = qsd_exits(
        &st.pot,
        &st.basin,
        &st.sampler_lo,
        &lo_cfg,
        n,
        s.max_steps,
        |k| stream(Study::IdealizedExitStep, 1, k),
    )?;

    let t_tad: Vec<f64> = tad.iter().map(|e| e.0).collect();
    let s_tad: Vec<Side> = tad.iter().map(|e| e.1).collect();
    let t_dir: Vec<f64> = direct.iter().map(|e| e.0).collect();
    let s_dir: Vec<Side> = direct.iter().map(|e| e.1).collect();
    let meta = |r: TestReport| {
        r.with("beta_hi", s.step_beta_hi)
            .with("beta_lo", s.step_beta_lo)
            .with("dt", s.step_dt)
            .with("tilt", s.tilt)
    };

    let mut ks = ks_two_sample(&t_tad, &t_dir, s.alpha)?;
    ks.name = "idealized_exit_step.time_ks".into();
    let z = two_proportion_z(&s_tad, &s_dir)?;
    let frac = |v: &[Side]| v.iter().filter(|&&x| x == Side::Left).count() as f64 / v.len() as f64;
    let sides = TestReport::new(
        "idealized_exit_step.side_fraction",
        z,
        Threshold::AtMost(s.max_standard_errors),
        2 * n,
    )
    .with("left_fraction_tad", frac(&s_tad))
    .with("left_fraction_direct", frac(&s_dir));
    let mut indep = independence_test(&t_tad, &s_tad, s.alpha)?;
    indep.name = "idealized_exit_step.independence".into();
    let mut vs_eig = ks_one_sample_exponential(&t_tad, st.lambda_lo, s.alpha)?;
    vs_eig.name = "idealized_exit_step.tad_vs_eigen_rate".into();
    vs_eig.verdict = Verdict::Informational;
    let reports = vec![
        meta(ks),
        meta(sides),
        meta(indep),
        meta(vs_eig.with("note", "includes time-step bias")),
    ];

    let t = table(&["source", "index", "t_lo", "side"], 2 * n, |k| {
        let (src, i, (t, side)) = if k < n {
            ("tad", k, tad[k])
        } else {
            ("direct", k - n, (direct[k - n].0, direct[k - n].1))
        };
        vec![
            src.to_string(),
            i.to_string(),
            format!("{t:.12e}"),
            side.to_string(),
        ]
    })?;
    Ok((reports, t))
}

fn first_exit_law(s: &StudySettings) -> Result<Outcome> {
    let st = step_setup(s, s.first_exit_dt)?;
    let n = s.n_samples;
    let firsts: Vec<[f64; 2]> = ensemble(n, |k| {
        let mut rng = stream_rng(s.seed, stream(Study::FirstExitLaw, 0, k));
        let r = exit_step_idealized(
            &st.basin,
            &st.pot,
            &st.cfg,
            &st.sampler_hi,
            &st.theta,
            StopMode::Disabled,
            &mut rng,
        )?;
        Ok(Side::BOTH.map(|side| r.first_exit(side).expect("both sides observed").t_hi))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let samples: Vec<Vec<f64>> = (0..2)
        .map(|i| firsts.iter().map(|f| f[i]).collect())
        .collect();
    let hi = &st.theta.hi;
    let rates = [hi.rate(Side::Left), hi.rate(Side::Right)];
    let (_, parts) = joint_exponential_test(&samples, &rates, s.alpha)?;
    let reports = parts
        .into_iter()
        .map(|mut r| {
            r.name = match r.name.as_str() {
                "marginal_0" => "first_exit_law.left_ks".into(),
                "marginal_1" => "first_exit_law.right_ks".into(),
                "correlation_0_1" => "first_exit_law.correlation".into(),
                other => {
                    r.verdict = Verdict::Informational;
                    format!("first_exit_law.{other}")
                }
            };
            r.with("beta_hi", s.step_beta_hi)
                .with("dt", s.first_exit_dt)
                .with("lambda_hi", st.lambda_hi)
        })
        .collect();
    let t = table(&["index", "t_left_hi", "t_right_hi"], n, |k| {
        vec![
            k.to_string(),
            format!("{:.12e}", firsts[k][0]),
            format!("{:.12e}", firsts[k][1]),
        ]
    })?;
    Ok((reports, t))
}

fn stop_replay(s: &StudySettings) -> Result<Outcome> {
    let st = step_setup(s, s.step_dt)?;
    let factors = Side::BOTH.map(|side| st.theta.theta(side));
    let rule = StopRule::Scaled {
        c: st.theta.min_theta(),
    };
    let runs: Vec<_> = ensemble(s.n_replay, |k| {
        let id = stream(Study::StopReplay, 0, k);
        let run = |mode| {
            let mut rng = stream_rng(s.seed, id);
            exit_step_idealized(
                &st.basin,
                &st.pot,
                &st.cfg,
                &st.sampler_hi,
                &st.theta,
                mode,
                &mut rng,
            )
        };
        Ok((run(StopMode::Enabled)?, run(StopMode::Disabled)?))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut mismatches = 0;
    let mut violations = 0;
    for (enabled, disabled) in &runs {
        let replay = replay_stop_rule(&disabled.events, factors, rule);
        if !matches!(replay, Some(r) if r.t_min_lo == enabled.t_min_lo && r.i_min_lo == enabled.i_min_lo)
        {
            mismatches += 1;
        }
        violations += guarantee_violations(&disabled.events, factors, rule);
    }
    let n = runs.len();
    let reports = vec![
        TestReport::new(
            "stop_replay.mismatches",
            mismatches as f64,
            Threshold::AtMost(0.0),
            n,
        ),
        TestReport::new(
            "stop_replay.idealized_guarantee",
            violations as f64,
            Threshold::AtMost(0.0),
            n,
        ),
    ];
    let logs: Vec<_> = runs.into_iter().map(|r| r.1).collect();
    let mut buf = Vec::new();
    write_events_csv(&mut buf, &logs)?;
    Ok((
        reports,
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))?,
    ))
}

fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// For each `β_hi` (with `β_lo = r β_hi`), the relative gap
/// `|Θ_i / Θ_arrhenius - 1|` per side; fits `log g` against
/// `log(1/β_hi - 1/β_lo)` and checks the slope window and that `g`
/// decreases. Returns the reports and a CSV table.
pub fn theta_asymptotics_study(
    pot: &Potential,
    basin: &Basin,
    r: f64,
    beta_hi_list: &[f64],
    grid_n: Option<usize>,
    window: [f64; 2],
) -> Result<(Vec<TestReport>, String)> {
    ensure(r > 1.0, "r", || format!("{r} must exceed 1"))?;
    ensure(beta_hi_list.len() >= 3, "beta_hi_list", || {
        "need at least 3 temperatures".into()
    })?;
    ensure(
        beta_hi_list.windows(2).all(|w| w[0] < w[1]),
        "beta_hi_list",
        || "must be increasing".into(),
    )?;
    let tables: Vec<ThetaTable> = beta_hi_list
        .iter()
        .map(|&bh| {
            let bl = r * bh;
            let n = grid_n.unwrap_or_else(|| default_grid_n(bl));
            let hi = exit_statistics(&solve_principal_eigenpair(pot, basin, bh, n)?)?;
            let lo = exit_statistics(&solve_principal_eigenpair(pot, basin, bl, n)?)?;
            Ok(ThetaTable::from_statistics(basin, hi, lo))
        })
        .collect::<Result<_>>()?;
    let x: Vec<f64> = beta_hi_list
        .iter()
        .map(|&bh| (1.0 / bh - 1.0 / (r * bh)).ln())
        .collect();
    let mut reports = Vec::new();
    for side in Side::BOTH {
        let g: Vec<f64> = tables
            .iter()
            .map(|t| t.entry(side).relative_gap().abs())
            .collect();
        let y: Vec<f64> = g.iter().map(|v| v.ln()).collect();
        let slope = fit_slope(&x, &y);
        let increases = g.windows(2).filter(|w| w[1] >= w[0]).count();
        let meta = |rep: TestReport| {
            rep.with("r", r)
                .with("beta_hi", format!("{beta_hi_list:?}"))
                .with("potential", pot.name())
        };
        reports.push(meta(TestReport::new(
            format!("theta_asymptotics.slope_{side}"),
            slope,
            Threshold::Within(window[0], window[1]),
            g.len(),
        )));
        reports.push(meta(
            TestReport::new(
                format!("theta_asymptotics.monotone_{side}"),
                increases as f64,
                Threshold::AtMost(0.0),
                g.len(),
            )
            .with("gaps", format!("{g:?}")),
        ));
    }
    let t = table(
        &[
            "beta_hi",
            "beta_lo",
            "side",
            "theta_exact",
            "theta_arrhenius",
            "relative_gap",
        ],
        2 * tables.len(),
        |k| {
            let (i, side) = (k / 2, Side::BOTH[k % 2]);
            let e = tables[i].entry(side);
            vec![
                beta_hi_list[i].to_string(),
                (r * beta_hi_list[i]).to_string(),
                side.to_string(),
                format!("{:.12e}", e.theta_exact),
                format!("{:.12e}", e.theta_arrhenius),
                format!("{:.12e}", e.relative_gap()),
            ]
        },
    )?;
    Ok((reports, t))
}

fn theta_study(s: &StudySettings) -> Result<Outcome> {
    let (pot, top) = well(0.0)?;
    let (mut reports, t) = theta_asymptotics_study(
        &pot,
        &top.basins()[0],
        s.theta_ratio,
        &s.theta_betas,
        s.grid_n,
        s.slope_window,
    )?;
    // Same check on a well with symmetric saddles, where higher-order terms
    // are smaller; reported only.
    let cos = Potential::periodic_wells(1, 1.0)?;
    let cos_top = BasinTopology::from_potential(&cos, 1001)?;
    let (extra, _) = theta_asymptotics_study(
        &cos,
        &cos_top.basins()[0],
        s.theta_ratio,
        &s.theta_betas,
        s.grid_n,
        s.slope_window,
    )?;
    reports.extend(extra.into_iter().map(|mut r| {
        r.name = r
            .name
            .replace("theta_asymptotics.", "theta_asymptotics.cosine_");
        r.verdict = Verdict::Informational;
        r
    }));
    Ok((reports, t))
}

/// Fits `log λ` against `β`. Passes iff `|slope + ΔV| / ΔV` is within
/// `tolerance`, with `ΔV` the lowest barrier. Temperatures where the solver
/// underflows are dropped with a note; a basin without a barrier gives an
/// informational report.
pub fn lambda_decay_study(
    pot: &Potential,
    basin: &Basin,
    beta_list: &[f64],
    grid_n: Option<usize>,
    tolerance: f64,
) -> Result<(Vec<TestReport>, String)> {
    ensure(beta_list.len() >= 4, "beta_list", || {
        "need at least 4 temperatures".into()
    })?;
    ensure(
        beta_list.windows(2).all(|w| w[0] < w[1]),
        "beta_list",
        || "must be increasing".into(),
    )?;
    let mut pts = Vec::new();
    let mut dropped = Vec::new();
    for &b in beta_list {
        match solve_principal_eigenpair(pot, basin, b, grid_n.unwrap_or_else(|| default_grid_n(b)))
        {
            Ok(e) => pts.push((b, e.lambda())),
            Err(Error::Underflow { .. }) => dropped.push(b),
            Err(e) => return Err(e),
        }
    }
    ensure(pts.len() >= 2, "beta_list", || {
        format!("only {} temperatures solvable", pts.len())
    })?;
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let slope = fit_slope(&x, &y);
    let dv = basin.min_barrier();
    let mut rep = if dv > 0.0 {
        TestReport::new(
            "lambda_decay.slope",
            (slope + dv).abs() / dv,
            Threshold::AtMost(tolerance),
            pts.len(),
        )
    } else {
        TestReport::informational(
            "lambda_decay.slope",
            slope,
            Threshold::LessThan(0.0),
            pts.len(),
        )
        .with("note", "no barrier")
    };
    rep = rep
        .with("slope", slope)
        .with("barrier", dv)
        .with("potential", pot.name());
    if !dropped.is_empty() {
        rep = rep.with("note", format!("underflow, dropped beta {dropped:?}"));
        if pts.len() < 4 {
            rep.verdict = Verdict::Informational;
        }
    }
    let t = table(&["beta", "lambda"], pts.len(), |k| {
        vec![pts[k].0.to_string(), format!("{:.12e}", pts[k].1)]
    })?;
    Ok((vec![rep], t))
}

/// `max u / u(x0)` over `betas` against `u_bound`, and the comparison
/// error `max |f - u|` (both segments) at `comparison_betas[1]` over its
/// value at `comparison_betas[0]`, which must be below 1.
pub fn qsd_bounds_study(
    pot: &Potential,
    basin: &Basin,
    betas: &[f64],
    comparison_betas: [f64; 2],
    u_bound: f64,
    grid_n: Option<usize>,
) -> Result<(Vec<TestReport>, String)> {
    ensure(!betas.is_empty(), "betas", || "empty".into())?;
    ensure(
        comparison_betas[0] < comparison_betas[1],
        "comparison_betas",
        || "must be increasing".into(),
    )?;
    let mut rows = Vec::new();
    let mut all: Vec<f64> = betas.to_vec();
    all.extend(comparison_betas);
    all.sort_by(f64::total_cmp);
    all.dedup();
    for &b in &all {
        let eig =
            solve_principal_eigenpair(pot, basin, b, grid_n.unwrap_or_else(|| default_grid_n(b)))?;
        let u0 = eig.u_at(basin.minimum);
        let max_u = eig.u().iter().fold(0.0f64, |m, &v| m.max(v)) / u0;
        let mut err = 0.0f64;
        for seg in [Segment::LeftOfMin, Segment::RightOfMin] {
            err = err.max(comparison_error(pot, basin, &eig, seg)?.0);
        }
        rows.push((b, max_u, err));
    }
    let max_u = rows
        .iter()
        .filter(|r| betas.contains(&r.0))
        .map(|r| r.1)
        .fold(0.0, f64::max);
    let err_at = |b: f64| rows.iter().find(|r| r.0 == b).map(|r| r.2).expect("solved");
    let (e0, e1) = (err_at(comparison_betas[0]), err_at(comparison_betas[1]));
    let reports = vec![
        TestReport::new(
            "qsd_bounds.max_u",
            max_u,
            Threshold::AtMost(u_bound),
            betas.len(),
        )
        .with("betas", format!("{betas:?}")),
        TestReport::new(
            "qsd_bounds.comparison_decrease",
            e1 / e0,
            Threshold::LessThan(1.0),
            2,
        )
        .with(&format!("error_beta_{}", comparison_betas[0]), e0)
        .with(&format!("error_beta_{}", comparison_betas[1]), e1),
    ];
    let t = table(
        &["beta", "max_u_over_u_min", "max_abs_f_minus_u"],
        rows.len(),
        |k| {
            vec![
                rows[k].0.to_string(),
                format!("{:.12e}", rows[k].1),
                format!("{:.12e}", rows[k].2),
            ]
        },
    )?;
    Ok((reports, t))
}

fn modified_guarantee(s: &StudySettings) -> Result<Outcome> {
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (part, tilt) in [(0u64, 0.0), (1u64, s.tilt)] {
        let (pot, top) = well(tilt)?;
        let cfg = TadConfig {
            beta_hi: s.guarantee_beta_hi,
            beta_lo: s.guarantee_beta_lo,
            dt: s.guarantee_dt,
            max_steps: s.max_steps,
            seed: s.seed,
            grid_n: s.grid_n,
            t_corr: Some(0.0),
            ..TadConfig::default()
        };
        let model = TadModel::build(Variant::Modified, &pot, &top, &cfg)?;
        let m = &model.basins[0];
        let e_min = m.basin.min_barrier();
        let runs: Vec<_> = ensemble(s.guarantee_n, |k| {
            let mut rng = stream_rng(s.seed, stream(Study::ModifiedGuarantee, part, k));
            exit_step_modified(
                &m.basin,
                &pot,
                &cfg,
                e_min,
                m.t_relax,
                StopMode::Disabled,
                &mut rng,
            )
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let violations: usize = runs
            .iter()
            .map(|r| guarantee_violations(&r.events, m.factors, m.rule))
            .sum();
        let post_stop: usize = runs
            .iter()
            .map(|r| {
                replay_stop_rule(&r.events, m.factors, m.rule)
                    .map_or(0, |p| r.events.len() - p.stop_after)
            })
            .sum();
        reports.push(
            TestReport::new(
                format!("modified_guarantee.tilt_{tilt}"),
                violations as f64,
                Threshold::AtMost(0.0),
                runs.len(),
            )
            .with("post_stop_exits", post_stop)
            .with("e_min", e_min)
            .with("beta_hi", cfg.beta_hi)
            .with("beta_lo", cfg.beta_lo),
        );
        rows.push((tilt, runs.len(), post_stop, violations));
    }
    let t = table(
        &["tilt", "runs", "post_stop_exits", "violations"],
        rows.len(),
        |k| {
            let r = rows[k];
            vec![
                r.0.to_string(),
                r.1.to_string(),
                r.2.to_string(),
                r.3.to_string(),
            ]
        },
    )?;
    Ok((reports, t))
}

fn boost(s: &StudySettings) -> Result<Outcome> {
    let (pot, top) = well(0.0)?;
    let cfg = TadConfig {
        beta_hi: s.boost_beta_hi,
        beta_lo: s.boost_beta_lo,
        dt: s.boost_dt,
        max_steps: s.max_steps,
        seed: s.seed,
        grid_n: s.grid_n,
        ..TadConfig::default()
    };
    let model = TadModel::build(Variant::Modified, &pot, &top, &cfg)?;
    let m = &model.basins[0];
    let n = s.boost_n;
    let tad: Vec<(f64, u64)> = ensemble(n, |k| {
        let mut rng = stream_rng(s.seed, stream(Study::Boost, 0, k));
        let r = model.exit_step(0, &pot, m.basin.minimum, StopMode::Enabled, &mut rng)?;
        Ok((r.t_min_lo, r.sde_steps))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let lo = solve_principal_eigenpair(&pot, &m.basin, cfg.beta_lo, s.grid(cfg.beta_lo))?;
    let sampler = QsdSampler::new(&lo)?;
    let direct = qsd_exits(
        &pot,
        &m.basin,
        &sampler,
        &cfg.sde_lo(),
        n,
        s.max_steps,
        |k| stream(Study::Boost, 1, k),
    )?;

    // Force evaluations per low-temperature exit; a TAD exit also pays for
    // decorrelation.
    let corr_steps = cfg.sde_lo().steps_for(m.t_corr) as f64;
    let tad_cost = tad.iter().map(|e| e.1 as f64).sum::<f64>() / n as f64 + corr_steps;
    let direct_cost = direct.iter().map(|e| e.2 as f64).sum::<f64>() / n as f64;
    let t_tad: Vec<f64> = tad.iter().map(|e| e.0).collect();
    let t_dir: Vec<f64> = direct.iter().map(|e| e.0).collect();
    let d = ks_distance_two_sample(&t_tad, &t_dir)?;
    let mut ks = ks_two_sample(&t_tad, &t_dir, s.alpha)?;
    ks.name = "boost.ks_test".into();
    ks.verdict = Verdict::Informational;
    let meta = |r: TestReport| {
        r.with("beta_hi", cfg.beta_hi)
            .with("beta_lo", cfg.beta_lo)
            .with("dt", cfg.dt)
    };
    let reports = vec![
        meta(
            TestReport::new(
                "boost.ratio",
                direct_cost / tad_cost,
                Threshold::AtLeast(s.boost_min),
                2 * n,
            )
            .with("direct_steps_per_exit", direct_cost)
            .with("tad_steps_per_exit", tad_cost),
        ),
        meta(TestReport::new(
            "boost.ks_distance",
            d,
            Threshold::AtMost(s.boost_ks_tolerance),
            2 * n,
        )),
        meta(ks),
    ];
    let t = table(&["source", "index", "t_lo", "sde_steps"], 2 * n, |k| {
        let (src, i, t, st) = if k < n {
            ("modified", k, tad[k].0, tad[k].1)
        } else {
            ("direct", k - n, direct[k - n].0, direct[k - n].2)
        };
        vec![
            src.to_string(),
            i.to_string(),
            format!("{t:.12e}"),
            st.to_string(),
        ]
    })?;
    Ok((reports, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> StudySettings {
        StudySettings {
            n_samples: 400,
            n_replay: 50,
            guarantee_n: 50,
            boost_n: 200,
            exit_law_dt: 1e-3,
            first_exit_dt: 2e-3,
            ..StudySettings::default()
        }
    }

    #[test]
    fn names_round_trip() {
        for s in Study::ALL {
            assert_eq!(s.name().parse::<Study>().unwrap(), s);
        }
        let e = "nope".parse::<Study>().unwrap_err().to_string();
        assert!(e.contains("symmetric_identity"), "{e}");
    }

    #[test]
    fn symmetric_identity_passes() {
        let out = run_study(Study::SymmetricIdentity, &StudySettings::default()).unwrap();
        assert!(out.reports[0].passed());
        assert!(out.table.lines().count() == 101);
    }

    #[test]
    fn study_is_reproducible() {
        let s = quick();
        let a = run_study(Study::ExitPoint, &s).unwrap();
        let b = run_study(Study::ExitPoint, &s).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.reports, b.reports);
    }

    #[test]
    fn symmetric_theta_gaps_agree() {
        let (pot, top) = well(0.0).unwrap();
        let (reports, table) = theta_asymptotics_study(
            &pot,
            &top.basins()[0],
            3.0,
            &[4.0, 6.0, 8.0],
            Some(4000),
            [0.8, 1.2],
        )
        .unwrap();
        assert_eq!(reports.len(), 4);
        // The Arrhenius factor overshoots, so the signed gap is negative.
        assert!(
            reports[0].statistic.is_finite() && reports[0].statistic > 0.0,
            "{reports:?}"
        );
        assert!(reports[1].passed(), "{reports:?}");
        let gaps: Vec<f64> = table
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        for pair in gaps.chunks(2) {
            assert!((pair[0] - pair[1]).abs() < 1e-10 * pair[0].abs().max(1.0));
        }
        assert!(theta_asymptotics_study(
            &pot,
            &top.basins()[0],
            1.0,
            &[4.0, 6.0, 8.0],
            None,
            [0.8, 1.2]
        )
        .is_err());
    }

    #[test]
    fn lambda_decay_on_canonical_well() {
        let (pot, top) = well(0.0).unwrap();
        let b = &top.basins()[0];
        let betas: Vec<f64> = (6..=16).map(f64::from).collect();
        let (r, _) = lambda_decay_study(&pot, b, &betas, Some(4000), 0.1).unwrap();
        assert!(r[0].passed(), "{r:?}");
        let slope = |n| {
            lambda_decay_study(&pot, b, &betas, Some(n), 0.1).unwrap().0[0]
                .meta("slope")
                .unwrap()
                .parse::<f64>()
                .unwrap()
        };
        assert!((slope(4000) - slope(8000)).abs() < 1e-3);
    }

    #[test]
    fn lambda_decay_without_barrier_is_informational() {
        let pot = Potential::flat(0.0, 1.0).unwrap();
        let basin = Basin {
            label: 0,
            left: 0.0,
            right: 1.0,
            minimum: 0.5,
            v_min: 0.0,
            v_left: 0.0,
            v_right: 0.0,
            curvature_min: 0.0,
            curvature_left: 0.0,
            curvature_right: 0.0,
        };
        let (r, _) =
            lambda_decay_study(&pot, &basin, &[1.0, 2.0, 3.0, 4.0], Some(400), 0.1).unwrap();
        assert_eq!(r[0].verdict, Verdict::Informational);
        // λ = π² / (β L²) decays like 1/β, not exponentially.
        let slope: f64 = r[0].meta("slope").unwrap().parse().unwrap();
        assert!(slope < 0.0);
    }

    #[test]
    fn quick_monte_carlo_studies_run() {
        let s = quick();
        for study in [Study::StopReplay, Study::ModifiedGuarantee] {
            let out = run_study(study, &s).unwrap();
            for r in &out.reports {
                assert!(r.passed(), "{r:?}");
            }
        }
    }

    #[test]
    fn settings_reject_bad_values() {
        assert!(StudySettings {
            alpha: 0.0,
            ..StudySettings::default()
        }
        .validate()
        .is_err());
        assert!(StudySettings {
            step_beta_hi: 20.0,
            ..StudySettings::default()
        }
        .validate()
        .is_err());
        assert!(StudySettings {
            n_samples: 10,
            ..StudySettings::default()
        }
        .validate()
        .is_err());
    }
}
