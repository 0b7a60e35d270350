//! The config schema as printed by `--help`.

use tadlab_core::qsd::default_grid_n;
use tadlab_core::tad::TadConfig;
use tadlab_core::verify::{Study, StudySettings};

use crate::config::{ExperimentConfig, POTENTIAL_KINDS};

pub struct KeyDoc {
    /// Empty for top-level keys.
    pub section: &'static str,
    pub key: &'static str,
    pub units: &'static str,
    pub default: String,
    /// A valid TOML value, used to check the schema parses.
    #[cfg_attr(not(test), allow(dead_code))]
    pub example: String,
    pub about: String,
}

fn k(
    section: &'static str,
    key: &'static str,
    units: &'static str,
    default: impl ToString,
    example: impl ToString,
    about: impl ToString,
) -> KeyDoc {
    KeyDoc {
        section,
        key,
        units,
        default: default.to_string(),
        example: example.to_string(),
        about: about.to_string(),
    }
}

fn list(v: &[f64]) -> String {
    format!(
        "[{}]",
        v.iter()
            .map(|x| format!("{x:?}"))
            .collect::<Vec<_>>()
            .join(", ")
    )
}

pub fn config_keys() -> Vec<KeyDoc> {
    let c = ExperimentConfig::default();
    let t = TadConfig::default();
    let s = StudySettings::default();
    let p = &c.potential;
    let auto_grid = format!("auto, max(4000, 250 beta) (e.g. {})", default_grid_n(12.0));
    let studies = format!("[{}]", Study::ALL.map(|s| format!("\"{s}\"")).join(", "));
    vec![
        k(
            "",
            "seed",
            "-",
            c.seed,
            7,
            "master seed; every random stream derives from it",
        ),
        k(
            "",
            "out",
            "path",
            c.out.display(),
            "\"out\"",
            "output directory",
        ),
        k(
            "potential",
            "kind",
            "-",
            &p.kind,
            "\"quartic_well\"",
            format!("one of {POTENTIAL_KINDS}"),
        ),
        k(
            "potential",
            "tilt",
            "energy/length",
            p.tilt,
            0.1,
            "linear tilt for tilted_quartic",
        ),
        k(
            "potential",
            "wells",
            "-",
            p.wells,
            2,
            "number of wells for periodic_wells",
        ),
        k(
            "potential",
            "barrier",
            "energy",
            p.barrier,
            1.0,
            "barrier height for periodic_wells",
        ),
        k(
            "potential",
            "coeffs",
            "energy",
            "[]",
            "[0.0, 0.0, 4.0, -4.0, 1.0]",
            "polynomial coefficients c0, c1, ... of V(x)",
        ),
        k(
            "potential",
            "domain",
            "length",
            "none",
            "[-0.5, 2.5]",
            "[lo, hi] for polynomial and flat",
        ),
        k(
            "topology",
            "scan_n",
            "-",
            c.topology.scan_n,
            2001,
            "grid points of the critical-point scan",
        ),
        k(
            "topology",
            "basin",
            "-",
            c.topology.basin,
            0,
            "basin label used by solve",
        ),
        k(
            "solve",
            "beta_list",
            "1/energy",
            list(&c.solve.beta_list),
            "[8.0]",
            "inverse temperatures to solve at",
        ),
        k(
            "solve",
            "grid_n",
            "cells",
            &auto_grid,
            4000,
            "eigen-solver cells",
        ),
        k(
            "run",
            "variant",
            "-",
            &c.run.variant,
            "\"idealized\"",
            "direct, kmc, original, modified or idealized",
        ),
        k(
            "run",
            "x_init",
            "length",
            "minimum of the middle basin",
            1.0,
            "initial position",
        ),
        k(
            "run",
            "t_max",
            "time",
            "10 / lambda of the start basin at the run temperature",
            100.0,
            "low-temperature time budget",
        ),
        k(
            "run",
            "beta",
            "1/energy",
            "tad.beta_lo",
            12.0,
            "temperature of direct and kmc runs",
        ),
        k(
            "run",
            "kmc_rates",
            "-",
            &c.run.kmc_rates,
            "\"exact\"",
            "kmc rates: exact (eigen solver) or kramers",
        ),
        k(
            "tad",
            "beta_hi",
            "1/energy",
            t.beta_hi,
            4.0,
            "high (simulation) inverse temperature",
        ),
        k(
            "tad",
            "beta_lo",
            "1/energy",
            t.beta_lo,
            12.0,
            "low (target) inverse temperature",
        ),
        k(
            "tad",
            "dt",
            "time",
            t.dt,
            1e-3,
            "Euler-Maruyama step at both temperatures",
        ),
        k(
            "tad",
            "t_corr",
            "time",
            "auto, 10 / spectral gap at beta_lo",
            1.0,
            "decorrelation time",
        ),
        k(
            "tad",
            "t_relax",
            "time",
            "auto, 10 / spectral gap at beta_hi",
            1.0,
            "QSD rejection-sampling relaxation time",
        ),
        k(
            "tad",
            "nu_min",
            "1/time",
            t.nu_min,
            1.0,
            "prefactor lower bound of the original stop rule",
        ),
        k(
            "tad",
            "delta",
            "-",
            t.delta,
            0.01,
            "confidence level of the original stop rule",
        ),
        k(
            "tad",
            "e_min",
            "energy",
            "smallest barrier of the topology",
            1.0,
            "barrier lower bound of the modified stop rule; must not exceed any barrier",
        ),
        k(
            "tad",
            "max_steps",
            "steps",
            t.max_steps,
            1_000_000_000u64,
            "step limit of one high-temperature exit attempt",
        ),
        k(
            "tad",
            "grid_n",
            "cells",
            &auto_grid,
            4000,
            "eigen-solver cells for the idealized variant",
        ),
        k(
            "verify",
            "studies",
            "-",
            "all",
            &studies,
            format!("studies to run: {}", Study::names()),
        ),
        k(
            "study",
            "alpha",
            "-",
            s.alpha,
            s.alpha,
            "significance level",
        ),
        k(
            "study",
            "n_samples",
            "-",
            s.n_samples,
            s.n_samples,
            "sample size of exit_law, exit_point, idealized_exit_step, first_exit_law",
        ),
        k(
            "study",
            "tilt",
            "energy/length",
            s.tilt,
            s.tilt,
            "tilt of the asymmetric well",
        ),
        k(
            "study",
            "grid_n",
            "cells",
            &auto_grid,
            4000,
            "eigen-solver cells",
        ),
        k(
            "study",
            "max_steps",
            "steps",
            s.max_steps,
            s.max_steps,
            "step limit of one exit",
        ),
        k(
            "study",
            "identity_vectors",
            "-",
            s.identity_vectors,
            s.identity_vectors,
            "random vectors for symmetric_identity",
        ),
        k(
            "study",
            "identity_tolerance",
            "-",
            s.identity_tolerance,
            s.identity_tolerance,
            "relative error bound for symmetric_identity",
        ),
        k(
            "study",
            "exit_law_beta",
            "1/energy",
            s.exit_law_beta,
            s.exit_law_beta,
            "temperature of exit_law",
        ),
        k(
            "study",
            "exit_law_dt",
            "time",
            s.exit_law_dt,
            s.exit_law_dt,
            "time step of exit_law",
        ),
        k(
            "study",
            "exit_point_beta",
            "1/energy",
            s.exit_point_beta,
            s.exit_point_beta,
            "temperature of exit_point",
        ),
        k(
            "study",
            "exit_point_dt",
            "time",
            s.exit_point_dt,
            s.exit_point_dt,
            "time step of exit_point",
        ),
        k(
            "study",
            "side_tolerance",
            "-",
            s.side_tolerance,
            s.side_tolerance,
            "allowed |left fraction - 1/2| on the symmetric well",
        ),
        k(
            "study",
            "max_standard_errors",
            "-",
            s.max_standard_errors,
            s.max_standard_errors,
            "allowed standard errors for side fractions",
        ),
        k(
            "study",
            "step_beta_hi",
            "1/energy",
            s.step_beta_hi,
            s.step_beta_hi,
            "high temperature of the exit-step studies",
        ),
        k(
            "study",
            "step_beta_lo",
            "1/energy",
            s.step_beta_lo,
            s.step_beta_lo,
            "low temperature of the exit-step studies",
        ),
        k(
            "study",
            "step_dt",
            "time",
            s.step_dt,
            s.step_dt,
            "time step of idealized_exit_step and stop_replay",
        ),
        k(
            "study",
            "first_exit_dt",
            "time",
            s.first_exit_dt,
            s.first_exit_dt,
            "time step of first_exit_law",
        ),
        k(
            "study",
            "n_replay",
            "-",
            s.n_replay,
            s.n_replay,
            "exit steps recorded by stop_replay",
        ),
        k(
            "study",
            "theta_ratio",
            "-",
            s.theta_ratio,
            s.theta_ratio,
            "beta_lo / beta_hi in theta_asymptotics",
        ),
        k(
            "study",
            "theta_betas",
            "1/energy",
            list(&s.theta_betas),
            list(&s.theta_betas),
            "beta_hi values of theta_asymptotics",
        ),
        k(
            "study",
            "slope_window",
            "-",
            list(&s.slope_window),
            list(&s.slope_window),
            "accepted log-log slope range",
        ),
        k(
            "study",
            "lambda_betas",
            "1/energy",
            list(&s.lambda_betas),
            list(&s.lambda_betas),
            "temperatures of lambda_decay",
        ),
        k(
            "study",
            "lambda_slope_tolerance",
            "-",
            s.lambda_slope_tolerance,
            s.lambda_slope_tolerance,
            "relative slope tolerance of lambda_decay",
        ),
        k(
            "study",
            "bounds_betas",
            "1/energy",
            list(&s.bounds_betas),
            list(&s.bounds_betas),
            "temperatures of the max-u check",
        ),
        k(
            "study",
            "u_bound",
            "-",
            s.u_bound,
            s.u_bound,
            "bound on max u / u(minimum)",
        ),
        k(
            "study",
            "comparison_betas",
            "1/energy",
            list(&s.comparison_betas),
            list(&s.comparison_betas),
            "temperatures of the comparison-function check",
        ),
        k(
            "study",
            "guarantee_n",
            "-",
            s.guarantee_n,
            s.guarantee_n,
            "modified exit steps per well in modified_guarantee",
        ),
        k(
            "study",
            "guarantee_beta_hi",
            "1/energy",
            s.guarantee_beta_hi,
            s.guarantee_beta_hi,
            "high temperature of modified_guarantee",
        ),
        k(
            "study",
            "guarantee_beta_lo",
            "1/energy",
            s.guarantee_beta_lo,
            s.guarantee_beta_lo,
            "low temperature of modified_guarantee",
        ),
        k(
            "study",
            "guarantee_dt",
            "time",
            s.guarantee_dt,
            s.guarantee_dt,
            "time step of modified_guarantee",
        ),
        k(
            "study",
            "boost_n",
            "-",
            s.boost_n,
            s.boost_n,
            "exits per method in boost",
        ),
        k(
            "study",
            "boost_beta_hi",
            "1/energy",
            s.boost_beta_hi,
            s.boost_beta_hi,
            "high temperature of boost",
        ),
        k(
            "study",
            "boost_beta_lo",
            "1/energy",
            s.boost_beta_lo,
            s.boost_beta_lo,
            "low temperature of boost",
        ),
        k(
            "study",
            "boost_dt",
            "time",
            s.boost_dt,
            s.boost_dt,
            "time step of boost",
        ),
        k(
            "study",
            "boost_ks_tolerance",
            "-",
            s.boost_ks_tolerance,
            s.boost_ks_tolerance,
            "allowed KS distance between modified TAD and direct exits",
        ),
        k(
            "study",
            "boost_min",
            "-",
            s.boost_min,
            s.boost_min,
            "required force-evaluation saving",
        ),
    ]
}

/// Long help text appended to `--help`.
pub fn config_help() -> String {
    let mut out = String::from(
        "CONFIG FILE (TOML; every key optional, unknown keys rejected)\n\
         Energies are in units of V, time in units of the SDE clock, beta = 1/kT.\n",
    );
    let mut section = None;
    for d in config_keys() {
        if section != Some(d.section) {
            section = Some(d.section);
            out.push('\n');
            out.push_str(&if d.section.is_empty() {
                "(top level)".to_string()
            } else {
                format!("[{}]", d.section)
            });
            out.push('\n');
        }
        out.push_str(&format!(
            "  {:<24} {:<14} default: {}\n  {:<24} {}\n",
            d.key, d.units, d.default, "", d.about
        ));
    }
    out.push_str(
        "\nEXIT CODES\n  0  success\n  1  a verification check failed\n  2  invalid configuration or input, or a solver error\n  3  a run timed out; partial outputs were written\n",
    );
    out
}

/// A commented config file that sets every documented key to its example
/// value; kept in the repository as `docs/config.example.toml`.
#[cfg(test)]
pub fn full_example() -> String {
    let mut out = String::from(
        "# Every config key with an example value. Generated from the CLI's key table.\n",
    );
    let mut section = "";
    for d in config_keys() {
        if d.section != section {
            section = d.section;
            out.push_str(&format!("\n[{section}]\n"));
        }
        out.push_str(&format!(
            "# {} ({}; default: {})\n{} = {}\n",
            d.about, d.units, d.default, d.key, d.example
        ));
    }
    out
}
