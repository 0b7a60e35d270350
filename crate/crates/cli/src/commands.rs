use std::fs;
use std::io::Write;
use std::path::Path;

use tadlab_core::qsd::{default_grid_n, write_spectrum_csv, SpectrumRow};
use tadlab_core::tad::{
    kmc_rates_exact, kmc_rates_kramers, run_direct, run_kmc, run_tad, write_events_csv,
    MetastablePath,
};
use tadlab_core::verify::{
    all_passed, read_summary_csv, run_study, write_summary_csv, Study, Verdict,
};
use tadlab_core::{exit_statistics, solve_principal_eigenpair, stream_rng, Error, SdeConfig};

use crate::config::{Prepared, RunVariant};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    CheckFailed = 1,
    Invalid = 2,
    Timeout = 3,
}

impl Status {
    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Timeout { .. } => Status::Timeout,
            _ => Status::Invalid,
        }
    }
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("output");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn solve(p: &Prepared) -> Result<Status, Error> {
    let basin = &p.topology.basins()[p.cfg.topology.basin];
    let mut rows = Vec::new();
    for &beta in &p.cfg.solve.beta_list {
        let n = p.cfg.solve.grid_n.unwrap_or_else(|| default_grid_n(beta));
        let eig = solve_principal_eigenpair(&p.potential, basin, beta, n)?;
        let stats = exit_statistics(&eig)?;
        println!(
            "beta {beta:>8}  lambda {:.6e}  lambda2 {:.6e}  p_left {:.6}  p_right {:.6}",
            eig.lambda(),
            eig.lambda2(),
            stats.p_left,
            stats.p_right
        );
        rows.push(SpectrumRow::new(&eig, &stats));
    }
    let mut buf = Vec::new();
    write_spectrum_csv(&mut buf, &rows)?;
    let path = p.cfg.out.join("eigen.csv");
    write_atomic(&path, &buf)?;
    println!("wrote {}", path.display());
    Ok(Status::Ok)
}

pub fn run(p: &Prepared) -> Result<Status, Error> {
    let cfg = &p.cfg;
    let top = &p.topology;
    let pot = &p.potential;
    let variant = RunVariant::parse(&cfg.run.variant)?;
    let x_init = cfg
        .run
        .x_init
        .unwrap_or_else(|| top.basins()[top.len() / 2].minimum);
    let start = tadlab_core::assign_basin(top, x_init)?;
    let beta = match variant {
        RunVariant::Tad(_) => cfg.tad.beta_lo,
        _ => cfg.run.beta.unwrap_or(cfg.tad.beta_lo),
    };
    let t_max = match cfg.run.t_max {
        Some(t) => t,
        None => {
            let n = cfg.tad.grid_n.unwrap_or_else(|| default_grid_n(beta));
            10.0 / solve_principal_eigenpair(pot, &top.basins()[start], beta, n)?.lambda()
        }
    };

    let mut status = Status::Ok;
    let (path, events): (MetastablePath, Vec<u8>) = match variant {
        RunVariant::Direct => {
            let sde = SdeConfig::new(beta, cfg.tad.dt, cfg.seed, 0)?;
            let r = run_direct(pot, top, x_init, t_max, &sde, &mut sde.rng())?;
            println!("direct run: {} SDE steps", r.sde_steps);
            (r.path, empty_events()?)
        }
        RunVariant::Kmc => {
            let rates = match cfg.run.kmc_rates.as_str() {
                "kramers" => kmc_rates_kramers(top, beta)?,
                _ => kmc_rates_exact(pot, top, beta, cfg.tad.grid_n)?,
            };
            let path = run_kmc(top, &rates, t_max, &mut stream_rng(cfg.seed, 0), start)?;
            (path, empty_events()?)
        }
        RunVariant::Tad(v) => {
            let tad = tadlab_core::tad::TadConfig { t_max, ..cfg.tad };
            let r = run_tad(v, pot, top, &tad, x_init, &mut stream_rng(cfg.seed, 0))?;
            let mut buf = Vec::new();
            write_events_csv(&mut buf, &r.exit_steps)?;
            println!(
                "{v} TAD: {} exit steps, {} SDE steps ({} high, {} low), boost {:.3e}",
                r.exit_steps.len(),
                r.sde_steps(),
                r.sde_steps_hi,
                r.sde_steps_lo,
                r.boost(tad.dt)
            );
            if let Some(e) = &r.timeout {
                eprintln!("warning: {e}; path.csv and events.csv are partial (last segment marked timeout)");
                status = Status::Timeout;
            }
            (r.path, buf)
        }
    };
    println!(
        "path: {} segment(s), {} transition(s), total time {:.6e} of budget {:.6e}",
        path.segments.len(),
        path.transitions(),
        path.total_time,
        t_max
    );
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    write_atomic(&cfg.out.join("path.csv"), &buf)?;
    write_atomic(&cfg.out.join("events.csv"), &events)?;
    println!(
        "wrote {} and {}",
        cfg.out.join("path.csv").display(),
        cfg.out.join("events.csv").display()
    );
    Ok(status)
}

fn empty_events() -> Result<Vec<u8>, Error> {
    let mut buf = Vec::new();
    write_events_csv(&mut buf, &[])?;
    Ok(buf)
}

pub fn verify(p: &Prepared, names: &[String]) -> Result<Status, Error> {
    let names = if names.is_empty() {
        &p.cfg.verify.studies
    } else {
        names
    };
    if names.is_empty() {
        return Err(Error::Config(format!(
            "no studies selected; valid studies: {}",
            Study::names()
        )));
    }
    let studies = names
        .iter()
        .map(|n| n.parse::<Study>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut reports = Vec::new();
    for study in studies {
        let out = run_study(study, &p.cfg.study)?;
        for r in &out.reports {
            println!("{}", r.line());
        }
        write_atomic(&p.cfg.out.join(out.file_name()), out.table.as_bytes())?;
        reports.extend(out.reports);
    }
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &reports)?;
    let path = p.cfg.out.join("summary.csv");
    write_atomic(&path, &buf)?;
    println!("wrote {}", path.display());
    Ok(if all_passed(&reports) {
        Status::Ok
    } else {
        Status::CheckFailed
    })
}

pub fn report(p: &Prepared) -> Result<Status, Error> {
    let path = p.cfg.out.join("summary.csv");
    let file = fs::File::open(&path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let rows = read_summary_csv(file)?;
    let count = |v| rows.iter().filter(|r| r.verdict == v).count();
    println!(
        "{:<48} {:<13} {:>14}  threshold",
        "check", "verdict", "statistic"
    );
    for r in &rows {
        println!(
            "{:<48} {:<13} {:>14.6e}  {}",
            r.name,
            r.verdict.as_str(),
            r.statistic,
            r.threshold
        );
    }
    let (pass, fail, info) = (
        count(Verdict::Pass),
        count(Verdict::Fail),
        count(Verdict::Informational),
    );
    println!("\n{pass} passed, {fail} failed, {info} informational");
    Ok(if fail == 0 {
        Status::Ok
    } else {
        Status::CheckFailed
    })
}
