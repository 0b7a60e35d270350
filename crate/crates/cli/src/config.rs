use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tadlab_core::tad::{check_barrier_bound, TadConfig, Variant};
use tadlab_core::verify::{Study, StudySettings};
use tadlab_core::{assign_basin, BasinTopology, Error, Potential};

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub potential: PotentialSection,
    pub topology: TopologySection,
    pub solve: SolveSection,
    pub run: RunSection,
    pub tad: TadConfig,
    pub verify: VerifySection,
    pub study: StudySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            out: PathBuf::from("out"),
            potential: PotentialSection::default(),
            topology: TopologySection::default(),
            solve: SolveSection::default(),
            run: RunSection::default(),
            tad: TadConfig::default(),
            verify: VerifySection::default(),
            study: StudySettings::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: String,
    pub tilt: f64,
    pub wells: usize,
    pub barrier: f64,
    pub coeffs: Vec<f64>,
    pub domain: Option<[f64; 2]>,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self {
            kind: "quartic_well".into(),
            tilt: 0.1,
            wells: 2,
            barrier: 1.0,
            coeffs: Vec::new(),
            domain: None,
        }
    }
}

pub const POTENTIAL_KINDS: &str = "quartic_well, tilted_quartic, periodic_wells, polynomial, flat";

impl PotentialSection {
    pub fn build(&self) -> Result<Potential, Error> {
        let domain = || {
            self.domain.ok_or_else(|| {
                Error::Config(format!(
                    "potential kind `{}` needs `domain = [lo, hi]`",
                    self.kind
                ))
            })
        };
        match self.kind.as_str() {
            "quartic_well" => Ok(Potential::quartic_well()),
            "tilted_quartic" => Ok(Potential::tilted_quartic(self.tilt)),
            "periodic_wells" => Potential::periodic_wells(self.wells, self.barrier),
            "polynomial" => {
                let [lo, hi] = domain()?;
                Potential::polynomial(self.coeffs.clone(), lo, hi)
            }
            "flat" => {
                let [lo, hi] = domain()?;
                Potential::flat(lo, hi)
            }
            k => Err(Error::Config(format!(
                "unknown potential kind `{k}` (expected one of {POTENTIAL_KINDS})"
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub scan_n: usize,
    pub basin: usize,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            scan_n: 2001,
            basin: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub beta_list: Vec<f64>,
    pub grid_n: Option<usize>,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            beta_list: vec![4.0, 8.0, 12.0],
            grid_n: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub variant: String,
    pub x_init: Option<f64>,
    pub t_max: Option<f64>,
    pub beta: Option<f64>,
    pub kmc_rates: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            variant: "idealized".into(),
            x_init: None,
            t_max: None,
            beta: None,
            kmc_rates: "exact".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub studies: Vec<String>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            studies: Study::ALL.iter().map(|s| s.name().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunVariant {
    Direct,
    Kmc,
    Tad(Variant),
}

impl RunVariant {
    pub fn parse(s: &str) -> Result<Self, Error> {
        match s {
            "direct" => Ok(RunVariant::Direct),
            "kmc" => Ok(RunVariant::Kmc),
            other => other.parse().map(RunVariant::Tad).map_err(|_| {
                Error::Config(format!("unknown run variant `{other}` (expected direct, kmc, original, modified or idealized)"))
            }),
        }
    }
}

/// A loaded config together with the objects built from it.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub potential: Potential,
    pub topology: BasinTopology,
}

/// Reads `path` (defaults if `None`), applies command-line overrides and
/// validates everything that can be checked before a run.
pub fn load(
    path: Option<&Path>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<Prepared, Error> {
    let mut cfg: ExperimentConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(o) = out {
        cfg.out = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.tad.seed = cfg.seed;
    cfg.study.seed = cfg.seed;

    let potential = cfg.potential.build()?;
    let topology = BasinTopology::from_potential(&potential, cfg.topology.scan_n)?;
    cfg.tad.validate()?;
    if let Some(e_min) = cfg.tad.e_min {
        for b in topology.basins() {
            check_barrier_bound(b, e_min)?;
        }
    }
    if cfg.topology.basin >= topology.len() {
        return Err(Error::Config(format!(
            "topology.basin = {} but the potential has {} basin(s)",
            cfg.topology.basin,
            topology.len()
        )));
    }
    if cfg
        .solve
        .beta_list
        .iter()
        .any(|&b| !(b > 0.0 && b.is_finite()))
    {
        return Err(Error::Config(format!(
            "solve.beta_list {:?} must hold positive values",
            cfg.solve.beta_list
        )));
    }
    RunVariant::parse(&cfg.run.variant)?;
    if !matches!(cfg.run.kmc_rates.as_str(), "exact" | "kramers") {
        return Err(Error::Config(format!(
            "run.kmc_rates = `{}` (expected exact or kramers)",
            cfg.run.kmc_rates
        )));
    }
    if let Some(b) = cfg.run.beta {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Config(format!("run.beta = {b} must be positive")));
        }
    }
    if let Some(t) = cfg.run.t_max {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!(
                "run.t_max = {t} must be non-negative"
            )));
        }
    }
    if let Some(x) = cfg.run.x_init {
        assign_basin(&topology, x)?;
    }
    for s in &cfg.verify.studies {
        s.parse::<Study>()?;
    }
    cfg.study.validate()?;
    Ok(Prepared {
        cfg,
        potential,
        topology,
    })
}
