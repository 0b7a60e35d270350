//! Euler–Maruyama integration of `dX = -V'(X) dt + sqrt(2/beta) dW` with
//! basin-exit detection, mirror reflection and QSD sampling.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::potential::{Basin, Potential};
use crate::qsd::EigenPair;

/// The random number generator used everywhere in the crate.
pub type SimRng = ChaCha8Rng;

/// Independent generator for replica `stream` of an ensemble seeded by
/// `seed`. ChaCha streams are counter based, so replica `k` sees the same
/// numbers no matter how the ensemble is scheduled.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f(stream)` for `stream in 0..n` on the rayon pool and returns the
/// results in stream order.
pub fn ensemble<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeConfig {
    pub beta: f64,
    pub dt: f64,
    pub seed: u64,
    pub stream: u64,
}

impl SdeConfig {
    pub fn new(beta: f64, dt: f64, seed: u64, stream: u64) -> Result<Self> {
        let cfg = Self {
            beta,
            dt,
            seed,
            stream,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.beta > 0.0 && self.beta.is_finite(), "beta", || {
            format!("{} must be positive", self.beta)
        })?;
        ensure(self.dt > 0.0 && self.dt.is_finite(), "dt", || {
            format!("{} must be positive", self.dt)
        })
    }

    /// Standard deviation of one noise increment, `sqrt(2 dt / beta)`.
    #[inline]
    pub fn noise_scale(&self) -> f64 {
        (2.0 * self.dt / self.beta).sqrt()
    }

    pub fn rng(&self) -> SimRng {
        stream_rng(self.seed, self.stream)
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }

    /// Number of whole steps covering time `t`.
    pub fn steps_for(&self, t: f64) -> u64 {
        let n = (t / self.dt).round();
        if n >= u64::MAX as f64 {
            u64::MAX
        } else {
            n.max(0.0) as u64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitEvent {
    /// `steps * dt`.
    pub time: f64,
    pub side: Side,
    /// First iterate outside the basin.
    pub position: f64,
    pub steps: u64,
}

/// Result of evolving for a bounded number of steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evolution {
    Exited(ExitEvent),
    Survived { position: f64, steps: u64 },
}

/// One Euler–Maruyama step with an explicit standard normal `xi`.
#[inline(always)]
pub fn em_step_with(x: f64, pot: &Potential, dt: f64, scale: f64, xi: f64) -> f64 {
    x - pot.grad(x) * dt + scale * xi
}

/// One Euler–Maruyama step. Fails if the new iterate leaves the potential's
/// domain.
pub fn em_step(x: f64, pot: &Potential, cfg: &SdeConfig, rng: &mut impl Rng) -> Result<f64> {
    let xi: f64 = rng.sample(StandardNormal);
    let y = em_step_with(x, pot, cfg.dt, cfg.noise_scale(), xi);
    if !pot.in_domain(y) {
        let (lo, hi) = pot.domain();
        return Err(Error::DomainEscape { x: y, lo, hi });
    }
    Ok(y)
}

fn check_start(x0: f64, basin: &Basin, closed: bool) -> Result<()> {
    let inside = if closed {
        x0 >= basin.left && x0 <= basin.right
    } else {
        basin.contains(x0)
    };
    ensure(inside, "x0", || {
        format!("{x0} is not inside basin ({}, {})", basin.left, basin.right)
    })
}

/// Evolves for at most `max_steps` steps, stopping at the first iterate
/// outside `(left, right)`.
///
/// The start may lie on the closed interval; a start exactly on a boundary
/// point is how a trajectory re-enters a basin through a saddle.
pub fn evolve_for(
    x0: f64,
    basin: &Basin,
    pot: &Potential,
    cfg: &SdeConfig,
    rng: &mut impl Rng,
    max_steps: u64,
) -> Result<Evolution> {
    check_start(x0, basin, true)?;
    let (a, b) = (basin.left, basin.right);
    let (dt, scale) = (cfg.dt, cfg.noise_scale());
    let mut x = x0;
    let mut steps = 0u64;
    while steps < max_steps {
        let xi: f64 = rng.sample(StandardNormal);
        x = em_step_with(x, pot, dt, scale, xi);
        steps += 1;
        if x <= a || x >= b {
            let side = if x <= a { Side::Left } else { Side::Right };
            return Ok(Evolution::Exited(ExitEvent {
                time: steps as f64 * dt,
                side,
                position: x,
                steps,
            }));
        }
    }
    Ok(Evolution::Survived { position: x, steps })
}

/// Runs until the first iterate outside the basin.
pub fn evolve_until_exit(
    x0: f64,
    basin: &Basin,
    pot: &Potential,
    cfg: &SdeConfig,
    rng: &mut impl Rng,
    max_steps: u64,
) -> Result<ExitEvent> {
    check_start(x0, basin, false)?;
    match evolve_for(x0, basin, pot, cfg, rng, max_steps)? {
        Evolution::Exited(e) => Ok(e),
        Evolution::Survived { steps, .. } => Err(Error::Timeout {
            steps,
            elapsed: steps as f64 * cfg.dt,
        }),
    }
}

/// Folds `y` back into `[a, b]` by mirror reflection about the crossed
/// endpoint(s).
pub fn reflect(y: f64, a: f64, b: f64) -> f64 {
    let w = b - a;
    // Distance along the unfolded line, reduced modulo the period 2w.
    let mut r = (y - a).rem_euclid(2.0 * w);
    if r > w {
        r = 2.0 * w - r;
    }
    (a + r).clamp(a, b)
}

/// Evolves for `t_end` time units, mirroring any step that lands outside
/// `(left, right)` back into the basin. Returns the final position.
pub fn evolve_with_reflection(
    x0: f64,
    basin: &Basin,
    pot: &Potential,
    cfg: &SdeConfig,
    rng: &mut impl Rng,
    t_end: f64,
) -> Result<f64> {
    check_start(x0, basin, true)?;
    ensure(t_end >= 0.0, "t_end", || format!("{t_end} is negative"))?;
    let (a, b) = (basin.left, basin.right);
    let (dt, scale) = (cfg.dt, cfg.noise_scale());
    let mut x = x0;
    for _ in 0..cfg.steps_for(t_end) {
        let xi: f64 = rng.sample(StandardNormal);
        x = em_step_with(x, pot, dt, scale, xi);
        if x <= a || x >= b {
            x = reflect(x, a, b);
        }
    }
    Ok(x)
}

/// Outcome of [`sample_qsd_by_rejection`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionSample {
    pub position: f64,
    /// SDE steps spent, including the rejected attempts.
    pub steps: u64,
    pub restarts: u64,
}

/// Hard cap on rejected attempts.
pub const MAX_RESTARTS: u64 = 1_000_000;

/// Approximate QSD sample: restart from the basin minimum until a trajectory
/// survives `t_relax` without leaving, and return its final position.
///
/// After 100 failures the survival probability is estimated from the
/// observed exit rate; when the expected number of attempts would exceed
/// 100 times [`MAX_RESTARTS`] the sampler gives up early.
pub fn sample_qsd_by_rejection(
    basin: &Basin,
    pot: &Potential,
    cfg: &SdeConfig,
    rng: &mut impl Rng,
    t_relax: f64,
) -> Result<RejectionSample> {
    ensure(t_relax >= 0.0 && t_relax.is_finite(), "t_relax", || {
        format!("{t_relax} must be finite and non-negative")
    })?;
    let n = cfg.steps_for(t_relax);
    let mut steps = 0u64;
    let mut exposure = 0.0;
    for restarts in 0..MAX_RESTARTS {
        match evolve_for(basin.minimum, basin, pot, cfg, rng, n)? {
            Evolution::Survived { position, steps: s } => {
                return Ok(RejectionSample {
                    position,
                    steps: steps + s,
                    restarts,
                });
            }
            Evolution::Exited(e) => {
                steps += e.steps;
                exposure += e.time;
            }
        }
        let failures = restarts + 1;
        if failures >= 100 {
            let log_survival = -(failures as f64 / exposure) * t_relax;
            if log_survival < -((100 * MAX_RESTARTS) as f64).ln() {
                return Err(Error::Infeasible {
                    restarts: failures,
                    t_relax,
                });
            }
        }
    }
    Err(Error::Infeasible {
        restarts: MAX_RESTARTS,
        t_relax,
    })
}

/// Exact sampler for the grid QSD density `u e^{-beta V}` (piecewise linear
/// between nodes).
#[derive(Debug, Clone)]
pub struct QsdSampler {
    a: f64,
    b: f64,
    h: f64,
    density: Vec<f64>,
    /// Cumulative mass up to each node.
    cdf: Vec<f64>,
}

impl QsdSampler {
    pub fn new(eig: &EigenPair) -> Result<Self> {
        let density: Vec<f64> = eig
            .u()
            .iter()
            .zip(eig.weight())
            .map(|(u, w)| (u * w).max(0.0))
            .collect();
        let h = eig.h();
        let mut cdf = Vec::with_capacity(density.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in density.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cdf.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::DegenerateEigenpair);
        }
        let (a, b) = eig.interval();
        Ok(Self {
            a,
            b,
            h,
            density,
            cdf,
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let total = self.cdf[self.cdf.len() - 1];
        loop {
            let u: f64 = rng.sample(Open01);
            let m = u * total;
            let j = (self.cdf.partition_point(|&c| c <= m) - 1).min(self.density.len() - 2);
            let (d0, d1) = (self.density[j], self.density[j + 1]);
            let r = (m - self.cdf[j]) / self.h;
            // Solve d0 t + (d1 - d0) t^2 / 2 = r for t in [0, 1].
            let disc = (d0 * d0 + 2.0 * (d1 - d0) * r).max(0.0);
            let denom = d0 + disc.sqrt();
            let t = if denom > 0.0 {
                (2.0 * r / denom).clamp(0.0, 1.0)
            } else {
                0.5
            };
            let x = self.a + (j as f64 + t) * self.h;
            if x > self.a && x < self.b {
                return x;
            }
        }
    }
}

/// One exact QSD sample. Builds the inverse CDF each call; keep a
/// [`QsdSampler`] around when drawing many samples.
pub fn sample_qsd_exact(eig: &EigenPair, rng: &mut impl Rng) -> Result<f64> {
    Ok(QsdSampler::new(eig)?.sample(rng))
}
