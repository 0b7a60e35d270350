//! Principal Dirichlet eigenpair of the generator on a basin and everything
//! derived from it: QSD density, exit rate, exit-side probabilities, the
//! Θ ratios used by idealized TAD, Kramers rates and the comparison
//! function `f`.
//!
//! The operator `β⁻¹ e^{βV}(e^{-βV} u')'` is discretized in conservative
//! form on a uniform grid. With weights `m_j = e^{-β(V_j - V_0)}` at nodes
//! and `w_{j+1/2} = e^{-β(V_{j+1/2} - V_0)}` at midpoints (`V_0` the basin
//! minimum) the problem is
//!
//! ```text
//! (w_{j+1/2}(u_j - u_{j+1}) + w_{j-1/2}(u_j - u_{j-1})) / (β h²) = λ m_j u_j
//! ```
//!
//! Its inverse is an explicit resistor-chain Green's function with
//! positive entries, so inverse iteration keeps full relative accuracy in
//! `λ` even when `λ` is many orders of magnitude below the rest of the
//! spectrum. The second eigenvalue, which is O(1), comes from Sturm
//! bisection on the symmetrized tridiagonal matrix.

use std::f64::consts::PI;
use std::io::Write;

use crate::dynamics::Side;
use crate::error::{ensure, Error, Result};
use crate::potential::{Basin, Potential};

/// Largest `β × barrier` handled before `e^{β ΔV}` overflows.
pub const MAX_EXPONENT: f64 = 700.0;
/// Required relative eigen-residual.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Largest tolerated boundary-flux defect of the 3-point estimate.
pub const FLUX_DEFECT_TOL: f64 = 1e-3;

/// Grid size used when none is given: 4000 cells, more at large β to
/// resolve the boundary layers.
pub fn default_grid_n(beta: f64) -> usize {
    4000.max((250.0 * beta).ceil() as usize)
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    a: f64,
    b: f64,
    h: f64,
    x0: f64,
    beta: f64,
    grid: Vec<f64>,
    u: Vec<f64>,
    /// `e^{-β(V_j - V_0)}` at nodes.
    weight: Vec<f64>,
    /// `e^{-β(V_{j+1/2} - V_0)}` at midpoints.
    half_weight: Vec<f64>,
    lambda: f64,
    lambda2: f64,
    residual: f64,
}

impl EigenPair {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Spectral gap `λ2 - λ`.
    pub fn gap(&self) -> f64 {
        self.lambda2 - self.lambda
    }

    /// Relaxation time `10 / gap` used by default for decorrelation and QSD
    /// rejection sampling.
    pub fn relaxation_time(&self) -> f64 {
        10.0 / self.gap()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn minimum(&self) -> f64 {
        self.x0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Eigenfunction with `u(x0) = 1`, zero at both endpoints.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    /// Shifted Boltzmann weights `e^{-β(V - V(x0))}` at the nodes.
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// `‖λ T u - u‖ / ‖u‖` in the weighted norm, `T` the discrete inverse.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Linear interpolation of `u`.
    pub fn u_at(&self, x: f64) -> f64 {
        interp(&self.u, self.a, self.h, x)
    }
}

fn interp(y: &[f64], a: f64, h: f64, x: f64) -> f64 {
    let n = y.len() - 1;
    let s = ((x - a) / h).clamp(0.0, n as f64);
    let j = (s.floor() as usize).min(n - 1);
    let t = s - j as f64;
    y[j] * (1.0 - t) + y[j + 1] * t
}

/// Solves for the principal Dirichlet eigenpair on `basin` with `n` cells.
pub fn solve_principal_eigenpair(
    pot: &Potential,
    basin: &Basin,
    beta: f64,
    n: usize,
) -> Result<EigenPair> {
    ensure(n >= 200, "grid_n", || format!("{n} < 200"))?;
    ensure(beta > 0.0 && beta.is_finite(), "beta", || {
        format!("{beta} must be positive")
    })?;
    let (a, b, x0) = (basin.left, basin.right, basin.minimum);
    ensure(a < x0 && x0 < b, "basin", || {
        format!("minimum {x0} not inside ({a}, {b})")
    })?;
    let h = (b - a) / n as f64;
    let v0 = pot.value(x0);

    let grid: Vec<f64> = (0..=n)
        .map(|j| if j == n { b } else { a + j as f64 * h })
        .collect();
    let v: Vec<f64> = grid.iter().map(|&x| pot.value(x) - v0).collect();
    let vm: Vec<f64> = (0..n)
        .map(|j| pot.value(a + (j as f64 + 0.5) * h) - v0)
        .collect();

    let top = vm.iter().chain(&v).fold(0.0f64, |m, &e| m.max(e));
    if beta * top > MAX_EXPONENT {
        return Err(Error::Underflow {
            beta,
            exponent: beta * top,
        });
    }

    let weight: Vec<f64> = v.iter().map(|&e| (-beta * e).exp()).collect();
    let half_weight: Vec<f64> = vm.iter().map(|&e| (-beta * e).exp()).collect();
    let resist: Vec<f64> = vm.iter().map(|&e| h * (beta * e).exp()).collect();

    // A_j = resistance from the left end to node j, B_j from node j to the
    // right end. Both are built by forward sums so neither suffers from
    // cancellation.
    let mut left_r = vec![0.0; n + 1];
    for j in 1..=n {
        left_r[j] = left_r[j - 1] + resist[j - 1];
    }
    let mut right_r = vec![0.0; n + 1];
    for j in (0..n).rev() {
        right_r[j] = right_r[j + 1] + resist[j];
    }
    let total_r = left_r[n];

    let green = GreenOperator {
        left_r: &left_r,
        right_r: &right_r,
        total_r,
        mass: &weight,
        beta,
        h,
    };
    let mut u: Vec<f64> = grid
        .iter()
        .map(|&x| (PI * (x - a) / (b - a)).sin())
        .collect();
    u[0] = 0.0;
    u[n] = 0.0;
    let mut tu = vec![0.0; n + 1];
    let mut mu = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..2000 {
        green.apply(&u, &mut tu);
        let uu = green.dot(&u, &u);
        mu = green.dot(&tu, &u) / uu;
        // ‖λTu - u‖ = ‖Tu - μu‖/μ with λ = 1/μ.
        let r2: f64 = (0..=n)
            .map(|j| weight[j] * (tu[j] - mu * u[j]).powi(2))
            .sum::<f64>()
            * h;
        let prev = residual;
        residual = r2.sqrt() / (mu * uu.sqrt());
        let scale = tu.iter().fold(0.0f64, |m, &t| m.max(t));
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Solver(
                "inverse iteration produced a zero or non-finite vector".into(),
            ));
        }
        for (ui, ti) in u.iter_mut().zip(&tu) {
            *ui = ti / scale;
        }
        if residual < 1e-13 || (residual < RESIDUAL_TOL && residual >= 0.5 * prev) {
            break;
        }
    }
    if residual >= RESIDUAL_TOL {
        return Err(Error::Solver(format!(
            "inverse iteration did not converge (residual {residual:.3e})"
        )));
    }
    if u[1..n].iter().any(|&ui| ui <= 0.0) {
        return Err(Error::Solver("ground state changes sign".into()));
    }
    let lambda = 1.0 / mu;

    let at_min = interp(&u, a, h, x0);
    for ui in u.iter_mut() {
        *ui /= at_min;
    }

    let lambda2 = second_eigenvalue(&v, &vm, beta, h)?;
    if !(lambda2 > lambda) {
        return Err(Error::Solver(format!(
            "second eigenvalue {lambda2} does not exceed the first {lambda}"
        )));
    }

    Ok(EigenPair {
        a,
        b,
        h,
        x0,
        beta,
        grid,
        u,
        weight,
        half_weight,
        lambda,
        lambda2,
        residual,
    })
}

struct GreenOperator<'a> {
    left_r: &'a [f64],
    right_r: &'a [f64],
    total_r: f64,
    mass: &'a [f64],
    beta: f64,
    h: f64,
}

impl GreenOperator<'_> {
    /// `out = β G (h m u)`, `G_jk = A_min(j,k) B_max(j,k) / R`.
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len() - 1;
        let s: Vec<f64> = (0..=n)
            .map(|k| self.beta * self.h * self.mass[k] * u[k])
            .collect();
        // suffix[j] = Σ_{k≥j} B_k s_k
        let mut suffix = vec![0.0; n + 2];
        for k in (0..=n).rev() {
            suffix[k] = suffix[k + 1] + self.right_r[k] * s[k];
        }
        let mut prefix = 0.0; // Σ_{k<j} A_k s_k
        for j in 0..=n {
            out[j] = (self.left_r[j] * suffix[j] + self.right_r[j] * prefix) / self.total_r;
            prefix += self.left_r[j] * s[j];
        }
    }

    fn dot(&self, p: &[f64], q: &[f64]) -> f64 {
        p.iter()
            .zip(q)
            .zip(self.mass)
            .map(|((a, b), m)| a * b * m)
            .sum::<f64>()
            * self.h
    }
}

/// Second-smallest eigenvalue of the symmetrized operator by Sturm
/// bisection. `v`, `vm`: shifted potential at nodes and midpoints.
fn second_eigenvalue(v: &[f64], vm: &[f64], beta: f64, h: f64) -> Result<f64> {
    let n = vm.len();
    let c = 1.0 / (beta * h * h);
    // Interior nodes 1..n-1.
    let diag: Vec<f64> = (1..n)
        .map(|j| c * ((-beta * (vm[j] - v[j])).exp() + (-beta * (vm[j - 1] - v[j])).exp()))
        .collect();
    let off: Vec<f64> = (1..n - 1)
        .map(|j| -c * (-beta * (vm[j] - 0.5 * (v[j] + v[j + 1]))).exp())
        .collect();
    if diag.iter().chain(&off).any(|d| !d.is_finite()) {
        return Err(Error::Solver("non-finite tridiagonal entry".into()));
    }
    let mut hi = 0.0f64;
    for i in 0..diag.len() {
        let l = if i > 0 { off[i - 1].abs() } else { 0.0 };
        let r = if i < off.len() { off[i].abs() } else { 0.0 };
        hi = hi.max(diag[i] + l + r);
    }
    let norm = hi;
    let count_below = |sigma: f64| -> usize {
        let mut count = 0;
        let mut q = diag[0] - sigma;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..diag.len() {
            let prev = if q == 0.0 { f64::EPSILON * norm } else { q };
            q = diag[i] - sigma - off[i - 1] * off[i - 1] / prev;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let mut lo = 0.0;
    if count_below(hi) < 2 {
        return Err(Error::Solver("fewer than two eigenvalues found".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) >= 2 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Nodal QSD density `u e^{-βV}` with unit trapezoidal integral.
pub fn qsd_density(eig: &EigenPair) -> Vec<f64> {
    let g: Vec<f64> = eig.u.iter().zip(&eig.weight).map(|(u, w)| u * w).collect();
    let z = trapezoid(&g, eig.h);
    g.into_iter().map(|x| x / z).collect()
}

fn trapezoid(y: &[f64], h: f64) -> f64 {
    let n = y.len() - 1;
    h * (0.5 * (y[0] + y[n]) + y[1..n].iter().sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitStatistics {
    pub beta: f64,
    pub lambda: f64,
    pub p_left: f64,
    pub p_right: f64,
    /// Boundary fluxes `-∂_n(u e^{-β(V - V(x0))})`, shifted by `e^{βV(x0)}`
    /// relative to the unshifted density.
    pub flux_left: f64,
    pub flux_right: f64,
    /// `∫ u e^{-β(V - V(x0))}`.
    pub normalization: f64,
    /// `(flux_left + flux_right) / (βλ ∫ u e^{-βV}) - 1` for the
    /// conservative fluxes used to compute `p`.
    pub defect: f64,
    /// The same identity evaluated with one-sided 3-point differences of
    /// `u e^{-βV}`; a grid-resolution diagnostic.
    pub fd_defect: f64,
}

impl ExitStatistics {
    pub fn p(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.p_left,
            Side::Right => self.p_right,
        }
    }

    /// Exit rate through `side`, `λ p_side`.
    pub fn rate(&self, side: Side) -> f64 {
        self.lambda * self.p(side)
    }
}

/// Exit rate and exit-side probabilities from the boundary fluxes.
pub fn exit_statistics(eig: &EigenPair) -> Result<ExitStatistics> {
    let n = eig.n();
    let h = eig.h;
    let beta = eig.beta;
    let u = &eig.u;
    let g: Vec<f64> = u.iter().zip(&eig.weight).map(|(u, w)| u * w).collect();
    let z = trapezoid(&g, h);
    if !(z > 0.0) {
        return Err(Error::DegenerateEigenpair);
    }
    // Conservative fluxes: the discrete equation summed over all nodes gives
    // flux_left + flux_right = βλ z exactly.
    let flux_left = eig.half_weight[0] * (u[1] - u[0]) / h;
    let flux_right = eig.half_weight[n - 1] * (u[n - 1] - u[n]) / h;
    let scale = beta * eig.lambda * z;
    let defect = (flux_left + flux_right) / scale - 1.0;

    let fd_left = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h);
    let fd_right = (-3.0 * g[n] + 4.0 * g[n - 1] - g[n - 2]) / (2.0 * h);
    let fd_defect = (fd_left + fd_right) / scale - 1.0;
    if fd_defect.abs() > FLUX_DEFECT_TOL {
        return Err(Error::GridTooCoarse {
            defect: fd_defect.abs(),
            tolerance: FLUX_DEFECT_TOL,
        });
    }

    let sum = flux_left + flux_right;
    Ok(ExitStatistics {
        beta,
        lambda: eig.lambda,
        p_left: flux_left / sum,
        p_right: flux_right / sum,
        flux_left,
        flux_right,
        normalization: z,
        defect,
        fd_defect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaEntry {
    pub side: Side,
    pub barrier: f64,
    /// `λ^hi p^hi / (λ^lo p^lo)`.
    pub theta_exact: f64,
    /// `exp(-(β^hi - β^lo) ΔV)`.
    pub theta_arrhenius: f64,
}

impl ThetaEntry {
    /// `theta_exact / theta_arrhenius - 1`.
    pub fn relative_gap(&self) -> f64 {
        self.theta_exact / self.theta_arrhenius - 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaTable {
    pub beta_hi: f64,
    pub beta_lo: f64,
    pub hi: ExitStatistics,
    pub lo: ExitStatistics,
    pub entries: [ThetaEntry; 2],
}

impl ThetaTable {
    pub fn from_statistics(basin: &Basin, hi: ExitStatistics, lo: ExitStatistics) -> Self {
        let entries = Side::BOTH.map(|side| ThetaEntry {
            side,
            barrier: basin.barrier(side),
            theta_exact: hi.rate(side) / lo.rate(side),
            theta_arrhenius: arrhenius_factor(basin.barrier(side), hi.beta, lo.beta),
        });
        Self {
            beta_hi: hi.beta,
            beta_lo: lo.beta,
            hi,
            lo,
            entries,
        }
    }

    pub fn entry(&self, side: Side) -> &ThetaEntry {
        &self.entries[side.index()]
    }

    pub fn theta(&self, side: Side) -> f64 {
        self.entry(side).theta_exact
    }

    /// `min_i Θ_i`, the tightest admissible stop constant.
    pub fn min_theta(&self) -> f64 {
        self.entries[0].theta_exact.min(self.entries[1].theta_exact)
    }
}

/// `exp(-(β_hi - β_lo) ΔV)`: the factor turning a high-temperature exit time
/// into a low-temperature one.
pub fn arrhenius_factor(barrier: f64, beta_hi: f64, beta_lo: f64) -> f64 {
    (-(beta_hi - beta_lo) * barrier).exp()
}

/// Solves both temperatures and tabulates exact and Arrhenius ratios.
pub fn theta_table(
    pot: &Potential,
    basin: &Basin,
    beta_hi: f64,
    beta_lo: f64,
    n: usize,
) -> Result<ThetaTable> {
    ensure(beta_hi > 0.0 && beta_hi <= beta_lo, "beta_hi", || {
        format!("need 0 < beta_hi <= beta_lo, got {beta_hi} and {beta_lo}")
    })?;
    let hi = exit_statistics(&solve_principal_eigenpair(pot, basin, beta_hi, n)?)?;
    let lo = if beta_lo == beta_hi {
        hi
    } else {
        exit_statistics(&solve_principal_eigenpair(pot, basin, beta_lo, n)?)?
    };
    Ok(ThetaTable::from_statistics(basin, hi, lo))
}

fn kramers_prefactor(basin: &Basin, side: Side) -> Result<f64> {
    let k0 = basin.curvature_min;
    let ks = basin.saddle_curvature(side);
    if !(k0 > 0.0) || !(ks < 0.0) {
        return Err(Error::InvalidTopology(format!(
            "Kramers rate needs V''(min) > 0 and V''(saddle) < 0, got {k0} and {ks}"
        )));
    }
    Ok((k0 * ks.abs()).sqrt() / (2.0 * PI))
}

/// Eyring–Kramers transition rate through `side`:
/// `sqrt(V''(x0) |V''(x_i)|) / 2π · e^{-β ΔV}`.
pub fn kramers_rate(basin: &Basin, side: Side, beta: f64) -> Result<f64> {
    Ok(kramers_prefactor(basin, side)? * (-beta * basin.barrier(side)).exp())
}

/// Rate of first hitting the saddle point on `side`, twice the transition
/// rate: a trajectory that reaches the saddle crosses back with
/// probability 1/2. This is the large-β limit of `λ p_side`.
pub fn kramers_exit_rate(basin: &Basin, side: Side, beta: f64) -> Result<f64> {
    Ok(2.0 * kramers_rate(basin, side, beta)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    LeftOfMin,
    RightOfMin,
}

/// Values on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl GridFunction {
    pub fn at(&self, x: f64) -> f64 {
        let h = self.x[1] - self.x[0];
        interp(&self.y, self.x[0], h, x)
    }
}

/// `f(x) = ∫_a^x e^{βV} / ∫_a^{x0} e^{βV}` on the left segment and
/// `∫_x^b e^{βV} / ∫_{x0}^b e^{βV}` on the right one, by cumulative
/// trapezoid on `n` cells. The integrand is shifted by its maximum on the
/// segment (the saddle value), which leaves `f` unchanged and avoids
/// overflow.
pub fn comparison_function_f(
    pot: &Potential,
    basin: &Basin,
    beta: f64,
    segment: Segment,
    n: usize,
) -> Result<GridFunction> {
    ensure(n >= 2, "n", || format!("{n} < 2"))?;
    ensure(beta > 0.0 && beta.is_finite(), "beta", || {
        format!("{beta} must be positive")
    })?;
    let (start, end, vs) = match segment {
        Segment::LeftOfMin => (basin.left, basin.minimum, basin.v_left),
        Segment::RightOfMin => (basin.right, basin.minimum, basin.v_right),
    };
    // Integrate from the saddle towards the minimum.
    let h = (end - start) / n as f64;
    let xs: Vec<f64> = (0..=n)
        .map(|j| if j == n { end } else { start + j as f64 * h })
        .collect();
    let g: Vec<f64> = xs
        .iter()
        .map(|&x| (beta * (pot.value(x) - vs)).exp())
        .collect();
    let mut y = vec![0.0; n + 1];
    for j in 1..=n {
        y[j] = y[j - 1] + 0.5 * h.abs() * (g[j - 1] + g[j]);
    }
    let total = y[n];
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Solver(
            "comparison-function normalization is not positive and finite".into(),
        ));
    }
    for v in y.iter_mut() {
        *v /= total;
    }
    y[n] = 1.0;
    let (mut x, mut y) = (xs, y);
    if segment == Segment::RightOfMin {
        x.reverse();
        y.reverse();
    }
    Ok(GridFunction { x, y })
}

/// `(max |f - u|, max |f' - u'|)` over one segment, with `f` on the
/// eigenpair's grid spacing. `u'` uses centred differences of the nodal
/// eigenfunction and `f'` is exact given the normalization.
pub fn comparison_error(
    pot: &Potential,
    basin: &Basin,
    eig: &EigenPair,
    segment: Segment,
) -> Result<(f64, f64)> {
    let len = match segment {
        Segment::LeftOfMin => basin.minimum - basin.left,
        Segment::RightOfMin => basin.right - basin.minimum,
    };
    let cells = ((len / eig.h).round() as usize).max(2);
    let f = comparison_function_f(pot, basin, eig.beta, segment, cells)?;
    let hf = f.x[1] - f.x[0];
    let vs = match segment {
        Segment::LeftOfMin => basin.v_left,
        Segment::RightOfMin => basin.v_right,
    };
    // f' = ± e^{β(V - V_s)} / ∫ e^{β(V - V_s)}; recover the normalization
    // from the first cell.
    let g = |x: f64| (eig.beta * (pot.value(x) - vs)).exp();
    let norm = 0.5 * hf.abs() * (g(f.x[0]) + g(f.x[1])) / (f.y[1] - f.y[0]).abs();
    let sign = if segment == Segment::LeftOfMin {
        1.0
    } else {
        -1.0
    };
    let du: Vec<f64> = {
        let u = &eig.u;
        let n = u.len() - 1;
        (0..=n)
            .map(|j| {
                if j == 0 {
                    (u[1] - u[0]) / eig.h
                } else if j == n {
                    (u[n] - u[n - 1]) / eig.h
                } else {
                    (u[j + 1] - u[j - 1]) / (2.0 * eig.h)
                }
            })
            .collect()
    };
    let mut sup = 0.0f64;
    let mut sup_d = 0.0f64;
    for (&x, &fy) in f.x.iter().zip(&f.y) {
        sup = sup.max((fy - eig.u_at(x)).abs());
        let fd = sign * g(x) / norm;
        sup_d = sup_d.max((fd - interp(&du, eig.a, eig.h, x)).abs());
    }
    Ok((sup, sup_d))
}

/// One row of the spectrum table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumRow {
    pub beta: f64,
    pub lambda: f64,
    pub lambda2: f64,
    pub p_left: f64,
    pub p_right: f64,
    /// Filled when the row belongs to a (β_hi, β_lo) pair.
    pub theta: Option<[(f64, f64); 2]>,
}

impl SpectrumRow {
    pub fn new(eig: &EigenPair, stats: &ExitStatistics) -> Self {
        Self {
            beta: eig.beta,
            lambda: eig.lambda,
            lambda2: eig.lambda2,
            p_left: stats.p_left,
            p_right: stats.p_right,
            theta: None,
        }
    }
}

/// Writes `beta,lambda,lambda2,p_left,p_right[,theta_*]` rows.
pub fn write_spectrum_csv<W: Write>(out: W, rows: &[SpectrumRow]) -> Result<()> {
    let with_theta = rows.iter().any(|r| r.theta.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["beta", "lambda", "lambda2", "p_left", "p_right"];
    if with_theta {
        header.extend([
            "theta_exact_left",
            "theta_arrhenius_left",
            "theta_exact_right",
            "theta_arrhenius_right",
        ]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            format!("{}", r.beta),
            format!("{:.12e}", r.lambda),
            format!("{:.12e}", r.lambda2),
            format!("{:.12}", r.p_left),
            format!("{:.12}", r.p_right),
        ];
        if with_theta {
            match r.theta {
                Some(t) => rec.extend(
                    t.iter()
                        .flat_map(|(e, a)| [format!("{e:.12e}"), format!("{a:.12e}")]),
                ),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::BasinTopology;
    use proptest::prelude::*;

    fn basin_of(v: &Potential) -> Basin {
        BasinTopology::from_potential(v, 301).unwrap().basins()[0]
    }

    fn flat_basin(len: f64) -> (Potential, Basin) {
        let v = Potential::flat(-1.0, len + 1.0).unwrap();
        let b = Basin {
            label: 0,
            left: 0.0,
            right: len,
            minimum: 0.5 * len,
            v_min: 0.0,
            v_left: 0.0,
            v_right: 0.0,
            curvature_min: 0.0,
            curvature_left: 0.0,
            curvature_right: 0.0,
        };
        (v, b)
    }

    #[test]
    fn flat_potential_closed_form() {
        let (v, b) = flat_basin(PI);
        let eig = solve_principal_eigenpair(&v, &b, 1.0, 2000).unwrap();
        assert!((eig.lambda() - 1.0).abs() < 1e-6, "{}", eig.lambda());
        assert!((eig.lambda2() - 4.0).abs() < 1e-5, "{}", eig.lambda2());
        for (x, u) in eig.grid().iter().zip(eig.u()) {
            assert!((u - x.sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn eigenpair_invariants() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        for beta in [2.0, 8.0, 20.0] {
            let eig = solve_principal_eigenpair(&v, &b, beta, 4000).unwrap();
            let u = eig.u();
            assert_eq!((u[0], u[u.len() - 1]), (0.0, 0.0));
            assert!(u[1..u.len() - 1].iter().all(|&x| x > 0.0));
            assert!(eig.lambda() > 0.0 && eig.lambda2() > eig.lambda());
            assert!(eig.residual() < RESIDUAL_TOL);
            assert!((eig.u_at(1.0) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn kramers_agreement_at_beta_8() {
        // Oracle: summed saddle-hitting rates, 2 sqrt(32)/π e^{-8}. The
        // summed transition rates are half of that and off by ~70%.
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let eig = solve_principal_eigenpair(&v, &b, 8.0, 4000).unwrap();
        let oracle = 2.0 * 32f64.sqrt() / PI * (-8.0f64).exp();
        assert!(
            (eig.lambda() / oracle - 1.0).abs() < 0.15,
            "{} vs {oracle}",
            eig.lambda()
        );
    }

    #[test]
    fn grid_refinement_at_beta_8() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let l1 = solve_principal_eigenpair(&v, &b, 8.0, 4000)
            .unwrap()
            .lambda();
        let l2 = solve_principal_eigenpair(&v, &b, 8.0, 8000)
            .unwrap()
            .lambda();
        assert!((l1 / l2 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        assert!(solve_principal_eigenpair(&v, &b, 8.0, 100).is_err());
        assert!(solve_principal_eigenpair(&v, &b, -1.0, 4000).is_err());
        assert!(matches!(
            solve_principal_eigenpair(&v, &b, 800.0, 4000),
            Err(Error::Underflow { .. })
        ));
    }

    #[test]
    fn density_properties() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let eig = solve_principal_eigenpair(&v, &b, 6.0, 4000).unwrap();
        let d = qsd_density(&eig);
        assert!((trapezoid(&d, eig.h()) - 1.0).abs() < 1e-10);
        assert_eq!((d[0], d[d.len() - 1]), (0.0, 0.0));
        let mode = d
            .iter()
            .enumerate()
            .max_by(|p, q| p.1.total_cmp(q.1))
            .unwrap()
            .0;
        assert!((eig.grid()[mode] - 1.0).abs() <= eig.h());
    }

    #[test]
    fn symmetric_exit_statistics() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        for beta in [4.0, 8.0] {
            let s =
                exit_statistics(&solve_principal_eigenpair(&v, &b, beta, 4000).unwrap()).unwrap();
            assert!((s.p_left - 0.5).abs() < 1e-10);
            assert!((s.p_left + s.p_right - 1.0).abs() < 1e-12);
            assert!(s.defect.abs() < 1e-10, "{}", s.defect);
        }
    }

    #[test]
    fn tilted_exit_statistics_follow_arrhenius() {
        let v = Potential::tilted_quartic(0.1);
        let b = basin_of(&v);
        let beta = 8.0;
        let s = exit_statistics(&solve_principal_eigenpair(&v, &b, beta, 4000).unwrap()).unwrap();
        assert!(s.p_left > s.p_right);
        let dv = b.barrier(Side::Right) - b.barrier(Side::Left);
        let ratio = (s.p_left / s.p_right).ln() / (beta * dv);
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn flux_identity_holds() {
        for (v, beta) in [
            (Potential::quartic_well(), 4.0),
            (Potential::tilted_quartic(0.1), 10.0),
            (Potential::periodic_wells(1, 2.0).unwrap(), 6.0),
        ] {
            let b = basin_of(&v);
            let s =
                exit_statistics(&solve_principal_eigenpair(&v, &b, beta, 4000).unwrap()).unwrap();
            assert!(s.defect.abs() < 1e-6, "{}", s.defect);
            assert!(s.fd_defect.abs() < FLUX_DEFECT_TOL);
        }
    }

    #[test]
    fn coarse_grid_is_flagged() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let eig = solve_principal_eigenpair(&v, &b, 40.0, 200).unwrap();
        assert!(matches!(
            exit_statistics(&eig),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn theta_table_examples() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let t = theta_table(&v, &b, 5.0, 5.0, 4000).unwrap();
        for e in &t.entries {
            assert_eq!(e.theta_exact, 1.0);
            assert_eq!(e.theta_arrhenius, 1.0);
        }
        let t = theta_table(&v, &b, 8.0, 24.0, default_grid_n(24.0)).unwrap();
        for e in &t.entries {
            assert!(e.theta_exact > 0.0 && e.theta_exact.is_finite());
            assert!(e.relative_gap().abs() < 0.15, "{}", e.relative_gap());
        }
        assert!(theta_table(&v, &b, 8.0, 4.0, 4000).is_err());
    }

    #[test]
    fn theta_gap_shrinks() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let gaps: Vec<f64> = [8.0, 16.0, 32.0]
            .iter()
            .map(|&bh| {
                let t = theta_table(&v, &b, bh, 3.0 * bh, default_grid_n(3.0 * bh)).unwrap();
                t.entry(Side::Left).relative_gap().abs()
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn kramers_examples() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let r = kramers_rate(&b, Side::Left, 8.0).unwrap();
        assert!((r - 32f64.sqrt() / (2.0 * PI) * (-8.0f64).exp()).abs() < 1e-15);
        assert!((r - 3.021e-4).abs() < 1e-6);
        assert!((kramers_rate(&b, Side::Left, 0.0).unwrap() - 0.9003).abs() < 1e-4);
        let (_, flat) = flat_basin(1.0);
        assert!(matches!(
            kramers_rate(&flat, Side::Left, 1.0),
            Err(Error::InvalidTopology(_))
        ));
    }

    #[test]
    fn exit_rate_approaches_hitting_kramers() {
        // λ over the summed hitting rates tends to 1 as β grows; the
        // transition-rate sum is off by a factor two.
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let rel = |beta: f64| {
            let lam = solve_principal_eigenpair(&v, &b, beta, default_grid_n(beta))
                .unwrap()
                .lambda();
            let k = kramers_exit_rate(&b, Side::Left, beta).unwrap()
                + kramers_exit_rate(&b, Side::Right, beta).unwrap();
            (lam / k - 1.0).abs()
        };
        let (r8, r10, r16) = (rel(8.0), rel(10.0), rel(16.0));
        assert!(r8 < 0.15 && r16 < r10 && r10 < r8, "{r8} {r10} {r16}");
        assert!(r16 < 0.12);
    }

    #[test]
    fn comparison_function_examples() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let f = comparison_function_f(&v, &b, 10.0, Segment::LeftOfMin, 2000).unwrap();
        assert_eq!(f.y[0], 0.0);
        assert_eq!(*f.y.last().unwrap(), 1.0);
        assert!(f.y.windows(2).all(|w| w[1] >= w[0]));
        let r = comparison_function_f(&v, &b, 10.0, Segment::RightOfMin, 2000).unwrap();
        assert_eq!((r.y[0], *r.y.last().unwrap()), (1.0, 0.0));
        assert_eq!(*r.x.last().unwrap(), 2.0);

        let eig = solve_principal_eigenpair(&v, &b, 10.0, 4000).unwrap();
        let (sup, _) = comparison_error(&v, &b, &eig, Segment::LeftOfMin).unwrap();
        assert!(sup < 5e-3, "{sup}");
    }

    #[test]
    fn comparison_error_decreases() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let e8 = comparison_error(
            &v,
            &b,
            &solve_principal_eigenpair(&v, &b, 8.0, 4000).unwrap(),
            Segment::LeftOfMin,
        )
        .unwrap();
        let e16 = comparison_error(
            &v,
            &b,
            &solve_principal_eigenpair(&v, &b, 16.0, 4000).unwrap(),
            Segment::LeftOfMin,
        )
        .unwrap();
        assert!(e16.0 < e8.0 && e16.1 < e8.1, "{e8:?} {e16:?}");
    }

    #[test]
    fn spectrum_csv_layout() {
        let v = Potential::quartic_well();
        let b = basin_of(&v);
        let eig = solve_principal_eigenpair(&v, &b, 8.0, 4000).unwrap();
        let row = SpectrumRow::new(&eig, &exit_statistics(&eig).unwrap());
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "beta,lambda,lambda2,p_left,p_right");
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("8,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn even_potentials_exit_symmetrically(c4 in 0.2f64..3.0, beta in 1.0f64..12.0) {
            // V = -(x-1)^2 + c4 (x-1)^4 style even well around 1, written
            // as a polynomial in x.
            let s = (0.5 / c4).sqrt(); // saddles at 1 ± s
            let c = expand_even(c4);
            let v = Potential::polynomial(c, 1.0 - 1.5 * s, 1.0 + 1.5 * s).unwrap();
            let b = BasinTopology::from_potential(&v, 401).unwrap().basins()[0];
            let eig = solve_principal_eigenpair(&v, &b, beta, 4000).unwrap();
            let st = exit_statistics(&eig).unwrap();
            prop_assert!((st.p_left - st.p_right).abs() < 1e-10);
        }
    }

    /// Coefficients of `(x-1)^2 - c4 (x-1)^4` in powers of `x`.
    fn expand_even(c4: f64) -> Vec<f64> {
        // (x-1)^2 = 1 - 2x + x^2; (x-1)^4 = 1 - 4x + 6x^2 - 4x^3 + x^4
        vec![1.0 - c4, -2.0 + 4.0 * c4, 1.0 - 6.0 * c4, 4.0 * c4, -c4]
    }
}
