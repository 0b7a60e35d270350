//! One-dimensional potentials, their critical points, and the basin
//! decomposition of the line.

mod critical;
mod topology;

pub use critical::{find_critical_points, CriticalKind, CriticalPoint, CRIT_TOL, MORSE_TOL};
pub use topology::{assign_basin, build_topology, Basin, BasinTopology, AMBIGUITY_TOL};

use std::f64::consts::PI;

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// Coefficients in increasing degree, with first and second derivative tables.
    Polynomial {
        c: Vec<f64>,
        dc: Vec<f64>,
        ddc: Vec<f64>,
    },
    /// `amp * (cos(k x) - 1)`.
    Cosine { amp: f64, k: f64 },
}

/// A smooth potential on a closed interval.
///
/// Values are dimensionless energies; `grad` and `hess` are analytic.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    name: String,
    shape: Shape,
    lo: f64,
    hi: f64,
}

impl Potential {
    /// The reference single well `V(x) = -x^2 (x-2)^2` on `[-0.5, 2.5]`:
    /// maxima at 0 and 2, minimum at 1, unit barrier on both sides.
    pub fn quartic_well() -> Self {
        Self::tilted_quartic(0.0).renamed("quartic_well")
    }

    /// `V(x) = -x^2 (x-2)^2 + tilt * x` on `[-0.5, 2.5]`.
    pub fn tilted_quartic(tilt: f64) -> Self {
        let mut p = Self::polynomial_unchecked(vec![0.0, tilt, -4.0, 4.0, -1.0], -0.5, 2.5);
        p.name = format!("tilted_quartic(tilt={tilt})");
        p
    }

    /// `V(x) = (barrier / 2) (cos(pi x) - 1)` on `[-0.5, 2 wells + 0.5]`:
    /// maxima at even integers, minima at odd integers.
    pub fn periodic_wells(wells: usize, barrier: f64) -> Result<Self> {
        ensure(wells >= 1, "wells", || "need at least one well".into())?;
        ensure(barrier > 0.0 && barrier.is_finite(), "barrier", || {
            format!("{barrier} must be positive")
        })?;
        Ok(Self {
            name: format!("periodic_wells(wells={wells},barrier={barrier})"),
            shape: Shape::Cosine {
                amp: 0.5 * barrier,
                k: PI,
            },
            lo: -0.5,
            hi: 2.0 * wells as f64 + 0.5,
        })
    }

    /// A user polynomial `c0 + c1 x + c2 x^2 + ...` on `[lo, hi]`.
    pub fn polynomial(coeffs: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        ensure(!coeffs.is_empty(), "coeffs", || {
            "at least one coefficient required".into()
        })?;
        ensure(coeffs.iter().all(|c| c.is_finite()), "coeffs", || {
            "coefficients must be finite".into()
        })?;
        ensure(
            lo.is_finite() && hi.is_finite() && lo < hi,
            "domain",
            || format!("[{lo}, {hi}] is not an interval"),
        )?;
        Ok(Self::polynomial_unchecked(coeffs, lo, hi))
    }

    /// `V = 0` on `[lo, hi]`.
    pub fn flat(lo: f64, hi: f64) -> Result<Self> {
        Ok(Self::polynomial(vec![0.0], lo, hi)?.renamed("flat"))
    }

    fn polynomial_unchecked(c: Vec<f64>, lo: f64, hi: f64) -> Self {
        let dc = derivative(&c);
        let ddc = derivative(&dc);
        Self {
            name: format!("polynomial({c:?})"),
            shape: Shape::Polynomial { c, dc, ddc },
            lo,
            hi,
        }
    }

    fn renamed(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Closed domain `[lo, hi]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn in_domain(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Polynomial { c, .. } => horner(c, x),
            Shape::Cosine { amp, k } => amp * ((k * x).cos() - 1.0),
        }
    }

    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Polynomial { dc, .. } => horner(dc, x),
            Shape::Cosine { amp, k } => -amp * k * (k * x).sin(),
        }
    }

    #[inline]
    pub fn hess(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Polynomial { ddc, .. } => horner(ddc, x),
            Shape::Cosine { amp, k } => -amp * k * k * (k * x).cos(),
        }
    }
}

#[inline]
fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc.mul_add(x, ci))
}

fn derivative(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(i, &ci)| i as f64 * ci)
        .collect()
}
