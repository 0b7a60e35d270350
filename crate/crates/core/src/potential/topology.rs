use super::{CriticalKind, CriticalPoint, Potential};
use crate::dynamics::Side;
use crate::error::{Error, Result};

/// Distance from a maximum below which a basin label is ambiguous.
pub const AMBIGUITY_TOL: f64 = 1e-12;

/// One basin of attraction: the open interval between two adjacent maxima.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Basin {
    pub label: usize,
    /// Left boundary saddle.
    pub left: f64,
    /// Right boundary saddle.
    pub right: f64,
    pub minimum: f64,
    pub v_min: f64,
    pub v_left: f64,
    pub v_right: f64,
    pub curvature_min: f64,
    pub curvature_left: f64,
    pub curvature_right: f64,
}

impl Basin {
    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x > self.left && x < self.right
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn saddle(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    /// `V(saddle) - V(minimum)`.
    pub fn barrier(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.v_left - self.v_min,
            Side::Right => self.v_right - self.v_min,
        }
    }

    pub fn min_barrier(&self) -> f64 {
        self.barrier(Side::Left).min(self.barrier(Side::Right))
    }

    pub fn max_barrier(&self) -> f64 {
        self.barrier(Side::Left).max(self.barrier(Side::Right))
    }

    /// `V''` at the saddle on `side` (negative).
    pub fn saddle_curvature(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.curvature_left,
            Side::Right => self.curvature_right,
        }
    }
}

/// Basins of a potential, ordered left to right and labelled from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinTopology {
    basins: Vec<Basin>,
}

impl BasinTopology {
    pub fn basins(&self) -> &[Basin] {
        &self.basins
    }

    pub fn basin(&self, label: usize) -> Option<&Basin> {
        self.basins.get(label)
    }

    pub fn len(&self) -> usize {
        self.basins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basins.is_empty()
    }

    /// Covered interval `[first maximum, last maximum]`.
    pub fn span(&self) -> (f64, f64) {
        (
            self.basins[0].left,
            self.basins[self.basins.len() - 1].right,
        )
    }

    /// Basin entered by leaving `label` through `side`, or `None` when that
    /// side is an outer wall of the topology.
    pub fn neighbor(&self, label: usize, side: Side) -> Option<usize> {
        match side {
            Side::Left => label.checked_sub(1),
            Side::Right => (label + 1 < self.basins.len()).then_some(label + 1),
        }
    }

    /// Convenience: critical points plus topology in one call.
    pub fn from_potential(pot: &Potential, scan_n: usize) -> Result<Self> {
        let cps = super::find_critical_points(pot, scan_n)?;
        build_topology(pot, &cps)
    }
}

/// Builds one basin per minimum from an alternating, sorted list of critical
/// points whose outermost entries are maxima.
pub fn build_topology(pot: &Potential, cps: &[CriticalPoint]) -> Result<BasinTopology> {
    if !cps.iter().any(|c| c.kind == CriticalKind::Minimum) {
        return Err(Error::InvalidTopology("no minimum found".into()));
    }
    if cps.windows(2).any(|w| w[0].x >= w[1].x) {
        return Err(Error::InvalidTopology(
            "critical points are not sorted".into(),
        ));
    }
    if cps.windows(2).any(|w| w[0].kind == w[1].kind) {
        return Err(Error::InvalidTopology(
            "critical points do not alternate".into(),
        ));
    }
    for end in [&cps[0], &cps[cps.len() - 1]] {
        if end.kind != CriticalKind::Maximum {
            return Err(Error::BoundaryNotMaximum { x: end.x });
        }
    }
    let basins = cps
        .windows(3)
        .step_by(2)
        .enumerate()
        .map(|(label, w)| {
            let (l, m, r) = (&w[0], &w[1], &w[2]);
            Basin {
                label,
                left: l.x,
                right: r.x,
                minimum: m.x,
                v_min: pot.value(m.x),
                v_left: pot.value(l.x),
                v_right: pot.value(r.x),
                curvature_min: m.curvature,
                curvature_left: l.curvature,
                curvature_right: r.curvature,
            }
        })
        .collect::<Vec<_>>();
    for b in &basins {
        if b.barrier(Side::Left) <= 0.0 || b.barrier(Side::Right) <= 0.0 {
            return Err(Error::InvalidTopology(format!(
                "basin {} has a non-positive barrier",
                b.label
            )));
        }
    }
    Ok(BasinTopology { basins })
}

/// Label of the basin containing `x`.
pub fn assign_basin(top: &BasinTopology, x: f64) -> Result<usize> {
    let (lo, hi) = top.span();
    for b in top.basins() {
        for m in [b.left, b.right] {
            if (x - m).abs() <= AMBIGUITY_TOL {
                return Err(Error::AmbiguousPoint { x, maximum: m });
            }
        }
    }
    if !(x > lo && x < hi) {
        return Err(Error::OutsideTopology { x, lo, hi });
    }
    let idx = top.basins.partition_point(|b| b.right < x);
    Ok(top.basins[idx].label)
}
