use super::Potential;
use crate::error::{ensure, Error, Result};

/// Required `|V'|` at a refined critical point.
pub const CRIT_TOL: f64 = 1e-10;
/// Minimum `|V''|` for a critical point to count as non-degenerate.
pub const MORSE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalKind {
    Minimum,
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub x: f64,
    pub kind: CriticalKind,
    /// `V(x)`
    pub value: f64,
    /// `V''(x)`
    pub curvature: f64,
}

/// Locates every critical point of `pot` seen as a sign change of `V'` on a
/// uniform scan of `scan_n` nodes, refines each to full precision and
/// classifies it. Points where `V'` touches zero without changing sign are
/// reported as [`Error::NonMorse`].
pub fn find_critical_points(pot: &Potential, scan_n: usize) -> Result<Vec<CriticalPoint>> {
    ensure(scan_n >= 2, "scan_n", || format!("{scan_n} < 2"))?;
    let (lo, hi) = pot.domain();
    let h = (hi - lo) / (scan_n - 1) as f64;
    let xs: Vec<f64> = (0..scan_n)
        .map(|k| {
            if k == scan_n - 1 {
                hi
            } else {
                lo + k as f64 * h
            }
        })
        .collect();
    let gs: Vec<f64> = xs.iter().map(|&x| pot.grad(x)).collect();

    let mut roots = Vec::new();
    for k in 0..scan_n {
        if gs[k] == 0.0 {
            roots.push(xs[k]);
        } else if k + 1 < scan_n && gs[k + 1] != 0.0 && (gs[k] < 0.0) != (gs[k + 1] < 0.0) {
            roots.push(refine_root(
                |x| pot.grad(x),
                |x| pot.hess(x),
                xs[k],
                xs[k + 1],
            ));
        }
    }

    // V' touching zero without a sign change is an inflection of V with V' = 0.
    for k in 1..scan_n.saturating_sub(1) {
        let same = |p: f64, q: f64| p != 0.0 && q != 0.0 && (p < 0.0) == (q < 0.0);
        let (a, b, c) = (gs[k - 1].abs(), gs[k].abs(), gs[k + 1].abs());
        if same(gs[k - 1], gs[k]) && same(gs[k], gs[k + 1]) && b <= a && b <= c {
            let (ha, hb) = (pot.hess(xs[k - 1]), pot.hess(xs[k + 1]));
            if (ha < 0.0) != (hb < 0.0) {
                let x = refine_root(|x| pot.hess(x), |x| third_fd(pot, x), xs[k - 1], xs[k + 1]);
                if pot.grad(x).abs() <= CRIT_TOL {
                    return Err(Error::NonMorse {
                        x,
                        vpp: pot.hess(x),
                    });
                }
            }
        }
    }

    let mut out = Vec::with_capacity(roots.len());
    for x in roots {
        let g = pot.grad(x);
        let vpp = pot.hess(x);
        if vpp.abs() <= MORSE_TOL {
            return Err(Error::NonMorse { x, vpp });
        }
        if g.abs() >= CRIT_TOL {
            return Err(Error::Solver(format!(
                "critical point refinement stalled at x = {x} with |V'| = {:.3e}",
                g.abs()
            )));
        }
        let kind = if vpp > 0.0 {
            CriticalKind::Minimum
        } else {
            CriticalKind::Maximum
        };
        out.push(CriticalPoint {
            x,
            kind,
            value: pot.value(x),
            curvature: vpp,
        });
    }
    out.sort_by(|a, b| a.x.total_cmp(&b.x));
    out.dedup_by(|a, b| (a.x - b.x).abs() < 1e-12);

    if out.windows(2).any(|w| w[0].kind == w[1].kind) {
        return Err(Error::InvalidTopology(
            "critical points do not alternate between minima and maxima; increase scan_n".into(),
        ));
    }
    Ok(out)
}

fn third_fd(pot: &Potential, x: f64) -> f64 {
    let s = 1e-5;
    (pot.hess(x + s) - pot.hess(x - s)) / (2.0 * s)
}

/// Safeguarded Newton on a sign-changing bracket, run to full precision so
/// that degenerate (slowly converging) roots end up where `V''` can be
/// inspected reliably.
fn refine_root(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    let mut x = 0.5 * (a + b);
    for _ in 0..400 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if (fx < 0.0) == (fa < 0.0) {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        let d = df(x);
        let newton = x - fx / d;
        let next = if d != 0.0 && newton > a.min(b) && newton < a.max(b) {
            newton
        } else {
            0.5 * (a + b)
        };
        if next == x || (b - a).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            break;
        }
        x = next;
    }
    // Newton may oscillate near a double root; take the better end.
    [x, a, b]
        .into_iter()
        .min_by(|p, q| f(*p).abs().total_cmp(&f(*q).abs()))
        .unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use CriticalKind::*;

    fn brute_force_roots(pot: &Potential, n: usize) -> Vec<f64> {
        // Independent oracle: sign changes of V' on a dense grid, linearly
        // interpolated inside the cell.
        let (lo, hi) = pot.domain();
        let h = (hi - lo) / n as f64;
        let mut out = Vec::new();
        let mut prev = pot.grad(lo);
        for k in 1..=n {
            let x = lo + k as f64 * h;
            let g = pot.grad(x);
            if (g < 0.0) != (prev < 0.0) || g == 0.0 {
                out.push(x - h * g / (g - prev));
            }
            prev = g;
        }
        out
    }

    #[test]
    fn canonical_well_critical_points() {
        let cps = find_critical_points(&Potential::quartic_well(), 301).unwrap();
        let got: Vec<_> = cps.iter().map(|c| (c.x, c.kind)).collect();
        assert_eq!(got.len(), 3);
        for ((x, kind), (ex, ekind)) in
            got.iter()
                .zip([(0.0, Maximum), (1.0, Minimum), (2.0, Maximum)])
        {
            assert!((x - ex).abs() < 1e-12, "{x} vs {ex}");
            assert_eq!(*kind, ekind);
        }
        for c in &cps {
            assert!(Potential::quartic_well().grad(c.x).abs() < CRIT_TOL);
        }
    }

    #[test]
    fn parabola_has_single_minimum() {
        let v = Potential::polynomial(vec![0.0, 0.0, 1.0], -1.0, 1.0).unwrap();
        let cps = find_critical_points(&v, 100).unwrap();
        assert_eq!(cps.len(), 1);
        assert_eq!(cps[0].kind, Minimum);
        assert!(cps[0].x.abs() < 1e-12);
    }

    #[test]
    fn tilted_well_matches_dense_grid() {
        let v = Potential::tilted_quartic(0.1);
        let cps = find_critical_points(&v, 301).unwrap();
        let oracle = brute_force_roots(&v, 1_000_000);
        assert_eq!(cps.len(), 3);
        assert_eq!(oracle.len(), 3);
        for (c, o) in cps.iter().zip(&oracle) {
            assert!((c.x - o).abs() < 1e-6, "{} vs {o}", c.x);
        }
        // Each point moved away from the untilted location.
        for (c, base) in cps.iter().zip([0.0, 1.0, 2.0]) {
            assert!((c.x - base).abs() > 1e-3);
        }
        assert_eq!(
            cps.iter().map(|c| c.kind).collect::<Vec<_>>(),
            vec![Maximum, Minimum, Maximum]
        );
    }

    #[test]
    fn degenerate_points_are_rejected() {
        // V = x^4: sign change of V' but V''(0) = 0.
        let quartic = Potential::polynomial(vec![0.0, 0.0, 0.0, 0.0, 1.0], -1.0, 1.3).unwrap();
        assert!(matches!(
            find_critical_points(&quartic, 200),
            Err(Error::NonMorse { .. })
        ));
        // V = x^3: V' touches zero without changing sign.
        let cubic = Potential::polynomial(vec![0.0, 0.0, 0.0, 1.0], -1.0, 1.3).unwrap();
        match find_critical_points(&cubic, 200) {
            Err(Error::NonMorse { x, .. }) => assert!(x.abs() < 1e-6),
            other => panic!("expected NonMorse, got {other:?}"),
        }
    }

    #[test]
    fn refinement_is_stable_under_scan_doubling() {
        for v in [
            Potential::tilted_quartic(0.1),
            Potential::periodic_wells(3, 1.5).unwrap(),
        ] {
            let a = find_critical_points(&v, 157).unwrap();
            let b = find_critical_points(&v, 314).unwrap();
            assert_eq!(a.len(), b.len());
            for (p, q) in a.iter().zip(&b) {
                assert!((p.x - q.x).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scan_n_must_be_at_least_two() {
        assert!(find_critical_points(&Potential::quartic_well(), 1).is_err());
    }
}
