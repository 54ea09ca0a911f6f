//! Bracket-and-refine root search for smooth band-limited functions.
//!
//! Shared by the characteristic-polynomial root finder and the quantum-graph
//! secular equation. The scan samples the function on a uniform grid offset
//! to cell midpoints, refines sign changes with a safeguarded Newton
//! iteration, and classifies tangential touches (double roots) through the
//! derivative's sign changes.

use rayon::prelude::*;

/// The function under scan, with one exact derivative. The curvature may be
/// a finite-difference approximation; it is only consulted to reject
/// suspected roots of multiplicity above two.
pub(crate) trait Objective: Sync {
    fn value(&self, x: f64) -> f64;
    fn slope(&self, x: f64) -> f64;
    fn curvature(&self, x: f64) -> f64;
}

pub(crate) struct ScanParams {
    pub grid_step: f64,
    /// Absolute threshold on `|f|` for tangential-touch classification.
    pub touch_tol: f64,
    /// Absolute threshold on `|f″|` below which a touch is rejected as a
    /// possible higher-multiplicity root.
    pub curvature_tol: f64,
}

#[derive(Debug)]
pub(crate) enum ScanError {
    /// `|f|`, `|f′|`, `|f″|` all vanish near `x`: multiplicity above two.
    MultiplicityOverflow { x: f64 },
}

/// All roots of `f` in `(lo, hi]`, with multiplicity 1 or 2, sorted.
/// `sign_at_lo` disambiguates the sign of `f(lo)` when `f(lo) = 0` (the
/// caller handles a root exactly at `lo` separately).
pub(crate) fn scan_roots<O: Objective>(
    f: &O,
    lo: f64,
    hi: f64,
    sign_at_lo: f64,
    p: &ScanParams,
) -> Result<Vec<(f64, u8)>, ScanError> {
    let span = hi - lo;
    if span <= 0.0 {
        return Ok(Vec::new());
    }
    let cells = (span / p.grid_step).ceil() as usize + 1;
    // Midpoint-offset samples dodge roots that sit exactly on round grid
    // points; the interval ends are added explicitly.
    let mut xs = Vec::with_capacity(cells + 2);
    xs.push(lo);
    for i in 0..cells {
        let x = lo + (i as f64 + 0.5) * p.grid_step;
        if x < hi {
            xs.push(x);
        }
    }
    xs.push(hi);

    let vals: Vec<f64> = xs.par_iter().map(|&x| f.value(x)).collect();

    #[derive(Clone, Copy)]
    enum Candidate {
        Cross(f64, f64),
        Dip(f64, f64),
    }

    let mut cands = Vec::new();
    for i in 0..xs.len() - 1 {
        let (a, b) = (xs[i], xs[i + 1]);
        let fa = if i == 0 && vals[0] == 0.0 {
            sign_at_lo
        } else {
            vals[i]
        };
        let fb = vals[i + 1];
        if fa == 0.0 && fb == 0.0 {
            continue; // degenerate sampling; neighbours will bracket
        }
        if fa * fb < 0.0 {
            cands.push(Candidate::Cross(a, b));
        } else if f.slope(a) * f.slope(b) < 0.0 {
            cands.push(Candidate::Dip(a, b));
        }
    }

    let refined: Vec<Result<Vec<(f64, u8)>, ScanError>> = cands
        .par_iter()
        .map(|cand| match *cand {
            Candidate::Cross(a, b) => Ok(vec![(refine_cross(f, a, b), 1)]),
            Candidate::Dip(a, b) => classify_dip(f, a, b, p),
        })
        .collect();

    let mut roots = Vec::new();
    for r in refined {
        roots.extend(r?);
    }
    roots.retain(|&(x, _)| x > lo && x <= hi);
    roots.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(roots)
}

/// Safeguarded Newton within a sign-change bracket: any step that leaves the
/// bracket falls back to bisection, and the bracket shrinks every iteration.
fn refine_cross<O: Objective>(f: &O, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f.value(a);
    let mut x = 0.5 * (a + b);
    for _ in 0..120 {
        let fx = f.value(x);
        if fx == 0.0 {
            return x;
        }
        if fa * fx < 0.0 {
            b = x;
        } else {
            a = x;
            fa = fx;
        }
        let d = f.slope(x);
        let mut next = if d != 0.0 { x - fx / d } else { f64::NAN };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return pick_best(f, next, x);
        }
        x = next;
    }
    x
}

fn pick_best<O: Objective>(f: &O, a: f64, b: f64) -> f64 {
    if f.value(a).abs() <= f.value(b).abs() {
        a
    } else {
        b
    }
}

/// A cell where `f` does not change sign but `f′` does: either a tangential
/// double root, a pair of nearby simple roots, or a harmless dip.
fn classify_dip<O: Objective>(
    f: &O,
    a: f64,
    b: f64,
    p: &ScanParams,
) -> Result<Vec<(f64, u8)>, ScanError> {
    let xc = refine_slope_zero(f, a, b);
    let fc = f.value(xc);
    if fc.abs() < p.touch_tol {
        if f.curvature(xc).abs() < p.curvature_tol {
            return Err(ScanError::MultiplicityOverflow { x: xc });
        }
        return Ok(vec![(xc, 2)]);
    }
    // Two simple roots hiding in one cell.
    if fc * f.value(a) < 0.0 {
        return Ok(vec![
            (refine_cross(f, a, xc), 1),
            (refine_cross(f, xc, b), 1),
        ]);
    }
    Ok(Vec::new())
}

fn refine_slope_zero<O: Objective>(f: &O, mut a: f64, mut b: f64) -> f64 {
    let mut ga = f.slope(a);
    let mut x = 0.5 * (a + b);
    for _ in 0..120 {
        let gx = f.slope(x);
        if gx == 0.0 {
            return x;
        }
        if ga * gx < 0.0 {
            b = x;
        } else {
            a = x;
            ga = gx;
        }
        let d = f.curvature(x);
        let mut next = if d != 0.0 { x - gx / d } else { f64::NAN };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}
