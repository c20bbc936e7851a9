//! Verifier for the sharp growth estimate of the differential inequality
//! `F ≤ a·R + b·(F′A′)^½ + c` with non-decreasing `A`, `F`.
//!
//! Sampled functions are interpreted as piecewise-linear interpolants, so
//! `F′` and `A′` are piecewise constant and every integral that appears in
//! the estimate has a closed form per grid cell. That removes quadrature
//! error from a chain of delicate inequalities: all checks below are exact
//! statements about the surrogate, up to round-off.

use crate::error::{Error, Result};
use serde::Serialize;

/// Sampled `(A, F, R)` data with the estimate constants.
#[derive(Debug, Clone)]
pub struct OdeLemmaData {
    /// strictly increasing grid; a leading `r = 0` node is allowed
    pub grid: Vec<f64>,
    pub area: Vec<f64>,
    pub fiber: Vec<f64>,
    pub rterm: Vec<f64>,
    pub coef_a: f64,
    pub coef_b: f64,
    pub coef_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LemmaStatus {
    Pass,
    BoundViolated,
    PreconditionFailed,
    HypothesisFailed,
}

/// Outcome of the sharp-bound check.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaVerdict {
    pub sup_f: f64,
    pub tail_window: (f64, f64),
    pub tail_liminf: f64,
    /// `2a·tail_liminf + c`, recomputed from exactly those two inputs
    pub bound: f64,
    /// `bound − sup_f`
    pub margin: f64,
    pub hypothesis_defect: f64,
    pub precondition_margin: f64,
    pub status: LemmaStatus,
}

fn check_grid(xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two grid nodes".into(),
        ));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) || xs[0] < 0.0 {
        return Err(Error::InvalidParameter(
            "grid must be strictly increasing and nonnegative".into(),
        ));
    }
    Ok(())
}

fn check_monotone(name: &str, ys: &[f64]) -> Result<()> {
    if ys.iter().any(|y| *y < 0.0) {
        return Err(Error::Invariant {
            check: format!("{name} >= 0"),
            location: "sample array".into(),
            detail: "negative sample".into(),
        });
    }
    if let Some(i) = ys.windows(2).position(|w| w[1] < w[0] - 1e-12 * w[0].abs().max(1.0)) {
        return Err(Error::Invariant {
            check: format!("{name} non-decreasing"),
            location: format!("grid index {i}"),
            detail: format!("{} -> {}", ys[i], ys[i + 1]),
        });
    }
    Ok(())
}

/// Piecewise-linear value at `t` (clamped to the grid range).
fn interp(xs: &[f64], ys: &[f64], t: f64) -> f64 {
    let n = xs.len();
    if t <= xs[0] {
        return ys[0];
    }
    if t >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = match xs.partial_point(t) {
        Ok(i) => return ys[i],
        Err(i) => i - 1,
    };
    let w = (t - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] * (1.0 - w) + ys[i + 1] * w
}

trait PartialPoint {
    fn partial_point(&self, t: f64) -> std::result::Result<usize, usize>;
}

impl PartialPoint for [f64] {
    fn partial_point(&self, t: f64) -> std::result::Result<usize, usize> {
        self.binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
    }
}

/// Exact `∫_a^b y dt` of the piecewise-linear interpolant.
fn integral(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    let mut acc = 0.0;
    for i in 0..xs.len() - 1 {
        let (lo, hi) = (xs[i].max(a), xs[i + 1].min(b));
        if hi <= lo {
            continue;
        }
        acc += 0.5 * (interp(xs, ys, lo) + interp(xs, ys, hi)) * (hi - lo);
    }
    acc
}

/// Exact `∫_q^r (r - ρ) y(ρ) dρ` of the piecewise-linear interpolant.
fn weighted_integral(xs: &[f64], ys: &[f64], q: f64, r: f64) -> f64 {
    debug_assert!(q <= r);
    let mut acc = 0.0;
    for i in 0..xs.len() - 1 {
        let (lo, hi) = (xs[i].max(q), xs[i + 1].min(r));
        if hi <= lo {
            continue;
        }
        // y(ρ) = y0 + m (ρ - lo) on [lo, hi]
        let y0 = interp(xs, ys, lo);
        let y1 = interp(xs, ys, hi);
        let h = hi - lo;
        let m = (y1 - y0) / h;
        // ∫_lo^hi (r - ρ)(y0 + m(ρ-lo)) dρ with u = ρ - lo, R0 = r - lo:
        // = y0 (R0 h - h²/2) + m (R0 h²/2 - h³/3)
        let r0 = r - lo;
        acc += y0 * (r0 * h - 0.5 * h * h) + m * (0.5 * r0 * h * h - h * h * h / 3.0);
    }
    acc
}

/// Exact `∫_q^r ( ∫_q^ρ y dt ) dρ` of the piecewise-linear interpolant,
/// accumulated cell by cell (the literal double-integration route).
fn double_integral(xs: &[f64], ys: &[f64], q: f64, r: f64) -> f64 {
    debug_assert!(q <= r);
    let mut outer = 0.0;
    let mut inner_at_lo; // G(lo) = ∫_q^lo y
    for i in 0..xs.len() - 1 {
        let (lo, hi) = (xs[i].max(q), xs[i + 1].min(r));
        if hi <= lo {
            continue;
        }
        inner_at_lo = integral(xs, ys, q, lo);
        let y0 = interp(xs, ys, lo);
        let y1 = interp(xs, ys, hi);
        let h = hi - lo;
        let m = (y1 - y0) / h;
        // ∫_lo^hi [G(lo) + y0 u + m u²/2] du
        outer += inner_at_lo * h + 0.5 * y0 * h * h + m * h * h * h / 6.0;
    }
    outer
}

/// Piecewise-constant cell derivatives of the interpolant.
fn cell_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect()
}

/// `I(q, r) = ∫_q^r ( ∫_q^ρ F(t) − F(q) dt ) dρ`, by the double-integration
/// route, cross-checked against the weighted single-integral form; the two
/// routes must agree to round-off for the piecewise-linear surrogate.
pub fn iterated_integral(grid: &[f64], fiber: &[f64], q: f64, r: f64) -> Result<f64> {
    check_grid(grid)?;
    if !(q < r) {
        return Err(Error::InvalidParameter(format!(
            "iterated_integral requires q < r, got q = {q}, r = {r}"
        )));
    }
    let fq = interp(grid, fiber, q);
    let shifted: Vec<f64> = fiber.iter().map(|f| f - fq).collect();
    let direct = double_integral(grid, &shifted, q, r);
    let weighted = weighted_integral(grid, &shifted, q, r);
    let scale = direct.abs().max(weighted.abs()).max(1.0);
    if (direct - weighted).abs() > 1e-10 * scale {
        return Err(Error::Invariant {
            check: "integration-by-parts identity".into(),
            location: format!("q = {q}, r = {r}"),
            detail: format!("double route {direct} vs weighted route {weighted}"),
        });
    }
    Ok(direct)
}

/// Margin of the Cauchy–Schwarz step: returns
/// `(2 I(q,r) A(r))^½ − ∫_q^r ∫_q^ρ (F′A′)^½`, which must be ≥ −round-off
/// for monotone samples.
pub fn check_ineq_r(
    grid: &[f64],
    fiber: &[f64],
    area: &[f64],
    q: f64,
    r: f64,
) -> Result<f64> {
    check_grid(grid)?;
    check_monotone("F", fiber)?;
    check_monotone("A", area)?;
    let fp = cell_slopes(grid, fiber);
    let ap = cell_slopes(grid, area);
    // (F'A')^½ is piecewise constant; integrate the weighted form exactly
    let mut lhs = 0.0;
    for i in 0..grid.len() - 1 {
        let (lo, hi) = (grid[i].max(q), grid[i + 1].min(r));
        if hi <= lo {
            continue;
        }
        let c = (fp[i].max(0.0) * ap[i].max(0.0)).sqrt();
        let h = hi - lo;
        let r0 = r - lo;
        lhs += c * (r0 * h - 0.5 * h * h);
    }
    let i_qr = iterated_integral(grid, fiber, q, r)?;
    let a_r = interp(grid, area, r);
    let rhs = (2.0 * i_qr * a_r).max(0.0).sqrt();
    Ok(rhs - lhs)
}

/// Max over grid nodes of `∫_0^r ∫_0^ρ R − A(r)`; a nonpositive value (up to
/// tolerance) is the standing hypothesis of the sharp bound.
///
/// When the grid starts at `r > 0` the integrand is extended to 0 with the
/// first sample value and `A(0) = 0`.
pub fn check_hypothesis(grid: &[f64], area: &[f64], rterm: &[f64]) -> Result<f64> {
    check_grid(grid)?;
    let (xs, rs): (Vec<f64>, Vec<f64>) = if grid[0] > 0.0 {
        let mut xs = vec![0.0];
        xs.extend_from_slice(grid);
        let mut rs = vec![rterm[0]];
        rs.extend_from_slice(rterm);
        (xs, rs)
    } else {
        (grid.to_vec(), rterm.to_vec())
    };
    let mut worst = f64::NEG_INFINITY;
    for (k, &r) in grid.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let lhs = double_integral(&xs, &rs, 0.0, r);
        worst = worst.max(lhs - area[k]);
    }
    Ok(worst)
}

/// Run the full sharp-bound verdict: hypothesis, pointwise differential
/// inequality (at cell midpoints, matching the almost-everywhere statement),
/// and the conclusion `sup F ≤ 2a·liminf A/r² + c` with the lim inf
/// operationalized as the minimum over the disclosed tail window.
pub fn sharp_bound(data: &OdeLemmaData, tail_fraction: f64) -> Result<LemmaVerdict> {
    check_grid(&data.grid)?;
    if data.grid.len() != data.area.len()
        || data.grid.len() != data.fiber.len()
        || data.grid.len() != data.rterm.len()
    {
        return Err(Error::InvalidParameter("misaligned sample arrays".into()));
    }
    if !(data.coef_a > 0.0) || !(data.coef_b > 0.0) {
        return Err(Error::InvalidParameter(
            "constants a and b must be strictly positive".into(),
        ));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(
            "tail fraction must lie in (0, 1]".into(),
        ));
    }
    check_monotone("F", &data.fiber)?;
    check_monotone("A", &data.area)?;

    let hypothesis_defect = check_hypothesis(&data.grid, &data.area, &data.rterm)?;

    let fp = cell_slopes(&data.grid, &data.fiber);
    let ap = cell_slopes(&data.grid, &data.area);
    let mut precondition_margin = f64::INFINITY;
    for i in 0..data.grid.len() - 1 {
        let mid = 0.5 * (data.grid[i] + data.grid[i + 1]);
        let f_mid = 0.5 * (data.fiber[i] + data.fiber[i + 1]);
        let r_mid = interp(&data.grid, &data.rterm, mid);
        let rhs = data.coef_a * r_mid
            + data.coef_b * (fp[i].max(0.0) * ap[i].max(0.0)).sqrt()
            + data.coef_c;
        precondition_margin = precondition_margin.min(rhs - f_mid);
    }

    let r_max = *data.grid.last().unwrap();
    let window = (tail_fraction * r_max, r_max);
    let tail_liminf = data
        .grid
        .iter()
        .zip(&data.area)
        .filter(|(r, _)| **r >= window.0 && **r > 0.0)
        .map(|(r, a)| a / (r * r))
        .fold(f64::INFINITY, f64::min);

    let sup_f = data.fiber.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bound = 2.0 * data.coef_a * tail_liminf + data.coef_c;
    let margin = bound - sup_f;

    let scale = data.area.last().unwrap().abs().max(1.0);
    let tol = 1e-9 * scale;
    let status = if hypothesis_defect > tol {
        LemmaStatus::HypothesisFailed
    } else if precondition_margin < -tol {
        LemmaStatus::PreconditionFailed
    } else if margin >= -tol {
        LemmaStatus::Pass
    } else {
        LemmaStatus::BoundViolated
    };

    Ok(LemmaVerdict {
        sup_f,
        tail_window: window,
        tail_liminf,
        bound,
        margin,
        hypothesis_defect,
        precondition_margin,
        status,
    })
}

/// Parse OdeLemmaData sample arrays from CSV text with columns `r,A,F,R`
/// (header optional).
pub fn parse_csv(text: &str, coef_a: f64, coef_b: f64, coef_c: f64) -> Result<OdeLemmaData> {
    let mut grid = Vec::new();
    let mut area = Vec::new();
    let mut fiber = Vec::new();
    let mut rterm = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if idx == 0 && cols[0].parse::<f64>().is_err() {
            continue; // header
        }
        if cols.len() < 4 {
            return Err(Error::Parse {
                line: idx + 1,
                col: 1,
                msg: format!("expected 4 columns r,A,F,R, found {}", cols.len()),
            });
        }
        let mut vals = [0.0; 4];
        for (k, c) in cols[..4].iter().enumerate() {
            vals[k] = c.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                col: k + 1,
                msg: format!("invalid number `{c}`"),
            })?;
        }
        grid.push(vals[0]);
        area.push(vals[1]);
        fiber.push(vals[2]);
        rterm.push(vals[3]);
    }
    Ok(OdeLemmaData {
        grid,
        area,
        fiber,
        rterm,
        coef_a,
        coef_b,
        coef_c,
    })
}
