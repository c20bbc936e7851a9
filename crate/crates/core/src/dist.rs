//! Grid-based geodesic distance: first-order fast marching for the eikonal
//! equation `|∇d|_g = 1` on the diagonal-metric charts of the supported
//! families, plus shortest non-contractible loop lengths on cylinders via a
//! two-point query in the universal cover.

use crate::error::{Error, Result};
use crate::metric::{Family, PointChart, SurfaceSpec};
use std::cmp::Reverse;
use std::collections::BinaryHeap;

const BAND_CELLS: usize = 3;

/// Rectangular grid over a chart window. `v` may be periodic (angle) and a
/// polar window may carry a pole node gluing the innermost row together.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GridWindow {
    pub u0: f64,
    pub v0: f64,
    pub hu: f64,
    pub hv: f64,
    pub nu: usize,
    pub nv: usize,
    pub periodic_v: bool,
    pub pole: bool,
}

impl GridWindow {
    pub fn cartesian(u_lo: f64, u_hi: f64, v_lo: f64, v_hi: f64, h: f64) -> Result<GridWindow> {
        if !(h > 0.0) || !(u_hi > u_lo) || !(v_hi > v_lo) {
            return Err(Error::InvalidParameter(
                "cartesian window needs positive extents and h > 0".into(),
            ));
        }
        let nu = ((u_hi - u_lo) / h).ceil() as usize + 1;
        let nv = ((v_hi - v_lo) / h).ceil() as usize + 1;
        Ok(GridWindow {
            u0: u_lo,
            v0: v_lo,
            hu: (u_hi - u_lo) / (nu - 1) as f64,
            hv: (v_hi - v_lo) / (nv - 1) as f64,
            nu,
            nv,
            periodic_v: false,
            pole: false,
        })
    }

    /// Polar window `(r, θ)` on a rotational plane: rows at `r = hu, 2hu, …,
    /// r_max` plus the pole node.
    pub fn polar(r_max: f64, nr: usize, ntheta: usize) -> Result<GridWindow> {
        if nr < 2 || ntheta < 8 || !(r_max > 0.0) {
            return Err(Error::InvalidParameter("bad polar window".into()));
        }
        let hu = r_max / nr as f64;
        Ok(GridWindow {
            u0: hu,
            v0: 0.0,
            hu,
            hv: std::f64::consts::TAU / ntheta as f64,
            nu: nr,
            nv: ntheta,
            periodic_v: true,
            pole: true,
        })
    }

    /// Periodic cylinder window `(t, θ)`.
    pub fn cylinder(t_lo: f64, t_hi: f64, nt: usize, ntheta: usize) -> Result<GridWindow> {
        if nt < 2 || ntheta < 8 || !(t_hi > t_lo) {
            return Err(Error::InvalidParameter("bad cylinder window".into()));
        }
        Ok(GridWindow {
            u0: t_lo,
            v0: 0.0,
            hu: (t_hi - t_lo) / (nt - 1) as f64,
            hv: std::f64::consts::TAU / ntheta as f64,
            nu: nt,
            nv: ntheta,
            periodic_v: true,
            pole: false,
        })
    }

    /// Non-periodic strip in the universal cover `(t, θ̃)`.
    pub fn cover_strip(
        t_lo: f64,
        t_hi: f64,
        th_lo: f64,
        th_hi: f64,
        nt: usize,
        nth: usize,
    ) -> Result<GridWindow> {
        if nt < 2 || nth < 2 || !(t_hi > t_lo) || !(th_hi > th_lo) {
            return Err(Error::InvalidParameter("bad cover strip".into()));
        }
        Ok(GridWindow {
            u0: t_lo,
            v0: th_lo,
            hu: (t_hi - t_lo) / (nt - 1) as f64,
            hv: (th_hi - th_lo) / (nth - 1) as f64,
            nu: nt,
            nv: nth,
            periodic_v: false,
            pole: false,
        })
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.nu * self.nv + usize::from(self.pole)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nv + j
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (self.u0 + i as f64 * self.hu, self.v0 + j as f64 * self.hv)
    }

    pub fn u_hi(&self) -> f64 {
        self.u0 + (self.nu - 1) as f64 * self.hu
    }

    pub fn v_hi(&self) -> f64 {
        self.v0 + (self.nv - 1) as f64 * self.hv
    }

    fn locate(&self, u: f64, v: f64) -> Option<(usize, usize, f64, f64)> {
        let fu = (u - self.u0) / self.hu;
        let mut fv = (v - self.v0) / self.hv;
        if self.periodic_v {
            let n = self.nv as f64;
            fv = fv.rem_euclid(n);
        }
        if fu < -1e-9 || fu > (self.nu - 1) as f64 + 1e-9 {
            return None;
        }
        if !self.periodic_v && (fv < -1e-9 || fv > (self.nv - 1) as f64 + 1e-9) {
            return None;
        }
        let i = (fu.floor().max(0.0) as usize).min(self.nu.saturating_sub(2));
        let j = (fv.floor().max(0.0) as usize).min(if self.periodic_v {
            self.nv - 1
        } else {
            self.nv.saturating_sub(2)
        });
        Some((i, j, fu - i as f64, fv - j as f64))
    }
}

/// Distance field from a source set, with an unreliable band near window
/// boundaries where shortest paths may have been clipped.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub window: GridWindow,
    pub dist: Vec<f64>,
    pub band: Vec<bool>,
    pub source: (f64, f64),
}

pub enum Source {
    /// Chart coordinates; unwrapped `v` in cover strips.
    Point(f64, f64),
    /// Pre-initialized nodes `(i, j, distance)`.
    Nodes(Vec<(usize, usize, f64)>),
}

#[derive(PartialEq)]
struct HeapKey(f64, usize);

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .partial_cmp(&other.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(self.1.cmp(&other.1))
    }
}

/// Metric scale factors per node (√g_11, √g_22).
fn metric_scales(spec: &SurfaceSpec, w: &GridWindow) -> (Vec<f64>, Vec<f64>) {
    let mut mu = vec![1.0; w.nu * w.nv];
    let mut mv = vec![1.0; w.nu * w.nv];
    for i in 0..w.nu {
        for j in 0..w.nv {
            let (u, v) = w.coords(i, j);
            let (g11, g22) = spec.metric_diag(PointChart::new(u, v));
            mu[w.idx(i, j)] = g11.sqrt();
            mv[w.idx(i, j)] = g22.sqrt();
        }
    }
    (mu, mv)
}

/// First-order upwind eikonal solve in the metric `g` restricted to the
/// window. Nodes in the boundary band are flagged unreliable: a minimal path
/// leaving the window cannot be seen by the solver.
pub fn solve_distance(spec: &SurfaceSpec, window: &GridWindow, source: &Source) -> Result<DistanceField> {
    let w = window.clone();
    let n = w.n_nodes();
    let (mu, mv) = metric_scales(spec, &w);
    let mut dist = vec![f64::INFINITY; n];
    let mut accepted = vec![false; n];
    let mut heap: BinaryHeap<Reverse<HeapKey>> = BinaryHeap::new();

    let mut src_desc = (f64::NAN, f64::NAN);
    match source {
        Source::Point(u, v) => {
            src_desc = (*u, *v);
            if w.pole && *u <= w.u0 * 0.5 {
                // source at (or essentially at) the pole
                let pole_id = w.nu * w.nv;
                dist[pole_id] = 0.0;
                heap.push(Reverse(HeapKey(0.0, pole_id)));
            } else {
                let (i, j, fu, fv) = w.locate(*u, *v).ok_or_else(|| Error::WindowTooSmall {
                    detail: format!("source ({u:.3}, {v:.3}) outside window"),
                    suggested: (w.u_hi() - w.u0) * 1.5,
                })?;
                let (g11, g22) = spec.metric_diag(PointChart::new(*u, *v));
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let ii = i + di;
                    let jj = if w.periodic_v { (j + dj) % w.nv } else { j + dj };
                    if ii >= w.nu || jj >= w.nv {
                        continue;
                    }
                    let du = (di as f64 - fu) * w.hu;
                    let dv = (dj as f64 - fv) * w.hv;
                    let d = (g11 * du * du + g22 * dv * dv).sqrt();
                    let id = w.idx(ii, jj);
                    if d < dist[id] {
                        dist[id] = d;
                        heap.push(Reverse(HeapKey(d, id)));
                    }
                }
            }
        }
        Source::Nodes(nodes) => {
            for (i, j, d) in nodes {
                let id = w.idx(*i, *j);
                if *d < dist[id] {
                    dist[id] = *d;
                    heap.push(Reverse(HeapKey(*d, id)));
                }
            }
        }
    }
    if heap.is_empty() {
        return Err(Error::WindowTooSmall {
            detail: "empty source".into(),
            suggested: (w.u_hi() - w.u0) * 1.5,
        });
    }

    let pole_id = w.nu * w.nv;
    // neighbor enumeration: (id, axis, edge length override)
    let for_neighbors = |id: usize, f: &mut dyn FnMut(usize, usize, f64)| {
        if w.pole && id == pole_id {
            for j in 0..w.nv {
                f(w.idx(0, j), 0, w.u0 * mu[w.idx(0, j)]);
            }
            return;
        }
        let i = id / w.nv;
        let j = id % w.nv;
        if i > 0 {
            f(w.idx(i - 1, j), 0, w.hu * mu[id]);
        } else if w.pole {
            f(pole_id, 0, w.u0 * mu[id]);
        }
        if i + 1 < w.nu {
            f(w.idx(i + 1, j), 0, w.hu * mu[id]);
        }
        let (jm, jp) = if w.periodic_v {
            (Some((j + w.nv - 1) % w.nv), Some((j + 1) % w.nv))
        } else {
            (j.checked_sub(1), if j + 1 < w.nv { Some(j + 1) } else { None })
        };
        if let Some(jj) = jm {
            f(w.idx(i, jj), 1, w.hv * mv[id]);
        }
        if let Some(jj) = jp {
            f(w.idx(i, jj), 1, w.hv * mv[id]);
        }
    };

    // value update at `id` from accepted neighbors
    let update = |id: usize, dist: &Vec<f64>, accepted: &Vec<bool>| -> f64 {
        if w.pole && id == pole_id {
            let mut best = f64::INFINITY;
            for j in 0..w.nv {
                let nb = w.idx(0, j);
                if accepted[nb] {
                    best = best.min(dist[nb] + w.u0 * mu[nb]);
                }
            }
            return best;
        }
        let mut a = f64::INFINITY; // u-axis
        let mut la = 1.0;
        let mut b = f64::INFINITY; // v-axis
        let mut lb = 1.0;
        let mut consider = |nb: usize, axis: usize, len: f64, accepted: &Vec<bool>, dist: &Vec<f64>| {
            if !accepted[nb] {
                return;
            }
            if axis == 0 {
                if dist[nb] < a {
                    a = dist[nb];
                    la = len;
                }
            } else if dist[nb] < b {
                b = dist[nb];
                lb = len;
            }
        };
        for_neighbors(id, &mut |nb, axis, len| consider(nb, axis, len, accepted, dist));
        if a.is_infinite() && b.is_infinite() {
            return f64::INFINITY;
        }
        if a.is_infinite() {
            return b + lb;
        }
        if b.is_infinite() {
            return a + la;
        }
        let p = 1.0 / (la * la);
        let q = 1.0 / (lb * lb);
        let s = p * a + q * b;
        let disc = s * s - (p + q) * (p * a * a + q * b * b - 1.0);
        if disc >= 0.0 {
            let d = (s + disc.sqrt()) / (p + q);
            if d >= a.max(b) {
                return d;
            }
        }
        (a + la).min(b + lb)
    };

    while let Some(Reverse(HeapKey(d, id))) = heap.pop() {
        if accepted[id] || d > dist[id] {
            continue;
        }
        accepted[id] = true;
        for_neighbors(id, &mut |nb, _axis, _len| {
            if accepted[nb] {
                return;
            }
            let cand = update(nb, &dist, &accepted);
            if cand < dist[nb] {
                dist[nb] = cand;
                heap.push(Reverse(HeapKey(cand, nb)));
            }
        });
    }

    let mut band = vec![false; n];
    for i in 0..w.nu {
        for j in 0..w.nv {
            let near_u = i < BAND_CELLS || i + BAND_CELLS >= w.nu;
            let near_v = !w.periodic_v && (j < BAND_CELLS || j + BAND_CELLS >= w.nv);
            let inner_u = i < BAND_CELLS && w.pole; // pole glues the inner rim
            if (near_u && !inner_u) || near_v {
                band[w.idx(i, j)] = true;
            }
        }
    }

    Ok(DistanceField {
        window: w,
        dist,
        band,
        source: src_desc,
    })
}

impl DistanceField {
    /// Bilinear interpolation of the field; also reports whether the value
    /// touches the unreliable band.
    pub fn value_at(&self, u: f64, v: f64) -> Result<(f64, bool)> {
        let w = &self.window;
        let (i, j, fu, fv) = w.locate(u, v).ok_or_else(|| Error::WindowTooSmall {
            detail: format!("query ({u:.3}, {v:.3}) outside window"),
            suggested: (w.u_hi() - w.u0) * 1.5,
        })?;
        let jp = if w.periodic_v { (j + 1) % w.nv } else { (j + 1).min(w.nv - 1) };
        let ip = (i + 1).min(w.nu - 1);
        let ids = [w.idx(i, j), w.idx(ip, j), w.idx(i, jp), w.idx(ip, jp)];
        let d = self.dist[ids[0]] * (1.0 - fu) * (1.0 - fv)
            + self.dist[ids[1]] * fu * (1.0 - fv)
            + self.dist[ids[2]] * (1.0 - fu) * fv
            + self.dist[ids[3]] * fu * fv;
        let in_band = ids.iter().any(|&k| self.band[k]);
        Ok((d, in_band))
    }

    /// Max over interior accepted nodes of `| |∇d|_g − 1 |` by upwind
    /// differences; O(h) away from the source and cut locus.
    pub fn eikonal_residual(&self, spec: &SurfaceSpec, skip_near_source: f64) -> f64 {
        let w = &self.window;
        let mut worst = 0.0f64;
        for i in 1..w.nu.saturating_sub(1) {
            for j in 0..w.nv {
                let id = w.idx(i, j);
                if self.band[id] || !self.dist[id].is_finite() || self.dist[id] < skip_near_source
                {
                    continue;
                }
                let (jm, jp) = if w.periodic_v {
                    ((j + w.nv - 1) % w.nv, (j + 1) % w.nv)
                } else if j == 0 || j + 1 == w.nv {
                    continue;
                } else {
                    (j - 1, j + 1)
                };
                let (u, v) = w.coords(i, j);
                let (g11, g22) = spec.metric_diag(PointChart::new(u, v));
                let d = self.dist[id];
                let du = (d - self.dist[w.idx(i - 1, j)].min(self.dist[w.idx(i + 1, j)]))
                    .max(0.0)
                    / w.hu;
                let dv = (d - self.dist[w.idx(i, jm)].min(self.dist[w.idx(i, jp)])).max(0.0)
                    / w.hv;
                let grad = (du * du / g11 + dv * dv / g22).sqrt();
                worst = worst.max((grad - 1.0).abs());
            }
        }
        worst
    }

    /// CSV dump with the chart coordinate names.
    pub fn to_csv(&self, spec: &SurfaceSpec) -> String {
        let (c1, c2) = match spec.family {
            Family::FlatPlane | Family::ConformalPlane { .. } => ("x", "y"),
            Family::RotationalPlane { .. } => ("r", "theta"),
            _ => ("t", "theta"),
        };
        let mut out = format!("{c1},{c2},distance\n");
        for i in 0..self.window.nu {
            for j in 0..self.window.nv {
                let (u, v) = self.window.coords(i, j);
                out.push_str(&format!("{},{},{}\n", u, v, self.dist[self.window.idx(i, j)]));
            }
        }
        out
    }
}

/// Shortest non-contractible loop based at `p`, as the cover distance between
/// `p̃` and its deck translate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LoopLengthSample {
    pub basepoint: PointChart,
    pub length: f64,
    /// polyline in cover coordinates from the deck translate back to `p̃`
    pub witness: Vec<(f64, f64)>,
    pub witness_length: f64,
}

pub struct LoopParams {
    /// nodes across the θ̃ strip (resolution along the loop)
    pub nv: usize,
    /// nodes across the axial window
    pub nu: usize,
    /// number of window-growth retries
    pub max_grow: usize,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            nv: 720,
            nu: 600,
            max_grow: 6,
        }
    }
}

/// Profile scale used to size cover windows: metric feature width near `t`.
fn loop_window_halfwidth(spec: &SurfaceSpec, t: f64, grow: usize) -> f64 {
    let f = match &spec.family {
        Family::FlatCylinder { radius } => *radius,
        Family::RotationalCylinder { .. } => spec.profile().unwrap().value(t),
        _ => 1.0,
    };
    let base = (2.2 * f).clamp(0.75, 40.0);
    base * 1.6f64.powi(grow as i32)
}

pub fn loop_length(spec: &SurfaceSpec, p: PointChart, params: &LoopParams) -> Result<LoopLengthSample> {
    if !spec.is_cylinder() {
        return Err(Error::RegionMismatch(
            "loop_length is defined for cylinder families".into(),
        ));
    }
    let period = spec.deck_period();
    let mut last_err = None;
    for grow in 0..params.max_grow {
        let w_half = loop_window_halfwidth(spec, p.u, grow);
        let pad = period * 0.25;
        let window = GridWindow::cover_strip(
            p.u - w_half,
            p.u + w_half,
            p.v - pad,
            p.v + period + pad,
            params.nu,
            params.nv,
        )?;
        let field = solve_distance(spec, &window, &Source::Point(p.u, p.v))?;
        let target = (p.u, p.v + period);
        let (len, in_band) = field.value_at(target.0, target.1)?;
        if !len.is_finite() || in_band {
            last_err = Some(Error::WindowTooSmall {
                detail: "deck translate in unreliable band".into(),
                suggested: w_half * 1.6,
            });
            continue;
        }
        match extract_witness(spec, &field, target, (p.u, p.v)) {
            Ok((witness, wlen)) => {
                // coordinate circle is always a competitor
                let circle = period
                    * match &spec.family {
                        Family::FlatCylinder { radius } => *radius,
                        _ => spec.profile().unwrap().value(p.u),
                    };
                let h_metric = field.window.hu.max(field.window.hv * circle / period);
                if len > circle * (1.0 + 0.5) + 4.0 * h_metric {
                    return Err(Error::Invariant {
                        check: "l(p) <= 2π f(t_p)".into(),
                        location: format!("{p}"),
                        detail: format!("l = {len}, circle = {circle}"),
                    });
                }
                return Ok(LoopLengthSample {
                    basepoint: p,
                    length: len,
                    witness,
                    witness_length: wlen,
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(Error::WindowTooSmall {
        detail: "loop window growth exhausted".into(),
        suggested: loop_window_halfwidth(spec, p.u, params.max_grow),
    }))
}

/// Gradient descent through the field from `from` to `to`, with discrete
/// node backtracking as fallback where the bilinear gradient is ambiguous
/// (e.g. on the cut locus).
fn extract_witness(
    spec: &SurfaceSpec,
    field: &DistanceField,
    from: (f64, f64),
    to: (f64, f64),
) -> Result<(Vec<(f64, f64)>, f64)> {
    let w = &field.window;
    let step = 0.75 * w.hu.min(w.hv);
    let mut cur = from;
    let mut path = vec![cur];
    let mut length = 0.0;
    let mut in_band_seen = false;
    let goal_radius = 2.5 * (w.hu.max(w.hv));

    for _ in 0..200_000 {
        let (du_chart, dv_chart) = {
            let h = 0.5 * step;
            let dup = field.value_at((cur.0 + h).min(w.u_hi()), cur.1)?.0;
            let dum = field.value_at((cur.0 - h).max(w.u0), cur.1)?.0;
            let dvp = field.value_at(cur.0, cur.1 + h)?.0;
            let dvm = field.value_at(cur.0, cur.1 - h)?.0;
            ((dup - dum) / (2.0 * h), (dvp - dvm) / (2.0 * h))
        };
        let p = PointChart::new(cur.0, cur.1);
        let (g11, g22) = spec.metric_diag(p);
        // steepest descent direction in the metric
        let (mut su, mut sv) = (-du_chart / g11, -dv_chart / g22);
        let norm = (g11 * su * su + g22 * sv * sv).sqrt();
        if norm < 1e-12 {
            // ambiguous gradient: discrete fallback toward the best neighbor
            let (i, j, _, _) = w.locate(cur.0, cur.1).unwrap();
            let mut best = (f64::INFINITY, cur);
            for (ii, jj) in [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ] {
                if ii < w.nu && jj < w.nv {
                    let d = field.dist[w.idx(ii, jj)];
                    if d < best.0 {
                        best = (d, w.coords(ii, jj));
                    }
                }
            }
            if !best.0.is_finite() {
                break;
            }
            su = best.1 .0 - cur.0;
            sv = best.1 .1 - cur.1;
            let nrm = (g11 * su * su + g22 * sv * sv).sqrt();
            su /= nrm;
            sv /= nrm;
        } else {
            su /= norm;
            sv /= norm;
        }
        let next = (
            (cur.0 + su * step).clamp(w.u0, w.u_hi()),
            (cur.1 + sv * step).clamp(w.v0, w.v_hi()),
        );
        let seg = {
            let pm = PointChart::new(0.5 * (cur.0 + next.0), 0.5 * (cur.1 + next.1));
            let (g1, g2) = spec.metric_diag(pm);
            let (du, dv) = (next.0 - cur.0, next.1 - cur.1);
            (g1 * du * du + g2 * dv * dv).sqrt()
        };
        length += seg;
        cur = next;
        path.push(cur);
        if let Ok((_, band)) = field.value_at(cur.0, cur.1) {
            in_band_seen |= band;
        }
        let dist_to_goal = {
            let (du, dv) = (cur.0 - to.0, cur.1 - to.1);
            let (g1, g2) = spec.metric_diag(PointChart::new(cur.0, cur.1));
            (g1 * du * du + g2 * dv * dv).sqrt()
        };
        if dist_to_goal < goal_radius.max(2.0 * step) {
            length += dist_to_goal;
            path.push(to);
            if in_band_seen {
                return Err(Error::WindowTooSmall {
                    detail: "witness path crosses the unreliable band".into(),
                    suggested: (w.u_hi() - w.u0) * 0.8,
                });
            }
            return Ok((path, length));
        }
    }
    Err(Error::WindowTooSmall {
        detail: "witness descent did not reach the source".into(),
        suggested: (w.u_hi() - w.u0) * 0.8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> SurfaceSpec {
        SurfaceSpec::parse(text).unwrap()
    }

    #[test]
    fn flat_plane_distance_is_euclidean() {
        let s = spec("family = flat_plane");
        let w = GridWindow::cartesian(-2.0, 2.0, -2.0, 2.0, 0.02).unwrap();
        let field = solve_distance(&s, &w, &Source::Point(0.0, 0.0)).unwrap();
        let mut worst = 0.0f64;
        for i in 0..w.nu {
            for j in 0..w.nv {
                let id = w.idx(i, j);
                if field.band[id] {
                    continue;
                }
                let (u, v) = w.coords(i, j);
                let exact = (u * u + v * v).sqrt();
                worst = worst.max((field.dist[id] - exact).abs());
            }
        }
        assert!(worst < 0.05, "max error {worst}");
        // refinement: halving h roughly halves the error (first order)
        let w2 = GridWindow::cartesian(-2.0, 2.0, -2.0, 2.0, 0.01).unwrap();
        let f2 = solve_distance(&s, &w2, &Source::Point(0.0, 0.0)).unwrap();
        let mut worst2 = 0.0f64;
        for i in 0..w2.nu {
            for j in 0..w2.nv {
                let id = w2.idx(i, j);
                if f2.band[id] {
                    continue;
                }
                let (u, v) = w2.coords(i, j);
                worst2 = worst2.max((f2.dist[id] - (u * u + v * v).sqrt()).abs());
            }
        }
        assert!(worst2 < 0.7 * worst, "no refinement gain: {worst2} vs {worst}");
    }

    #[test]
    fn eikonal_residual_small_away_from_source() {
        let s = spec("family = flat_plane");
        let w = GridWindow::cartesian(-2.0, 2.0, -2.0, 2.0, 0.02).unwrap();
        let field = solve_distance(&s, &w, &Source::Point(0.0, 0.0)).unwrap();
        let res = field.eikonal_residual(&s, 0.3);
        assert!(res < 0.08, "residual {res}");
    }

    #[test]
    fn field_is_one_lipschitz_on_edges() {
        let s = spec("family = rotational_cylinder\nf = exp(-t)");
        let w = GridWindow::cylinder(-2.0, 2.0, 200, 256).unwrap();
        let field = solve_distance(&s, &w, &Source::Point(0.0, 0.0)).unwrap();
        let slack = 1.05;
        for i in 0..w.nu - 1 {
            for j in 0..w.nv {
                let a = field.dist[w.idx(i, j)];
                let b = field.dist[w.idx(i + 1, j)];
                assert!((a - b).abs() <= w.hu * slack + 1e-12);
            }
        }
    }

    #[test]
    fn flat_cylinder_strip_distance() {
        // universal cover of the flat unit cylinder is the Euclidean strip
        let s = spec("family = flat_cylinder\nradius = 1");
        let w = GridWindow::cover_strip(-4.0, 4.0, -1.0, 8.0, 300, 340).unwrap();
        let field = solve_distance(&s, &w, &Source::Point(0.0, 0.0)).unwrap();
        for (u, v) in [(1.0, 2.0), (-2.0, 5.0), (3.0, 1.0)] {
            let exact = (u * u + v * v).sqrt();
            let (got, band) = field.value_at(u, v).unwrap();
            assert!(!band);
            assert!((got - exact).abs() < 0.06, "d({u},{v}) = {got} vs {exact}");
        }
    }

    #[test]
    fn sinh_plane_radial_distance_is_exact_along_rays() {
        let s = spec("family = rotational_plane\nf = sinh(r)");
        let w = GridWindow::polar(2.0, 200, 128).unwrap();
        let field = solve_distance(&s, &w, &Source::Point(0.0, 0.0)).unwrap();
        for i in [10, 50, 120, 190] {
            let (r, _) = w.coords(i, 17);
            let d = field.dist[w.idx(i, 17)];
            assert!((d - r).abs() < 1e-9, "radial node r={r}: d={d}");
        }
    }

    #[test]
    fn sinh_plane_offaxis_distance_matches_hyperbolic_law_of_cosines() {
        let s = spec("family = rotational_plane\nf = sinh(r)");
        let w = GridWindow::polar(3.0, 300, 512).unwrap();
        let field = solve_distance(&s, &w, &Source::Point(1.0, 0.0)).unwrap();
        // d((1,0),(r,θ)) = arccosh(cosh 1 cosh r − sinh 1 sinh r cos θ)
        for (r, th) in [(2.0, 1.0), (1.5, 2.2), (2.5, 0.4)] {
            let exact = (1f64.cosh() * r.cosh() - 1f64.sinh() * r.sinh() * th.cos()).acosh();
            let (got, _) = field.value_at(r, th).unwrap();
            assert!(
                (got - exact).abs() < 0.05,
                "d(1,0 ; {r},{th}) = {got} vs {exact}"
            );
        }
    }

    #[test]
    fn flat_cylinder_loop_is_2pi() {
        let s = spec("family = flat_cylinder\nradius = 1");
        let sample = loop_length(&s, PointChart::new(0.0, 0.0), &LoopParams::default()).unwrap();
        let expect = std::f64::consts::TAU;
        assert!(
            (sample.length - expect).abs() < 0.02,
            "l = {} vs {expect}",
            sample.length
        );
        // witness connects the two lifts and has consistent length
        let first = sample.witness.first().unwrap();
        let last = sample.witness.last().unwrap();
        assert!((first.1 - last.1 - expect).abs() < 1e-9);
        assert!((sample.witness_length - sample.length).abs() < 0.15 * expect);
    }

    #[test]
    fn cusp_loop_length_matches_hyperbolic_closed_form() {
        // f = e^{-t}: the cusp quotient of the hyperbolic plane, where
        // l(t0) = 2 asinh(π e^{-t0}) exactly
        let s = spec("family = rotational_cylinder\nf = exp(-t)");
        for t0 in [1.0, 2.5, 4.0] {
            let sample = loop_length(&s, PointChart::new(t0, 0.0), &LoopParams::default()).unwrap();
            let exact = 2.0 * (std::f64::consts::PI * (-t0).exp()).asinh();
            let rel = (sample.length - exact).abs() / exact;
            assert!(rel < 0.02, "t0={t0}: l={} vs {exact}, rel {rel}", sample.length);
        }
    }

    #[test]
    fn cosh_cylinder_waist_loop() {
        let s = spec("family = rotational_cylinder\nf = cosh(t)");
        let sample = loop_length(&s, PointChart::new(0.0, 0.0), &LoopParams::default()).unwrap();
        let expect = std::f64::consts::TAU;
        assert!(
            (sample.length - expect).abs() < 0.03,
            "waist loop {} vs {expect}",
            sample.length
        );
    }

    #[test]
    fn loop_length_is_rotation_invariant() {
        let s = spec("family = rotational_cylinder\nf = cosh(t)");
        let a = loop_length(&s, PointChart::new(0.4, 0.0), &LoopParams::default()).unwrap();
        let b = loop_length(&s, PointChart::new(0.4, 2.1), &LoopParams::default()).unwrap();
        assert_eq!(a.length, b.length, "solver determinism under rotation");
    }

    #[test]
    fn flare_loop_dips_toward_waist() {
        // on the flare side of f = e^{-t} the loop through (t0, θ) with
        // t0 < 0 drops toward small circumference instead of walking the
        // huge coordinate circle
        let s = spec("family = rotational_cylinder\nf = exp(-t)");
        let t0 = -2.0f64;
        let sample = loop_length(&s, PointChart::new(t0, 0.0), &LoopParams::default()).unwrap();
        let circle = std::f64::consts::TAU * (-t0).exp();
        assert!(sample.length < 0.5 * circle, "l = {} vs circle {circle}", sample.length);
        // witness must dip to larger t
        let max_t = sample
            .witness
            .iter()
            .map(|(t, _)| *t)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max_t > t0 + 0.5, "witness max t = {max_t}");
    }

    #[test]
    fn window_too_small_is_reported() {
        let s = spec("family = flat_cylinder\nradius = 1");
        let w = GridWindow::cover_strip(-0.2, 0.2, -0.5, 7.0, 20, 200).unwrap();
        let field = solve_distance(&s, &w, &Source::Point(0.0, 0.0)).unwrap();
        // everything is within the band of this sliver window
        let (_, band) = field.value_at(0.0, std::f64::consts::TAU).unwrap();
        assert!(band, "target should be flagged unreliable");
    }
}
