//! Unit-speed geodesics, scalar Jacobi fields, conjugate points, and polar
//! radial charts.
//!
//! The integrator is an adaptive Dormand–Prince 5(4) pair with cubic Hermite
//! dense output. Jacobi solutions are co-integrated in the same state vector
//! as the geodesic, so the curvature along the path is never interpolated.
//! Radial geodesics of rotational planes (from the pole, or aimed exactly at
//! it) run through the pole's coordinate singularity and are handled as
//! explicit radial lines with the Jacobi equation integrated on the profile.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::metric::{Family, PointChart, SurfaceSpec};
use crate::num::wrap_angle;
use rayon::prelude::*;

pub(crate) const MAXDIM: usize = 8;
const CLAIRAUT_EPS: f64 = 1e-13;
const POLE_BASE_EPS: f64 = 1e-12;

/// A unit tangent vector, stored as a base point plus the frame angle in
/// `[0, 2π)`. At the pole of a rotational plane the frame is the polar angle
/// of the outgoing ray.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct UnitTangent {
    pub base: PointChart,
    pub angle: f64,
}

impl UnitTangent {
    pub fn new(base: PointChart, angle: f64) -> UnitTangent {
        UnitTangent {
            base,
            angle: wrap_angle(angle),
        }
    }
}

// ---------------------------------------------------------------------------
// Dormand–Prince 5(4)
// ---------------------------------------------------------------------------

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// difference between the 5th-order weights and the embedded 4th-order weights
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

type State = [f64; MAXDIM];

/// Dense trajectory: accepted step endpoints plus derivatives, evaluated in
/// between with cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub(crate) struct Trajectory {
    pub s: Vec<f64>,
    pub y: Vec<State>,
    pub dy: Vec<State>,
    pub dim: usize,
}

impl Trajectory {
    pub fn s_end(&self) -> f64 {
        *self.s.last().unwrap()
    }

    fn segment_index(&self, s: f64) -> usize {
        // binary search for the step containing s
        match self
            .s
            .binary_search_by(|probe| probe.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.s.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.s.len() - 2),
        }
    }

    pub fn eval(&self, s: f64, out: &mut State) {
        let i = self.segment_index(s);
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let h = s1 - s0;
        if h == 0.0 {
            *out = self.y[i];
            return;
        }
        let x = (s - s0) / h;
        let (y0, y1, d0, d1) = (&self.y[i], &self.y[i + 1], &self.dy[i], &self.dy[i + 1]);
        let h00 = (1.0 + 2.0 * x) * (1.0 - x) * (1.0 - x);
        let h10 = x * (1.0 - x) * (1.0 - x);
        let h01 = x * x * (3.0 - 2.0 * x);
        let h11 = x * x * (x - 1.0);
        for k in 0..self.dim {
            out[k] = h00 * y0[k] + h10 * h * d0[k] + h01 * y1[k] + h11 * h * d1[k];
        }
    }

    pub fn eval_component(&self, s: f64, k: usize) -> f64 {
        let mut buf = [0.0; MAXDIM];
        self.eval(s, &mut buf);
        buf[k]
    }
}

pub(crate) fn integrate<F>(
    mut rhs: F,
    y0: State,
    dim: usize,
    s_end: f64,
    rtol: f64,
    atol: f64,
) -> Result<Trajectory>
where
    F: FnMut(f64, &State, &mut State),
{
    assert!(s_end > 0.0 && dim <= MAXDIM);
    let mut s = 0.0;
    let mut y = y0;
    let mut k: [State; 7] = [[0.0; MAXDIM]; 7];
    rhs(s, &y, &mut k[0]);

    let mut traj = Trajectory {
        s: vec![0.0],
        y: vec![y0],
        dy: vec![k[0]],
        dim,
    };

    let mut h = (0.01 * s_end).min(0.1);
    let h_min = s_end * 1e-14;
    let mut n_steps = 0usize;

    while s < s_end {
        n_steps += 1;
        if n_steps > 4_000_000 {
            return Err(Error::StepUnderflow {
                s,
                point: format!("({:.6}, {:.6}) [step budget exhausted]", y[0], y[1]),
            });
        }
        if h < h_min {
            return Err(Error::StepUnderflow {
                s,
                point: format!("({:.6}, {:.6})", y[0], y[1]),
            });
        }
        if s + h > s_end {
            h = s_end - s;
        }

        let mut ytmp: State = [0.0; MAXDIM];
        for stage in 1..7 {
            for c in 0..dim {
                let mut acc = 0.0;
                for prev in 0..stage {
                    acc += A[stage][prev] * k[prev][c];
                }
                ytmp[c] = y[c] + h * acc;
            }
            rhs(s + C[stage] * h, &ytmp, &mut k[stage]);
        }
        // stage 6 used the 5th-order weights, so ytmp is the new solution (FSAL)
        let ynew = ytmp;
        let dnew = k[6];

        let mut err = 0.0f64;
        for c in 0..dim {
            let mut e = 0.0;
            for stage in 0..7 {
                e += E[stage] * k[stage][c];
            }
            e *= h;
            let scale = atol + rtol * y[c].abs().max(ynew[c].abs());
            let r = e / scale;
            err += r * r;
        }
        err = (err / dim as f64).sqrt();

        if err <= 1.0 || h <= h_min * 2.0 {
            s += h;
            y = ynew;
            k[0] = dnew;
            traj.s.push(s);
            traj.y.push(y);
            traj.dy.push(dnew);
            if !y[..dim].iter().all(|v| v.is_finite()) {
                return Err(Error::StepUnderflow {
                    s,
                    point: format!("({:.6}, {:.6}) [non-finite state]", y[0], y[1]),
                });
            }
        }
        let factor = if err > 0.0 {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
    }
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Geodesic right-hand sides
// ---------------------------------------------------------------------------

/// Per-family acceleration and curvature evaluators, resolved once per
/// integration so the hot loop avoids re-deriving cached profile data.
enum ChartOps<'a> {
    Flat,
    Conformal(&'a Expr),
    Rotational(&'a Expr),
}

impl<'a> ChartOps<'a> {
    fn new(spec: &'a SurfaceSpec) -> ChartOps<'a> {
        match &spec.family {
            Family::FlatPlane | Family::FlatCylinder { .. } => ChartOps::Flat,
            Family::ConformalPlane { phi } => ChartOps::Conformal(phi),
            Family::RotationalPlane { f, .. } | Family::RotationalCylinder { f } => {
                ChartOps::Rotational(f)
            }
        }
    }

    /// Acceleration of the geodesic equation and Gaussian curvature at the
    /// current state, in one pass over the coefficient expressions.
    #[inline]
    fn accel_and_k(&self, u: f64, v: f64, du: f64, dv: f64) -> (f64, f64, f64) {
        match self {
            ChartOps::Flat => (0.0, 0.0, 0.0),
            ChartOps::Conformal(phi) => {
                let jx = phi.eval_jet(&[u, v], 0);
                let jy = phi.eval_jet(&[u, v], 1);
                let (px, py) = (jx.d1, jy.d1);
                let au = -(px * du * du + 2.0 * py * du * dv - px * dv * dv);
                let av = -(py * dv * dv + 2.0 * px * du * dv - py * du * du);
                let k = -(-2.0 * jx.v).exp() * (jx.d2 + jy.d2);
                (au, av, k)
            }
            ChartOps::Rotational(f) => {
                let j = f.eval_jet(&[u], 0);
                let au = j.v * j.d1 * dv * dv;
                let av = -2.0 * (j.d1 / j.v) * du * dv;
                let k = -j.d2 / j.v;
                (au, av, k)
            }
        }
    }
}

/// State layout for the general ray system:
/// `[u, v, du, dv, (λ₁, λ₁′), (λ₂, λ₂′)]`.
fn ray_rhs(ops: &ChartOps, y: &State, dy: &mut State, n_jac: usize) {
    let (au, av, k) = ops.accel_and_k(y[0], y[1], y[2], y[3]);
    dy[0] = y[2];
    dy[1] = y[3];
    dy[2] = au;
    dy[3] = av;
    for j in 0..n_jac {
        let b = 4 + 2 * j;
        dy[b] = y[b + 1];
        dy[b + 1] = -k * y[b];
    }
}

// ---------------------------------------------------------------------------
// Geodesic paths
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum RayKind {
    /// Dense ODE trajectory in chart coordinates (θ left unwrapped).
    General(Trajectory),
    /// Radial line of a rotational plane: `r(s) = |r0_signed - s|` understood
    /// on the signed radial axis through the pole; `r0_signed = 0` shoots out
    /// of the pole, `r0_signed > 0` aims inward through it.
    Radial {
        r0_signed: f64,
        theta: f64,
        jacobi: Option<Trajectory>,
    },
}

/// A sampled unit-speed geodesic with dense evaluation.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub initial: UnitTangent,
    pub s_max: f64,
    pub tol: f64,
    pub spec_label: String,
    kind: RayKind,
    n_jacobi: usize,
    /// max over accepted samples of |g(γ′,γ′) − 1|
    pub max_speed_drift: f64,
}

/// Scalar Jacobi solution sampled along a geodesic.
#[derive(Debug, Clone)]
pub struct JacobiRecord {
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub dlambda: Vec<f64>,
    pub lambda0: f64,
    pub dlambda0: f64,
}

impl GeodesicPath {
    /// Raw (unwrapped) chart coordinates at arc parameter `s`.
    pub fn raw_coords_at(&self, s: f64) -> (f64, f64) {
        match &self.kind {
            RayKind::General(traj) => {
                let mut buf = [0.0; MAXDIM];
                traj.eval(s, &mut buf);
                (buf[0], buf[1])
            }
            RayKind::Radial {
                r0_signed, theta, ..
            } => {
                let w = r0_signed - s;
                if w >= 0.0 {
                    (w, *theta)
                } else {
                    (-w, theta + std::f64::consts::PI)
                }
            }
        }
    }

    /// Raw chart velocity at arc parameter `s`.
    pub fn raw_velocity_at(&self, s: f64) -> (f64, f64) {
        match &self.kind {
            RayKind::General(traj) => {
                let mut buf = [0.0; MAXDIM];
                traj.eval(s, &mut buf);
                (buf[2], buf[3])
            }
            RayKind::Radial { r0_signed, .. } => {
                if r0_signed - s >= 0.0 {
                    (-1.0, 0.0)
                } else {
                    (1.0, 0.0)
                }
            }
        }
    }

    pub fn point_at(&self, spec: &SurfaceSpec, s: f64) -> PointChart {
        let (u, v) = self.raw_coords_at(s);
        spec.canonical_point(u, v)
    }

    pub fn tangent_at(&self, spec: &SurfaceSpec, s: f64) -> UnitTangent {
        let p = self.point_at(spec, s);
        let (du, dv) = self.raw_velocity_at(s);
        if matches!(spec.family, Family::RotationalPlane { .. }) && p.u < POLE_BASE_EPS {
            // frame convention at the pole: angle = polar angle of the ray
            let (_, theta) = self.raw_coords_at(s + 1e-9);
            return UnitTangent::new(p, theta);
        }
        UnitTangent::new(p, spec.angle_from_tangent(p, du, dv))
    }

    /// Ordered samples `(s, point, tangent)` at the accepted integration
    /// nodes (or a uniform grid for analytic radial rays).
    pub fn samples(&self, spec: &SurfaceSpec) -> Vec<(f64, PointChart, UnitTangent)> {
        let ss: Vec<f64> = match &self.kind {
            RayKind::General(traj) => traj.s.clone(),
            RayKind::Radial { .. } => {
                let n = 128;
                (0..=n).map(|k| self.s_max * k as f64 / n as f64).collect()
            }
        };
        ss.into_iter()
            .map(|s| (s, self.point_at(spec, s), self.tangent_at(spec, s)))
            .collect()
    }

    fn jacobi_traj(&self) -> Option<(&Trajectory, usize)> {
        match &self.kind {
            RayKind::General(traj) => {
                if self.n_jacobi > 0 {
                    Some((traj, 4))
                } else {
                    None
                }
            }
            RayKind::Radial { jacobi, .. } => jacobi.as_ref().map(|t| (t, 0)),
        }
    }
}

fn clairaut_constant(spec: &SurfaceSpec, v: &UnitTangent) -> Option<f64> {
    spec.profile().map(|prof| {
        let f = prof.value(v.base.u);
        f * v.angle.sin()
    })
}

/// Integrate the geodesic with `jacobi_inits` Jacobi solutions co-integrated.
fn shoot_with_jacobi(
    spec: &SurfaceSpec,
    v: &UnitTangent,
    s_max: f64,
    tol: f64,
    jacobi_inits: &[(f64, f64)],
) -> Result<GeodesicPath> {
    if !(s_max > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidParameter(
            "shoot_geodesic requires s_max > 0 and tol > 0".into(),
        ));
    }
    let n_jac = jacobi_inits.len();
    assert!(n_jac <= 2);

    let is_rot_plane = matches!(spec.family, Family::RotationalPlane { .. });

    // radial special cases of the rotational plane
    if is_rot_plane {
        let at_pole = v.base.u.abs() < POLE_BASE_EPS;
        let radial = clairaut_constant(spec, v)
            .map(|c| c.abs() < CLAIRAUT_EPS)
            .unwrap_or(false);
        if at_pole || radial {
            let (r0_signed, theta) = if at_pole {
                (0.0, v.angle)
            } else if v.angle.cos() >= 0.0 {
                // outward radial: represent as r0_signed < 0 so r(s) = |r0| + s
                (-v.base.u, v.base.v + std::f64::consts::PI)
            } else {
                // inward radial through the pole
                (v.base.u, v.base.v)
            };
            let jacobi = if n_jac > 0 {
                let mut y0: State = [0.0; MAXDIM];
                for (j, (l, dl)) in jacobi_inits.iter().enumerate() {
                    y0[2 * j] = *l;
                    y0[2 * j + 1] = *dl;
                }
                let prof_k = |s: f64| spec.profile_curvature(r0_signed - s);
                let traj = integrate(
                    |s, y, dy| {
                        let k = prof_k(s);
                        for j in 0..n_jac {
                            dy[2 * j] = y[2 * j + 1];
                            dy[2 * j + 1] = -k * y[2 * j];
                        }
                    },
                    y0,
                    2 * n_jac,
                    s_max,
                    tol,
                    tol * 1e-3,
                )?;
                Some(traj)
            } else {
                None
            };
            return Ok(GeodesicPath {
                initial: *v,
                s_max,
                tol,
                spec_label: spec.label.clone(),
                kind: RayKind::Radial {
                    r0_signed,
                    theta,
                    jacobi,
                },
                n_jacobi: n_jac,
                max_speed_drift: 0.0,
            });
        }
    }

    let (du, dv) = spec.tangent_from_angle(v.base, v.angle);
    let mut y0: State = [0.0; MAXDIM];
    y0[0] = v.base.u;
    y0[1] = v.base.v;
    y0[2] = du;
    y0[3] = dv;
    for (j, (l, dl)) in jacobi_inits.iter().enumerate() {
        y0[4 + 2 * j] = *l;
        y0[4 + 2 * j + 1] = *dl;
    }
    let ops = ChartOps::new(spec);
    let dim = 4 + 2 * n_jac;
    let traj = integrate(
        |_s, y, dy| ray_rhs(&ops, y, dy, n_jac),
        y0,
        dim,
        s_max,
        tol,
        tol * 1e-3,
    )?;

    // renormalization drift check: report, never silently rescale
    let mut drift = 0.0f64;
    for (i, y) in traj.y.iter().enumerate() {
        let p = PointChart::new(y[0], y[1]);
        let sp = spec.speed_sq(p, y[2], y[3]);
        drift = drift.max((sp - 1.0).abs());
        let _ = i;
    }

    Ok(GeodesicPath {
        initial: *v,
        s_max,
        tol,
        spec_label: spec.label.clone(),
        kind: RayKind::General(traj),
        n_jacobi: n_jac,
        max_speed_drift: drift,
    })
}

/// Integrate the unit-speed geodesic with initial tangent `v` for arc length
/// `s_max` at integrator tolerance `tol`.
pub fn shoot_geodesic(
    spec: &SurfaceSpec,
    v: &UnitTangent,
    s_max: f64,
    tol: f64,
) -> Result<GeodesicPath> {
    shoot_with_jacobi(spec, v, s_max, tol, &[])
}

/// Solve `λ″ + K(γ(s)) λ = 0` along the path with the given initial data,
/// co-integrated with the geodesic itself.
pub fn jacobi_along(
    spec: &SurfaceSpec,
    path: &GeodesicPath,
    lambda0: f64,
    dlambda0: f64,
) -> Result<JacobiRecord> {
    let co = shoot_with_jacobi(
        spec,
        &path.initial,
        path.s_max,
        path.tol,
        &[(lambda0, dlambda0)],
    )?;
    let (traj, base) = co.jacobi_traj().expect("jacobi slot requested");
    let s = traj.s.clone();
    let lambda = traj.y.iter().map(|y| y[base]).collect();
    let dlambda = traj.y.iter().map(|y| y[base + 1]).collect();
    Ok(JacobiRecord {
        s,
        lambda,
        dlambda,
        lambda0,
        dlambda0,
    })
}

/// Smallest `s* > 0` where the Jacobi solution with data `(0, 1)` vanishes,
/// located by a sign change over the dense output plus bisection; `None` when
/// there is no sign change on `(0, s_max]`.
pub fn first_conjugate(spec: &SurfaceSpec, path: &GeodesicPath, tol: f64) -> Result<Option<f64>> {
    let co = shoot_with_jacobi(spec, &path.initial, path.s_max, path.tol, &[(0.0, 1.0)])?;
    let (traj, base) = co.jacobi_traj().unwrap();
    first_zero_after(traj, base, 0.0, tol)
}

/// Sign-change scan + bisection for component `comp` of `traj` on `(after, end]`.
pub(crate) fn first_zero_after(
    traj: &Trajectory,
    comp: usize,
    after: f64,
    tol: f64,
) -> Result<Option<f64>> {
    let n = traj.s.len();
    let mut grazing: Option<f64> = None;
    for i in 1..n {
        let (s0, s1) = (traj.s[i - 1], traj.s[i]);
        if s1 <= after {
            continue;
        }
        let y0 = traj.y[i - 1][comp];
        let y1 = traj.y[i][comp];
        let d0 = traj.dy[i - 1][comp];
        // an exact zero at the left node is the initial condition, not a
        // conjugate point; its sign is carried by the derivative
        let pos0 = if y0 != 0.0 { y0 > 0.0 } else { d0 > 0.0 };
        if y1 == 0.0 && s1 > after {
            return Ok(Some(s1));
        }
        if pos0 != (y1 > 0.0) {
            let mut lo = s0.max(after);
            if traj.eval_component(lo, comp) == 0.0 {
                lo += (s1 - lo) * 1e-9;
            }
            let root = crate::num::bisect(lo, s1, tol, |s| traj.eval_component(s, comp));
            return Ok(Some(root));
        }
        // grazing: interior dip towards zero without a crossing
        let d0 = traj.dy[i - 1][comp];
        let d1 = traj.dy[i][comp];
        if (d0 > 0.0) != (d1 > 0.0) {
            let s_ext = crate::num::bisect(s0.max(after), s1, tol, |s| {
                let i2 = traj.segment_index(s);
                // derivative of the Hermite interpolant via finite difference
                let h = (traj.s[i2 + 1] - traj.s[i2]) * 1e-6;
                (traj.eval_component(s + h, comp) - traj.eval_component(s - h, comp)) / (2.0 * h)
            });
            let val = traj.eval_component(s_ext, comp).abs();
            let scale = traj.y.iter().map(|y| y[comp].abs()).fold(0.0, f64::max);
            if val < 1e-9 * scale.max(1.0) {
                grazing = Some(s_ext);
            }
        }
    }
    if let Some(s) = grazing {
        return Err(Error::DegenerateZero { s });
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Radial charts
// ---------------------------------------------------------------------------

/// Polar chart at a basepoint: the scalar Jacobi field `λ(θ, r)` with data
/// `(0, 1)` along the geodesic leaving the basepoint at frame angle `θ`,
/// together with curvature samples and raw ray coordinates. Carrier of the
/// boundary-length and area quadratures.
#[derive(Debug, Clone)]
pub struct RadialChart {
    pub basepoint: PointChart,
    pub thetas: Vec<f64>,
    pub radii: Vec<f64>,
    /// row-major `n_theta × n_r`: λ(θ_j, r_k)
    pub lambda: Vec<f64>,
    pub dlambda: Vec<f64>,
    /// Gaussian curvature at (θ_j, r_k)
    pub kappa: Vec<f64>,
    /// raw (unwrapped) chart coordinates of the ray points
    pub pos_u: Vec<f64>,
    pub pos_v: Vec<f64>,
    /// first conjugate radius per direction, when one was detected
    pub conjugate: Vec<Option<f64>>,
    /// true when the chart was built from a single profile by symmetry
    pub symmetric: bool,
    pub tol: f64,
}

impl RadialChart {
    pub fn n_theta(&self) -> usize {
        self.thetas.len()
    }

    pub fn n_r(&self) -> usize {
        self.radii.len()
    }

    #[inline]
    pub fn idx(&self, j: usize, k: usize) -> usize {
        j * self.radii.len() + k
    }

    pub fn has_conjugate_flags(&self) -> bool {
        self.conjugate.iter().any(|c| c.is_some())
    }

    /// First flagged direction as `(θ, s*)`, if any.
    pub fn first_flag(&self) -> Option<(f64, f64)> {
        self.thetas
            .iter()
            .zip(&self.conjugate)
            .filter_map(|(t, c)| c.map(|s| (*t, s)))
            .fold(None, |best: Option<(f64, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            })
    }

    /// `H¹(∂B(p, r_k))` by the periodic trapezoid over θ.
    pub fn boundary_length(&self, k: usize) -> f64 {
        let n = self.n_theta();
        let sum: f64 = (0..n).map(|j| self.lambda[self.idx(j, k)]).sum();
        sum * std::f64::consts::TAU / n as f64
    }

    /// Derivative `d/dr H¹(∂B(p, r))` from the co-integrated λ′ samples.
    pub fn boundary_length_derivative(&self, k: usize) -> f64 {
        let n = self.n_theta();
        let sum: f64 = (0..n).map(|j| self.dlambda[self.idx(j, k)]).sum();
        sum * std::f64::consts::TAU / n as f64
    }

    /// Dump as CSV with columns `theta,r,lambda,conjugate_flag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,r,lambda,conjugate_flag\n");
        for (j, th) in self.thetas.iter().enumerate() {
            for (k, r) in self.radii.iter().enumerate() {
                let flagged = self.conjugate[j].map(|s| *r >= s).unwrap_or(false);
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    th,
                    r,
                    self.lambda[self.idx(j, k)],
                    u8::from(flagged)
                ));
            }
        }
        out
    }
}

/// Whether the chart at `p` is rotationally symmetric, so a single radial
/// profile determines every direction exactly.
fn chart_is_symmetric(spec: &SurfaceSpec, p: PointChart) -> bool {
    match spec.family {
        Family::FlatPlane | Family::FlatCylinder { .. } => true,
        Family::RotationalPlane { .. } => p.u.abs() < POLE_BASE_EPS,
        _ => false,
    }
}

/// Build the polar radial chart at `p`: `n_theta` equally spaced directions,
/// radial grid `0, Δr, …, r_max`.
pub fn radial_chart(
    spec: &SurfaceSpec,
    p: PointChart,
    r_max: f64,
    n_theta: usize,
    dr: f64,
    tol: f64,
) -> Result<RadialChart> {
    if !(r_max > 0.0) || !(dr > 0.0) || n_theta == 0 {
        return Err(Error::InvalidParameter(
            "radial_chart requires r_max > 0, dr > 0, n_theta > 0".into(),
        ));
    }
    let n_r = (r_max / dr).round() as usize;
    let radii: Vec<f64> = (0..=n_r).map(|k| r_max * k as f64 / n_r as f64).collect();
    let thetas: Vec<f64> = (0..n_theta)
        .map(|j| std::f64::consts::TAU * j as f64 / n_theta as f64)
        .collect();

    struct RayData {
        lambda: Vec<f64>,
        dlambda: Vec<f64>,
        kappa: Vec<f64>,
        pos_u: Vec<f64>,
        pos_v: Vec<f64>,
        conj: Option<f64>,
    }

    let sample_ray = |angle: f64| -> Result<RayData> {
        let v = UnitTangent::new(p, angle);
        let path = shoot_with_jacobi(spec, &v, r_max, tol, &[(0.0, 1.0)])?;
        let (traj, base) = path.jacobi_traj().unwrap();
        let conj = first_zero_after(traj, base, 0.0, 1e-10)?;
        let mut lambda = Vec::with_capacity(radii.len());
        let mut dlambda = Vec::with_capacity(radii.len());
        let mut kappa = Vec::with_capacity(radii.len());
        let mut pos_u = Vec::with_capacity(radii.len());
        let mut pos_v = Vec::with_capacity(radii.len());
        let mut buf = [0.0; MAXDIM];
        for &r in &radii {
            traj.eval(r, &mut buf);
            let (u, vv) = path.raw_coords_at(r);
            let valid = conj.map(|s| r < s).unwrap_or(true);
            lambda.push(if valid { buf[base] } else { f64::NAN });
            dlambda.push(if valid { buf[base + 1] } else { f64::NAN });
            let k = match spec.family {
                Family::RotationalPlane { .. } | Family::RotationalCylinder { .. } => {
                    spec.profile_curvature(u)
                }
                _ => spec.curvature_at(spec.canonical_point(u, vv))?.k,
            };
            kappa.push(k);
            pos_u.push(u);
            pos_v.push(vv);
        }
        Ok(RayData {
            lambda,
            dlambda,
            kappa,
            pos_u,
            pos_v,
            conj,
        })
    };

    let n_rr = radii.len();
    let mut chart = RadialChart {
        basepoint: p,
        thetas: thetas.clone(),
        radii: radii.clone(),
        lambda: vec![0.0; n_theta * n_rr],
        dlambda: vec![0.0; n_theta * n_rr],
        kappa: vec![0.0; n_theta * n_rr],
        pos_u: vec![0.0; n_theta * n_rr],
        pos_v: vec![0.0; n_theta * n_rr],
        conjugate: vec![None; n_theta],
        symmetric: chart_is_symmetric(spec, p),
        tol,
    };

    if chart.symmetric {
        // one profile, broadcast bitwise across directions
        let data = sample_ray(thetas[0])?;
        for (j, &th) in thetas.iter().enumerate() {
            for k in 0..n_rr {
                let i = chart.idx(j, k);
                chart.lambda[i] = data.lambda[k];
                chart.dlambda[i] = data.dlambda[k];
                chart.kappa[i] = data.kappa[k];
                match spec.family {
                    Family::RotationalPlane { .. } => {
                        chart.pos_u[i] = data.pos_u[k];
                        chart.pos_v[i] = th;
                    }
                    Family::FlatPlane => {
                        chart.pos_u[i] = p.u + chart.radii[k] * th.cos();
                        chart.pos_v[i] = p.v + chart.radii[k] * th.sin();
                    }
                    Family::FlatCylinder { radius } => {
                        chart.pos_u[i] = p.u + chart.radii[k] * th.cos();
                        chart.pos_v[i] = p.v + chart.radii[k] * th.sin() / radius;
                    }
                    _ => unreachable!(),
                }
            }
            chart.conjugate[j] = data.conj;
        }
        return Ok(chart);
    }

    // per-direction integration; rays are independent, results assembled in
    // fixed θ order so the build is deterministic under any schedule
    let rays: Vec<Result<RayData>> = thetas.par_iter().map(|&th| sample_ray(th)).collect();
    for (j, ray) in rays.into_iter().enumerate() {
        let data = ray?;
        for k in 0..n_rr {
            let i = chart.idx(j, k);
            chart.lambda[i] = data.lambda[k];
            chart.dlambda[i] = data.dlambda[k];
            chart.kappa[i] = data.kappa[k];
            chart.pos_u[i] = data.pos_u[k];
            chart.pos_v[i] = data.pos_v[k];
        }
        chart.conjugate[j] = data.conj;
    }
    Ok(chart)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::SurfaceSpec;

    fn spec(text: &str) -> SurfaceSpec {
        SurfaceSpec::parse(text).unwrap()
    }

    fn flat() -> SurfaceSpec {
        spec("family = flat_plane")
    }

    fn sinh_plane() -> SurfaceSpec {
        spec("family = rotational_plane\nf = sinh(r)")
    }

    /// Closed-form geodesics of the hyperbolic plane (K = -1) in polar
    /// coordinates about the pole, via the hyperboloid model: an independent
    /// oracle for the integrator.
    fn hyperbolic_geodesic(r0: f64, th0: f64, angle: f64, s: f64) -> (f64, f64) {
        // embed: P = (sinh r cosθ, sinh r sinθ, cosh r)
        let p = [
            r0.sinh() * th0.cos(),
            r0.sinh() * th0.sin(),
            r0.cosh(),
        ];
        // orthonormal frame at p: e_r, e_θ in the tangent plane
        let er = [r0.cosh() * th0.cos(), r0.cosh() * th0.sin(), r0.sinh()];
        let eth = [-th0.sin(), th0.cos(), 0.0];
        let v = [
            angle.cos() * er[0] + angle.sin() * eth[0],
            angle.cos() * er[1] + angle.sin() * eth[1],
            angle.cos() * er[2] + angle.sin() * eth[2],
        ];
        let x = [
            p[0] * s.cosh() + v[0] * s.sinh(),
            p[1] * s.cosh() + v[1] * s.sinh(),
            p[2] * s.cosh() + v[2] * s.sinh(),
        ];
        let r = x[2].acosh();
        let th = x[1].atan2(x[0]);
        (r, th)
    }

    #[test]
    fn flat_plane_straight_segment() {
        let s = flat();
        let v = UnitTangent::new(PointChart::new(0.0, 0.0), 0.0);
        let path = shoot_geodesic(&s, &v, 5.0, 1e-10).unwrap();
        let p = path.point_at(&s, 5.0);
        assert!((p.u - 5.0).abs() < 1e-12 && p.v.abs() < 1e-12);
        assert!(path.max_speed_drift < 1e-12);
    }

    #[test]
    fn cylinder_meridian_stays_meridian() {
        let s = spec("family = rotational_cylinder\nf = cosh(t)");
        let v = UnitTangent::new(PointChart::new(-1.0, 2.0), 0.0);
        let path = shoot_geodesic(&s, &v, 4.0, 1e-10).unwrap();
        for k in 0..=16 {
            let (_, th) = path.raw_coords_at(4.0 * k as f64 / 16.0);
            // θ' stays exactly zero in the integration; the dense-output
            // weights may perturb the constant by an ulp
            assert!((th - 2.0).abs() < 1e-14, "meridian θ drifted: {th}");
        }
        let (t_end, _) = path.raw_coords_at(4.0);
        assert!((t_end - 3.0).abs() < 1e-9);
    }

    #[test]
    fn clairaut_quantity_is_conserved() {
        let s = spec("family = rotational_cylinder\nf = cosh(t)");
        let prof = s.profile().unwrap();
        let v = UnitTangent::new(PointChart::new(0.4, 0.0), 1.1);
        let path = shoot_geodesic(&s, &v, 8.0, 1e-10).unwrap();
        // c = f(t)·sin(frame angle) at the accepted integration nodes
        let c0 = prof.value(0.4) * 1.1f64.sin();
        for (sarc, p, tangent) in path.samples(&s) {
            let c = prof.value(p.u) * tangent.angle.sin();
            assert!(
                (c - c0).abs() < 1e-7 * c0.abs().max(1.0),
                "Clairaut drift at s={sarc}: {c} vs {c0}"
            );
        }
    }

    #[test]
    fn hyperbolic_endpoints_match_hyperboloid_model() {
        let s = sinh_plane();
        let (r0, th0, ang, len) = (1.3, 0.7, 2.2, 3.0);
        let v = UnitTangent::new(PointChart::new(r0, th0), ang);
        let path = shoot_geodesic(&s, &v, len, 1e-11).unwrap();
        let (r, th) = path.raw_coords_at(len);
        let (re, the) = hyperbolic_geodesic(r0, th0, ang, len);
        assert!((r - re).abs() < 1e-8, "r: {r} vs {re}");
        let dth = (wrap_angle(th) - wrap_angle(the)).abs();
        let dth = dth.min(std::f64::consts::TAU - dth);
        assert!(dth < 1e-8, "θ: {th} vs {the}");
    }

    #[test]
    fn tightening_tolerance_reduces_endpoint_error() {
        let s = sinh_plane();
        let v = UnitTangent::new(PointChart::new(0.9, 0.0), 1.9);
        let (re, the) = hyperbolic_geodesic(0.9, 0.0, 1.9, 4.0);
        let mut errs = Vec::new();
        for tol in [1e-6, 1e-8, 1e-10] {
            let path = shoot_geodesic(&s, &v, 4.0, tol).unwrap();
            let (r, th) = path.raw_coords_at(4.0);
            errs.push(((r - re).powi(2) + (th - the).powi(2)).sqrt());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "errors: {errs:?}");
        assert!(errs[2] < 1e-8);
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let s = spec("family = conformal_plane\nphi = 0.4*exp(-(x^2+y^2))");
        let tol = 1e-10;
        let v = UnitTangent::new(PointChart::new(-1.8, 0.3), 0.25);
        let fwd = shoot_geodesic(&s, &v, 4.0, tol).unwrap();
        let end = fwd.point_at(&s, 4.0);
        let (du, dv) = fwd.raw_velocity_at(4.0);
        let back_angle = s.angle_from_tangent(end, -du, -dv);
        let back = shoot_geodesic(&s, &UnitTangent::new(end, back_angle), 4.0, tol).unwrap();
        let home = back.point_at(&s, 4.0);
        assert!(
            ((home.u + 1.8).powi(2) + (home.v - 0.3).powi(2)).sqrt() < 10.0 * 1e-6_f64.sqrt() * tol.sqrt(),
            "returned to {home:?}"
        );
    }

    #[test]
    fn jacobi_closed_forms() {
        // K ≡ 0: λ(s) = s
        let s = flat();
        let v = UnitTangent::new(PointChart::new(0.2, -0.4), 1.0);
        let path = shoot_geodesic(&s, &v, 3.0, 1e-10).unwrap();
        let rec = jacobi_along(&s, &path, 0.0, 1.0).unwrap();
        let at = |rec: &JacobiRecord, s: f64| {
            // linear interpolation between samples is fine for a check
            let i = rec.s.iter().position(|&x| x >= s).unwrap();
            rec.lambda[i]
        };
        assert!((at(&rec, 3.0) - 3.0).abs() < 1e-9);

        // K ≡ -1: (0,1) → sinh, (1,0) → cosh
        let s = sinh_plane();
        let v = UnitTangent::new(PointChart::new(0.8, 0.0), 2.0);
        let path = shoot_geodesic(&s, &v, 3.0, 1e-10).unwrap();
        let rec = jacobi_along(&s, &path, 0.0, 1.0).unwrap();
        let last = *rec.lambda.last().unwrap();
        assert!((last - 3.0f64.sinh()).abs() < 1e-7, "sinh: {last}");
        let rec = jacobi_along(&s, &path, 1.0, 0.0).unwrap();
        let last = *rec.lambda.last().unwrap();
        assert!((last - 3.0f64.cosh()).abs() < 1e-7, "cosh: {last}");
    }

    #[test]
    fn wronskian_constant_along_paths() {
        for stext in [
            "family = rotational_plane\nf = 1.5*r - 0.5*tanh(r)",
            "family = conformal_plane\nphi = 0.3*exp(-(x^2+y^2))",
            "family = rotational_cylinder\nf = exp(-t)",
        ] {
            let s = spec(stext);
            let base = if s.is_cylinder() {
                PointChart::new(0.3, 1.0)
            } else if matches!(s.family, Family::RotationalPlane { .. }) {
                PointChart::new(1.1, 0.5)
            } else {
                PointChart::new(0.4, -0.6)
            };
            let v = UnitTangent::new(base, 0.9);
            // two independent solutions co-integrated in one state vector
            let path = shoot_with_jacobi(&s, &v, 5.0, 1e-10, &[(0.0, 1.0), (1.0, 0.0)]).unwrap();
            let (traj, base_idx) = path.jacobi_traj().unwrap();
            let w_at = |y: &State| {
                y[base_idx] * y[base_idx + 3] - y[base_idx + 2] * y[base_idx + 1]
            };
            let w0 = w_at(&traj.y[0]);
            for y in &traj.y {
                let w = w_at(y);
                assert!(
                    (w - w0).abs() < 1e-6 * w0.abs(),
                    "{stext}: Wronskian drift {w} vs {w0}"
                );
            }
        }
    }

    #[test]
    fn flat_plane_has_no_conjugate_points() {
        let s = flat();
        let v = UnitTangent::new(PointChart::new(0.0, 0.0), 0.7);
        let path = shoot_geodesic(&s, &v, 50.0, 1e-9).unwrap();
        assert!(first_conjugate(&s, &path, 1e-10).unwrap().is_none());
    }

    #[test]
    fn sinh_radial_direction_has_no_conjugate_points() {
        let s = sinh_plane();
        let v = UnitTangent::new(PointChart::new(0.0, 0.0), 1.2);
        let path = shoot_geodesic(&s, &v, 30.0, 1e-9).unwrap();
        assert!(first_conjugate(&s, &path, 1e-10).unwrap().is_none());
    }

    #[test]
    fn conjugate_point_at_pi_on_unit_sphere() {
        // stereographic chart of the unit sphere: K ≡ +1; the geodesic from
        // (-1, 0) heading +x has its conjugate point exactly at s = π
        let s = spec("family = conformal_plane\nphi = log(2/(1+x^2+y^2))");
        let v = UnitTangent::new(PointChart::new(-1.0, 0.0), 0.0);
        let path = shoot_geodesic(&s, &v, 3.3, 1e-12).unwrap();
        let conj = first_conjugate(&s, &path, 1e-12).unwrap().unwrap();
        assert!(
            (conj - std::f64::consts::PI).abs() < 1e-8,
            "conjugate at {conj}, |Δ| = {:.2e}",
            (conj - std::f64::consts::PI).abs()
        );
    }

    #[test]
    fn radial_through_pole_geodesic() {
        let s = sinh_plane();
        // aim exactly at the pole from r = 1.5: after s = 1.5 the ray exits
        // on the opposite side
        let v = UnitTangent::new(PointChart::new(1.5, 0.4), std::f64::consts::PI);
        let path = shoot_geodesic(&s, &v, 4.0, 1e-10).unwrap();
        let p = path.point_at(&s, 1.5);
        assert!(p.u.abs() < 1e-12);
        let p = path.point_at(&s, 2.5);
        assert!((p.u - 1.0).abs() < 1e-12);
        assert!((p.v - wrap_angle(0.4 + std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn flat_chart_is_exact() {
        let s = flat();
        let chart = radial_chart(&s, PointChart::new(0.0, 0.0), 2.0, 16, 0.25, 1e-10).unwrap();
        for k in 0..chart.n_r() {
            let r = chart.radii[k];
            assert!((chart.boundary_length(k) - std::f64::consts::TAU * r).abs() < 1e-10);
            for j in 0..chart.n_theta() {
                assert!((chart.lambda[chart.idx(j, k)] - r).abs() < 1e-12);
            }
        }
        assert!(!chart.has_conjugate_flags());
        assert!(chart.symmetric);
    }

    #[test]
    fn sinh_chart_matches_profile() {
        let s = sinh_plane();
        let chart = radial_chart(&s, PointChart::new(0.0, 0.0), 2.0, 8, 0.125, 1e-10).unwrap();
        for k in 0..chart.n_r() {
            let r = chart.radii[k];
            let expect = std::f64::consts::TAU * r.sinh();
            assert!(
                (chart.boundary_length(k) - expect).abs() < 1e-8 * expect.max(1.0),
                "L({r}) = {} vs {}",
                chart.boundary_length(k),
                expect
            );
        }
    }

    #[test]
    fn tanh_chart_flags_conjugate_points_off_pole() {
        // K = 2 sech² r > 0 near the pole; geodesics from an off-pole point
        // crossing the cap focus within the chart radius
        let s = spec("family = rotational_plane\nf = tanh(r)");
        let chart = radial_chart(&s, PointChart::new(2.0, 0.0), 6.0, 32, 0.125, 1e-9).unwrap();
        assert!(
            chart.has_conjugate_flags(),
            "expected conjugate flags somewhere in the chart"
        );
        let (th, sstar) = chart.first_flag().unwrap();
        assert!(sstar > 0.0 && sstar <= 6.0, "flag at θ={th}, s*={sstar}");
        // flagged entries are withheld from the chart values
        let j = chart
            .thetas
            .iter()
            .position(|t| chart.conjugate[chart.thetas.iter().position(|x| x == t).unwrap()].is_some())
            .unwrap();
        let k_flag = chart
            .radii
            .iter()
            .position(|&r| r >= chart.conjugate[j].unwrap())
            .unwrap();
        assert!(chart.lambda[chart.idx(j, k_flag)].is_nan());
    }

    #[test]
    fn pole_chart_of_tanh_plane_has_no_flags() {
        let s = spec("family = rotational_plane\nf = tanh(r)");
        let chart = radial_chart(&s, PointChart::new(0.0, 0.0), 6.0, 8, 0.25, 1e-9).unwrap();
        assert!(!chart.has_conjugate_flags());
        for k in 0..chart.n_r() {
            let r = chart.radii[k];
            assert!((chart.lambda[chart.idx(0, k)] - r.tanh()).abs() < 1e-7);
        }
    }
}
