//! Surface families, metric spec files, curvature and Christoffel symbols.
//!
//! Supported families are the flat plane, flat cylinders, conformal planes
//! `e^{2φ(x,y)}(dx²+dy²)`, rotational planes `dr² + f(r)²dθ²`, and rotational
//! cylinders `dt² + f(t)²dθ²`. All charts used here have diagonal metrics,
//! which the distance solver and the geodesic integrator both rely on.

use crate::error::{Error, Result};
use crate::expr::{Expr, Jet2};
use crate::num::wrap_angle;

const POLE_EPS: f64 = 1e-6;

/// A point in the family's chart: `(x, y)` for flat/conformal planes,
/// `(r, θ)` for rotational planes, `(t, θ)` for cylinders.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PointChart {
    pub u: f64,
    pub v: f64,
}

impl PointChart {
    pub fn new(u: f64, v: f64) -> PointChart {
        PointChart { u, v }
    }
}

impl std::fmt::Display for PointChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:.6}, {:.6})", self.u, self.v)
    }
}

/// Gaussian curvature at a sample point.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct CurvatureSample {
    pub point: PointChart,
    pub k: f64,
}

/// The six Christoffel symbols of the 2D chart, `g{k}_{ij}` = Γ^k_{ij}.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Christoffels {
    pub g1_11: f64,
    pub g1_12: f64,
    pub g1_22: f64,
    pub g2_11: f64,
    pub g2_12: f64,
    pub g2_22: f64,
}

#[derive(Debug, Clone)]
pub enum Family {
    FlatPlane,
    FlatCylinder { radius: f64 },
    ConformalPlane { phi: Expr },
    RotationalPlane { f: Expr, r_max: Option<f64> },
    RotationalCylinder { f: Expr },
}

/// A complete surface from one of the supported families.
#[derive(Debug, Clone)]
pub struct SurfaceSpec {
    pub family: Family,
    pub label: String,
}

/// Cached data for a rotational profile `f`: the compiled expression plus the
/// third derivative at the pole, used by the series fallback below `r = 1e-6`
/// where `-f''/f` is numerically 0/0.
#[derive(Debug, Clone)]
pub struct Profile<'a> {
    expr: &'a Expr,
    d3_zero: f64,
    has_pole: bool,
}

impl<'a> Profile<'a> {
    pub fn value(&self, t: f64) -> f64 {
        self.expr.eval(&[t])
    }

    pub fn jet(&self, t: f64) -> Jet2 {
        self.expr.eval_jet(&[t], 0)
    }

    /// `-f''/f`, with the pole series `K(0) = -f'''(0)` below `POLE_EPS`.
    pub fn curvature(&self, t: f64) -> f64 {
        if self.has_pole && t.abs() < POLE_EPS {
            return -self.d3_zero;
        }
        let j = self.jet(t);
        -j.d2 / j.v
    }

    /// `f'/f`, with the pole series `1/r + O(r)` left to the caller; this is
    /// only called away from the pole.
    pub fn log_derivative(&self, t: f64) -> f64 {
        let j = self.jet(t);
        j.d1 / j.v
    }
}

fn estimate_d3_zero(expr: &Expr) -> f64 {
    // f(h) = h + f'''(0) h^3/6 + O(h^5) for an admissible profile; one
    // Richardson step removes the h^2 error of the raw quotient
    let d3 = |h: f64| 6.0 * (expr.eval(&[h]) - h) / (h * h * h);
    let h = 1e-2;
    (4.0 * d3(0.5 * h) - d3(h)) / 3.0
}

impl SurfaceSpec {
    pub fn new(family: Family, label: impl Into<String>) -> Result<SurfaceSpec> {
        let spec = SurfaceSpec {
            family,
            label: label.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parse a metric spec file (UTF-8 `key=value` lines, `#` comments).
    ///
    /// Keys: `family` (required), `f` or `phi` (expression, per family),
    /// `radius` (flat cylinder), `label`, and optional `rmax` bounding the
    /// radial domain of a rotational plane.
    pub fn parse(source: &str) -> Result<SurfaceSpec> {
        let mut family_name: Option<(String, usize)> = None;
        let mut f_expr: Option<(String, usize, usize)> = None;
        let mut phi_expr: Option<(String, usize, usize)> = None;
        let mut radius: Option<(f64, usize)> = None;
        let mut r_max: Option<f64> = None;
        let mut label: Option<String> = None;

        for (idx, raw) in source.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            if line.trim().is_empty() {
                continue;
            }
            let eq = line.find('=').ok_or_else(|| Error::Parse {
                line: lineno,
                col: 1,
                msg: "expected `key = value`".into(),
            })?;
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            let value_col = eq + 2 + (line[eq + 1..].len() - line[eq + 1..].trim_start().len());
            if value.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    col: value_col,
                    msg: format!("empty value for `{key}`"),
                });
            }
            match key {
                "family" => family_name = Some((value.to_string(), lineno)),
                "f" => f_expr = Some((value.to_string(), lineno, value_col)),
                "phi" => phi_expr = Some((value.to_string(), lineno, value_col)),
                "radius" => {
                    let v: f64 = value.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        col: value_col,
                        msg: format!("invalid number `{value}`"),
                    })?;
                    radius = Some((v, lineno));
                }
                "rmax" => {
                    let v: f64 = value.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        col: value_col,
                        msg: format!("invalid number `{value}`"),
                    })?;
                    r_max = Some(v);
                }
                "label" => label = Some(value.to_string()),
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        col: 1,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }

        let (family_name, family_line) = family_name.ok_or_else(|| Error::Parse {
            line: 1,
            col: 1,
            msg: "missing required key `family`".into(),
        })?;

        let need_f = |f_expr: &Option<(String, usize, usize)>, var: &str| -> Result<Expr> {
            let (src, line, col) = f_expr.as_ref().ok_or_else(|| Error::Parse {
                line: family_line,
                col: 1,
                msg: format!("family `{family_name}` requires key `f`"),
            })?;
            Expr::parse_at(src, &[var], *line, *col)
        };

        let family = match family_name.as_str() {
            "flat_plane" => Family::FlatPlane,
            "flat_cylinder" => {
                let (r, line) = radius.ok_or_else(|| Error::Parse {
                    line: family_line,
                    col: 1,
                    msg: "family `flat_cylinder` requires key `radius`".into(),
                })?;
                if !(r > 0.0) {
                    return Err(Error::Parse {
                        line,
                        col: 1,
                        msg: format!("radius must be positive, got {r}"),
                    });
                }
                Family::FlatCylinder { radius: r }
            }
            "conformal_plane" => {
                let (src, line, col) = phi_expr.as_ref().ok_or_else(|| Error::Parse {
                    line: family_line,
                    col: 1,
                    msg: "family `conformal_plane` requires key `phi`".into(),
                })?;
                Family::ConformalPlane {
                    phi: Expr::parse_at(src, &["x", "y"], *line, *col)?,
                }
            }
            "rotational_plane" => Family::RotationalPlane {
                f: need_f(&f_expr, "r")?,
                r_max,
            },
            "rotational_cylinder" => Family::RotationalCylinder {
                f: need_f(&f_expr, "t")?,
            },
            other => {
                return Err(Error::Parse {
                    line: family_line,
                    col: 1,
                    msg: format!("unknown family `{other}`"),
                })
            }
        };

        let label = label.unwrap_or_else(|| family_name.clone());
        SurfaceSpec::new(family, label)
    }

    /// Check the family invariants on a default sample grid.
    pub fn validate(&self) -> Result<()> {
        match &self.family {
            Family::FlatPlane => Ok(()),
            Family::FlatCylinder { radius } => {
                if *radius > 0.0 && radius.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Invariant {
                        check: "radius > 0".into(),
                        location: "flat_cylinder".into(),
                        detail: format!("radius = {radius}"),
                    })
                }
            }
            Family::ConformalPlane { phi } => {
                for i in 0..17 {
                    for j in 0..17 {
                        let x = -5.0 + 10.0 * (i as f64) / 16.0;
                        let y = -5.0 + 10.0 * (j as f64) / 16.0;
                        let jx = phi.eval_jet(&[x, y], 0);
                        let jy = phi.eval_jet(&[x, y], 1);
                        if !(jx.v.is_finite()
                            && jx.d1.is_finite()
                            && jx.d2.is_finite()
                            && jy.d1.is_finite()
                            && jy.d2.is_finite())
                        {
                            return Err(Error::Invariant {
                                check: "phi evaluates finitely".into(),
                                location: format!("({x:.3}, {y:.3})"),
                                detail: "phi or a derivative is not finite".into(),
                            });
                        }
                    }
                }
                Ok(())
            }
            Family::RotationalPlane { f, r_max } => {
                let f0 = f.eval(&[0.0]);
                if !(f0.abs() <= 1e-9) {
                    return Err(Error::Invariant {
                        check: "f(0) = 0".into(),
                        location: "r = 0".into(),
                        detail: format!("f(0) = {f0:.3e}"),
                    });
                }
                // one-sided finite-difference check of f'(0) = 1, plus the
                // exact jet value; the pole series is unusable otherwise
                let h = 1e-4;
                let fd = (-3.0 * f0 + 4.0 * f.eval(&[h]) - f.eval(&[2.0 * h])) / (2.0 * h);
                let jet = f.eval_jet(&[0.0], 0);
                if (fd - 1.0).abs() > 1e-5 || (jet.d1 - 1.0).abs() > 1e-8 {
                    return Err(Error::Invariant {
                        check: "f'(0) = 1".into(),
                        location: "r = 0".into(),
                        detail: format!("finite-difference f'(0) = {fd:.6}, jet f'(0) = {:.6}", jet.d1),
                    });
                }
                let top = r_max.unwrap_or(10.0).min(10.0);
                for k in 1..=64 {
                    let r = top * (k as f64) / 64.0;
                    let v = f.eval(&[r]);
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::Invariant {
                            check: "f(r) > 0 for r > 0".into(),
                            location: format!("r = {r:.4}"),
                            detail: format!("f = {v:.6e}"),
                        });
                    }
                }
                Ok(())
            }
            Family::RotationalCylinder { f } => {
                for k in 0..=64 {
                    let t = -10.0 + 20.0 * (k as f64) / 64.0;
                    let v = f.eval(&[t]);
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::Invariant {
                            check: "f(t) > 0".into(),
                            location: format!("t = {t:.4}"),
                            detail: format!("f = {v:.6e}"),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    pub fn is_cylinder(&self) -> bool {
        matches!(
            self.family,
            Family::FlatCylinder { .. } | Family::RotationalCylinder { .. }
        )
    }

    pub fn is_plane(&self) -> bool {
        !self.is_cylinder()
    }

    /// Radial domain bound for rotational planes, if declared.
    pub fn radial_domain(&self) -> Option<f64> {
        match &self.family {
            Family::RotationalPlane { r_max, .. } => *r_max,
            _ => None,
        }
    }

    /// The warped-product profile of a rotational family, when there is one.
    /// Flat cylinders report a constant profile through the same interface.
    pub fn profile(&self) -> Option<Profile<'_>> {
        match &self.family {
            Family::RotationalPlane { f, .. } => Some(Profile {
                expr: f,
                d3_zero: estimate_d3_zero(f),
                has_pole: true,
            }),
            Family::RotationalCylinder { f } => Some(Profile {
                expr: f,
                d3_zero: 0.0,
                has_pole: false,
            }),
            _ => None,
        }
    }

    /// Canonicalize a chart point: wraps θ into `[0, 2π)` for the charts that
    /// carry an angle coordinate.
    pub fn canonical_point(&self, u: f64, v: f64) -> PointChart {
        match self.family {
            Family::FlatPlane | Family::ConformalPlane { .. } => PointChart::new(u, v),
            Family::FlatCylinder { .. }
            | Family::RotationalCylinder { .. }
            | Family::RotationalPlane { .. } => PointChart::new(u, wrap_angle(v)),
        }
    }

    /// Diagonal metric coefficients `(g_11, g_22)` at a point.
    pub fn metric_diag(&self, p: PointChart) -> (f64, f64) {
        match &self.family {
            Family::FlatPlane => (1.0, 1.0),
            Family::FlatCylinder { radius } => (1.0, radius * radius),
            Family::ConformalPlane { phi } => {
                let e2 = (2.0 * phi.eval(&[p.u, p.v])).exp();
                (e2, e2)
            }
            Family::RotationalPlane { f, .. } | Family::RotationalCylinder { f } => {
                let fv = f.eval(&[p.u]);
                (1.0, fv * fv)
            }
        }
    }

    /// Gaussian curvature K at a point.
    pub fn curvature_at(&self, p: PointChart) -> Result<CurvatureSample> {
        let k = match &self.family {
            Family::FlatPlane | Family::FlatCylinder { .. } => 0.0,
            Family::ConformalPlane { phi } => {
                let jx = phi.eval_jet(&[p.u, p.v], 0);
                let jy = phi.eval_jet(&[p.u, p.v], 1);
                -(-2.0 * jx.v).exp() * (jx.d2 + jy.d2)
            }
            Family::RotationalPlane { .. } | Family::RotationalCylinder { .. } => {
                let prof = self.profile().unwrap();
                if matches!(self.family, Family::RotationalPlane { .. }) && p.u < 0.0 {
                    return Err(Error::Domain {
                        point: p.to_string(),
                        detail: "radial coordinate must be nonnegative".into(),
                    });
                }
                let k = prof.curvature(p.u);
                if !k.is_finite() {
                    return Err(Error::Domain {
                        point: p.to_string(),
                        detail: "profile f vanishes away from the pole; spec is ill-posed here"
                            .into(),
                    });
                }
                k
            }
        };
        Ok(CurvatureSample { point: p, k })
    }

    /// Curvature along a rotational profile by arc parameter; for planes the
    /// argument may be negative (a radial line through the pole), curvature is
    /// even in the radial coordinate.
    pub fn profile_curvature(&self, t: f64) -> f64 {
        match &self.family {
            Family::FlatPlane | Family::FlatCylinder { .. } => 0.0,
            Family::RotationalPlane { .. } => self.profile().unwrap().curvature(t.abs()),
            Family::RotationalCylinder { .. } => self.profile().unwrap().curvature(t),
            Family::ConformalPlane { .. } => unreachable!("no rotational profile"),
        }
    }

    /// Christoffel symbols of the chart at a point.
    pub fn christoffels_at(&self, p: PointChart) -> Result<Christoffels> {
        match &self.family {
            Family::FlatPlane | Family::FlatCylinder { .. } => Ok(Christoffels::default()),
            Family::ConformalPlane { phi } => {
                let px = phi.eval_jet(&[p.u, p.v], 0).d1;
                let py = phi.eval_jet(&[p.u, p.v], 1).d1;
                Ok(Christoffels {
                    g1_11: px,
                    g1_12: py,
                    g1_22: -px,
                    g2_11: -py,
                    g2_12: px,
                    g2_22: py,
                })
            }
            Family::RotationalPlane { .. } | Family::RotationalCylinder { .. } => {
                let prof = self.profile().unwrap();
                let j = prof.jet(p.u);
                if j.v.abs() < 1e-300 {
                    return Err(Error::Domain {
                        point: p.to_string(),
                        detail: "Christoffel Γ^θ_{tθ} = f'/f is singular where f vanishes".into(),
                    });
                }
                Ok(Christoffels {
                    g1_22: -j.v * j.d1,
                    g2_12: j.d1 / j.v,
                    ..Christoffels::default()
                })
            }
        }
    }

    /// Orthonormal-frame direction with angle `a`: returns chart components
    /// of the unit vector `cos(a) e₁ + sin(a) e₂` at `p`, where `e₁ = ∂_u/|∂_u|`
    /// and `e₂ = ∂_v/|∂_v|`.
    pub fn tangent_from_angle(&self, p: PointChart, a: f64) -> (f64, f64) {
        let (g11, g22) = self.metric_diag(p);
        (a.cos() / g11.sqrt(), a.sin() / g22.sqrt())
    }

    /// Frame angle of a chart velocity at `p` (inverse of `tangent_from_angle`
    /// up to normalization).
    pub fn angle_from_tangent(&self, p: PointChart, du: f64, dv: f64) -> f64 {
        let (g11, g22) = self.metric_diag(p);
        wrap_angle((dv * g22.sqrt()).atan2(du * g11.sqrt()))
    }

    /// g-norm squared of a chart velocity.
    pub fn speed_sq(&self, p: PointChart, du: f64, dv: f64) -> f64 {
        let (g11, g22) = self.metric_diag(p);
        g11 * du * du + g22 * dv * dv
    }

    /// Deck-translation period of the cylinder cover coordinate.
    pub fn deck_period(&self) -> f64 {
        std::f64::consts::TAU
    }
}
