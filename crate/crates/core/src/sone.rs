//! Maxwellian wall data, the two compatibility residuals, and tracing of
//! the curve of data whose boundary layer decays uniformly.

use crate::collision::{BilinearQ, CollisionOperator};
use crate::gep::{GepError, GepSolver};
use crate::halfspace::{
    decay_rate, flux_profiles, residual_nonlinear, sup_profile, HalfspaceError, LinearOptions,
    NonlinearOptions, NonlinearReport, NonlinearSolution, PenalizedProblem, XGrid, XGridSpec,
};
use crate::penalty::{build_compat, CompatSystem, PenalizedOperator, PenaltyError};
use crate::spectral::KernelBasis;
use crate::velocity::PlaneGrid;
use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SoneError {
    #[error("wall density and temperature must be positive, got ({rho_w}, {t_w})")]
    NonPositive { rho_w: f64, t_w: f64 },
    #[error(transparent)]
    Gep(#[from] GepError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Halfspace(#[from] HalfspaceError),
    #[error("finite-difference Jacobian is singular (condition {condition:e})")]
    SingularJacobian { condition: f64 },
    #[error("root search stalled after {iterations} iterations at |C| = {residual:e}")]
    Stalled { iterations: usize, residual: f64 },
    #[error(
        "root ({rho_w}, {t_w}) has data norm {gauge:e} above the contraction radius {radius:e}"
    )]
    OutsideBall {
        rho_w: f64,
        t_w: f64,
        gauge: f64,
        radius: f64,
    },
}

/// `f_b = (𝓜_{ρ_w, -u, T_w} - M) / M` at the plane nodes.
#[derive(Clone, Debug, Serialize)]
pub struct SoneBoundaryData {
    pub rho_w: f64,
    pub t_w: f64,
    pub u: f64,
    #[serde(skip)]
    pub f_b: Vec<f64>,
    /// `‖(1+|ξ|)³ √M f_b‖∞`
    pub gauge: f64,
}

pub fn maxwellian_data(
    p: &PlaneGrid,
    rho_w: f64,
    t_w: f64,
    u: f64,
) -> Result<SoneBoundaryData, SoneError> {
    if !(rho_w > 0.0 && t_w > 0.0) {
        return Err(SoneError::NonPositive { rho_w, t_w });
    }
    let f_b = p.eval(|x1, r| {
        let shifted = (x1 + u) * (x1 + u) + r * r;
        let exponent = -shifted / (2.0 * t_w) + (x1 * x1 + r * r) / 2.0;
        rho_w * t_w.powf(-1.5) * exponent.exp() - 1.0
    });
    let gauge = p.weighted_sup(&f_b, 3.0);
    Ok(SoneBoundaryData {
        rho_w,
        t_w,
        u,
        f_b,
        gauge,
    })
}

/// First-order expansion `ρ_w - 1 - u ξ1 + (T_w - 1) ½(|ξ|² - 3)`.
pub fn linearized_data(p: &PlaneGrid, rho_w: f64, t_w: f64, u: f64) -> Vec<f64> {
    p.eval(|x1, r| rho_w - 1.0 - u * x1 + (t_w - 1.0) * 0.5 * (x1 * x1 + r * r - 3.0))
}

/// The two compatibility residuals at a converged penalized solve.
#[derive(Clone, Debug, Serialize)]
pub struct CompatResidual {
    pub c1: f64,
    pub c2: f64,
    pub report: NonlinearReport,
    #[serde(skip)]
    pub solution: NonlinearSolution,
}

impl CompatResidual {
    pub fn norm(&self) -> f64 {
        self.c1.hypot(self.c2)
    }

    pub fn max_abs(&self) -> f64 {
        self.c1.abs().max(self.c2.abs())
    }
}

/// Penalized problem, compatibility system and slow branch for one `u`.
#[derive(Clone, Debug)]
pub struct LayerSetup {
    pub u: f64,
    pub problem: PenalizedProblem,
    pub compat: CompatSystem,
}

/// Diagnostics of the de-penalized solution.
#[derive(Clone, Debug, Serialize)]
pub struct LayerDiagnostics {
    pub gamma_fit: Option<f64>,
    pub residual_nonlinear: f64,
    /// `sup_x |⟨(ξ1+u) X_a f⟩|` over `a ∈ {+, 0, -}`
    pub flux_max: f64,
    /// `sup_x` of `|⟨(ξ1+u) X₊ g⟩|` and `|⟨(ξ1+u) ψ_u g⟩|`
    pub penalty_moments: (f64, f64),
    /// `max |f(x, ξ) - f(x, Rξ)|`, zero by construction on the plane
    pub reflection_defect: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootOptions {
    pub tol_root: f64,
    pub fd_step: f64,
    pub max_iter: usize,
    /// smallest backtracking factor before the Jacobian is refreshed
    pub min_damping: f64,
    /// scaling of `(Y1, Y2)`; the zero set does not depend on it
    pub y_scale: [f64; 2],
    /// contraction radius for the data norm; `None` skips the check
    pub ball: Option<f64>,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            tol_root: 1e-7,
            fd_step: 1e-4,
            max_iter: 30,
            min_damping: 1.0 / 16.0,
            y_scale: [1.0, 1.0],
            ball: None,
        }
    }
}

/// A root of `(ρ_w, T_w) ↦ (C1, C2)` at fixed `u`.
#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    pub u: f64,
    pub rho_w: f64,
    pub t_w: f64,
    pub p_w: f64,
    pub c1: f64,
    pub c2: f64,
    /// quasi-Newton iterations
    pub iterations: usize,
    /// nonlinear solves spent
    pub solves: usize,
    pub gauge: f64,
    pub diagnostics: LayerDiagnostics,
}

/// Row of a traced curve; `point = None` marks a continuation break.
#[derive(Clone, Debug, Serialize)]
pub struct CurveRow {
    pub u: f64,
    pub point: Option<CurvePoint>,
    pub error: Option<String>,
}

/// Predicted tangent `(ρ_w'(0⁻), T_w'(0⁻))` of the curve at the origin.
#[derive(Clone, Debug, Serialize)]
pub struct Tangent {
    pub rho_prime: f64,
    pub t_prime: f64,
    pub determinant: f64,
    pub condition: f64,
    /// columns `C[1]`, `C[½(|ξ|²-3)]` and the offset `C[-ξ1]`
    pub columns: [[f64; 2]; 3],
    /// largest deviation of direct solves from the affine model
    pub affinity_defect: f64,
    /// direct residuals at the predicted root
    pub root_residual: [f64; 2],
}

/// Root finding and curve tracing at a fixed `γ`.
pub struct CurveSolver<'a> {
    pub op: &'a CollisionOperator,
    pub basis: &'a KernelBasis,
    pub gep: &'a GepSolver,
    pub q: &'a BilinearQ,
    pub gamma: f64,
    pub xgrid: XGridSpec,
    pub options: NonlinearOptions,
    pub root: RootOptions,
}

impl<'a> CurveSolver<'a> {
    pub fn new(
        op: &'a CollisionOperator,
        basis: &'a KernelBasis,
        gep: &'a GepSolver,
        q: &'a BilinearQ,
        gamma: f64,
    ) -> Self {
        CurveSolver {
            op,
            basis,
            gep,
            q,
            gamma,
            xgrid: XGridSpec::default(),
            options: NonlinearOptions::default(),
            root: RootOptions::default(),
        }
    }

    pub fn plane(&self) -> &PlaneGrid {
        &self.op.grid.plane
    }

    pub fn setup(&self, u: f64) -> Result<LayerSetup, SoneError> {
        let branch = self.gep.solve(u)?;
        let pen = PenalizedOperator::new(self.op, self.basis, &branch, self.gamma);
        let compat = build_compat(
            self.plane(),
            self.basis,
            &branch,
            self.gep.tau_dot,
            pen.alpha,
            pen.beta,
        )?;
        let xgrid = XGrid::from_spec(&self.xgrid, self.gamma);
        let problem = PenalizedProblem::new(pen, xgrid, self.xgrid.order);
        Ok(LayerSetup { u, problem, compat })
    }

    fn residuals_of(&self, setup: &LayerSetup, solution: NonlinearSolution) -> CompatResidual {
        let trace: Vec<f64> = solution.g.column(0).iter().copied().collect();
        let (c1, c2) = setup.compat.residuals(self.plane(), &trace);
        CompatResidual {
            c1: c1 * self.root.y_scale[0],
            c2: c2 * self.root.y_scale[1],
            report: solution.report.clone(),
            solution,
        }
    }

    /// Solves the penalized problem for `f_b` and returns `(C1, C2)`.
    pub fn compat_residuals(
        &self,
        setup: &LayerSetup,
        f_b: &[f64],
        start: Option<&NonlinearSolution>,
    ) -> Result<CompatResidual, SoneError> {
        let solution = setup
            .problem
            .solve_nonlinear_from(self.q, f_b, &self.options, start)?;
        Ok(self.residuals_of(setup, solution))
    }

    fn evaluate(
        &self,
        setup: &LayerSetup,
        x: [f64; 2],
        start: Option<&NonlinearSolution>,
    ) -> Result<CompatResidual, SoneError> {
        let data = maxwellian_data(self.plane(), x[0], x[1], setup.u)?;
        self.compat_residuals(setup, &data.f_b, start)
    }

    fn jacobian(
        &self,
        setup: &LayerSetup,
        x: [f64; 2],
        base: &CompatResidual,
    ) -> Result<Matrix2<f64>, SoneError> {
        let h = self.root.fd_step;
        let mut j = Matrix2::zeros();
        for k in 0..2 {
            let mut xk = x;
            xk[k] += h;
            let r = self.evaluate(setup, xk, Some(&base.solution))?;
            j[(0, k)] = (r.c1 - base.c1) / h;
            j[(1, k)] = (r.c2 - base.c2) / h;
        }
        Ok(j)
    }

    /// Diagnostics of `f = e^{-γx}(g - hφ)`.
    pub fn diagnostics(
        &self,
        setup: &LayerSetup,
        solution: &NonlinearSolution,
    ) -> LayerDiagnostics {
        let prob = &setup.problem;
        let p = self.plane();
        let f = prob.depenalize(&solution.g, &solution.h);
        let gamma_fit = decay_rate(&prob.xgrid, &sup_profile(p, &f))
            .ok()
            .map(|d| d.gamma_fit);
        let residual = residual_nonlinear(
            self.op,
            Some(self.q),
            &prob.xgrid,
            prob.transport.order,
            &f,
            setup.u,
        );
        let flux_max = flux_profiles(p, self.basis, &f, setup.u)
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let (mut plus, mut slow) = (0.0_f64, 0.0_f64);
        for col in solution.g.column_iter() {
            let c = col.as_slice();
            let moment = |w: &[f64]| -> f64 {
                (0..p.len())
                    .map(|a| p.weight[a] * prob.pen.speed[a] * w[a] * c[a])
                    .sum()
            };
            plus = plus.max(moment(&self.basis.x_plus).abs());
            slow = slow.max(moment(&prob.pen.branch.psi).abs());
        }
        let full = &self.op.grid;
        let mut reflection_defect: f64 = 0.0;
        for col in f.column_iter().step_by(16) {
            let lifted = full.lift(col.as_slice());
            let mirrored = full.reflect(&lifted);
            for (a, b) in lifted.iter().zip(&mirrored) {
                reflection_defect = reflection_defect.max((a - b).abs());
            }
        }
        LayerDiagnostics {
            gamma_fit,
            residual_nonlinear: residual,
            flux_max,
            penalty_moments: (plus, slow),
            reflection_defect,
        }
    }

    /// Damped quasi-Newton search for `C1 = C2 = 0` starting from `init`.
    pub fn find_curve_point(&self, u: f64, init: (f64, f64)) -> Result<CurvePoint, SoneError> {
        let setup = self.setup(u)?;
        self.find_root(&setup, init)
    }

    pub fn find_root(&self, setup: &LayerSetup, init: (f64, f64)) -> Result<CurvePoint, SoneError> {
        let opts = &self.root;
        let mut x = [init.0, init.1];
        let mut current = self.evaluate(setup, x, None)?;
        let mut solves = 1;
        let mut jac = self.jacobian(setup, x, &current)?;
        solves += 2;
        let mut fresh = true;
        let mut iterations = 0;
        while current.max_abs() >= opts.tol_root {
            if iterations >= opts.max_iter {
                return Err(SoneError::Stalled {
                    iterations,
                    residual: current.max_abs(),
                });
            }
            iterations += 1;
            let condition = condition_number(&jac);
            let inverse = match jac.try_inverse() {
                Some(inv) if condition < 1e12 => inv,
                _ => return Err(SoneError::SingularJacobian { condition }),
            };
            let dir = -(inverse * Vector2::new(current.c1, current.c2));
            let mut t = 1.0;
            let mut accepted = None;
            while t >= opts.min_damping {
                let trial = [x[0] + t * dir[0], x[1] + t * dir[1]];
                if trial[0] > 0.0 && trial[1] > 0.0 {
                    let r = self.evaluate(setup, trial, Some(&current.solution))?;
                    solves += 1;
                    if r.norm() < current.norm() {
                        accepted = Some((trial, r));
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((trial, r)) => {
                    let dx = Vector2::new(trial[0] - x[0], trial[1] - x[1]);
                    let df = Vector2::new(r.c1 - current.c1, r.c2 - current.c2);
                    jac += (df - jac * dx) * dx.transpose() / dx.norm_squared();
                    x = trial;
                    current = r;
                    fresh = false;
                }
                None if !fresh => {
                    jac = self.jacobian(setup, x, &current)?;
                    solves += 2;
                    fresh = true;
                }
                None => {
                    return Err(SoneError::Stalled {
                        iterations,
                        residual: current.max_abs(),
                    })
                }
            }
        }
        let data = maxwellian_data(self.plane(), x[0], x[1], setup.u)?;
        if let Some(radius) = opts.ball {
            if data.gauge > radius {
                return Err(SoneError::OutsideBall {
                    rho_w: x[0],
                    t_w: x[1],
                    gauge: data.gauge,
                    radius,
                });
            }
        }
        Ok(CurvePoint {
            u: setup.u,
            rho_w: x[0],
            t_w: x[1],
            p_w: x[0] * x[1],
            c1: current.c1,
            c2: current.c2,
            iterations,
            solves,
            gauge: data.gauge,
            diagnostics: self.diagnostics(setup, &current.solution),
        })
    }

    /// Roots along `u_list`, continued outward from `u = 0` on each side;
    /// the first point of a side starts from `(1, 1) + u·tangent`.
    pub fn trace_curve(&self, u_list: &[f64], tangent: Option<(f64, f64)>) -> Vec<CurveRow> {
        let slope = tangent.unwrap_or((0.0, 0.0));
        let mut rows = Vec::new();
        for side in [-1.0, 1.0] {
            let mut us: Vec<f64> = u_list.iter().copied().filter(|u| u * side > 0.0).collect();
            us.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
            let mut history: Vec<(f64, f64, f64)> = Vec::new();
            let mut broken = false;
            for u in us {
                if broken {
                    rows.push(CurveRow {
                        u,
                        point: None,
                        error: Some("continuation break".into()),
                    });
                    continue;
                }
                let init = match history.as_slice() {
                    [] => (1.0 + u * slope.0, 1.0 + u * slope.1),
                    [(u0, r0, t0)] => (1.0 + (r0 - 1.0) * u / u0, 1.0 + (t0 - 1.0) * u / u0),
                    [.., (u0, r0, t0), (u1, r1, t1)] => {
                        let s = (u - u1) / (u1 - u0);
                        (r1 + s * (r1 - r0), t1 + s * (t1 - t0))
                    }
                };
                match self.find_curve_point(u, init) {
                    Ok(point) => {
                        history.push((u, point.rho_w, point.t_w));
                        rows.push(CurveRow {
                            u,
                            point: Some(point),
                            error: None,
                        });
                    }
                    Err(e) => {
                        log::warn!("curve lost at u = {u}: {e}");
                        broken = true;
                        rows.push(CurveRow {
                            u,
                            point: None,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
        }
        rows.sort_by(|a, b| a.u.partial_cmp(&b.u).unwrap());
        rows
    }

    /// Tangent of the curve at the origin from the linear penalized problem
    /// at `u = 0` with data `ρ' + T' ½(|ξ|²-3) - ξ1`.
    pub fn tangent_at_origin(&self, linear: &LinearOptions) -> Result<Tangent, SoneError> {
        let setup = self.setup(0.0)?;
        let p = self.plane();
        let nx = setup.problem.xgrid.len();
        let source = DMatrix::zeros(p.len(), nx);
        let solve = |data: &[f64]| -> Result<[f64; 2], SoneError> {
            let (g, _) = setup
                .problem
                .solve_linear(data, None, &source, None, linear)?;
            let trace: Vec<f64> = g.column(0).iter().copied().collect();
            let (c1, c2) = setup.compat.residuals(p, &trace);
            Ok([c1 * self.root.y_scale[0], c2 * self.root.y_scale[1]])
        };
        let density = vec![1.0; p.len()];
        let temperature = p.eval(|x1, r| 0.5 * (x1 * x1 + r * r - 3.0));
        let velocity = p.eval(|x1, _| -x1);
        let c_rho = solve(&density)?;
        let c_t = solve(&temperature)?;
        let c_u = solve(&velocity)?;
        let jac = Matrix2::new(c_rho[0], c_t[0], c_rho[1], c_t[1]);
        let condition = condition_number(&jac);
        let determinant = jac.determinant();
        let inverse = match jac.try_inverse() {
            Some(inv) if condition < 1e12 => inv,
            _ => return Err(SoneError::SingularJacobian { condition }),
        };
        let root = -(inverse * Vector2::new(c_u[0], c_u[1]));
        let data_at = |rho: f64, t: f64| -> Vec<f64> {
            (0..p.len())
                .map(|a| rho * density[a] + t * temperature[a] + velocity[a])
                .collect()
        };
        let model = |rho: f64, t: f64| -> [f64; 2] {
            [
                c_u[0] + rho * c_rho[0] + t * c_t[0],
                c_u[1] + rho * c_rho[1] + t * c_t[1],
            ]
        };
        let delta = 0.1;
        let mut affinity_defect: f64 = 0.0;
        let mut root_residual = [0.0; 2];
        let scale = c_rho
            .iter()
            .chain(&c_t)
            .chain(&c_u)
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        for (k, (dr, dt)) in [(0.0, 0.0), (delta, 0.0), (0.0, delta)]
            .into_iter()
            .enumerate()
        {
            let (rho, t) = (root[0] + dr, root[1] + dt);
            let direct = solve(&data_at(rho, t))?;
            let predicted = model(rho, t);
            for i in 0..2 {
                affinity_defect = affinity_defect.max((direct[i] - predicted[i]).abs() / scale);
            }
            if k == 0 {
                root_residual = direct;
            }
        }
        Ok(Tangent {
            rho_prime: root[0],
            t_prime: root[1],
            determinant,
            condition,
            columns: [c_rho, c_t, c_u],
            affinity_defect,
            root_residual,
        })
    }
}

fn condition_number(m: &Matrix2<f64>) -> f64 {
    let sv = m.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Quadratic through the three smallest-`|u|` roots on each side,
/// evaluated at `u = 0`.
pub fn extrapolate_to_origin(points: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.abs().partial_cmp(&b.0.abs()).unwrap());
    pts.truncate(3);
    let lagrange_at_zero = |k: usize| -> f64 {
        pts.iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, q)| q.0 / (q.0 - pts[k].0))
            .product()
    };
    let mut rho = 0.0;
    let mut t = 0.0;
    for (k, q) in pts.iter().enumerate() {
        let w = lagrange_at_zero(k);
        rho += w * q.1;
        t += w * q.2;
    }
    Some((rho, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::{GridSpec, VelocityGrid};
    use crate::Tolerances;

    fn plane() -> PlaneGrid {
        VelocityGrid::build(&GridSpec::new(12, 10, 6, 8.0), &Tolerances::default())
            .unwrap()
            .plane
    }

    #[test]
    fn identical_maxwellians_give_zero_data() {
        let p = plane();
        let d = maxwellian_data(&p, 1.0, 1.0, 0.0).unwrap();
        assert!(d.f_b.iter().all(|v| v.abs() < 1e-14));
        assert_eq!(d.gauge, 0.0);
    }

    #[test]
    fn small_perturbations_match_the_expansion() {
        let p = plane();
        let delta = 1e-3;
        for (rho, t, u) in [
            (1.0 + delta, 1.0, 0.0),
            (1.0, 1.0 + delta, 0.0),
            (1.0, 1.0, delta),
        ] {
            let exact = maxwellian_data(&p, rho, t, u).unwrap();
            let lin = linearized_data(&p, rho, t, u);
            for a in 0..p.len() {
                if p.speed(a) < 4.0 {
                    assert!(
                        (exact.f_b[a] - lin[a]).abs() < 50.0 * delta * delta,
                        "{rho} {t} {u} {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn nonpositive_parameters_are_rejected() {
        let p = plane();
        assert!(maxwellian_data(&p, 0.0, 1.0, 0.0).is_err());
        assert!(maxwellian_data(&p, 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn extrapolation_is_exact_for_quadratics() {
        let f = |u: f64| (1.0 + 0.5 * u - 2.0 * u * u, 1.0 - u + u * u);
        let pts: Vec<_> = [-0.03, -0.02, -0.01]
            .iter()
            .map(|&u| (u, f(u).0, f(u).1))
            .collect();
        let (r, t) = extrapolate_to_origin(&pts).unwrap();
        assert!((r - 1.0).abs() < 1e-12 && (t - 1.0).abs() < 1e-12);
    }
}
