//! Slow branch of `L φ = τ (ξ1 + u) φ` on angle-independent functions.
//!
//! The eigenvalue `λ0(z)` of `L - z ξ1` that starts at `(0, X0)` is tracked
//! by eigenvector overlap; `τ_u = z(u)` solves `λ0(z) = u z`.

use crate::collision::CollisionOperator;
use crate::linalg::{sorted_eigen, symmetric_form};
use crate::spectral::KernelBasis;
use crate::velocity::PlaneGrid;
use crate::Tolerances;
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GepError {
    #[error("branch tracking is ambiguous at z = {z}: overlaps {best:.3} and {second:.3}")]
    Ambiguous { z: f64, best: f64, second: f64 },
    #[error("root search left the window |z| < {limit} (z = {z})")]
    OutOfWindow { z: f64, limit: f64 },
    #[error("no sign change of λ0(z) - u z on the search interval for u = {0}")]
    NoBracket(f64),
    #[error("normalization radicand {0} is not positive (wrong branch)")]
    Radicand(f64),
    #[error("right side ξ1 X0 is not orthogonal to the null space (defect {0:e})")]
    RhsNotOrthogonal(f64),
    #[error("|u| = {u} exceeds the validated radius {radius}")]
    BeyondRadius { u: f64, radius: f64 },
    #[error("ψ extrapolation disagrees by {0:.3} between u and u/2")]
    Extrapolation(f64),
}

/// One point of the slow branch.
#[derive(Clone, Debug, Serialize)]
pub struct GepBranch {
    pub u: f64,
    pub tau: f64,
    pub z: f64,
    #[serde(skip)]
    pub phi: Vec<f64>,
    #[serde(skip)]
    pub psi: Vec<f64>,
    /// `‖L φ - τ (ξ1+u) φ‖`
    pub residual: f64,
    /// `⟨(ξ1+u) φ²⟩ + u`
    pub normalization_defect: f64,
    /// `⟨(ξ1+u) ψ φ⟩`
    pub psi_phi: f64,
}

/// Branch machinery built once per operator.
#[derive(Clone, Debug)]
pub struct GepSolver {
    plane: PlaneGrid,
    lin: DMatrix<f64>,
    sym: DMatrix<f64>,
    sqrt_w: Vec<f64>,
    x_zero: Vec<f64>,
    basis: KernelBasis,
    tol: Tolerances,
    /// root window `|z| < window`
    pub window: f64,
    pub lambda_ddot_fd: f64,
    pub lambda_dot_fd: f64,
    pub lambda_ddot_pinv: f64,
    pub tau_dot: f64,
    pub phi_dot: Vec<f64>,
    /// largest validated `|u|`
    pub radius: f64,
    pub fd_step: f64,
}

fn bracketed_root(
    f: &mut dyn FnMut(f64) -> Result<f64, GepError>,
    mut a: f64,
    mut b: f64,
    xtol: f64,
) -> Result<f64, GepError> {
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(GepError::NoBracket(f64::NAN));
    }
    // Illinois variant of regula falsi
    let mut side = 0;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c)?;
        if fc == 0.0 || (b - a).abs() < xtol {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() < xtol * (1.0 + c.abs()) {
            return Ok(0.5 * (a + b));
        }
    }
    Ok(0.5 * (a + b))
}

impl GepSolver {
    pub fn new(
        op: &CollisionOperator,
        basis: &KernelBasis,
        tol: &Tolerances,
    ) -> Result<Self, GepError> {
        let plane = op.grid.plane.clone();
        let lin = op.lin_plane().clone();
        let sym = symmetric_form(&lin, &plane.weight);
        let sqrt_w: Vec<f64> = plane.weight.iter().map(|w| w.sqrt()).collect();
        let mut solver = GepSolver {
            plane,
            lin,
            sym,
            sqrt_w,
            x_zero: basis.x_zero.clone(),
            basis: basis.clone(),
            tol: tol.clone(),
            window: 0.5 * op.nu_minus,
            lambda_ddot_fd: 0.0,
            lambda_dot_fd: 0.0,
            lambda_ddot_pinv: 0.0,
            tau_dot: 0.0,
            phi_dot: Vec::new(),
            radius: 0.0,
            fd_step: 1e-3,
        };
        let h = solver.fd_step;
        let (lp, _) = solver.lambda0(h)?;
        let (lm, _) = solver.lambda0(-h)?;
        let (l0, _) = solver.lambda0(0.0)?;
        solver.lambda_ddot_fd = (lp - 2.0 * l0 + lm) / (h * h);
        solver.lambda_dot_fd = (lp - lm) / (2.0 * h);
        solver.tau_dot = 2.0 / solver.lambda_ddot_fd;
        solver.phi_dot = solver.phi_dot_zero()?;
        let lphi = solver.apply_lin(&solver.phi_dot);
        solver.lambda_ddot_pinv = -2.0 * solver.plane.inner(&solver.phi_dot, &lphi);
        solver.radius = solver.validate_radius(&[0.05, 0.1, 0.15, 0.2, 0.25]);
        Ok(solver)
    }

    pub fn apply_lin(&self, f: &[f64]) -> Vec<f64> {
        crate::linalg::matvec(&self.lin, f)
    }

    pub fn plane(&self) -> &PlaneGrid {
        &self.plane
    }

    /// Branch `λ0(z)` and its eigenfunction (unit norm, `⟨φ X0⟩ > 0`),
    /// continued from `z = 0` with adaptive steps.
    pub fn lambda0(&self, z: f64) -> Result<(f64, Vec<f64>), GepError> {
        let n = self.plane.len();
        let norm0 = self.plane.norm(&self.x_zero);
        let mut prev: Vec<f64> = (0..n)
            .map(|a| self.sqrt_w[a] * self.x_zero[a] / norm0)
            .collect();
        let mut z_done = 0.0;
        let mut step = z;
        let mut value = 0.0;
        if z == 0.0 {
            // the null space is degenerate here; the branch starts at X0
            let x0: Vec<f64> = self.x_zero.iter().map(|v| v / norm0).collect();
            let val = self.plane.inner(&x0, &self.apply_lin(&x0));
            return Ok((val, x0));
        }
        while (z_done - z).abs() > 0.0 {
            let target = if (z - z_done).abs() <= step.abs() {
                z
            } else {
                z_done + step
            };
            match self.pick(target, &prev) {
                Ok((val, vec)) => {
                    prev = vec;
                    value = val;
                    z_done = target;
                }
                Err(e) => {
                    step *= 0.5;
                    if step.abs() < 1e-6 * z.abs().max(1e-3) {
                        return Err(e);
                    }
                }
            }
        }
        Ok((value, self.to_function(&prev)))
    }

    fn to_function(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.sqrt_w).map(|(v, s)| v / s).collect()
    }

    fn pick(&self, z: f64, prev: &[f64]) -> Result<(f64, Vec<f64>), GepError> {
        let n = self.plane.len();
        let mut m = self.sym.clone();
        for a in 0..n {
            m[(a, a)] -= z * self.plane.axial[a];
        }
        let (vals, vecs) = sorted_eigen(m);
        let mut best = (0usize, -1.0);
        let mut second = -1.0;
        for k in 0..n {
            let ov: f64 = (0..n).map(|i| vecs[(i, k)] * prev[i]).sum::<f64>().abs();
            if ov > best.1 {
                second = best.1;
                best = (k, ov);
            } else if ov > second {
                second = ov;
            }
        }
        if best.1 < 0.9 || second > 0.5 * best.1 {
            return Err(GepError::Ambiguous {
                z,
                best: best.1,
                second,
            });
        }
        let k = best.0;
        let sgn = {
            let s: f64 = (0..n)
                .map(|i| vecs[(i, k)] * self.sqrt_w[i] * self.x_zero[i])
                .sum();
            if s < 0.0 {
                -1.0
            } else {
                1.0
            }
        };
        Ok((vals[k], (0..n).map(|i| sgn * vecs[(i, k)]).collect()))
    }

    /// Null-space-free solution of `L φ̇ = ξ1 X0`.
    pub fn phi_dot_zero(&self) -> Result<Vec<f64>, GepError> {
        let p = &self.plane;
        let rhs: Vec<f64> = (0..p.len()).map(|a| p.axial[a] * self.x_zero[a]).collect();
        let defect = self
            .basis
            .functions()
            .iter()
            .map(|x| p.inner(&rhs, x).abs())
            .fold(0.0, f64::max);
        if defect > self.tol.tol_op {
            return Err(GepError::RhsNotOrthogonal(defect));
        }
        let (vals, vecs) = sorted_eigen(self.sym.clone());
        let n = p.len();
        let y_rhs: Vec<f64> = (0..n).map(|a| self.sqrt_w[a] * rhs[a]).collect();
        let mut y = vec![0.0; n];
        // the three smallest eigenvalues are the exact null space
        for k in 3..n {
            let c: f64 = (0..n).map(|i| vecs[(i, k)] * y_rhs[i]).sum::<f64>() / vals[k];
            for i in 0..n {
                y[i] += c * vecs[(i, k)];
            }
        }
        let f = self.to_function(&y);
        let pf = self.basis.project(p, &f);
        Ok(f.iter().zip(&pf).map(|(a, b)| a - b).collect())
    }

    fn validate_radius(&self, ladder: &[f64]) -> f64 {
        let mut radius = 0.0;
        for &u in ladder {
            let ok = [u, -u].iter().all(|&v| match self.solve_unchecked(v) {
                Ok(b) => v * b.tau < 0.0 && b.normalization_defect.abs() < self.tol.tol_gep,
                Err(_) => false,
            });
            if !ok {
                break;
            }
            radius = u;
        }
        radius
    }

    pub fn solve(&self, u: f64) -> Result<GepBranch, GepError> {
        if u.abs() > self.radius + 1e-12 {
            return Err(GepError::BeyondRadius {
                u,
                radius: self.radius,
            });
        }
        self.solve_unchecked(u)
    }

    fn solve_unchecked(&self, u: f64) -> Result<GepBranch, GepError> {
        let p = &self.plane;
        if u == 0.0 {
            let psi = self.psi_at_zero(0.01)?;
            return Ok(GepBranch {
                u,
                tau: 0.0,
                z: 0.0,
                phi: self.x_zero.clone(),
                residual: crate::linalg::norm2(&self.apply_lin(&self.x_zero)),
                normalization_defect: (0..p.len())
                    .map(|a| p.weight[a] * p.axial[a] * self.x_zero[a] * self.x_zero[a])
                    .sum(),
                psi_phi: (0..p.len())
                    .map(|a| p.weight[a] * p.axial[a] * psi[a] * self.x_zero[a])
                    .sum(),
                psi,
            });
        }
        let z0 = self.tau_dot * u;
        let mut g = |z: f64| -> Result<f64, GepError> {
            if z.abs() >= self.window {
                return Err(GepError::OutOfWindow {
                    z,
                    limit: self.window,
                });
            }
            Ok(self.lambda0(z)?.0 - u * z)
        };
        let z = bracketed_root(&mut g, 0.5 * z0, 1.8 * z0, 1e-15).map_err(|e| match e {
            GepError::NoBracket(_) => GepError::NoBracket(u),
            e => e,
        })?;
        let (_, mut phi) = self.lambda0(z)?;
        let radicand = -(0..p.len())
            .map(|a| p.weight[a] * (p.axial[a] + u) * phi[a] * phi[a])
            .sum::<f64>()
            / u;
        if !(radicand > 0.0) {
            return Err(GepError::Radicand(radicand));
        }
        let s = radicand.sqrt();
        phi.iter_mut().for_each(|v| *v /= s);
        let psi: Vec<f64> = phi
            .iter()
            .zip(&self.x_zero)
            .map(|(f, x)| (f - x) / u)
            .collect();
        Ok(self.finish(u, z, phi, psi))
    }

    fn finish(&self, u: f64, z: f64, phi: Vec<f64>, psi: Vec<f64>) -> GepBranch {
        let p = &self.plane;
        let lphi = self.apply_lin(&phi);
        let r: Vec<f64> = (0..p.len())
            .map(|a| lphi[a] - z * (p.axial[a] + u) * phi[a])
            .collect();
        GepBranch {
            u,
            tau: z,
            z,
            residual: p.norm(&r),
            normalization_defect: (0..p.len())
                .map(|a| p.weight[a] * (p.axial[a] + u) * phi[a] * phi[a])
                .sum::<f64>()
                + u,
            psi_phi: (0..p.len())
                .map(|a| p.weight[a] * (p.axial[a] + u) * psi[a] * phi[a])
                .sum(),
            phi,
            psi,
        }
    }

    /// `ψ0` by Richardson extrapolation of the even average of `ψ_{±u}`.
    pub fn psi_at_zero(&self, u: f64) -> Result<Vec<f64>, GepError> {
        let even = |v: f64| -> Result<Vec<f64>, GepError> {
            let a = self.solve_unchecked(v)?;
            let b = self.solve_unchecked(-v)?;
            Ok(a.psi
                .iter()
                .zip(&b.psi)
                .map(|(x, y)| 0.5 * (x + y))
                .collect())
        };
        let full = even(u)?;
        let half = even(0.5 * u)?;
        let p = &self.plane;
        let diff: Vec<f64> = full.iter().zip(&half).map(|(a, b)| a - b).collect();
        let rel = p.norm(&diff) / p.norm(&half).max(1e-300);
        if rel > 0.05 {
            return Err(GepError::Extrapolation(rel));
        }
        Ok(full
            .iter()
            .zip(&half)
            .map(|(a, b)| (4.0 * b - a) / 3.0)
            .collect())
    }
}
