//! Rank-one projections along the slow mode, the penalized operator, the
//! 3×3 compatibility matrix and the admissible penalization constants.

use crate::collision::CollisionOperator;
use crate::gep::{GepBranch, GepError};
use crate::linalg::{matvec, sorted_eigenvalues, symmetric_form};
use crate::spectral::{KernelBasis, SpectralConstants};
use crate::velocity::PlaneGrid;
use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PenaltyError {
    #[error("γ = {gamma} outside the admissible window (0, {limit}]")]
    GammaOutOfWindow { gamma: f64, limit: f64 },
    #[error("compatibility matrix at u = {u} has complex eigenvalues")]
    ComplexEigenvalues { u: f64 },
    #[error("eigenvalues of the compatibility matrix collide at u = {u} (gap {gap:e})")]
    EigenCollision { u: f64, gap: f64 },
    #[error("eigenvalues at u = {u} are {eigenvalues:?}, expected two positive and one negative")]
    SignPattern { u: f64, eigenvalues: [f64; 3] },
    #[error("supremum of {0} over the sweep is not finite")]
    NonFinite(&'static str),
    #[error("empty u sweep")]
    EmptySweep,
    #[error(transparent)]
    Gep(#[from] GepError),
}

/// `⟨a b c⟩` on the plane.
fn triple(p: &PlaneGrid, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    (0..p.len()).map(|i| p.weight[i] * a[i] * b[i] * c[i]).sum()
}

/// `(ξ1 + u)` on the plane.
pub fn flux_speed(p: &PlaneGrid, u: f64) -> Vec<f64> {
    p.axial.iter().map(|x| x + u).collect()
}

/// `p_u f = -⟨(ξ1+u) ψ f⟩ φ`.
pub fn apply_p_u(p: &PlaneGrid, branch: &GepBranch, f: &[f64]) -> Vec<f64> {
    let mu = flux_speed(p, branch.u);
    let c = -triple(p, &mu, &branch.psi, f);
    branch.phi.iter().map(|v| c * v).collect()
}

/// `P_u f = -⟨ψ f⟩ (ξ1+u) φ`.
pub fn apply_flux_p_u(p: &PlaneGrid, branch: &GepBranch, f: &[f64]) -> Vec<f64> {
    let c = -p.inner(&branch.psi, f);
    (0..p.len())
        .map(|a| c * (p.axial[a] + branch.u) * branch.phi[a])
        .collect()
}

/// Smallest value of `⟨f A f⟩ / ⟨ν f²⟩` over all `f`.
pub fn coercivity_ratio(a: &DMatrix<f64>, weight: &[f64], nu: &[f64]) -> f64 {
    let s = symmetric_form(a, weight);
    let n = nu.len();
    let scaled = DMatrix::from_fn(n, n, |i, j| s[(i, j)] / (nu[i] * nu[j]).sqrt());
    sorted_eigenvalues(scaled)[0]
}

/// `L^p = L + α Π₊((ξ1+u)·) + β p_u - γ (ξ1+u)` with `α = β = 2γ`,
/// assembled on the angle-independent plane.
#[derive(Clone, Debug)]
pub struct PenalizedOperator {
    pub u: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub branch: GepBranch,
    pub plane: PlaneGrid,
    pub nu: Vec<f64>,
    /// `ξ1 + u`
    pub speed: Vec<f64>,
    /// `ν - γ (ξ1 + u)`
    pub sigma: Vec<f64>,
    pub x_plus: Vec<f64>,
    /// `L^p`
    pub matrix: DMatrix<f64>,
    /// `K^p = σ - L^p`
    pub kernel: DMatrix<f64>,
    /// the reflection-even sectors `m ≥ 2`, where only `-γ(ξ1+u)` survives
    pub higher: Vec<DMatrix<f64>>,
}

/// Builds `L^p` after checking `0 < γ ≤ limit`.
pub fn build_penalized(
    op: &CollisionOperator,
    basis: &KernelBasis,
    branch: &GepBranch,
    gamma: f64,
    limit: f64,
) -> Result<PenalizedOperator, PenaltyError> {
    if !(gamma > 0.0 && gamma <= limit) {
        return Err(PenaltyError::GammaOutOfWindow { gamma, limit });
    }
    Ok(PenalizedOperator::new(op, basis, branch, gamma))
}

impl PenalizedOperator {
    /// Unchecked constructor; see [`build_penalized`].
    pub fn new(
        op: &CollisionOperator,
        basis: &KernelBasis,
        branch: &GepBranch,
        gamma: f64,
    ) -> Self {
        let p = op.grid.plane.clone();
        let n = p.len();
        let u = branch.u;
        let alpha = 2.0 * gamma;
        let beta = 2.0 * gamma;
        let speed = flux_speed(&p, u);
        let x_plus = basis.x_plus.clone();
        let xp2 = p.inner(&x_plus, &x_plus);
        let lin = op.lin_plane();
        let matrix = DMatrix::from_fn(n, n, |a, b| {
            let mut v = lin[(a, b)];
            v += alpha * x_plus[a] * x_plus[b] * speed[b] * p.weight[b] / xp2;
            v -= beta * branch.phi[a] * speed[b] * branch.psi[b] * p.weight[b];
            if a == b {
                v -= gamma * speed[a];
            }
            v
        });
        let sigma: Vec<f64> = (0..n).map(|a| op.nu_plane[a] - gamma * speed[a]).collect();
        let kernel = DMatrix::from_fn(n, n, |a, b| {
            let d = if a == b { sigma[a] } else { 0.0 };
            d - matrix[(a, b)]
        });
        let higher = op
            .sectors
            .iter()
            .filter(|s| s.m > 0 && s.m % 2 == 0)
            .map(|s| {
                let mut m = s.lin.clone();
                for a in 0..n {
                    m[(a, a)] -= gamma * speed[a];
                }
                m
            })
            .collect();
        PenalizedOperator {
            u,
            alpha,
            beta,
            gamma,
            branch: branch.clone(),
            nu: op.nu_plane.clone(),
            plane: p,
            speed,
            sigma,
            x_plus,
            matrix,
            kernel,
            higher,
        }
    }

    pub fn len(&self) -> usize {
        self.plane.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plane.is_empty()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        matvec(&self.matrix, f)
    }

    pub fn apply_kernel(&self, f: &[f64]) -> Vec<f64> {
        matvec(&self.kernel, f)
    }

    pub fn apply_p(&self, f: &[f64]) -> Vec<f64> {
        apply_p_u(&self.plane, &self.branch, f)
    }

    pub fn apply_flux_p(&self, f: &[f64]) -> Vec<f64> {
        apply_flux_p_u(&self.plane, &self.branch, f)
    }

    /// `Π₊ f`
    pub fn project_plus(&self, f: &[f64]) -> Vec<f64> {
        let p = &self.plane;
        let c = p.inner(f, &self.x_plus) / p.inner(&self.x_plus, &self.x_plus);
        self.x_plus.iter().map(|v| c * v).collect()
    }

    /// The coercivity bound `γ / (24 ν*)`.
    pub fn coercivity_bound(&self, nu_star: f64) -> f64 {
        self.gamma / (24.0 * nu_star)
    }

    /// Smallest `⟨f L^p f⟩ / ⟨ν f²⟩` over the reflection-even subspace.
    pub fn coercivity_margin(&self) -> f64 {
        let w = &self.plane.weight;
        self.higher
            .iter()
            .map(|m| coercivity_ratio(m, w, &self.nu))
            .fold(coercivity_ratio(&self.matrix, w, &self.nu), f64::min)
    }

    /// Worst `⟨f L^p f⟩ - (γ/24ν*)⟨νf²⟩` over random reflection-even probes
    /// on the full grid.
    pub fn probe_coercivity(
        &self,
        op: &CollisionOperator,
        nu_star: f64,
        n_probes: usize,
        seed: u64,
    ) -> f64 {
        let grid = &op.grid;
        let bound = self.coercivity_bound(nu_star);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        for _ in 0..n_probes {
            let raw: Vec<f64> = (0..grid.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let f = grid.even_part(&raw);
            let lf = op.apply_lin(&f).expect("probe has grid length");
            let avg = grid.angle_average(&f);
            let mu_avg: Vec<f64> = avg.iter().zip(&self.speed).map(|(a, s)| a * s).collect();
            let extra = {
                let pp = self.project_plus(&mu_avg);
                let pu = self.apply_p(&avg);
                let plane: Vec<f64> = (0..self.len())
                    .map(|a| self.alpha * pp[a] + self.beta * pu[a])
                    .collect();
                grid.lift(&plane)
            };
            let n_angle = grid.n_angle();
            let mut form = 0.0;
            let mut mass = 0.0;
            for i in 0..grid.len() {
                let a = i / n_angle;
                let w = grid.weights[i] * grid.maxwellian[i];
                let lp = lf[i] + extra[i] - self.gamma * self.speed[a] * f[i];
                form += w * f[i] * lp;
                mass += w * self.nu[a] * f[i] * f[i];
            }
            worst = worst.min(form - bound * mass);
        }
        worst
    }
}

/// `A_u` of the compatibility lemma with its spectral data.
#[derive(Clone, Debug, Serialize)]
pub struct CompatSystem {
    pub u: f64,
    pub alpha: f64,
    pub beta: f64,
    pub matrix: [[f64; 3]; 3],
    /// descending
    pub eigenvalues: [f64; 3],
    /// left eigenvectors as rows, unit length, first nonzero entry positive
    pub left: [[f64; 3]; 3],
    /// `max_j ‖l_j A - λ_j l_j‖`
    pub eigen_residual: f64,
    #[serde(skip)]
    pub y1: Vec<f64>,
    #[serde(skip)]
    pub y2: Vec<f64>,
}

/// Monic coefficients `[c2, c1, c0]` of `λ³ + c2 λ² + c1 λ + c0`.
pub fn char_poly(a: &[[f64; 3]; 3]) -> [f64; 3] {
    let m = Matrix3::from_fn(|i, j| a[i][j]);
    let trace = m.trace();
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    [-trace, minors, -m.determinant()]
}

/// Monic coefficients of `(λ-α)(λ² - β s λ + τ̇ β)`, the form stated for
/// `u = 0` with `s = ⟨ψ0 X0⟩`.
pub fn stated_char_poly_at_origin(alpha: f64, beta: f64, psi_x0: f64, tau_dot: f64) -> [f64; 3] {
    let b = beta * psi_x0;
    [
        -(b + alpha),
        tau_dot * beta + alpha * b,
        -alpha * tau_dot * beta,
    ]
}

fn left_eigenvector(a: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    let shifted = a - Matrix3::identity() * lambda;
    let cols = [shifted.column(0), shifted.column(1), shifted.column(2)];
    let mut best = Vector3::zeros();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let c = cols[i].cross(&cols[j]);
        if c.norm() > best.norm() {
            best = c;
        }
    }
    let mut v = best / best.norm();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v = -v;
        }
    }
    v
}

/// Builds `A_u`; at `u = 0` the entry `τ_u / u` is replaced by `tau_dot`.
pub fn build_compat(
    p: &PlaneGrid,
    basis: &KernelBasis,
    branch: &GepBranch,
    tau_dot: f64,
    alpha: f64,
    beta: f64,
) -> Result<CompatSystem, PenaltyError> {
    let u = branch.u;
    let psi_xp = p.inner(&branch.psi, &basis.x_plus);
    let phi_x0 = p.inner(&branch.phi, &basis.x_zero);
    let psi_phi = p.inner(&branch.psi, &branch.phi);
    let ratio = if u == 0.0 { tau_dot } else { branch.tau / u };
    let matrix = [
        [alpha, 0.0, -u * beta * psi_xp],
        [0.0, 0.0, -beta * phi_x0],
        [alpha * psi_xp, ratio, branch.tau - beta * psi_phi],
    ];
    let a = Matrix3::from_fn(|i, j| matrix[i][j]);
    let complex = a.complex_eigenvalues();
    let scale = a.norm().max(1.0);
    if complex.iter().any(|z| z.im.abs() > 1e-10 * scale) {
        return Err(PenaltyError::ComplexEigenvalues { u });
    }
    let mut eig: Vec<f64> = complex.iter().map(|z| z.re).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let eigenvalues = [eig[0], eig[1], eig[2]];
    let gap = (eig[0] - eig[1]).min(eig[1] - eig[2]);
    if gap < 1e-8 * scale {
        return Err(PenaltyError::EigenCollision { u, gap });
    }
    if !(eigenvalues[1] > 0.0 && eigenvalues[2] < 0.0) {
        return Err(PenaltyError::SignPattern { u, eigenvalues });
    }
    let mut left = [[0.0; 3]; 3];
    let mut eigen_residual: f64 = 0.0;
    for (j, &lambda) in eigenvalues.iter().enumerate() {
        let l = left_eigenvector(&a, lambda);
        let r = l.transpose() * a - l.transpose() * lambda;
        eigen_residual = eigen_residual.max(r.norm());
        left[j] = [l[0], l[1], l[2]];
    }
    let combine = |l: &[f64; 3]| -> Vec<f64> {
        (0..p.len())
            .map(|i| l[0] * basis.x_plus[i] + l[1] * basis.x_zero[i] + l[2] * branch.psi[i])
            .collect()
    };
    Ok(CompatSystem {
        u,
        alpha,
        beta,
        matrix,
        eigenvalues,
        y1: combine(&left[0]),
        y2: combine(&left[1]),
        left,
        eigen_residual,
    })
}

impl CompatSystem {
    pub fn char_poly(&self) -> [f64; 3] {
        char_poly(&self.matrix)
    }

    /// `(⟨(ξ1+u) Y1 g⟩, ⟨(ξ1+u) Y2 g⟩)` for a boundary trace `g`.
    pub fn residuals(&self, p: &PlaneGrid, g: &[f64]) -> (f64, f64) {
        let mu = flux_speed(p, self.u);
        (triple(p, &mu, &self.y1, g), triple(p, &mu, &self.y2, g))
    }
}

/// `±step, ±2 step, …` up to `limit`, ascending, zero excluded.
pub fn u_sweep(limit: f64, step: f64) -> Vec<f64> {
    let k = (limit / step + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (1..=k).rev().map(|i| -(i as f64) * step).collect();
    out.extend((1..=k).map(|i| i as f64 * step));
    out
}

/// Suprema over the sweep and the resulting `Γ` and `R`.
#[derive(Clone, Debug, Serialize)]
pub struct AdmissibleConstants {
    /// largest `|u|` on which the slow branch was validated
    pub r_prime: f64,
    pub r: f64,
    pub gamma_cap: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `3 ν* κ0`
    pub spectral_cap: f64,
    /// `sup ‖ψ_u‖`
    pub sup_psi: f64,
    /// `sup √(⟨ν ψ_u²⟩ ⟨φ_u²/ν⟩)`
    pub sup_mixed: f64,
    /// `sup √⟨ν φ_u²⟩ (√⟨ν X0²⟩ + √⟨ν ψ_u²⟩)`
    pub sup_cross: f64,
    pub sweep: Vec<f64>,
}

pub fn admissible_constants(
    consts: &SpectralConstants,
    p: &PlaneGrid,
    nu: &[f64],
    basis: &KernelBasis,
    branches: &[GepBranch],
    r_prime: f64,
) -> Result<AdmissibleConstants, PenaltyError> {
    if branches.is_empty() {
        return Err(PenaltyError::EmptySweep);
    }
    let nu_moment = |f: &[f64]| -> f64 {
        (0..p.len())
            .map(|a| p.weight[a] * nu[a] * f[a] * f[a])
            .sum()
    };
    let inv_nu_moment = |f: &[f64]| -> f64 {
        (0..p.len())
            .map(|a| p.weight[a] * f[a] * f[a] / nu[a])
            .sum()
    };
    let mut sup_psi: f64 = 0.0;
    let mut sup_mixed: f64 = 0.0;
    let mut sup_cross: f64 = 0.0;
    for b in branches {
        sup_psi = sup_psi.max(p.norm(&b.psi));
        sup_mixed = sup_mixed.max((nu_moment(&b.psi) * inv_nu_moment(&b.phi)).sqrt());
        sup_cross = sup_cross.max(
            nu_moment(&b.phi).sqrt() * (nu_moment(&basis.x_zero).sqrt() + nu_moment(&b.psi).sqrt()),
        );
    }
    for (v, name) in [
        (sup_psi, "‖ψ‖"),
        (sup_mixed, "√(⟨νψ²⟩⟨φ²/ν⟩)"),
        (sup_cross, "√⟨νφ²⟩"),
    ] {
        if !v.is_finite() {
            return Err(PenaltyError::NonFinite(name));
        }
    }
    let (kappa0, nu_minus, nu_star) = (consts.kappa0, consts.nu_minus, consts.nu_star);
    let gamma1 = kappa0 * nu_minus / (2.0 + 4.0 * sup_mixed);
    let bracket = nu_moment(&basis.x_plus) + sup_cross + 1.0;
    let gamma2 = kappa0 * nu_minus.powi(4) / (48.0 * nu_star * bracket * bracket);
    let spectral_cap = 3.0 * nu_star * kappa0;
    let r = (0.5 * r_prime).min(consts.c - 1.0).min(0.25 / sup_psi);
    Ok(AdmissibleConstants {
        r_prime,
        r,
        gamma_cap: spectral_cap.min(gamma1).min(gamma2),
        gamma1,
        gamma2,
        spectral_cap,
        sup_psi,
        sup_mixed,
        sup_cross,
        sweep: branches.iter().map(|b| b.u).collect(),
    })
}

/// Window for the penalization strength.
#[derive(Clone, Debug, Serialize)]
pub struct GammaWindow {
    /// `min(Γ, ν₋/2)`
    pub certified: f64,
    /// largest scanned `γ ≤ ν₋/2` with coercivity and `λ2(u) > γ` on the sweep
    pub empirical: f64,
    /// midpoint choice `empirical / 2`
    pub used: f64,
    /// `(γ, worst coercivity slack, min λ2)` per scanned value
    pub scan: Vec<(f64, f64, f64)>,
}

/// Scans `γ = ν₋/2 · 0.85^k` downward until every check passes on the sweep.
pub fn gamma_window(
    op: &CollisionOperator,
    basis: &KernelBasis,
    consts: &SpectralConstants,
    admissible: &AdmissibleConstants,
    branches: &[GepBranch],
    tau_dot: f64,
) -> GammaWindow {
    let certified = admissible.gamma_cap.min(0.5 * consts.nu_minus);
    let mut scan = Vec::new();
    let mut empirical = certified;
    let mut gamma = 0.5 * consts.nu_minus;
    while gamma > certified {
        let mut slack = f64::INFINITY;
        let mut lambda2 = f64::INFINITY;
        for b in branches {
            let pen = PenalizedOperator::new(op, basis, b, gamma);
            slack = slack.min(pen.coercivity_margin() - pen.coercivity_bound(consts.nu_star));
            lambda2 = match build_compat(&op.grid.plane, basis, b, tau_dot, pen.alpha, pen.beta) {
                Ok(c) => lambda2.min(c.eigenvalues[1]),
                Err(_) => f64::NEG_INFINITY,
            };
        }
        scan.push((gamma, slack, lambda2));
        if slack >= 0.0 && lambda2 > gamma {
            empirical = gamma;
            break;
        }
        gamma *= 0.85;
    }
    GammaWindow {
        certified,
        empirical,
        used: 0.5 * empirical,
        scan,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::AssemblySpec;
    use crate::gep::GepSolver;
    use crate::spectral::compute_constants;
    use crate::velocity::{GridSpec, VelocityGrid};
    use crate::Tolerances;

    struct Setup {
        op: CollisionOperator,
        basis: KernelBasis,
        solver: GepSolver,
    }

    fn setup() -> Setup {
        let tol = Tolerances::default();
        let g = VelocityGrid::build(&GridSpec::new(12, 10, 4, 8.0), &tol).unwrap();
        let op = CollisionOperator::assemble(&g, &AssemblySpec { n_phi: 128 }).unwrap();
        let basis = KernelBasis::build(&g, &tol).unwrap();
        let solver = GepSolver::new(&op, &basis, &tol).unwrap();
        Setup { op, basis, solver }
    }

    fn probe(p: &PlaneGrid, k: usize) -> Vec<f64> {
        p.eval(|x1, r| ((k as f64 + 1.0) * x1 - 0.3 * r).sin() * (1.0 + 0.1 * r * r))
    }

    fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    #[test]
    fn projection_algebra() {
        let s = setup();
        let p = &s.op.grid.plane;
        for u in [-0.05, 0.03] {
            let b = s.solver.solve(u).unwrap();
            let back = apply_p_u(p, &b, &b.phi);
            assert!(p.norm(&diff(&back, &b.phi)) < 1e-8);
            for k in 0..5 {
                let f = probe(p, k);
                let once = apply_p_u(p, &b, &f);
                let twice = apply_p_u(p, &b, &once);
                assert!(p.norm(&diff(&once, &twice)) < 1e-8);
                let once = apply_flux_p_u(p, &b, &f);
                let twice = apply_flux_p_u(p, &b, &once);
                assert!(p.norm(&diff(&once, &twice)) < 1e-8);
                let mu_f: Vec<f64> = (0..p.len()).map(|a| (p.axial[a] + u) * f[a]).collect();
                let lhs = apply_flux_p_u(p, &b, &mu_f);
                let rhs: Vec<f64> = apply_p_u(p, &b, &f)
                    .iter()
                    .enumerate()
                    .map(|(a, v)| (p.axial[a] + u) * v)
                    .collect();
                assert!(p.norm(&diff(&lhs, &rhs)) < 1e-8);
                let img = apply_flux_p_u(p, &b, &f);
                for x in s.basis.functions() {
                    assert!(p.inner(x, &img).abs() < 1e-6);
                }
            }
            // L p_u f = τ (ξ1+u) p_u f
            let pf = apply_p_u(p, &b, &probe(p, 2));
            let lpf = s.op.apply_lin_plane(&pf);
            let r: Vec<f64> = (0..p.len())
                .map(|a| lpf[a] - b.tau * (p.axial[a] + u) * pf[a])
                .collect();
            assert!(p.norm(&r) < 1e-6);
        }
    }

    #[test]
    fn penalized_operator_limits_and_coercivity() {
        let s = setup();
        let p = &s.op.grid.plane;
        let consts = compute_constants(&s.op, &s.basis).unwrap();
        let b = s.solver.solve(0.02).unwrap();
        let pen = PenalizedOperator::new(&s.op, &s.basis, &b, 0.2);
        assert!(pen.apply(&vec![0.0; p.len()]).iter().all(|v| *v == 0.0));
        assert!(pen.coercivity_margin() >= pen.coercivity_bound(consts.nu_star));
        assert!(pen.probe_coercivity(&s.op, consts.nu_star, 50, 7) >= -1e-6);
        let f = probe(p, 1);
        let small = PenalizedOperator::new(&s.op, &s.basis, &s.solver.solve(0.0).unwrap(), 1e-6);
        let d = diff(&small.apply(&f), &s.op.apply_lin_plane(&f));
        assert!(p.norm(&d) < 1e-4);
        let k = pen.apply_kernel(&f);
        let l = pen.apply(&f);
        for a in 0..p.len() {
            assert!((pen.sigma[a] * f[a] - k[a] - l[a]).abs() < 1e-10);
        }
        assert!(matches!(
            build_penalized(&s.op, &s.basis, &b, -1.0, 1.0),
            Err(PenaltyError::GammaOutOfWindow { .. })
        ));
    }

    #[test]
    fn compat_matrix_at_origin() {
        let s = setup();
        let p = &s.op.grid.plane;
        let b = s.solver.solve(0.0).unwrap();
        let (alpha, beta) = (0.4, 0.4);
        let c = build_compat(p, &s.basis, &b, s.solver.tau_dot, alpha, beta).unwrap();
        assert!(c.eigenvalues[0] > c.eigenvalues[1]);
        assert!(c.eigenvalues[1] > 0.0 && c.eigenvalues[2] < 0.0);
        assert!(c.eigenvalues.iter().any(|l| (l - alpha).abs() < 1e-10));
        assert!(c.eigen_residual < 1e-10);
        let psi_x0 = p.inner(&b.psi, &s.basis.x_zero);
        let got = c.char_poly();
        let ours = {
            let bb = beta * psi_x0;
            [
                bb - alpha,
                s.solver.tau_dot * beta - alpha * bb,
                -alpha * s.solver.tau_dot * beta,
            ]
        };
        for k in 0..3 {
            assert!((got[k] - ours[k]).abs() < 1e-10);
        }
        for row in c.left {
            let n: f64 = row.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
            assert!(row.iter().find(|v| v.abs() > 1e-12).unwrap() > &0.0);
        }
    }

    #[test]
    fn constants_and_window() {
        let s = setup();
        let p = &s.op.grid.plane;
        let consts = compute_constants(&s.op, &s.basis).unwrap();
        let sweep = u_sweep(0.5 * s.solver.radius, 0.025);
        let branches: Vec<GepBranch> = sweep.iter().map(|&u| s.solver.solve(u).unwrap()).collect();
        let adm = admissible_constants(
            &consts,
            p,
            &s.op.nu_plane,
            &s.basis,
            &branches,
            s.solver.radius,
        )
        .unwrap();
        assert!(adm.gamma_cap > 0.0 && adm.gamma_cap <= adm.spectral_cap);
        assert!(adm.r > 0.0 && adm.r <= consts.c - 1.0);
        let win = gamma_window(&s.op, &s.basis, &consts, &adm, &branches, s.solver.tau_dot);
        assert!(win.empirical >= win.certified);
        assert!(win.used < win.empirical);
    }

    #[test]
    fn sweep_is_symmetric() {
        let s = u_sweep(0.1, 0.01);
        assert_eq!(s.len(), 20);
        assert!((s[0] + 0.1).abs() < 1e-12 && (s[19] - 0.1).abs() < 1e-12);
        assert!(!s.contains(&0.0));
    }
}
