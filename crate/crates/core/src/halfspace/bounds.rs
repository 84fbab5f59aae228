//! Numerical values of the constants in the a-priori estimates. They are
//! diagnostics: they gate warnings, never solves.

use crate::collision::{BilinearQ, CollisionOperator};
use crate::gep::GepBranch;
use crate::linalg::symmetric_form;
use crate::spectral::{KernelBasis, SpectralConstants};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::gamma::gamma as gamma_fn;
use std::f64::consts::PI;

/// `∫_{R^d} dζ / (1+|ζ|)^s` for `s > d`.
pub fn dimension_integral(d: usize, s: f64) -> f64 {
    let df = d as f64;
    let sphere = 2.0 * PI.powf(0.5 * df) / gamma_fn(0.5 * df);
    sphere * gamma_fn(df) * gamma_fn(s - df) / gamma_fn(s)
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundConstants {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub i_2_5_2: f64,
    pub i_3_4: f64,
    /// `(s, sup ‖(1+|ξ|)^s √M φ_u‖∞)`
    pub c_s: Vec<(f64, f64)>,
    /// `‖K‖` on reflection-even functions
    pub k_norm: f64,
    /// `‖L‖` from the graph norm `‖ν f‖` to `L²(M dξ)`
    pub lin_norm: f64,
    /// `K_*`: `L²` norm of the absolute penalized kernel
    pub k_star: f64,
    /// `K_{1/2}`: from `L²` to `L^{∞,1/2}`
    pub k_half: f64,
    /// `(s, K_s)`: from `L^{∞,s-1}` to `L^{∞,s}`
    pub k_s: Vec<(f64, f64)>,
    pub c: f64,
    pub kappa: f64,
    pub l: f64,
    /// sampled lower estimate of the Grad constant `Q_3`
    pub q3: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub e: f64,
}

fn spectral_norm(b: &DMatrix<f64>) -> f64 {
    let n = b.ncols();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..300 {
        let w = b.transpose() * (b * &v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw.sqrt();
        v = w / nw;
        if (next - est).abs() < 1e-12 * next {
            return next;
        }
        est = next;
    }
    est
}

/// Evaluates every constant at penalization `γ` (with `α = β = 2γ`), taking
/// suprema over the branches given.
pub fn bound_constants(
    op: &CollisionOperator,
    basis: &KernelBasis,
    consts: &SpectralConstants,
    q: &BilinearQ,
    branches: &[GepBranch],
    gamma: f64,
    seed: u64,
) -> BoundConstants {
    let grid = &op.grid;
    let p = &grid.plane;
    let (alpha, beta) = (2.0 * gamma, 2.0 * gamma);
    let (nu_minus, nu_plus, nu_star) = (consts.nu_minus, consts.nu_plus, consts.nu_star);
    let i_2_5_2 = dimension_integral(2, 2.5);
    let i_3_4 = dimension_integral(3, 4.0);
    let w = &p.weight;

    let mut k_norm: f64 = 0.0;
    let mut lin_norm: f64 = 0.0;
    for s in op.sectors.iter().filter(|s| s.m % 2 == 0) {
        let k = symmetric_form(&s.kernel(&op.nu_plane), w);
        let eig = k.symmetric_eigenvalues();
        k_norm = k_norm.max(eig.iter().fold(0.0, |m, v| m.max(v.abs())));
        let n = p.len();
        let scaled = DMatrix::from_fn(n, n, |a, b| {
            w[a].sqrt() * s.lin[(a, b)] / (op.nu_plane[b] * w[b].sqrt())
        });
        lin_norm = lin_norm.max(scaled.singular_values().max());
    }

    let c_s: Vec<(f64, f64)> = [0.0, 1.0, 2.0, 3.0]
        .iter()
        .map(|&s| {
            let v = branches
                .iter()
                .map(|b| p.weighted_sup(&b.phi, s))
                .fold(0.0, f64::max);
            (s, v)
        })
        .collect();
    let c1 = c_s[1].1;
    let c3 = c_s[3].1;

    // full-grid absolute penalized kernel
    let table = op.kernel_table();
    let n = grid.len();
    let d: Vec<f64> = (0..n)
        .map(|i| grid.weights[i] * grid.maxwellian[i])
        .collect();
    let sqrt_m: Vec<f64> = grid.maxwellian.iter().map(|m| m.sqrt()).collect();
    let bracket: Vec<f64> = grid
        .nodes
        .iter()
        .map(|v| 1.0 + (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
        .collect();
    let n_angle = grid.n_angle();
    let xp2 = p.inner(&basis.x_plus, &basis.x_plus);
    let mut k_star: f64 = 0.0;
    let mut k_half: f64 = 0.0;
    let mut k_s: Vec<(f64, f64)> = [1.0, 2.0, 3.0].iter().map(|&s| (s, 0.0)).collect();
    let mut sup_c_terms: f64 = 0.0;
    for b in branches {
        let mu: Vec<f64> = (0..n).map(|i| grid.nodes[i][0] + b.u).collect();
        let abs = DMatrix::from_fn(n, n, |i, j| {
            let (ai, aj) = (i / n_angle, j / n_angle);
            let pen = alpha * basis.x_plus[ai] * basis.x_plus[aj] * mu[j] * d[j] / xp2
                - beta * b.phi[ai] * mu[j] * b.psi[aj] * d[j];
            (table[(i, j)] - pen).abs()
        });
        let scaled = DMatrix::from_fn(n, n, |i, j| d[i].sqrt() * abs[(i, j)] / d[j].sqrt());
        k_star = k_star.max(spectral_norm(&scaled));
        for i in 0..n {
            let row: f64 = (0..n)
                .map(|j| (abs[(i, j)] / d[j].sqrt()).powi(2))
                .sum::<f64>()
                .sqrt();
            k_half = k_half.max(bracket[i].sqrt() * sqrt_m[i] * row);
            for entry in k_s.iter_mut() {
                let s = entry.0;
                let sum: f64 = (0..n)
                    .map(|j| abs[(i, j)] / (sqrt_m[j] * bracket[j].powf(s - 1.0)))
                    .sum();
                entry.1 = entry.1.max(bracket[i].powf(s) * sqrt_m[i] * sum);
            }
        }
        let mu_p: Vec<f64> = p.axial.iter().map(|x| x + b.u).collect();
        let m2 = |f: &[f64]| -> f64 {
            (0..p.len())
                .map(|a| w[a] * mu_p[a] * mu_p[a] * f[a] * f[a])
                .sum()
        };
        sup_c_terms = sup_c_terms.max(
            alpha * m2(&basis.x_plus).sqrt()
                + beta * (m2(&b.psi) * p.inner(&b.phi, &b.phi)).sqrt()
                + k_norm,
        );
    }
    let k_two = k_s[1].1;

    let c = 1.0 + 24.0 * nu_star / (gamma * nu_minus.sqrt()) * sup_c_terms;
    let kappa = (nu_minus - gamma) / (c * nu_minus);
    let gap = nu_minus - gamma;
    let delta = gamma;
    let first_factor = 1.0 + k_two / gap + 2.0 * i_3_4.sqrt() * k_two * k_half / (gap * gap);
    let second_factor = 2f64.sqrt() * k_two * k_half * k_star / gap.powf(2.5)
        * (1.0
            + 3.0 * 3f64.sqrt() / (2.0 * std::f64::consts::E).sqrt() * i_2_5_2 * k_half * k_half
                / (gap * gap));
    let mut l: f64 = 0.0;
    for b in branches {
        let mu_p: Vec<f64> = p.axial.iter().map(|x| x + b.u).collect();
        let psi2 = p.inner(&b.psi, &b.psi);
        let phi2 = p.inner(&b.phi, &b.phi);
        let mu_phi2: f64 = (0..p.len())
            .map(|a| w[a] * mu_p[a] * mu_p[a] * b.phi[a] * b.phi[a])
            .sum();
        let nu_psi: f64 = (0..p.len())
            .map(|a| w[a] * op.nu_plane[a] * b.psi[a] * b.psi[a])
            .sum();
        let wall = ((2.0 * gamma).sqrt() / (kappa * nu_minus * nu_minus)
            + lin_norm / (kappa * nu_minus * nu_minus * (2.0 * gamma).sqrt())
            + 2.0 * gamma * (nu_minus + (psi2 * phi2).sqrt()) / (kappa * nu_minus * nu_minus))
            * nu_plus
            * i_3_4.sqrt();
        let from_wall = first_factor + second_factor * wall;
        let from_source = first_factor * (1.0 + c1 * i_3_4.sqrt() * nu_psi.sqrt()) / gap
            + second_factor * (1.0 + (psi2 * mu_phi2).sqrt()) / (kappa * nu_minus)
                * (i_3_4 / (2.0 * delta)).sqrt();
        l = l.max(from_wall.max(from_source));
    }
    let q3 = q.grad_bound_probe(grid, 3.0, 200, seed);
    let big = q3 * 1f64.max(c3 * c3);
    let lambda = branches
        .iter()
        .map(|b| big * (i_3_4.sqrt() * p.norm(&b.psi) / (2.0 * gamma - b.tau) * (1.0 + l * c3) + l))
        .fold(0.0, f64::max);
    let epsilon = 1.0 / (4.0 * lambda * l);
    BoundConstants {
        gamma,
        alpha,
        beta,
        i_2_5_2,
        i_3_4,
        c_s,
        k_norm,
        lin_norm,
        k_star,
        k_half,
        k_s,
        c,
        kappa,
        l,
        q3,
        lambda,
        epsilon,
        e: 2.0 * l * epsilon * 1f64.max(c3),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_integrals_match_closed_forms() {
        assert!((dimension_integral(2, 2.5) - 8.0 * PI / 3.0).abs() < 1e-12);
        assert!((dimension_integral(3, 4.0) - 4.0 * PI / 3.0).abs() < 1e-12);
        // ∫_R dζ/(1+|ζ|)^2 = 2
        assert!((dimension_integral(1, 2.0) - 2.0).abs() < 1e-12);
    }
}
