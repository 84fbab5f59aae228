//! Null space of `L`, hydrodynamic projections and spectral constants.

use crate::collision::CollisionOperator;
use crate::linalg::{sorted_eigenvalues, symmetric_form};
use crate::velocity::{PlaneGrid, VelocityGrid};
use crate::Tolerances;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("kernel basis fails orthonormality: Gram deviation {0:e}")]
    Orthonormality(f64),
    #[error("generalized eigenproblem is not positive definite")]
    NotDefinite,
}

/// `√(5/3)`, the sound speed in thermal units.
pub fn sound_speed() -> f64 {
    (5.0f64 / 3.0).sqrt()
}

/// The three reflection-even collision invariants, orthonormal in `⟨·⟩`
/// and diagonalizing `⟨ξ1 f g⟩`. Stored on the plane grid.
#[derive(Clone, Debug)]
pub struct KernelBasis {
    pub x_plus: Vec<f64>,
    pub x_zero: Vec<f64>,
    pub x_minus: Vec<f64>,
    pub c: f64,
}

impl KernelBasis {
    pub fn build(grid: &VelocityGrid, tol: &Tolerances) -> Result<Self, SpectralError> {
        let p = &grid.plane;
        let c = sound_speed();
        let s15 = 15f64.sqrt();
        let x_plus = p.eval(|x1, r| (x1 * x1 + r * r + s15 * x1) / 30f64.sqrt());
        let x_minus = p.eval(|x1, r| (x1 * x1 + r * r - s15 * x1) / 30f64.sqrt());
        let x_zero = p.eval(|x1, r| (x1 * x1 + r * r - 5.0) / 10f64.sqrt());
        let basis = KernelBasis {
            x_plus,
            x_zero,
            x_minus,
            c,
        };
        let dev = basis.gram_deviation(p);
        if dev > tol.tol_quad {
            return Err(SpectralError::Orthonormality(dev));
        }
        Ok(basis)
    }

    pub fn functions(&self) -> [&[f64]; 3] {
        [&self.x_plus, &self.x_zero, &self.x_minus]
    }

    pub fn gram_deviation(&self, p: &PlaneGrid) -> f64 {
        let f = self.functions();
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let exact = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((p.inner(f[i], f[j]) - exact).abs());
            }
        }
        dev
    }

    /// `⟨(ξ1 + u) X_a X_b⟩` in the order `(+, 0, -)`.
    pub fn flux_form(&self, p: &PlaneGrid, u: f64) -> [[f64; 3]; 3] {
        let f = self.functions();
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..p.len())
                    .map(|a| p.weight[a] * (p.axial[a] + u) * f[i][a] * f[j][a])
                    .sum();
            }
        }
        m
    }

    /// `Π f`, projection onto span{X+, X0, X-} (Gram-corrected, exactly idempotent).
    pub fn project(&self, p: &PlaneGrid, f: &[f64]) -> Vec<f64> {
        let fs = self.functions();
        let gram = nalgebra::Matrix3::from_fn(|i, j| p.inner(fs[i], fs[j]));
        let inv = gram.try_inverse().expect("basis is independent");
        let b = nalgebra::Vector3::from_fn(|i, _| p.inner(fs[i], f));
        let c = inv * b;
        let mut out = vec![0.0; f.len()];
        for (k, x) in fs.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(x.iter()) {
                *o += c[k] * v;
            }
        }
        out
    }

    /// `Π₊ f = ⟨f X+⟩ X+`, normalized by the discrete `⟨X+²⟩`.
    pub fn project_plus(&self, p: &PlaneGrid, f: &[f64]) -> Vec<f64> {
        let c = p.inner(f, &self.x_plus) / p.inner(&self.x_plus, &self.x_plus);
        self.x_plus.iter().map(|v| c * v).collect()
    }
}

/// Spectral constants entering the penalization.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralConstants {
    pub c: f64,
    /// gap on the reflection-even subspace
    pub kappa0: f64,
    /// gap on the whole space (diagnostic)
    pub kappa0_full: f64,
    pub nu_star: f64,
    pub nu_minus: f64,
    pub nu_plus: f64,
}

/// Smallest value of `⟨f L f⟩ / ⟨ν f²⟩` over `f ⊥ invariants` for one sector.
fn sector_gap(
    lin: &DMatrix<f64>,
    nu: &[f64],
    weight: &[f64],
    invariants: &[Vec<f64>],
) -> Result<f64, SpectralError> {
    let n = weight.len();
    let s = symmetric_form(lin, weight);
    // orthonormal basis of the complement of √ω·invariants
    let k = invariants.len();
    let complement = if k == 0 {
        DMatrix::<f64>::identity(n, n)
    } else {
        let y = DMatrix::from_fn(n, k, |i, j| weight[i].sqrt() * invariants[j][i]);
        let proj = &y * (y.transpose() * &y).try_inverse().unwrap() * y.transpose();
        let q = DMatrix::<f64>::identity(n, n) - proj;
        let eig = SymmetricEigen::new(q);
        let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        DMatrix::from_fn(n, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])])
    };
    let a = complement.transpose() * &s * &complement;
    let nu_diag = DMatrix::from_fn(n, n, |i, j| if i == j { nu[i] } else { 0.0 });
    let m = complement.transpose() * nu_diag * &complement;
    let chol = m.cholesky().ok_or(SpectralError::NotDefinite)?;
    let l_inv = chol.l().try_inverse().ok_or(SpectralError::NotDefinite)?;
    let c = &l_inv * a * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    Ok(sorted_eigenvalues(c)[0])
}

/// `κ0` on the sectors selected by `even_only`.
pub fn estimate_kappa0(op: &CollisionOperator, even_only: bool) -> Result<f64, SpectralError> {
    let w = &op.grid.plane.weight;
    let mut best = f64::INFINITY;
    for s in &op.sectors {
        if even_only && s.m % 2 == 1 {
            continue;
        }
        best = best.min(sector_gap(&s.lin, &op.nu_plane, w, &s.invariants)?);
    }
    Ok(best)
}

pub fn compute_constants(
    op: &CollisionOperator,
    basis: &KernelBasis,
) -> Result<SpectralConstants, SpectralError> {
    let p = &op.grid.plane;
    let nu_star = basis
        .functions()
        .iter()
        .map(|x| {
            (0..p.len())
                .map(|a| p.weight[a] * op.nu_plane[a] * x[a] * x[a])
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    Ok(SpectralConstants {
        c: basis.c,
        kappa0: estimate_kappa0(op, true)?,
        kappa0_full: estimate_kappa0(op, false)?,
        nu_star,
        nu_minus: op.nu_minus,
        nu_plus: op.nu_plus,
    })
}

/// Eigenvalue count of the raw operator below a tenth of the spectral gap.
#[derive(Clone, Debug, Serialize)]
pub struct KernelCount {
    pub count: usize,
    pub gap: f64,
    pub threshold: f64,
    /// count below `threshold / 10`; differs from `count` when the null
    /// cluster is under-resolved
    pub count_tight: usize,
    /// smallest raw eigenvalues with their multiplicity
    pub smallest: Vec<(f64, usize)>,
}

/// Counts near-null directions of the weighted symmetric form of the raw
/// `L`; the gap is read off the corrected operator with its exact null
/// space removed. `even_only` restricts to the reflection-even subspace.
pub fn kernel_dimension(op: &CollisionOperator, even_only: bool) -> KernelCount {
    let w = &op.grid.plane.weight;
    let half = op.grid.n_angle() / 2;
    let mut gap = f64::INFINITY;
    let mut raw_eigs = Vec::new();
    for s in &op.sectors {
        if even_only && s.m % 2 == 1 {
            continue;
        }
        let mult = if s.m == 0 || s.m == half { 1 } else { 2 };
        let corrected = sorted_eigenvalues(symmetric_form(&s.lin, w));
        if let Some(v) = corrected.get(s.invariants.len()) {
            gap = gap.min(*v);
        }
        for v in sorted_eigenvalues(symmetric_form(&s.raw_lin(&op.nu_plane), w)) {
            raw_eigs.push((v, mult));
        }
    }
    raw_eigs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let threshold = gap / 10.0;
    let count = raw_eigs
        .iter()
        .filter(|(v, _)| v.abs() < threshold)
        .map(|(_, m)| m)
        .sum();
    let count_tight = raw_eigs
        .iter()
        .filter(|(v, _)| v.abs() < threshold / 10.0)
        .map(|(_, m)| m)
        .sum();
    KernelCount {
        count,
        gap,
        threshold,
        count_tight,
        smallest: raw_eigs.into_iter().take(8).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::AssemblySpec;
    use crate::velocity::GridSpec;
    use approx::assert_relative_eq;

    fn setup() -> (CollisionOperator, KernelBasis) {
        let tol = Tolerances::default();
        let g = VelocityGrid::build(&GridSpec::new(12, 10, 6, 8.0), &tol).unwrap();
        let op = CollisionOperator::assemble(&g, &AssemblySpec { n_phi: 128 }).unwrap();
        let b = KernelBasis::build(&g, &tol).unwrap();
        (op, b)
    }

    #[test]
    fn flux_form_is_diagonal_with_sound_speed() {
        let (op, b) = setup();
        let p = &op.grid.plane;
        for u in [-0.1, 0.0, 0.1] {
            let m = b.flux_form(p, u);
            let expected = [u + b.c, u, u - b.c];
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { expected[i] } else { 0.0 };
                    assert!((m[i][j] - e).abs() < 1e-9, "{u} {i} {j} {}", m[i][j]);
                }
            }
        }
        // mean of X0 is -2/√10, not zero
        assert_relative_eq!(p.mean(&b.x_zero), -2.0 / 10f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn projections_are_idempotent() {
        let (op, b) = setup();
        let p = &op.grid.plane;
        let f = p.eval(|x1, r| (x1 - 0.3 * r).sin() + r * r * 0.1);
        let once = b.project(p, &f);
        let twice = b.project(p, &once);
        for (x, y) in once.iter().zip(&twice) {
            assert!((x - y).abs() < 1e-12);
        }
        let once = b.project_plus(p, &f);
        let twice = b.project_plus(p, &once);
        for (x, y) in once.iter().zip(&twice) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_inequality_holds_for_random_probes() {
        let (op, b) = setup();
        let p = &op.grid.plane;
        let kappa0 = estimate_kappa0(&op, true).unwrap();
        assert!(kappa0 > 0.0);
        for k in 0..20 {
            let f: Vec<f64> = (0..p.len())
                .map(|a| ((a * 31 + k * 17) % 23) as f64 / 11.0 - 1.0)
                .collect();
            let lf = op.apply_lin_plane(&f);
            let pf = b.project(p, &f);
            let d: Vec<f64> = f.iter().zip(&pf).map(|(x, y)| x - y).collect();
            let nd: f64 = (0..p.len())
                .map(|a| p.weight[a] * op.nu_plane[a] * d[a] * d[a])
                .sum();
            assert!(p.inner(&f, &lf) >= kappa0 * nd - 1e-10);
        }
    }

    #[test]
    fn null_space_dimensions() {
        let (op, _) = setup();
        let full = kernel_dimension(&op, false);
        assert_eq!((full.count, full.count_tight), (5, 5));
        let even = kernel_dimension(&op, true);
        assert_eq!((even.count, even.count_tight), (3, 3));
    }
}
