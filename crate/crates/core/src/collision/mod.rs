//! Hard-sphere collision operators.
//!
//! The compact part is assembled per angular Fourier sector: a kernel that
//! depends only on the relative angle between transverse velocities is
//! block diagonal in `cos(mθ)`/`sin(mθ)`, so each sector `m = 0..=n_angle/2`
//! is a dense plane matrix. Sector 0 carries every angle-independent
//! function, which is all the half-space solvers need.
//!
//! The singular part of `k1` on the diagonal is removed by fixing the row
//! sums to the closed-form collision frequency, then the invariant
//! directions are projected out so the null space is exact.

mod bilinear;
mod cache;
mod interp;
mod oracle;

pub use bilinear::{BilinearQ, FullBilinear, QuadratureSpec};
pub use cache::{CacheError, OperatorCache};
pub use interp::PlaneInterpolator;
pub use oracle::{kernel_oracle, sample_kernel, OracleEntry, Probe};

use crate::linalg::{matvec, weighted_projector};
use crate::quadrature::gauss_legendre;
use crate::velocity::{maxwellian, GridError, VelocityGrid};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CollisionError {
    #[error("speed must be non-negative, got {0}")]
    NegativeSpeed(f64),
    #[error("kernel quadrature failed at entry ({row}, {col}) in sector {sector}")]
    Quadrature {
        row: usize,
        col: usize,
        sector: usize,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// `ν(r) = 2π E|ξ - ξ*|` with `ξ*` standard normal, in closed form.
pub fn collision_frequency(r: f64) -> Result<f64, CollisionError> {
    if !(r >= 0.0) {
        return Err(CollisionError::NegativeSpeed(r));
    }
    Ok(nu_unchecked(r))
}

fn nu_unchecked(r: f64) -> f64 {
    let c = (2.0 / PI).sqrt();
    if r < 1e-4 {
        // series: √(2/π)(2 + r²/3) + O(r⁴)
        return 2.0 * PI * c * (2.0 + r * r / 3.0);
    }
    2.0 * PI * (c * (-0.5 * r * r).exp() + (r + 1.0 / r) * erf(r / 2f64.sqrt()))
}

/// Gain kernel: `(K1 φ)(ξ) = ∫ k1(ξ, η) φ(η) dη`.
pub fn gain_kernel(xi: &[f64; 3], eta: &[f64; 3]) -> f64 {
    let d = [xi[0] - eta[0], xi[1] - eta[1], xi[2] - eta[2]];
    let dn2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let dn = dn2.sqrt();
    let proj = eta[0] * d[0] + eta[1] * d[1] + eta[2] * d[2];
    2.0 / (2.0 * PI).sqrt() / dn * (-0.5 * proj * proj / dn2).exp()
}

/// Loss kernel: `(K3 φ)(ξ) = ∫ k3(ξ, η) φ(η) dη`.
pub fn loss_kernel(xi: &[f64; 3], eta: &[f64; 3]) -> f64 {
    let d = [xi[0] - eta[0], xi[1] - eta[1], xi[2] - eta[2]];
    let dn = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    2.0 * PI * dn * maxwellian(eta[0] * eta[0] + eta[1] * eta[1] + eta[2] * eta[2])
}

/// Assembly knobs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblySpec {
    /// Gauss–Legendre points for the relative-angle integral on `[0, π]`
    pub n_phi: usize,
}

impl Default for AssemblySpec {
    fn default() -> Self {
        AssemblySpec { n_phi: 192 }
    }
}

/// One angular Fourier sector of the operators on the plane grid.
#[derive(Clone, Debug)]
pub struct Sector {
    pub m: usize,
    /// raw `K = 2 K1 - K3` before the invariant correction
    pub raw_kernel: DMatrix<f64>,
    /// raw `K3` (loss part, reused by the bilinear operator)
    pub absorption: DMatrix<f64>,
    /// corrected `L`, exactly annihilating the invariants of this sector
    pub lin: DMatrix<f64>,
    /// plane functions spanning the collision invariants in this sector
    pub invariants: Vec<Vec<f64>>,
}

impl Sector {
    /// Corrected `K = ν - L`.
    pub fn kernel(&self, nu: &[f64]) -> DMatrix<f64> {
        let mut k = -self.lin.clone();
        for (a, v) in nu.iter().enumerate() {
            k[(a, a)] += v;
        }
        k
    }

    /// Raw `L = ν - K`.
    pub fn raw_lin(&self, nu: &[f64]) -> DMatrix<f64> {
        let mut l = -self.raw_kernel.clone();
        for (a, v) in nu.iter().enumerate() {
            l[(a, a)] += v;
        }
        l
    }
}

/// `ν`, `K` and `L` on a velocity grid.
#[derive(Clone, Debug)]
pub struct CollisionOperator {
    pub grid: VelocityGrid,
    /// `ν` per plane node
    pub nu_plane: Vec<f64>,
    /// `ν` per full node
    pub nu: Vec<f64>,
    pub nu_minus: f64,
    pub nu_plus: f64,
    pub sectors: Vec<Sector>,
}

fn sector_invariants(grid: &VelocityGrid, m: usize) -> Vec<Vec<f64>> {
    let p = &grid.plane;
    match m {
        0 => vec![
            vec![1.0; p.len()],
            p.axial.clone(),
            (0..p.len()).map(|a| p.speed_sq(a)).collect(),
        ],
        1 => vec![p.radial.clone()],
        _ => Vec::new(),
    }
}

/// `(I - P) A (I - P)` with `P` the weighted projector onto `basis`.
fn project_out(a: &DMatrix<f64>, basis: &[Vec<f64>], weight: &[f64]) -> DMatrix<f64> {
    if basis.is_empty() {
        return a.clone();
    }
    let n = weight.len();
    let q = DMatrix::<f64>::identity(n, n) - weighted_projector(basis, weight);
    &q * a * &q
}

/// Makes `A` self-adjoint for `Σ w f g` (entries `w_a A_ab` symmetric).
fn symmetrize(a: &mut DMatrix<f64>, weight: &[f64]) {
    let n = weight.len();
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (weight[i] * a[(i, j)] + weight[j] * a[(j, i)]);
            a[(i, j)] = s / weight[i];
            a[(j, i)] = s / weight[j];
        }
    }
}

impl CollisionOperator {
    pub fn assemble(grid: &VelocityGrid, spec: &AssemblySpec) -> Result<Self, CollisionError> {
        let plane = &grid.plane;
        let n = plane.len();
        let n_sectors = grid.n_angle() / 2 + 1;
        let nu_plane: Vec<f64> = (0..n).map(|a| nu_unchecked(plane.speed(a))).collect();

        // φ = π s² on s ∈ [0, 1] clusters nodes at the near-singular φ = 0
        let rule = gauss_legendre(spec.n_phi);
        let mut phi = Vec::with_capacity(spec.n_phi);
        let mut wphi = Vec::with_capacity(spec.n_phi);
        for (s, w) in rule.nodes.iter().zip(&rule.weights) {
            let s = 0.5 * (s + 1.0);
            phi.push(PI * s * s);
            // doubled for the even extension to [0, 2π]
            wphi.push(2.0 * PI * s * w);
        }
        let cos_table: Vec<Vec<f64>> = (0..n_sectors)
            .map(|m| phi.iter().map(|p| (m as f64 * p).cos()).collect())
            .collect();
        let area: Vec<f64> = (0..n).map(|a| plane.area_weight(a)).collect();

        // rows[a] = (gain[m][b], loss[m][b], self_correction[m])
        type Row = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>);
        let rows: Vec<Row> = (0..n)
            .into_par_iter()
            .map(|a| {
                let xi = [plane.axial[a], plane.radial[a], 0.0];
                let mut gain = vec![vec![0.0; n]; n_sectors];
                let mut loss = vec![vec![0.0; n]; n_sectors];
                let mut self_term = vec![0.0; n_sectors];
                for b in 0..n {
                    for (k, (&p, &w)) in phi.iter().zip(&wphi).enumerate() {
                        let (sp, cp) = p.sin_cos();
                        let eta = [plane.axial[b], plane.radial[b] * cp, plane.radial[b] * sp];
                        let v1 = gain_kernel(&xi, &eta);
                        let v3 = loss_kernel(&xi, &eta);
                        for m in 0..n_sectors {
                            let c = cos_table[m][k];
                            if b == a {
                                self_term[m] += w * v1 * (c - 1.0);
                            } else {
                                gain[m][b] += w * v1 * c;
                            }
                            loss[m][b] += w * v3 * c;
                        }
                    }
                }
                (gain, loss, self_term)
            })
            .collect();

        let weight = &plane.weight;
        let mut sectors = Vec::with_capacity(n_sectors);
        for m in 0..n_sectors {
            let mut k1 = DMatrix::<f64>::zeros(n, n);
            let mut k3 = DMatrix::<f64>::zeros(n, n);
            for a in 0..n {
                let (gain, loss, self_term) = &rows[a];
                let mut gain_sum = 0.0;
                let mut loss_sum = 0.0;
                for b in 0..n {
                    let g = area[b] * gain[m][b];
                    let l = area[b] * loss[m][b];
                    if !g.is_finite() || !l.is_finite() {
                        return Err(CollisionError::Quadrature {
                            row: a,
                            col: b,
                            sector: m,
                        });
                    }
                    k1[(a, b)] = g;
                    k3[(a, b)] = l;
                    gain_sum += area[b] * gain[0][b];
                    loss_sum += area[b] * loss[0][b];
                }
                k1[(a, a)] = nu_plane[a] - gain_sum + area[a] * self_term[m];
                k3[(a, a)] += nu_plane[a] - loss_sum;
            }
            symmetrize(&mut k1, weight);
            symmetrize(&mut k3, weight);
            let raw_kernel = &k1 * 2.0 - &k3;
            let invariants = sector_invariants(grid, m);
            let mut raw_lin = -raw_kernel.clone();
            for a in 0..n {
                raw_lin[(a, a)] += nu_plane[a];
            }
            let mut lin = project_out(&raw_lin, &invariants, weight);
            symmetrize(&mut lin, weight);
            sectors.push(Sector {
                m,
                raw_kernel,
                absorption: k3,
                lin,
                invariants,
            });
        }
        Ok(Self::from_parts(grid, nu_plane, sectors))
    }

    fn from_parts(grid: &VelocityGrid, nu_plane: Vec<f64>, sectors: Vec<Sector>) -> Self {
        let plane = &grid.plane;
        let ratios: Vec<f64> = (0..plane.len())
            .map(|a| nu_plane[a] / (1.0 + plane.speed(a)))
            .collect();
        let nu_minus = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let nu_plus = ratios.iter().copied().fold(0.0, f64::max);
        CollisionOperator {
            grid: grid.clone(),
            nu: grid.lift(&nu_plane),
            nu_plane,
            nu_minus,
            nu_plus,
            sectors,
        }
    }

    /// Rebuilds the corrected operators from raw sector data (cache path).
    pub fn from_raw(
        grid: &VelocityGrid,
        nu_plane: Vec<f64>,
        raw: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    ) -> Self {
        let weight = &grid.plane.weight;
        let sectors = raw
            .into_iter()
            .enumerate()
            .map(|(m, (raw_kernel, absorption))| {
                let invariants = sector_invariants(grid, m);
                let mut raw_lin = -raw_kernel.clone();
                for (a, v) in nu_plane.iter().enumerate() {
                    raw_lin[(a, a)] += v;
                }
                let mut lin = project_out(&raw_lin, &invariants, weight);
                symmetrize(&mut lin, weight);
                Sector {
                    m,
                    raw_kernel,
                    absorption,
                    lin,
                    invariants,
                }
            })
            .collect();
        Self::from_parts(grid, nu_plane, sectors)
    }

    /// Loads from `cache` when it matches the grid, otherwise assembles and stores.
    pub fn assemble_cached(
        grid: &VelocityGrid,
        spec: &AssemblySpec,
        cache: Option<&OperatorCache>,
    ) -> Result<Self, CollisionError> {
        if let Some(cache) = cache {
            let key = cache::operator_key(grid, spec);
            if let Some(op) = cache::load_operator(cache, &key, grid)? {
                return Ok(op);
            }
            let op = Self::assemble(grid, spec)?;
            cache::store_operator(cache, &key, &op)?;
            return Ok(op);
        }
        Self::assemble(grid, spec)
    }

    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    /// Corrected `L` on angle-independent functions.
    pub fn lin_plane(&self) -> &DMatrix<f64> {
        &self.sectors[0].lin
    }

    /// Corrected `K` on angle-independent functions.
    pub fn kernel_plane(&self) -> DMatrix<f64> {
        self.sectors[0].kernel(&self.nu_plane)
    }

    pub fn apply_lin_plane(&self, f: &[f64]) -> Vec<f64> {
        matvec(&self.sectors[0].lin, f)
    }

    /// `L f` on the full grid.
    pub fn apply_lin(&self, f: &[f64]) -> Result<Vec<f64>, CollisionError> {
        self.grid.check_len(f)?;
        Ok(self.apply_sectorwise(f, |s, v| matvec(&s.lin, v)))
    }

    /// Corrected `K f` on the full grid.
    pub fn apply_kernel(&self, f: &[f64]) -> Result<Vec<f64>, CollisionError> {
        self.grid.check_len(f)?;
        let lf = self.apply_lin(f)?;
        Ok(self
            .nu
            .iter()
            .zip(f)
            .zip(&lf)
            .map(|((n, x), l)| n * x - l)
            .collect())
    }

    /// Raw (uncorrected) `K f` on the full grid.
    pub fn apply_raw_kernel(&self, f: &[f64]) -> Result<Vec<f64>, CollisionError> {
        self.grid.check_len(f)?;
        Ok(self.apply_sectorwise(f, |s, v| matvec(&s.raw_kernel, v)))
    }

    /// Raw `K3 f` on the full grid.
    pub fn apply_absorption(&self, f: &[f64]) -> Result<Vec<f64>, CollisionError> {
        self.grid.check_len(f)?;
        Ok(self.apply_sectorwise(f, |s, v| matvec(&s.absorption, v)))
    }

    fn apply_sectorwise(&self, f: &[f64], op: impl Fn(&Sector, &[f64]) -> Vec<f64>) -> Vec<f64> {
        let modes = to_modes(&self.grid, f);
        let out: Vec<(Vec<f64>, Vec<f64>)> = modes
            .iter()
            .zip(&self.sectors)
            .map(|((c, s), sec)| {
                let sc = if s.iter().any(|v| *v != 0.0) {
                    op(sec, s)
                } else {
                    vec![0.0; s.len()]
                };
                (op(sec, c), sc)
            })
            .collect();
        from_modes(&self.grid, &out)
    }

    /// Dense full-grid table `T[i][j]` of a sector family.
    pub fn dense_full(&self, pick: impl Fn(&Sector) -> DMatrix<f64>) -> DMatrix<f64> {
        let n_angle = self.grid.n_angle();
        let half = n_angle / 2;
        let np = self.grid.plane.len();
        let mats: Vec<DMatrix<f64>> = self.sectors.iter().map(pick).collect();
        let n = self.grid.len();
        DMatrix::from_fn(n, n, |i, j| {
            let (a, p) = (i / n_angle, i % n_angle);
            let (b, q) = (j / n_angle, j % n_angle);
            debug_assert!(a < np && b < np);
            let delta = (p as f64 - q as f64) * 2.0 * PI / n_angle as f64;
            let mut s = mats[0][(a, b)];
            for (m, mat) in mats.iter().enumerate().skip(1) {
                let mult = if m == half { 1.0 } else { 2.0 };
                s += mult * mat[(a, b)] * (m as f64 * delta).cos();
            }
            s / n_angle as f64
        })
    }

    /// Dense corrected `K` on the full grid.
    pub fn kernel_table(&self) -> DMatrix<f64> {
        self.dense_full(|s| s.kernel(&self.nu_plane))
    }

    /// Largest `|⟨f L g⟩ - ⟨L f, g⟩|` over the given pairs (full grid).
    pub fn symmetry_defect(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, CollisionError> {
        let mut worst: f64 = 0.0;
        for (f, g) in pairs {
            let lf = self.apply_lin(f)?;
            let lg = self.apply_lin(g)?;
            let a = self.grid.inner(f, &lg)?;
            let b = self.grid.inner(&lf, g)?;
            worst = worst.max((a - b).abs());
        }
        Ok(worst)
    }

    /// `‖L_raw ψ‖` for each collision invariant before the correction (plane norm).
    pub fn raw_invariant_defects(&self) -> Vec<f64> {
        let plane = &self.grid.plane;
        let mut out = Vec::new();
        for sec in self.sectors.iter().take(2) {
            let l = sec.raw_lin(&self.nu_plane);
            for inv in &sec.invariants {
                let r = matvec(&l, inv);
                out.push(plane.norm(&r) / plane.norm(inv).max(1e-300));
            }
        }
        out
    }
}

/// Angular Fourier modes `(cos part, sin part)` per sector of a full grid function.
pub fn to_modes(grid: &VelocityGrid, f: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n_angle = grid.n_angle();
    let half = n_angle / 2;
    let np = grid.plane.len();
    let mut out = vec![(vec![0.0; np], vec![0.0; np]); half + 1];
    for a in 0..np {
        let row = &f[a * n_angle..(a + 1) * n_angle];
        for (m, (c, s)) in out.iter_mut().enumerate() {
            let scale = if m == 0 || m == half { 1.0 } else { 2.0 } / n_angle as f64;
            let mut cs = 0.0;
            let mut ss = 0.0;
            for (p, &v) in row.iter().enumerate() {
                let (sn, cn) = (m as f64 * grid.angles[p]).sin_cos();
                cs += v * cn;
                ss += v * sn;
            }
            c[a] = scale * cs;
            s[a] = if m == 0 || m == half { 0.0 } else { scale * ss };
        }
    }
    out
}

/// Inverse of [`to_modes`].
pub fn from_modes(grid: &VelocityGrid, modes: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let n_angle = grid.n_angle();
    let np = grid.plane.len();
    let mut out = vec![0.0; grid.len()];
    for a in 0..np {
        for p in 0..n_angle {
            let mut v = 0.0;
            for (m, (c, s)) in modes.iter().enumerate() {
                let (sn, cn) = (m as f64 * grid.angles[p]).sin_cos();
                v += c[a] * cn + s[a] * sn;
            }
            out[a * n_angle + p] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::GridSpec;
    use crate::Tolerances;
    use approx::assert_relative_eq;

    fn small_op() -> CollisionOperator {
        let g = VelocityGrid::build(&GridSpec::new(10, 8, 6, 8.0), &Tolerances::default()).unwrap();
        CollisionOperator::assemble(&g, &AssemblySpec { n_phi: 96 }).unwrap()
    }

    #[test]
    fn frequency_closed_form() {
        assert_relative_eq!(
            collision_frequency(0.0).unwrap(),
            4.0 * (2.0 * PI).sqrt(),
            max_relative = 1e-14
        );
        // series and closed form agree at the switch point
        let below = nu_unchecked(0.99999e-4);
        let above = nu_unchecked(1.00001e-4);
        assert!((below - above).abs() < 1e-10);
        let big = collision_frequency(50.0).unwrap();
        assert!((big / (2.0 * PI * 50.0) - 1.0).abs() < 1e-2);
        assert!(collision_frequency(-1.0).is_err());
    }

    #[test]
    fn frequency_is_increasing() {
        let mut prev = nu_unchecked(0.0);
        for i in 1..=100 {
            let v = nu_unchecked(i as f64 * 0.1);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn gain_kernel_integrates_to_frequency() {
        // ∫ k1(ξ, η) dη = ν(|ξ|), in polar coordinates around ξ
        let xi = [0.7, -0.4, 1.1];
        let radial = gauss_legendre(200);
        let polar = gauss_legendre(64);
        let n_az = 64;
        let mut total = 0.0;
        for (s, ws) in radial.nodes.iter().zip(&radial.weights) {
            // ρ = 12 ((s+1)/2)^2 concentrates nodes near the singularity
            let u = 0.5 * (s + 1.0);
            let rho = 12.0 * u * u;
            let jac = 12.0 * u * ws;
            for (c, wc) in polar.nodes.iter().zip(&polar.weights) {
                let sn = (1.0 - c * c).sqrt();
                for k in 0..n_az {
                    let az = 2.0 * PI * k as f64 / n_az as f64;
                    let eta = [
                        xi[0] + rho * c,
                        xi[1] + rho * sn * az.cos(),
                        xi[2] + rho * sn * az.sin(),
                    ];
                    total +=
                        jac * wc * (2.0 * PI / n_az as f64) * rho * rho * gain_kernel(&xi, &eta);
                }
            }
        }
        let speed = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        assert_relative_eq!(total, nu_unchecked(speed.sqrt()), max_relative = 1e-6);
    }

    #[test]
    fn kernels_satisfy_detailed_balance() {
        let xi = [0.3, 1.2, -0.5];
        let eta = [-1.1, 0.4, 0.9];
        let mx = maxwellian(xi.iter().map(|v| v * v).sum());
        let me = maxwellian(eta.iter().map(|v| v * v).sum());
        assert_relative_eq!(
            mx * gain_kernel(&xi, &eta),
            me * gain_kernel(&eta, &xi),
            max_relative = 1e-13
        );
        assert_relative_eq!(
            mx * loss_kernel(&xi, &eta),
            me * loss_kernel(&eta, &xi),
            max_relative = 1e-13
        );
    }

    #[test]
    fn corrected_operator_annihilates_invariants() {
        let op = small_op();
        let g = &op.grid;
        for f in [
            vec![1.0; g.len()],
            g.eval(|x| x[0]),
            g.eval(|x| x[1]),
            g.eval(|x| x[2]),
            g.eval(|x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]),
        ] {
            let lf = op.apply_lin(&f).unwrap();
            assert!(g.inner_unchecked(&lf, &lf).sqrt() < 1e-10);
        }
        for d in op.raw_invariant_defects() {
            assert!(d < 0.2, "raw defect {d}");
        }
    }

    #[test]
    fn modes_round_trip_and_dense_table_agrees() {
        let op = small_op();
        let g = &op.grid;
        let f = g.eval(|x| (x[0] + 0.3 * x[1] - 0.2 * x[2] * x[1]).sin());
        let back = from_modes(g, &to_modes(g, &f));
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let table = op.kernel_table();
        let direct = op.apply_kernel(&f).unwrap();
        let dense = matvec(&table, &f);
        for (a, b) in direct.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn reflection_equivariance_is_exact_in_structure() {
        let op = small_op();
        let g = &op.grid;
        let f = g.eval(|x| (x[0] - x[1] + 0.5 * x[2]).cos());
        let a = g.reflect(&op.apply_lin(&f).unwrap());
        let b = op.apply_lin(&g.reflect(&f)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-11 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn mismatched_length_is_rejected() {
        let op = small_op();
        assert!(op.apply_lin(&[1.0; 3]).is_err());
    }
}
