//! Symmetric bilinear collision operator `Q(f, g)`.
//!
//! Gain: `∫ dξ* M* |V|/2 ∫_{S²} f(ξ') g(ξ'*) dσ` with `ξ', ξ'* = (ξ+ξ*)/2 ± |V|σ/2`,
//! evaluated by Gauss–Hermite in `ξ*`, a product rule on the sphere and
//! local interpolation at the post-collision velocities. Loss:
//! `½(f K3 g + g K3 f)` with the same `K3` as the linear operator.
//!
//! The raw quadrature `Q̂` is then corrected so that the invariants are
//! conserved exactly and `-2 Q(1, f) = L f` holds with the corrected `L`:
//! `Q(f,g) = (I-P) Q̂(f,g) + ℓf D g + ℓg D f - ℓf ℓg D1`, where `ℓ` is the
//! mean and `D = -½ L - (I-P) Q̂(1, ·)`.

use super::interp::{PlaneInterpolator, Stencil};
use super::{CollisionError, CollisionOperator, OperatorCache};
use crate::linalg::{matvec, weighted_projector};
use crate::quadrature::{gauss_hermite, gauss_legendre};
use crate::velocity::VelocityGrid;
use nalgebra::{DMatrix, DMatrixView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Quadrature sizes for the collision integral.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Gauss–Hermite points per axis for `ξ*`
    pub n_star: usize,
    /// Gauss–Legendre points in the polar cosine (even)
    pub n_polar: usize,
    /// uniform azimuths (even)
    pub n_azim: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            n_star: 8,
            n_polar: 6,
            n_azim: 12,
        }
    }
}

impl QuadratureSpec {
    pub fn key(&self) -> String {
        format!("q:{}:{}:{}", self.n_star, self.n_polar, self.n_azim)
    }
}

fn star_rule(n: usize) -> Vec<([f64; 3], f64)> {
    let h = gauss_hermite(n);
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push((
                    [h.nodes[i], h.nodes[j], h.nodes[k]],
                    h.weights[i] * h.weights[j] * h.weights[k],
                ));
            }
        }
    }
    out
}

/// Half of an antipodally symmetric sphere rule (weights doubled, total 4π).
fn half_sphere_rule(n_polar: usize, n_azim: usize) -> Vec<([f64; 3], f64)> {
    let gl = gauss_legendre(n_polar.max(2) + n_polar % 2);
    let n_azim = n_azim.max(2) + n_azim % 2;
    let mut out = Vec::new();
    for (c, wc) in gl.nodes.iter().zip(&gl.weights) {
        if *c <= 0.0 {
            continue;
        }
        let s = (1.0 - c * c).sqrt();
        for k in 0..n_azim {
            let az = 2.0 * PI * k as f64 / n_azim as f64;
            out.push((
                [*c, s * az.cos(), s * az.sin()],
                2.0 * wc * 2.0 * PI / n_azim as f64,
            ));
        }
    }
    out
}

/// Post-collision pair for one quadrature sample.
#[derive(Clone, Copy, Debug)]
struct Collision {
    weight: f64,
    post: [f64; 3],
    post_star: [f64; 3],
}

fn collisions(xi: [f64; 3], spec: &QuadratureSpec, halve_transverse: bool) -> Vec<Collision> {
    let stars = star_rule(spec.n_star);
    let sphere = half_sphere_rule(spec.n_polar, spec.n_azim);
    let mut out = Vec::new();
    for (xs, ws) in &stars {
        let mut ws = *ws;
        if halve_transverse {
            if xs[2] < 0.0 {
                continue;
            }
            if xs[2] > 0.0 {
                ws *= 2.0;
            }
        }
        let v = [xi[0] - xs[0], xi[1] - xs[1], xi[2] - xs[2]];
        let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let c = [
            0.5 * (xi[0] + xs[0]),
            0.5 * (xi[1] + xs[1]),
            0.5 * (xi[2] + xs[2]),
        ];
        for (sig, wsig) in &sphere {
            let h = 0.5 * vn;
            out.push(Collision {
                weight: ws * wsig * h,
                post: [c[0] + h * sig[0], c[1] + h * sig[1], c[2] + h * sig[2]],
                post_star: [c[0] - h * sig[0], c[1] - h * sig[1], c[2] - h * sig[2]],
            });
        }
    }
    out
}

fn axial_t(v: &[f64; 3]) -> (f64, f64) {
    (v[0], 0.5 * (v[1] * v[1] + v[2] * v[2]))
}

/// `Q` restricted to angle-independent functions (plane grid), as a dense tensor.
#[derive(Clone, Debug)]
pub struct BilinearQ {
    pub spec: QuadratureSpec,
    n: usize,
    /// symmetric gain tensor, `tensor[a][i][j]`
    tensor: Vec<f64>,
    absorption: DMatrix<f64>,
    projector: DMatrix<f64>,
    weight: Vec<f64>,
    d_matrix: DMatrix<f64>,
    d_one: Vec<f64>,
    /// relative Frobenius size of `-2 Q̂(1,·) - L` before the correction
    pub raw_consistency_defect: f64,
}

impl BilinearQ {
    pub fn build(op: &CollisionOperator, spec: &QuadratureSpec) -> Self {
        let tensor = Self::gain_tensor(&op.grid, spec);
        Self::from_tensor(op, spec, tensor)
    }

    pub fn build_cached(
        op: &CollisionOperator,
        spec: &QuadratureSpec,
        cache: Option<&OperatorCache>,
    ) -> Result<Self, CollisionError> {
        if let Some(cache) = cache {
            let key = super::cache::tensor_key(&op.grid, spec);
            let n = op.grid.plane.len();
            if let Some(t) = super::cache::load_tensor(cache, &key, n)? {
                return Ok(Self::from_tensor(op, spec, t));
            }
            let q = Self::build(op, spec);
            super::cache::store_tensor(cache, &key, &q.tensor)?;
            return Ok(q);
        }
        Ok(Self::build(op, spec))
    }

    pub fn tensor(&self) -> &[f64] {
        &self.tensor
    }

    fn gain_tensor(grid: &VelocityGrid, spec: &QuadratureSpec) -> Vec<f64> {
        let plane = &grid.plane;
        let n = plane.len();
        let interp = PlaneInterpolator::new(plane);
        let blocks: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|a| {
                let xi = [plane.axial[a], plane.radial[a], 0.0];
                let mut t = vec![0.0; n * n];
                for c in collisions(xi, spec, true) {
                    let (x1, t1) = axial_t(&c.post);
                    let (x2, t2) = axial_t(&c.post_star);
                    let s1 = interp.stencil(x1, t1);
                    let s2 = interp.stencil(x2, t2);
                    for k in 0..s1.len {
                        let wk = c.weight * s1.weights[k];
                        let row = s1.nodes[k] * n;
                        for l in 0..s2.len {
                            t[row + s2.nodes[l]] += wk * s2.weights[l];
                        }
                    }
                }
                for i in 0..n {
                    for j in i + 1..n {
                        let s = 0.5 * (t[i * n + j] + t[j * n + i]);
                        t[i * n + j] = s;
                        t[j * n + i] = s;
                    }
                }
                t
            })
            .collect();
        blocks.concat()
    }

    fn from_tensor(op: &CollisionOperator, spec: &QuadratureSpec, tensor: Vec<f64>) -> Self {
        let plane = &op.grid.plane;
        let n = plane.len();
        let sector = &op.sectors[0];
        let absorption = sector.absorption.clone();
        let absorption_one = matvec(&absorption, &vec![1.0; n]);
        let projector = weighted_projector(&sector.invariants, &plane.weight);
        // Q̂(1, ·) as a matrix
        let mut hat_one = DMatrix::<f64>::zeros(n, n);
        for a in 0..n {
            let block = &tensor[a * n * n..(a + 1) * n * n];
            for i in 0..n {
                for j in 0..n {
                    hat_one[(a, j)] += block[i * n + j];
                }
            }
            for j in 0..n {
                hat_one[(a, j)] -= 0.5 * absorption[(a, j)];
            }
            hat_one[(a, a)] -= 0.5 * absorption_one[a];
        }
        let raw_lin = sector.raw_lin(&op.nu_plane);
        let defect = &hat_one * -2.0 - &raw_lin;
        let scale = |m: &DMatrix<f64>| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += plane.weight[i] / plane.weight[j] * m[(i, j)] * m[(i, j)];
                }
            }
            s.sqrt()
        };
        let raw_consistency_defect = scale(&defect) / scale(&raw_lin);
        let q = DMatrix::<f64>::identity(n, n) - &projector;
        let d_matrix = &sector.lin * -0.5 - &q * &hat_one;
        let d_one = matvec(&d_matrix, &vec![1.0; n]);
        BilinearQ {
            spec: spec.clone(),
            n,
            tensor,
            absorption,
            projector,
            weight: plane.weight.clone(),
            d_matrix,
            d_one,
            raw_consistency_defect,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn mean(&self, f: &[f64]) -> f64 {
        self.weight.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Uncorrected quadrature `Q̂(f, g)`.
    pub fn apply_raw(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let n = self.n;
        let k3f = matvec(&self.absorption, f);
        let k3g = matvec(&self.absorption, g);
        (0..n)
            .map(|a| {
                let block = &self.tensor[a * n * n..(a + 1) * n * n];
                let mut gain = 0.0;
                for i in 0..n {
                    if f[i] == 0.0 {
                        continue;
                    }
                    let row = &block[i * n..(i + 1) * n];
                    gain += f[i] * row.iter().zip(g).map(|(t, v)| t * v).sum::<f64>();
                }
                gain - 0.5 * (f[a] * k3g[a] + g[a] * k3f[a])
            })
            .collect()
    }

    /// Corrected `Q(f, g)`.
    pub fn apply(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let raw = self.apply_raw(f, g);
        self.finish(&raw, f, g)
    }

    fn finish(&self, raw: &[f64], f: &[f64], g: &[f64]) -> Vec<f64> {
        let p_raw = matvec(&self.projector, raw);
        let lf = self.mean(f);
        let lg = self.mean(g);
        let df = matvec(&self.d_matrix, f);
        let dg = matvec(&self.d_matrix, g);
        (0..self.n)
            .map(|a| raw[a] - p_raw[a] + lf * dg[a] + lg * df[a] - lf * lg * self.d_one[a])
            .collect()
    }

    /// `Q(f_k, f_k)` for every slice `f_k`.
    pub fn apply_diagonal_batch(&self, fs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n;
        let nx = fs.len();
        if nx == 0 {
            return Vec::new();
        }
        let fmat = DMatrix::from_fn(n, nx, |i, x| fs[x][i]);
        let k3f = &self.absorption * &fmat;
        let mut raw = DMatrix::<f64>::zeros(n, nx);
        let mut y = DMatrix::<f64>::zeros(n, nx);
        for a in 0..n {
            // each block is symmetric, so row-major storage is its own transpose
            let t = DMatrixView::from_slice(&self.tensor[a * n * n..(a + 1) * n * n], n, n);
            t.mul_to(&fmat, &mut y);
            for x in 0..nx {
                let gain = fmat.column(x).dot(&y.column(x));
                raw[(a, x)] = gain - fmat[(a, x)] * k3f[(a, x)];
            }
        }
        let p_raw = &self.projector * &raw;
        let dmat = &self.d_matrix * &fmat;
        (0..nx)
            .map(|x| {
                let l = self.mean(&fs[x]);
                (0..n)
                    .map(|a| {
                        raw[(a, x)] - p_raw[(a, x)] + 2.0 * l * dmat[(a, x)] - l * l * self.d_one[a]
                    })
                    .collect()
            })
            .collect()
    }

    /// Largest sampled `‖(1+|ξ|)^{s-1}√M Q(f,g)‖∞ / (‖(1+|ξ|)^s√M f‖∞ ‖(1+|ξ|)^s√M g‖∞)`.
    pub fn grad_bound_probe(&self, grid: &VelocityGrid, s: f64, n_probes: usize, seed: u64) -> f64 {
        let plane = &grid.plane;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            plane.eval(|x1, r| {
                let q = r * r;
                c[0] + c[1] * x1 + c[2] * q + c[3] * x1 * x1 + c[4] * x1 * q + c[5] * q * q / 10.0
            })
        };
        let x0: Vec<f64> = plane.eval(|x1, r| (x1 * x1 + r * r - 5.0) / 10f64.sqrt());
        let mut pairs = vec![(x0.clone(), x0)];
        for _ in 0..n_probes {
            let f = probe(&mut rng);
            let g = probe(&mut rng);
            pairs.push((f, g));
        }
        let mut best: f64 = 0.0;
        for (f, g) in &pairs {
            let den = plane.weighted_sup(f, s) * plane.weighted_sup(g, s);
            if den == 0.0 {
                continue;
            }
            let q = self.apply(f, g);
            best = best.max(plane.weighted_sup(&q, s - 1.0) / den);
        }
        best
    }
}

/// `Q` on the full three-dimensional grid, evaluated on the fly
/// (trigonometric interpolation in the angle). Meant for checks.
pub struct FullBilinear<'a> {
    op: &'a CollisionOperator,
    interp: PlaneInterpolator,
    /// collisions for each plane node, computed at angle zero
    samples: Vec<Vec<Collision>>,
    basis: Vec<Vec<f64>>,
    gram_inv: DMatrix<f64>,
}

fn trig_weights(n: usize, theta: f64, out: &mut [f64]) {
    let half = n / 2;
    for (q, o) in out.iter_mut().enumerate() {
        let x = theta - 2.0 * PI * q as f64 / n as f64;
        let mut s = 1.0 + (half as f64 * x).cos();
        for m in 1..half {
            s += 2.0 * (m as f64 * x).cos();
        }
        *o = s / n as f64;
    }
}

impl<'a> FullBilinear<'a> {
    pub fn new(op: &'a CollisionOperator, spec: &QuadratureSpec) -> Self {
        let plane = &op.grid.plane;
        let samples = (0..plane.len())
            .into_par_iter()
            .map(|a| collisions([plane.axial[a], plane.radial[a], 0.0], spec, false))
            .collect();
        let g = &op.grid;
        let basis = vec![
            vec![1.0; g.len()],
            g.eval(|x| x[0]),
            g.eval(|x| x[1]),
            g.eval(|x| x[2]),
            g.eval(|x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]),
        ];
        let gram = DMatrix::from_fn(5, 5, |i, j| g.inner_unchecked(&basis[i], &basis[j]));
        FullBilinear {
            op,
            interp: PlaneInterpolator::new(plane),
            samples,
            basis,
            gram_inv: gram.try_inverse().expect("invariants are independent"),
        }
    }

    fn project_out(&self, f: &[f64]) -> Vec<f64> {
        let g = &self.op.grid;
        let b: Vec<f64> = self.basis.iter().map(|v| g.inner_unchecked(v, f)).collect();
        let mut out = f.to_vec();
        for i in 0..5 {
            let c: f64 = (0..5).map(|j| self.gram_inv[(i, j)] * b[j]).sum();
            for (o, v) in out.iter_mut().zip(&self.basis[i]) {
                *o -= c * v;
            }
        }
        out
    }

    /// Gain terms for each requested pair of functions.
    fn gain(&self, funcs: &[&[f64]], pairs: &[(usize, usize)]) -> Vec<Vec<f64>> {
        let grid = &self.op.grid;
        let n_angle = grid.n_angle();
        let np = grid.plane.len();
        let rows: Vec<Vec<Vec<f64>>> = (0..np)
            .into_par_iter()
            .map(|a| {
                let mut out = vec![vec![0.0; n_angle]; pairs.len()];
                let mut tw1 = vec![0.0; n_angle];
                let mut tw2 = vec![0.0; n_angle];
                let mut v1 = vec![0.0; funcs.len()];
                let mut v2 = vec![0.0; funcs.len()];
                let eval = |st: &Stencil, tw: &[f64], f: &[f64]| -> f64 {
                    let mut s = 0.0;
                    for k in 0..st.len {
                        let base = st.nodes[k] * n_angle;
                        let row = &f[base..base + n_angle];
                        s += st.weights[k] * row.iter().zip(tw).map(|(x, y)| x * y).sum::<f64>();
                    }
                    s
                };
                for c in &self.samples[a] {
                    let (x1, t1) = axial_t(&c.post);
                    let (x2, t2) = axial_t(&c.post_star);
                    let th1 = c.post[2].atan2(c.post[1]);
                    let th2 = c.post_star[2].atan2(c.post_star[1]);
                    let s1 = self.interp.stencil(x1, t1);
                    let s2 = self.interp.stencil(x2, t2);
                    for (p, &theta) in grid.angles.iter().enumerate() {
                        trig_weights(n_angle, th1 + theta, &mut tw1);
                        trig_weights(n_angle, th2 + theta, &mut tw2);
                        for (k, f) in funcs.iter().enumerate() {
                            v1[k] = eval(&s1, &tw1, f);
                            v2[k] = eval(&s2, &tw2, f);
                        }
                        for (o, &(i, j)) in out.iter_mut().zip(pairs) {
                            o[p] += c.weight * 0.5 * (v1[i] * v2[j] + v1[j] * v2[i]);
                        }
                    }
                }
                out
            })
            .collect();
        (0..pairs.len())
            .map(|k| rows.iter().flat_map(|r| r[k].iter().copied()).collect())
            .collect()
    }

    fn loss(&self, f: &[f64], g: &[f64], k3f: &[f64], k3g: &[f64]) -> Vec<f64> {
        (0..f.len())
            .map(|i| 0.5 * (f[i] * k3g[i] + g[i] * k3f[i]))
            .collect()
    }

    /// Corrected `Q(f, g)` on the full grid.
    pub fn apply(&self, f: &[f64], g: &[f64]) -> Result<Vec<f64>, CollisionError> {
        let grid = &self.op.grid;
        grid.check_len(f)?;
        grid.check_len(g)?;
        let one = vec![1.0; grid.len()];
        let funcs: [&[f64]; 3] = [&one, f, g];
        let gains = self.gain(&funcs, &[(1, 2), (0, 1), (0, 2), (0, 0)]);
        let k3f = self.op.apply_absorption(f)?;
        let k3g = self.op.apply_absorption(g)?;
        let k3one = self.op.apply_absorption(&one)?;
        let sub = |gain: &[f64], loss: Vec<f64>| -> Vec<f64> {
            gain.iter().zip(&loss).map(|(a, b)| a - b).collect()
        };
        let hat_fg = sub(&gains[0], self.loss(f, g, &k3f, &k3g));
        let hat_1f = sub(&gains[1], self.loss(&one, f, &k3one, &k3f));
        let hat_1g = sub(&gains[2], self.loss(&one, g, &k3one, &k3g));
        let hat_11 = sub(&gains[3], self.loss(&one, &one, &k3one, &k3one));
        let d = |h: &[f64], x: &[f64]| -> Result<Vec<f64>, CollisionError> {
            let lx = self.op.apply_lin(x)?;
            let ph = self.project_out(h);
            Ok(lx.iter().zip(&ph).map(|(l, p)| -0.5 * l - p).collect())
        };
        let df = d(&hat_1f, f)?;
        let dg = d(&hat_1g, g)?;
        let d1 = d(&hat_11, &one)?;
        let lf = grid.mean(f);
        let lg = grid.mean(g);
        let base = self.project_out(&hat_fg);
        Ok((0..grid.len())
            .map(|i| base[i] + lf * dg[i] + lg * df[i] - lf * lg * d1[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::AssemblySpec;
    use crate::velocity::GridSpec;
    use crate::Tolerances;

    fn setup() -> (CollisionOperator, BilinearQ) {
        let g = VelocityGrid::build(&GridSpec::new(10, 8, 6, 8.0), &Tolerances::default()).unwrap();
        let op = CollisionOperator::assemble(&g, &AssemblySpec { n_phi: 96 }).unwrap();
        let q = BilinearQ::build(
            &op,
            &QuadratureSpec {
                n_star: 6,
                n_polar: 4,
                n_azim: 8,
            },
        );
        (op, q)
    }

    #[test]
    fn sphere_rule_has_full_area() {
        let s: f64 = half_sphere_rule(6, 12).iter().map(|(_, w)| w).sum();
        assert!((s - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn plane_q_is_symmetric_conservative_and_consistent() {
        let (op, q) = setup();
        let plane = &op.grid.plane;
        let f = plane.eval(|x1, r| 0.3 + x1 - 0.1 * r * r + 0.05 * x1 * r * r);
        let g = plane.eval(|x1, r| (0.5 * x1).sin() + 0.2 * r);
        let a = q.apply(&f, &g);
        let b = q.apply(&g, &f);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
        for inv in &op.sectors[0].invariants {
            assert!(plane.inner(inv, &a).abs() < 1e-12);
        }
        let lf = op.apply_lin_plane(&f);
        let one = vec![1.0; plane.len()];
        let q1 = q.apply(&one, &f);
        for (l, v) in lf.iter().zip(&q1) {
            assert!((l + 2.0 * v).abs() < 1e-9 * (1.0 + l.abs()));
        }
        let zero = vec![0.0; plane.len()];
        assert!(q.apply(&zero, &g).iter().all(|v| *v == 0.0));
        assert!(
            q.raw_consistency_defect < 0.25,
            "{}",
            q.raw_consistency_defect
        );
    }

    #[test]
    fn batch_matches_single() {
        let (op, q) = setup();
        let plane = &op.grid.plane;
        let fs: Vec<Vec<f64>> = (0..3)
            .map(|k| plane.eval(|x1, r| (k as f64 + 1.0) * 0.1 * x1 - 0.05 * r * r + k as f64))
            .collect();
        let batch = q.apply_diagonal_batch(&fs);
        for (f, b) in fs.iter().zip(&batch) {
            let single = q.apply(f, f);
            for (x, y) in single.iter().zip(b) {
                assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn full_q_conserves_and_matches_plane_on_axisymmetric_data() {
        let (op, q) = setup();
        let spec = QuadratureSpec {
            n_star: 6,
            n_polar: 4,
            n_azim: 8,
        };
        let full = FullBilinear::new(&op, &spec);
        let grid = &op.grid;
        let fp = grid.plane.eval(|x1, r| 0.2 + 0.4 * x1 - 0.1 * r * r);
        let f = grid.lift(&fp);
        let qf = full.apply(&f, &f).unwrap();
        let qp = grid.lift(&q.apply(&fp, &fp));
        for (a, b) in qf.iter().zip(&qp) {
            assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{a} {b}");
        }
        let h = grid.eval(|x| 0.3 * x[1] + 0.2 * x[0] * x[2] - 0.1 * x[1] * x[1]);
        let qh = full.apply(&h, &h).unwrap();
        for inv in &full.basis {
            assert!(grid.inner_unchecked(inv, &qh).abs() < 1e-11);
        }
        let qr = full.apply(&grid.reflect(&h), &grid.reflect(&h)).unwrap();
        let rq = grid.reflect(&qh);
        for (a, b) in qr.iter().zip(&rq) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }
}
