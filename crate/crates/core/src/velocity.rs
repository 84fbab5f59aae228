//! Velocity-space grid: Gauss–Hermite nodes along the axis, Gauss–Laguerre
//! nodes in `t = r^2/2` across it, and a uniform ring of angles.
//!
//! A full node is `(axial, r cos θ, r sin θ)`. With an even number of
//! angles the reflection `(ξ2, ξ3) -> (-ξ2, -ξ3)` is the shift `θ -> θ + π`,
//! an exact index permutation. The pair (axial, r) indexes a *plane node*;
//! functions that do not depend on the angle live on the plane grid, which
//! is what the half-space solvers use.

use crate::quadrature::{gauss_hermite, gauss_laguerre};
use crate::Tolerances;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("node counts must be positive (axial {axial}, radial {radial}, angle {angle})")]
    NonPositiveCount {
        axial: usize,
        radial: usize,
        angle: usize,
    },
    #[error("angle count {0} must be even and at least 4")]
    BadAngleCount(usize),
    #[error("cutoff {0} must be positive")]
    BadCutoff(f64),
    #[error("cutoff {cutoff} truncates the grid: <|xi|^2> = {second_moment} deviates from 3 by {deviation:e}")]
    Truncation {
        cutoff: f64,
        second_moment: f64,
        deviation: f64,
    },
    #[error("grid mismatch: expected {expected} values, got {got}")]
    Mismatch { expected: usize, got: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Node counts and truncation radius.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_axial: usize,
    pub n_radial: usize,
    pub n_angle: usize,
    pub xi_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_axial: 16,
            n_radial: 12,
            n_angle: 8,
            xi_max: 8.0,
        }
    }
}

impl GridSpec {
    pub fn new(n_axial: usize, n_radial: usize, n_angle: usize, xi_max: f64) -> Self {
        GridSpec {
            n_axial,
            n_radial,
            n_angle,
            xi_max,
        }
    }

    /// Same grid with every node count scaled by `factor` (angles kept even).
    pub fn refined(&self, factor: f64) -> Self {
        let scale = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        let mut n_angle = scale(self.n_angle);
        n_angle += n_angle % 2;
        GridSpec {
            n_axial: scale(self.n_axial),
            n_radial: scale(self.n_radial),
            n_angle,
            xi_max: self.xi_max,
        }
    }

    /// Stable hex digest identifying the grid (used to key operator caches).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(
            format!(
                "grid:{}:{}:{}:{:.17e}",
                self.n_axial, self.n_radial, self.n_angle, self.xi_max
            )
            .as_bytes(),
        );
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Maxwellian `M(ξ) = (2π)^{-3/2} exp(-|ξ|^2/2)`.
pub fn maxwellian(speed_sq: f64) -> f64 {
    (2.0 * PI).powf(-1.5) * (-0.5 * speed_sq).exp()
}

/// Angle-independent grid in the (axial, radial) half plane.
#[derive(Clone, Debug)]
pub struct PlaneGrid {
    /// axial velocity ξ1 per node
    pub axial: Vec<f64>,
    /// radial speed |(ξ2, ξ3)| per node
    pub radial: Vec<f64>,
    /// Gaussian weight: the node's share of `∫ · M dξ` after angle integration
    pub weight: Vec<f64>,
    pub maxwellian: Vec<f64>,
    pub axial_index: Vec<usize>,
    pub radial_index: Vec<usize>,
    /// one-dimensional rule nodes (axial values and t = r^2/2 values)
    pub axial_rule: Vec<f64>,
    pub radial_rule: Vec<f64>,
    /// plane node id for each (axial, radial) rule pair kept by the cutoff
    pub lookup: Vec<Vec<Option<usize>>>,
}

impl PlaneGrid {
    pub fn len(&self) -> usize {
        self.axial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axial.is_empty()
    }

    pub fn speed_sq(&self, a: usize) -> f64 {
        self.axial[a] * self.axial[a] + self.radial[a] * self.radial[a]
    }

    pub fn speed(&self, a: usize) -> f64 {
        self.speed_sq(a).sqrt()
    }

    /// `Σ ω f g`, the Gaussian-weighted inner product.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        self.weight
            .iter()
            .zip(f)
            .zip(g)
            .map(|((w, a), b)| w * a * b)
            .sum()
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        self.weight.iter().zip(f).map(|(w, a)| w * a).sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    pub fn eval(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|a| f(self.axial[a], self.radial[a]))
            .collect()
    }

    /// `(1+|ξ|)^s √M |f|` maximized over nodes.
    pub fn weighted_sup(&self, f: &[f64], s: f64) -> f64 {
        (0..self.len())
            .map(|a| (1.0 + self.speed(a)).powf(s) * self.maxwellian[a].sqrt() * f[a].abs())
            .fold(0.0, f64::max)
    }

    /// Lebesgue measure of the (axial, radial) cell per unit angle: `ω / (2π M)`.
    pub fn area_weight(&self, a: usize) -> f64 {
        self.weight[a] / (2.0 * PI * self.maxwellian[a])
    }
}

/// Full three-dimensional grid.
#[derive(Clone, Debug)]
pub struct VelocityGrid {
    pub spec: GridSpec,
    pub plane: PlaneGrid,
    pub angles: Vec<f64>,
    pub nodes: Vec<[f64; 3]>,
    /// Lebesgue quadrature weights w_i
    pub weights: Vec<f64>,
    pub maxwellian: Vec<f64>,
    /// index of the node at (ξ1, -ξ2, -ξ3)
    pub symmetry_map: Vec<usize>,
    pub cutoff: f64,
}

/// Moments of M reproduced by the grid.
#[derive(Clone, Debug, Serialize)]
pub struct MomentTable {
    pub mass: f64,
    pub first: [f64; 3],
    pub second: [[f64; 3]; 3],
    pub energy: f64,
    pub fourth: f64,
}

impl MomentTable {
    /// Largest deviation from the Gaussian values {1, 0, δ_jk, 3, 15}.
    pub fn max_deviation(&self) -> f64 {
        let mut dev = (self.mass - 1.0).abs();
        for j in 0..3 {
            dev = dev.max(self.first[j].abs());
            for k in 0..3 {
                let exact = if j == k { 1.0 } else { 0.0 };
                dev = dev.max((self.second[j][k] - exact).abs());
            }
        }
        dev.max((self.energy - 3.0).abs())
            .max((self.fourth - 15.0).abs())
    }
}

impl VelocityGrid {
    pub fn build(spec: &GridSpec, tol: &Tolerances) -> Result<Self, GridError> {
        if spec.n_axial == 0 || spec.n_radial == 0 || spec.n_angle == 0 {
            return Err(GridError::NonPositiveCount {
                axial: spec.n_axial,
                radial: spec.n_radial,
                angle: spec.n_angle,
            });
        }
        if spec.n_angle < 4 || spec.n_angle % 2 == 1 {
            return Err(GridError::BadAngleCount(spec.n_angle));
        }
        if !(spec.xi_max > 0.0) {
            return Err(GridError::BadCutoff(spec.xi_max));
        }
        let hermite = gauss_hermite(spec.n_axial);
        let laguerre = gauss_laguerre(spec.n_radial);

        let mut plane = PlaneGrid {
            axial: Vec::new(),
            radial: Vec::new(),
            weight: Vec::new(),
            maxwellian: Vec::new(),
            axial_index: Vec::new(),
            radial_index: Vec::new(),
            axial_rule: hermite.nodes.clone(),
            radial_rule: laguerre.nodes.clone(),
            lookup: vec![vec![None; spec.n_radial]; spec.n_axial],
        };
        for i in 0..spec.n_axial {
            for j in 0..spec.n_radial {
                let x1 = hermite.nodes[i];
                let r = (2.0 * laguerre.nodes[j]).sqrt();
                let s2 = x1 * x1 + r * r;
                if s2 > spec.xi_max * spec.xi_max {
                    continue;
                }
                plane.lookup[i][j] = Some(plane.axial.len());
                plane.axial.push(x1);
                plane.radial.push(r);
                plane.weight.push(hermite.weights[i] * laguerre.weights[j]);
                plane.maxwellian.push(maxwellian(s2));
                plane.axial_index.push(i);
                plane.radial_index.push(j);
            }
        }

        let n_angle = spec.n_angle;
        let angles: Vec<f64> = (0..n_angle)
            .map(|p| 2.0 * PI * p as f64 / n_angle as f64)
            .collect();
        let mut nodes = Vec::with_capacity(plane.len() * n_angle);
        let mut weights = Vec::with_capacity(nodes.capacity());
        let mut maxw = Vec::with_capacity(nodes.capacity());
        let mut symmetry_map = Vec::with_capacity(nodes.capacity());
        for a in 0..plane.len() {
            for (p, &theta) in angles.iter().enumerate() {
                let (s, c) = theta.sin_cos();
                nodes.push([plane.axial[a], plane.radial[a] * c, plane.radial[a] * s]);
                weights.push(plane.weight[a] / (n_angle as f64 * plane.maxwellian[a]));
                maxw.push(plane.maxwellian[a]);
                symmetry_map.push(a * n_angle + (p + n_angle / 2) % n_angle);
            }
        }
        let grid = VelocityGrid {
            spec: spec.clone(),
            plane,
            angles,
            nodes,
            weights,
            maxwellian: maxw,
            symmetry_map,
            cutoff: spec.xi_max,
        };
        let energy = grid.moments().energy;
        if (energy - 3.0).abs() > 10.0 * tol.tol_quad {
            return Err(GridError::Truncation {
                cutoff: spec.xi_max,
                second_moment: energy,
                deviation: (energy - 3.0).abs(),
            });
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_angle(&self) -> usize {
        self.spec.n_angle
    }

    /// Full node index of plane node `a` at angle index `p`.
    pub fn index(&self, a: usize, p: usize) -> usize {
        a * self.n_angle() + p
    }

    /// Gaussian weight `w_i M_i` of a full node.
    pub fn gauss_weight(&self, i: usize) -> f64 {
        self.weights[i] * self.maxwellian[i]
    }

    pub fn check_len(&self, f: &[f64]) -> Result<(), GridError> {
        if f.len() != self.len() {
            return Err(GridError::Mismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// `⟨f g⟩ = Σ w_i M_i f_i g_i`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> Result<f64, GridError> {
        self.check_len(f)?;
        self.check_len(g)?;
        Ok(self.inner_unchecked(f, g))
    }

    pub fn inner_unchecked(&self, f: &[f64], g: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| self.weights[i] * self.maxwellian[i] * f[i] * g[i])
            .sum()
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.gauss_weight(i) * f[i]).sum()
    }

    /// `f ∘ R` by index permutation.
    pub fn reflect(&self, f: &[f64]) -> Vec<f64> {
        self.symmetry_map.iter().map(|&j| f[j]).collect()
    }

    /// Projection onto the reflection-even subspace.
    pub fn even_part(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(self.symmetry_map.iter())
            .map(|(&a, &j)| 0.5 * (a + f[j]))
            .collect()
    }

    pub fn eval(&self, f: impl Fn(&[f64; 3]) -> f64) -> Vec<f64> {
        self.nodes.iter().map(f).collect()
    }

    /// Extends an angle-independent plane function to the full grid.
    pub fn lift(&self, f: &[f64]) -> Vec<f64> {
        let n_angle = self.n_angle();
        let mut out = Vec::with_capacity(self.len());
        for &v in f {
            out.extend(std::iter::repeat_n(v, n_angle));
        }
        out
    }

    /// Angle average of a full grid function (the plane component of sector 0).
    pub fn angle_average(&self, f: &[f64]) -> Vec<f64> {
        let n_angle = self.n_angle();
        f.chunks(n_angle)
            .map(|c| c.iter().sum::<f64>() / n_angle as f64)
            .collect()
    }

    pub fn moments(&self) -> MomentTable {
        let mut t = MomentTable {
            mass: 0.0,
            first: [0.0; 3],
            second: [[0.0; 3]; 3],
            energy: 0.0,
            fourth: 0.0,
        };
        for (i, xi) in self.nodes.iter().enumerate() {
            let w = self.gauss_weight(i);
            let s2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            t.mass += w;
            for j in 0..3 {
                t.first[j] += w * xi[j];
                for k in 0..3 {
                    t.second[j][k] += w * xi[j] * xi[k];
                }
            }
            t.energy += w * s2;
            t.fourth += w * s2 * s2;
        }
        t
    }

    /// Writes `node, xi1, xi2, xi3, weight, maxwellian` rows.
    pub fn dump_csv(&self, path: &Path) -> Result<(), GridError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node", "xi1", "xi2", "xi3", "weight", "maxwellian"])?;
        for (i, xi) in self.nodes.iter().enumerate() {
            w.write_record(&[
                i.to_string(),
                format!("{:.17e}", xi[0]),
                format!("{:.17e}", xi[1]),
                format!("{:.17e}", xi[2]),
                format!("{:.17e}", self.weights[i]),
                format!("{:.17e}", self.maxwellian[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n1: usize, nr: usize, na: usize, cut: f64) -> VelocityGrid {
        VelocityGrid::build(&GridSpec::new(n1, nr, na, cut), &Tolerances::default()).unwrap()
    }

    #[test]
    fn default_grid_moments() {
        let g = grid(16, 12, 8, 8.0);
        let m = g.moments();
        assert!((m.mass - 1.0).abs() < 1e-8);
        assert!(m.max_deviation() < 1e-7, "{m:?}");
        assert!(m.first[0].abs() < 1e-15);
    }

    #[test]
    fn fourth_moment_on_refined_grid() {
        let g = grid(24, 16, 8, 8.0);
        assert!((g.moments().fourth - 15.0).abs() < 1e-7);
        // ⟨|ξ|^4⟩ = 15 for the standard normal
        let untruncated = grid(24, 16, 8, 100.0);
        assert!((untruncated.moments().fourth - 15.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let tol = Tolerances::default();
        assert!(matches!(
            VelocityGrid::build(&GridSpec::new(0, 4, 4, 8.0), &tol),
            Err(GridError::NonPositiveCount { .. })
        ));
        assert!(matches!(
            VelocityGrid::build(&GridSpec::new(4, 4, 5, 8.0), &tol),
            Err(GridError::BadAngleCount(5))
        ));
        assert!(matches!(
            VelocityGrid::build(&GridSpec::new(16, 12, 8, 2.0), &tol),
            Err(GridError::Truncation { .. })
        ));
        // a cutoff of 6 thermal speeds already fails the truncation check
        assert!(VelocityGrid::build(&GridSpec::new(16, 12, 8, 6.0), &tol).is_err());
    }

    #[test]
    fn reflection_flips_transverse_components() {
        let g = grid(6, 4, 6, 100.0);
        let xi2 = g.eval(|x| x[1]);
        let r = g.reflect(&xi2);
        for (a, b) in r.iter().zip(&xi2) {
            assert!((a + b).abs() < 1e-14);
        }
        for (i, &j) in g.symmetry_map.iter().enumerate() {
            assert_eq!(g.symmetry_map[j], i);
            assert_eq!(g.nodes[i][0], g.nodes[j][0]);
        }
    }

    #[test]
    fn inner_rejects_mismatch() {
        let g = grid(4, 4, 4, 100.0);
        assert!(g.inner(&[1.0; 3], &[1.0; 3]).is_err());
        let one = vec![1.0; g.len()];
        assert!((g.inner(&one, &one).unwrap() - 1.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn reflection_preserves_inner(seed in 0u64..1000) {
            let g = grid(6, 4, 6, 100.0);
            let f: Vec<f64> = (0..g.len()).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 50.0 - 1.0).collect();
            let h: Vec<f64> = (0..g.len()).map(|i| ((i as u64 * 104729 + 3 * seed) % 89) as f64 / 40.0 - 1.0).collect();
            let a = g.inner_unchecked(&f, &h);
            let b = g.inner_unchecked(&g.reflect(&f), &g.reflect(&h));
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
            let rr = g.reflect(&g.reflect(&f));
            prop_assert_eq!(rr, f.clone());
            let e = g.even_part(&f);
            prop_assert_eq!(g.even_part(&e), e.clone());
            prop_assert_eq!(g.reflect(&e), e);
        }
    }
}
