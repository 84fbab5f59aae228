//! Characteristic sweeps for `μ ∂x g + σ g = S` on a graded x-grid.
//!
//! Along each characteristic the source is replaced by its Lagrange
//! interpolant on a local stencil and the resulting exponential integrals
//! are done exactly, so the scheme is exact for polynomial sources up to
//! the stencil order.

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

/// Settings of the spatial discretization.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct XGridSpec {
    /// first spacing at the wall
    pub h0: f64,
    /// geometric growth of the spacing
    pub ratio: f64,
    /// largest spacing
    pub h_max: f64,
    /// lower bound on the truncation length
    pub min_length: f64,
    /// the truncation is at least this many `1/γ`
    pub decay_lengths: f64,
    /// polynomial degree of the source interpolant
    pub order: usize,
}

impl Default for XGridSpec {
    fn default() -> Self {
        XGridSpec {
            h0: 0.005,
            ratio: 1.05,
            h_max: 0.05,
            min_length: 20.0,
            decay_lengths: 10.0,
            order: 5,
        }
    }
}

impl XGridSpec {
    pub fn length_for(&self, gamma: f64) -> f64 {
        self.min_length.max(self.decay_lengths / gamma)
    }
}

/// Strictly increasing nodes `0 = x_0 < … < x_N = X_max`.
#[derive(Clone, Debug, Serialize)]
pub struct XGrid {
    pub nodes: Vec<f64>,
}

impl XGrid {
    pub fn uniform(h: f64, x_max: f64) -> Self {
        let n = (x_max / h).round().max(1.0) as usize;
        XGrid {
            nodes: (0..=n).map(|j| x_max * j as f64 / n as f64).collect(),
        }
    }

    /// Spacing grows from `h0` by `ratio` up to `h_max`; the last cell is
    /// merged so the grid ends exactly at `x_max`.
    pub fn graded(h0: f64, ratio: f64, h_max: f64, x_max: f64) -> Self {
        let mut nodes = vec![0.0];
        let mut h = h0.min(h_max);
        let mut x = 0.0;
        while x + 1.5 * h < x_max {
            x += h;
            nodes.push(x);
            h = (h * ratio).min(h_max);
        }
        nodes.push(x_max);
        XGrid { nodes }
    }

    pub fn from_spec(spec: &XGridSpec, gamma: f64) -> Self {
        XGrid::graded(spec.h0, spec.ratio, spec.h_max, spec.length_for(gamma))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn x_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Trapezoid weights.
    pub fn trapezoid(&self) -> Vec<f64> {
        let n = self.len();
        let mut w = vec![0.0; n];
        for j in 0..n - 1 {
            let h = self.nodes[j + 1] - self.nodes[j];
            w[j] += 0.5 * h;
            w[j + 1] += 0.5 * h;
        }
        w
    }
}

/// `∫_0^1 e^{-κ(1-v)} v^q dv` for `q = 0..=order`.
pub fn exp_moments(kappa: f64, order: usize) -> Vec<f64> {
    let mut out = vec![0.0; order + 1];
    if kappa < 2.0 {
        // q! Σ_n (-κ)^n / (n+q+1)!
        for (q, o) in out.iter_mut().enumerate() {
            let mut term = 1.0 / (q as f64 + 1.0);
            let mut sum = term;
            for n in 1..60 {
                term *= -kappa / (n as f64 + q as f64 + 1.0);
                sum += term;
                if term.abs() < 1e-18 * sum.abs() {
                    break;
                }
            }
            *o = sum;
        }
    } else {
        out[0] = -(-kappa).exp_m1() / kappa;
        for q in 1..=order {
            out[q] = (1.0 - q as f64 * out[q - 1]) / kappa;
        }
    }
    out
}

/// Stencil of one cell: first node and the LU of the transposed scaled
/// Vandermonde matrix for both sweep directions.
#[derive(Clone, Debug)]
struct Cell {
    h: f64,
    start: usize,
    forward: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    backward: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Precomputed characteristic integrator for fixed `μ` and `σ`.
#[derive(Clone, Debug)]
pub struct Transport {
    pub xgrid: XGrid,
    pub speed: Vec<f64>,
    pub sigma: Vec<f64>,
    pub order: usize,
    /// nodes treated by the stiff limit `g = S / σ`
    pub grazing: Vec<usize>,
    /// `e^{-λ h_j}` per velocity node and cell
    decay: Vec<Vec<f64>>,
    /// quadrature weights per velocity node, cell and stencil node
    weights: Vec<Vec<f64>>,
    starts: Vec<usize>,
}

pub const EPS_CHAR: f64 = 1e-8;

impl Transport {
    pub fn new(xgrid: &XGrid, speed: &[f64], sigma: &[f64], order: usize) -> Self {
        let nx = xgrid.len();
        let order = order.min(nx - 1);
        let k = order + 1;
        let cells: Vec<Cell> = (0..nx - 1)
            .map(|j| {
                let h = xgrid.nodes[j + 1] - xgrid.nodes[j];
                let start =
                    (j as isize - (order as isize - 1) / 2).clamp(0, (nx - k) as isize) as usize;
                let vander = |origin: f64, sign: f64| {
                    DMatrix::from_fn(k, k, |q, i| {
                        (sign * (xgrid.nodes[start + i] - origin) / h).powi(q as i32)
                    })
                    .lu()
                };
                Cell {
                    h,
                    start,
                    forward: vander(xgrid.nodes[j], 1.0),
                    backward: vander(xgrid.nodes[j + 1], -1.0),
                }
            })
            .collect();
        let mut grazing = Vec::new();
        let mut decay = Vec::with_capacity(speed.len());
        let mut weights = Vec::with_capacity(speed.len());
        for (a, (&mu, &sg)) in speed.iter().zip(sigma).enumerate() {
            if mu.abs() < EPS_CHAR {
                grazing.push(a);
                decay.push(Vec::new());
                weights.push(Vec::new());
                continue;
            }
            let lambda = sg / mu.abs();
            let mut d = Vec::with_capacity(nx - 1);
            let mut w = Vec::with_capacity((nx - 1) * k);
            for c in &cells {
                let kappa = lambda * c.h;
                d.push((-kappa).exp());
                let j = DVector::from_vec(exp_moments(kappa, order));
                let lu = if mu > 0.0 { &c.forward } else { &c.backward };
                let sol = lu.solve(&j).expect("stencil nodes are distinct");
                w.extend(sol.iter().map(|v| v * c.h / mu.abs()));
            }
            decay.push(d);
            weights.push(w);
        }
        Transport {
            xgrid: xgrid.clone(),
            speed: speed.to_vec(),
            sigma: sigma.to_vec(),
            order,
            grazing,
            decay,
            weights,
            starts: cells.iter().map(|c| c.start).collect(),
        }
    }

    pub fn n_velocity(&self) -> usize {
        self.speed.len()
    }

    /// Solves along characteristics. `source` has one column per x node;
    /// `inflow` is read where `μ > 0`, `far` (default zero) where `μ < 0`.
    pub fn sweep(
        &self,
        inflow: &[f64],
        far: Option<&[f64]>,
        source: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let nv = self.n_velocity();
        let nx = self.xgrid.len();
        let k = self.order + 1;
        let mut out = DMatrix::zeros(nv, nx);
        for a in 0..nv {
            let mu = self.speed[a];
            if mu.abs() < EPS_CHAR {
                for j in 0..nx {
                    out[(a, j)] = source[(a, j)] / self.sigma[a];
                }
                continue;
            }
            let d = &self.decay[a];
            let w = &self.weights[a];
            let integral = |j: usize| -> f64 {
                let s = self.starts[j];
                (0..k).map(|i| w[j * k + i] * source[(a, s + i)]).sum()
            };
            if mu > 0.0 {
                let mut g = inflow[a];
                out[(a, 0)] = g;
                for j in 0..nx - 1 {
                    g = d[j] * g + integral(j);
                    out[(a, j + 1)] = g;
                }
            } else {
                let mut g = far.map_or(0.0, |f| f[a]);
                out[(a, nx - 1)] = g;
                for j in (0..nx - 1).rev() {
                    g = d[j] * g + integral(j);
                    out[(a, j)] = g;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_agree_across_branches() {
        for order in [0, 3, 5] {
            let a = exp_moments(1.999999, order);
            let b = exp_moments(2.000001, order);
            for q in 0..=order {
                assert!((a[q] - b[q]).abs() < 1e-6 * a[q].abs());
            }
        }
        // κ = 0 gives 1/(q+1)
        let m = exp_moments(0.0, 4);
        for (q, v) in m.iter().enumerate() {
            assert!((v - 1.0 / (q as f64 + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn graded_grid_is_increasing() {
        let g = XGrid::graded(0.005, 1.05, 0.05, 20.0);
        assert_eq!(g.nodes[0], 0.0);
        assert!((g.x_max() - 20.0).abs() < 1e-12);
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
        let total: f64 = g.trapezoid().iter().sum();
        assert!((total - 20.0).abs() < 1e-12);
    }

    #[test]
    fn pure_decay_matches_closed_form() {
        let xg = XGrid::graded(0.005, 1.05, 0.05, 10.0);
        let speed = [0.7, -0.4, 2.0];
        let sigma = [1.3, 0.9, 2.5];
        let tr = Transport::new(&xg, &speed, &sigma, 5);
        let zero = DMatrix::zeros(3, xg.len());
        let g = tr.sweep(&[1.0, 0.0, 0.5], None, &zero);
        for (j, &x) in xg.nodes.iter().enumerate() {
            assert!((g[(0, j)] - (-sigma[0] / speed[0] * x).exp()).abs() < 1e-10);
            assert!((g[(2, j)] - 0.5 * (-sigma[2] / speed[2] * x).exp()).abs() < 1e-10);
            assert_eq!(g[(1, j)], 0.0);
        }
    }

    #[test]
    fn polynomial_sources_are_exact() {
        let xg = XGrid::graded(0.01, 1.1, 0.2, 5.0);
        let speed = [0.5, -0.8];
        let sigma = [2.0, 1.5];
        // cubic g gives a cubic source μ g' + σ g
        let gfun = |x: f64| 1.0 + 0.5 * x - 0.2 * x * x + 0.03 * x * x * x;
        let dg = |x: f64| 0.5 - 0.4 * x + 0.09 * x * x;
        let src = DMatrix::from_fn(2, xg.len(), |a, j| {
            let x = xg.nodes[j];
            speed[a] * dg(x) + sigma[a] * gfun(x)
        });
        let tr = Transport::new(&xg, &speed, &sigma, 3);
        let far = [0.0, gfun(5.0)];
        let g = tr.sweep(&[gfun(0.0), 0.0], Some(&far), &src);
        for (j, &x) in xg.nodes.iter().enumerate() {
            for a in 0..2 {
                assert!((g[(a, j)] - gfun(x)).abs() < 1e-11, "{a} {x} {}", g[(a, j)]);
            }
        }
    }

    #[test]
    fn green_kernel_mass() {
        // constant source: the forward solution tends to S / σ
        let xg = XGrid::graded(0.005, 1.05, 0.05, 40.0);
        let speed = [0.3, -0.3];
        let sigma = [1.1, 1.1];
        let src = DMatrix::from_element(2, xg.len(), 1.0);
        let tr = Transport::new(&xg, &speed, &sigma, 5);
        let g = tr.sweep(&[0.0, 0.0], None, &src);
        let mid = xg.len() / 2;
        assert!((g[(0, mid)] - 1.0 / 1.1).abs() < 1e-12);
        assert!((g[(1, mid)] - 1.0 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn sweep_obeys_the_young_bound() {
        let xg = XGrid::graded(0.005, 1.05, 0.05, 15.0);
        let speed = [0.9, -0.6, 1e-12, 2.5];
        let sigma = [1.4, 0.8, 1.0, 3.0];
        let inflow = [0.3, 0.0, 0.0, -0.7];
        let src = DMatrix::from_fn(4, xg.len(), |a, j| {
            ((a as f64 + 1.0) * xg.nodes[j]).sin() * (1.0 + 0.1 * a as f64)
        });
        let tr = Transport::new(&xg, &speed, &sigma, 5);
        let g = tr.sweep(&inflow, None, &src);
        for a in 0..4 {
            let s_max = src.row(a).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let bound = s_max / sigma[a] + inflow[a].abs();
            let g_max = g.row(a).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(g_max <= bound * (1.0 + 1e-9), "{a}: {g_max} > {bound}");
        }
        // grazing node follows the stiff limit
        for j in 0..xg.len() {
            assert!((g[(2, j)] - src[(2, j)] / sigma[2]).abs() < 1e-14);
        }
    }
}
