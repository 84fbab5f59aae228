//! Penalized half-space problems on `x > 0`: linear solves, the nonlinear
//! fixed point, removal of the penalization and decay diagnostics.
//!
//! Fields are `n_v × n_x` matrices on the angle-independent plane, one
//! column per x node. Angle-independent data stay angle-independent under
//! every operator involved, so reflection symmetry holds by construction.

mod bounds;
mod transport;

pub use bounds::{bound_constants, dimension_integral, BoundConstants};
pub use transport::{exp_moments, Transport, XGrid, XGridSpec, EPS_CHAR};

use crate::collision::{BilinearQ, CollisionOperator};
use crate::linalg::gmres;
use crate::penalty::PenalizedOperator;
use crate::spectral::KernelBasis;
use crate::velocity::PlaneGrid;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HalfspaceError {
    #[error("linear solve did not converge: {iterations} iterations, residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("Picard iteration diverges: the step grew {window} times in a row (last {step:e})")]
    Divergence { window: usize, step: f64 },
    #[error("Picard iteration stopped after {iterations} iterations at step {step:e}")]
    NoFixedPoint { iterations: usize, step: f64 },
    #[error("tail of the slow-mode integral {0:e} exceeds the fixed-point tolerance")]
    Tail(f64),
    #[error("profile underflows on the fitting window")]
    Underflow,
    #[error("boundary data has length {found}, expected {expected}")]
    Length { found: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum LinearMethod {
    Gmres,
    SourceIteration,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearOptions {
    pub method: LinearMethod,
    pub rtol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions {
            method: LinearMethod::Gmres,
            rtol: 1e-10,
            restart: 60,
            max_iter: 3000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearReport {
    pub method: LinearMethod,
    pub iterations: usize,
    /// relative residual (GMRES) or last `ℋ` step (source iteration)
    pub residual: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearOptions {
    pub max_iter: usize,
    pub tol_fix: f64,
    /// consecutive step increases treated as divergence
    pub divergence_window: usize,
    pub linear: LinearOptions,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        NonlinearOptions {
            max_iter: 100,
            tol_fix: 1e-8,
            divergence_window: 5,
            linear: LinearOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NonlinearReport {
    pub iterations: usize,
    /// `𝒳` norm of each Picard step
    pub steps: Vec<f64>,
    /// ratios of consecutive steps
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub linear_iterations: Vec<usize>,
    /// tail added to the slow-mode integral at `X_max` (last iterate)
    pub tail: f64,
    /// `‖(1+|ξ|)³ √M f_b‖∞`
    pub data_norm: f64,
}

#[derive(Clone, Debug)]
pub struct NonlinearSolution {
    pub g: DMatrix<f64>,
    pub h: Vec<f64>,
    pub report: NonlinearReport,
}

/// `‖(1+|ξ|)³ √M g‖∞` over a field.
pub fn weighted_sup_field(p: &PlaneGrid, g: &DMatrix<f64>) -> f64 {
    sup_profile(p, g).into_iter().fold(0.0, f64::max)
}

/// `x ↦ sup_ξ (1+|ξ|)³ √M |f(x, ξ)|`.
pub fn sup_profile(p: &PlaneGrid, f: &DMatrix<f64>) -> Vec<f64> {
    f.column_iter()
        .map(|c| p.weighted_sup(c.as_slice(), 3.0))
        .collect()
}

/// `‖(g, h)‖_𝒳 = ‖(1+|ξ|)³ √M g‖∞ + ‖h‖∞`.
pub fn x_norm(p: &PlaneGrid, g: &DMatrix<f64>, h: &[f64]) -> f64 {
    weighted_sup_field(p, g) + h.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `ℋ` norm `(∫ ⟨g²⟩ dx)^{1/2}` with trapezoid weights in x.
pub fn field_norm(p: &PlaneGrid, xgrid: &XGrid, g: &DMatrix<f64>) -> f64 {
    xgrid
        .trapezoid()
        .iter()
        .zip(g.column_iter())
        .map(|(w, c)| w * p.inner(c.as_slice(), c.as_slice()))
        .sum::<f64>()
        .sqrt()
}

/// `⟨(ξ1+u) X_a f⟩(x)` for `a = +, 0, -`.
pub fn flux_profiles(
    p: &PlaneGrid,
    basis: &KernelBasis,
    f: &DMatrix<f64>,
    u: f64,
) -> [Vec<f64>; 3] {
    let fs = basis.functions();
    std::array::from_fn(|k| {
        f.column_iter()
            .map(|c| {
                (0..p.len())
                    .map(|a| p.weight[a] * (p.axial[a] + u) * fs[k][a] * c[a])
                    .sum()
            })
            .collect()
    })
}

/// Exponential fit `E e^{-γ x}` of a positive profile.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub gamma_fit: f64,
    pub e_fit: f64,
    pub window: (f64, f64),
    /// the window was shrunk to avoid underflow
    pub shrunk: bool,
}

/// Least-squares slope of `log profile` over `[X_max/4, 3X_max/4]`.
pub fn decay_rate(xgrid: &XGrid, profile: &[f64]) -> Result<DecayFit, HalfspaceError> {
    let x_max = xgrid.x_max();
    let (lo, hi) = (0.25 * x_max, 0.75 * x_max);
    let inside: Vec<usize> = (0..xgrid.len())
        .filter(|&j| xgrid.nodes[j] >= lo && xgrid.nodes[j] <= hi)
        .collect();
    let usable: Vec<usize> = inside
        .iter()
        .copied()
        .take_while(|&j| profile[j] > 1e-280)
        .collect();
    if usable.len() < 3 {
        return Err(HalfspaceError::Underflow);
    }
    let shrunk = usable.len() < inside.len();
    let n = usable.len() as f64;
    let xs: Vec<f64> = usable.iter().map(|&j| xgrid.nodes[j]).collect();
    let ys: Vec<f64> = usable.iter().map(|&j| profile[j].ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(DecayFit {
        gamma_fit: -slope,
        e_fit: (my - slope * mx).exp(),
        window: (xs[0], *xs.last().unwrap()),
        shrunk,
    })
}

/// Fixed-point defect of `(ξ1+u) ∂x f + L f = Q(f, f)` in the weighted sup
/// norm: `f` minus the sweep of `K f + Q(f, f)` with the traces of `f`
/// itself as boundary data. `q = None` gives the linear equation.
pub fn residual_nonlinear(
    op: &CollisionOperator,
    q: Option<&BilinearQ>,
    xgrid: &XGrid,
    order: usize,
    f: &DMatrix<f64>,
    u: f64,
) -> f64 {
    let p = &op.grid.plane;
    let speed: Vec<f64> = p.axial.iter().map(|x| x + u).collect();
    let transport = Transport::new(xgrid, &speed, &op.nu_plane, order);
    let mut source = op.kernel_plane() * f;
    if let Some(q) = q {
        let slices: Vec<Vec<f64>> = f.column_iter().map(|c| c.as_slice().to_vec()).collect();
        for (j, s) in q.apply_diagonal_batch(&slices).into_iter().enumerate() {
            for a in 0..p.len() {
                source[(a, j)] += s[a];
            }
        }
    }
    let first: Vec<f64> = f.column(0).iter().copied().collect();
    let last: Vec<f64> = f.column(xgrid.len() - 1).iter().copied().collect();
    let swept = transport.sweep(&first, Some(&last), &source);
    weighted_sup_field(p, &(f - swept))
}

/// The penalized problem for one `(u, γ)` on a fixed x-grid.
#[derive(Clone, Debug)]
pub struct PenalizedProblem {
    pub pen: PenalizedOperator,
    pub xgrid: XGrid,
    pub transport: Transport,
    /// `e^{γ x_j}`
    pub growth: Vec<f64>,
}

impl PenalizedProblem {
    pub fn new(pen: PenalizedOperator, xgrid: XGrid, order: usize) -> Self {
        let transport = Transport::new(&xgrid, &pen.speed, &pen.sigma, order);
        let growth = xgrid.nodes.iter().map(|x| (pen.gamma * x).exp()).collect();
        PenalizedProblem {
            pen,
            xgrid,
            transport,
            growth,
        }
    }

    pub fn plane(&self) -> &PlaneGrid {
        &self.pen.plane
    }

    fn shape(&self) -> (usize, usize) {
        (self.pen.len(), self.xgrid.len())
    }

    /// `e^{s γ x} (I - P_u) Q` per x slice.
    pub fn project_source(&self, q: &DMatrix<f64>, sign: f64) -> DMatrix<f64> {
        let mut out = q.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let fp = self.pen.apply_flux_p(col.as_slice());
            let scale = self.growth[j].powf(sign);
            for (v, pv) in col.iter_mut().zip(&fp) {
                *v = scale * (*v - pv);
            }
        }
        out
    }

    fn fixed_point_map(&self, v: &[f64]) -> Vec<f64> {
        let (nv, nx) = self.shape();
        let g = DMatrix::from_column_slice(nv, nx, v);
        let kg = &self.pen.kernel * &g;
        let zero = vec![0.0; nv];
        let t = self.transport.sweep(&zero, None, &kg);
        v.iter().zip(t.as_slice()).map(|(a, b)| a - b).collect()
    }

    /// Solves `(ξ1+u) ∂x g + L^p g = source` with inflow data at `x = 0`
    /// and far-field data at `X_max` (zero when `None`).
    pub fn solve_linear(
        &self,
        inflow: &[f64],
        far: Option<&[f64]>,
        source: &DMatrix<f64>,
        initial: Option<&DMatrix<f64>>,
        opts: &LinearOptions,
    ) -> Result<(DMatrix<f64>, LinearReport), HalfspaceError> {
        let (nv, nx) = self.shape();
        if inflow.len() != nv {
            return Err(HalfspaceError::Length {
                found: inflow.len(),
                expected: nv,
            });
        }
        let b = self.transport.sweep(inflow, far, source);
        match opts.method {
            LinearMethod::Gmres => {
                let b_norm = crate::linalg::norm2(b.as_slice());
                let (x0, r0) = match initial {
                    Some(x0) => {
                        let ax = self.fixed_point_map(x0.as_slice());
                        let r: Vec<f64> =
                            b.as_slice().iter().zip(&ax).map(|(a, c)| a - c).collect();
                        (x0.clone(), r)
                    }
                    None => (DMatrix::zeros(nv, nx), b.as_slice().to_vec()),
                };
                let r_norm = crate::linalg::norm2(&r0);
                let rtol = if r_norm > 0.0 {
                    (opts.rtol * b_norm / r_norm).min(1.0)
                } else {
                    1.0
                };
                let (d, out) = gmres(
                    |v| self.fixed_point_map(v),
                    &r0,
                    rtol,
                    opts.restart,
                    opts.max_iter,
                );
                let report = LinearReport {
                    method: opts.method,
                    iterations: out.iterations,
                    residual: if b_norm > 0.0 {
                        out.residual * r_norm / b_norm
                    } else {
                        0.0
                    },
                    converged: out.converged,
                    history: out.history,
                };
                if !out.converged {
                    return Err(HalfspaceError::NonConvergence {
                        iterations: out.iterations,
                        residual: report.residual,
                    });
                }
                Ok((x0 + DMatrix::from_column_slice(nv, nx, &d), report))
            }
            LinearMethod::SourceIteration => {
                let zero = vec![0.0; nv];
                let mut g = initial.cloned().unwrap_or_else(|| DMatrix::zeros(nv, nx));
                let mut history = Vec::new();
                let scale = field_norm(self.plane(), &self.xgrid, &b).max(f64::MIN_POSITIVE);
                for it in 1..=opts.max_iter {
                    let kg = &self.pen.kernel * &g;
                    let next = &b + self.transport.sweep(&zero, None, &kg);
                    let step = field_norm(self.plane(), &self.xgrid, &(&next - &g));
                    g = next;
                    history.push(step / scale);
                    if step <= opts.rtol * scale {
                        return Ok((
                            g,
                            LinearReport {
                                method: opts.method,
                                iterations: it,
                                residual: step / scale,
                                converged: true,
                                history,
                            },
                        ));
                    }
                }
                Err(HalfspaceError::NonConvergence {
                    iterations: opts.max_iter,
                    residual: history.last().copied().unwrap_or(f64::NAN),
                })
            }
        }
    }

    /// `G = g - h φ` per slice.
    fn shifted(&self, g: &DMatrix<f64>, h: &[f64]) -> DMatrix<f64> {
        let mut out = g.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            for (v, phi) in col.iter_mut().zip(&self.pen.branch.phi) {
                *v -= h[j] * phi;
            }
        }
        out
    }

    /// `h(x) = -e^{-γx} ∫_0^∞ e^{(τ-2γ)z} m(x+z) dz`, with a geometric tail
    /// beyond `X_max` fitted to the last two values of `m`.
    fn slow_amplitude(&self, moment: &[f64]) -> (Vec<f64>, f64) {
        let nx = self.xgrid.len();
        let rate = 2.0 * self.pen.gamma - self.pen.branch.tau;
        let (m1, m2) = (moment[nx - 2], moment[nx - 1]);
        let dx = self.xgrid.nodes[nx - 1] - self.xgrid.nodes[nx - 2];
        let fitted = if m1 != 0.0 && m2 / m1 > 0.0 && m2.abs() < m1.abs() {
            (m1 / m2).ln() / dx
        } else {
            0.0
        };
        let tail = m2 / (rate + fitted);
        let integrator = Transport::new(&self.xgrid, &[-1.0], &[rate], self.transport.order);
        let src = DMatrix::from_row_slice(1, nx, moment);
        let big_h = integrator.sweep(&[0.0], Some(&[tail]), &src);
        let h = (0..nx).map(|j| -big_h[(0, j)] / self.growth[j]).collect();
        (h, tail)
    }

    /// Picard iteration for the penalized nonlinear problem with wall data `f_b`.
    pub fn solve_nonlinear(
        &self,
        q: &BilinearQ,
        f_b: &[f64],
        opts: &NonlinearOptions,
    ) -> Result<NonlinearSolution, HalfspaceError> {
        self.solve_nonlinear_from(q, f_b, opts, None)
    }

    /// As `solve_nonlinear`, starting the Picard iteration from `start`.
    pub fn solve_nonlinear_from(
        &self,
        q: &BilinearQ,
        f_b: &[f64],
        opts: &NonlinearOptions,
        start: Option<&NonlinearSolution>,
    ) -> Result<NonlinearSolution, HalfspaceError> {
        let (nv, nx) = self.shape();
        if f_b.len() != nv {
            return Err(HalfspaceError::Length {
                found: f_b.len(),
                expected: nv,
            });
        }
        let p = self.plane();
        let (mut g, mut h) = match start {
            Some(s) if s.g.shape() == (nv, nx) => (s.g.clone(), s.h.clone()),
            _ => (DMatrix::zeros(nv, nx), vec![0.0; nx]),
        };
        let mut report = NonlinearReport {
            iterations: 0,
            steps: Vec::new(),
            ratios: Vec::new(),
            converged: false,
            linear_iterations: Vec::new(),
            tail: 0.0,
            data_norm: p.weighted_sup(f_b, 3.0),
        };
        let mut growing = 0;
        for it in 1..=opts.max_iter {
            let big_g = self.shifted(&g, &h);
            let slices: Vec<Vec<f64>> =
                big_g.column_iter().map(|c| c.as_slice().to_vec()).collect();
            let sigma_cols = q.apply_diagonal_batch(&slices);
            let sigma = DMatrix::from_fn(nv, nx, |a, j| sigma_cols[j][a]);
            let moment: Vec<f64> = sigma_cols
                .iter()
                .map(|s| p.inner(&self.pen.branch.psi, s))
                .collect();
            let (h_new, tail) = self.slow_amplitude(&moment);
            report.tail = tail;
            let source = self.project_source(&sigma, -1.0);
            let inflow: Vec<f64> = (0..nv)
                .map(|a| f_b[a] + h_new[0] * self.pen.branch.phi[a])
                .collect();
            let (g_new, lin) = self.solve_linear(&inflow, None, &source, Some(&g), &opts.linear)?;
            report.linear_iterations.push(lin.iterations);
            let dh: Vec<f64> = h_new.iter().zip(&h).map(|(a, b)| a - b).collect();
            let step = x_norm(p, &(&g_new - &g), &dh);
            if let Some(prev) = report.steps.last() {
                report
                    .ratios
                    .push(if *prev > 0.0 { step / prev } else { 0.0 });
                if step > *prev {
                    growing += 1;
                } else {
                    growing = 0;
                }
            }
            report.steps.push(step);
            report.iterations = it;
            g = g_new;
            h = h_new;
            if step < opts.tol_fix {
                report.converged = true;
                let contribution = tail.abs() / self.growth[nx - 1];
                if contribution > opts.tol_fix {
                    return Err(HalfspaceError::Tail(contribution));
                }
                return Ok(NonlinearSolution { g, h, report });
            }
            if growing >= opts.divergence_window {
                return Err(HalfspaceError::Divergence {
                    window: growing,
                    step,
                });
            }
        }
        Err(HalfspaceError::NoFixedPoint {
            iterations: opts.max_iter,
            step: report.steps.last().copied().unwrap_or(f64::NAN),
        })
    }

    /// `f = e^{-γx} (g - h φ)`.
    pub fn depenalize(&self, g: &DMatrix<f64>, h: &[f64]) -> DMatrix<f64> {
        let mut f = self.shifted(g, h);
        for (j, mut col) in f.column_iter_mut().enumerate() {
            col /= self.growth[j];
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{AssemblySpec, QuadratureSpec};
    use crate::gep::GepSolver;
    use crate::velocity::{GridSpec, VelocityGrid};
    use crate::Tolerances;

    struct Fixture {
        op: CollisionOperator,
        basis: KernelBasis,
        gep: GepSolver,
    }

    fn fixture() -> Fixture {
        let tol = Tolerances::default();
        let g = VelocityGrid::build(&GridSpec::new(12, 10, 6, 8.0), &tol).unwrap();
        let op = CollisionOperator::assemble(&g, &AssemblySpec { n_phi: 128 }).unwrap();
        let basis = KernelBasis::build(&g, &tol).unwrap();
        let gep = GepSolver::new(&op, &basis, &tol).unwrap();
        Fixture { op, basis, gep }
    }

    fn problem(fx: &Fixture, u: f64, gamma: f64) -> PenalizedProblem {
        let branch = fx.gep.solve(u).unwrap();
        let pen = PenalizedOperator::new(&fx.op, &fx.basis, &branch, gamma);
        let spec = XGridSpec::default();
        PenalizedProblem::new(pen, XGrid::from_spec(&spec, gamma), spec.order)
    }

    #[test]
    fn zero_data_gives_zero_solutions() {
        let fx = fixture();
        let prob = problem(&fx, -0.02, 0.8);
        let n = prob.pen.len();
        let zero = DMatrix::zeros(n, prob.xgrid.len());
        let (g, _) = prob
            .solve_linear(&vec![0.0; n], None, &zero, None, &LinearOptions::default())
            .unwrap();
        assert_eq!(g.abs().max(), 0.0);
        let q = BilinearQ::build(&fx.op, &QuadratureSpec::default());
        let sol = prob
            .solve_nonlinear(&q, &vec![0.0; n], &NonlinearOptions::default())
            .unwrap();
        assert!(sol.report.iterations <= 1);
        assert_eq!(sol.g.abs().max(), 0.0);
        assert!(sol.h.iter().all(|v| *v == 0.0));
        assert_eq!(prob.depenalize(&sol.g, &sol.h).abs().max(), 0.0);
    }

    #[test]
    fn manufactured_solution_is_recovered() {
        let fx = fixture();
        let prob = problem(&fx, 0.03, 0.8);
        let p = prob.plane();
        let eta = p.eval(|x1, r| (-(x1 * x1 + r * r) / 8.0).exp());
        let shape: Vec<f64> = (0..p.len()).map(|a| fx.basis.x_plus[a] * eta[a]).collect();
        let lps = prob.pen.apply(&shape);
        let xs = &prob.xgrid.nodes;
        let src = DMatrix::from_fn(p.len(), xs.len(), |a, j| {
            (-xs[j]).exp() * (lps[a] - prob.pen.speed[a] * shape[a])
        });
        let exact = DMatrix::from_fn(p.len(), xs.len(), |a, j| (-xs[j]).exp() * shape[a]);
        let far: Vec<f64> = exact.column(xs.len() - 1).iter().copied().collect();
        let (g, report) = prob
            .solve_linear(&shape, Some(&far), &src, None, &LinearOptions::default())
            .unwrap();
        assert!(report.converged);
        assert!((&g - &exact).abs().max() < 1e-8);
    }

    #[test]
    fn flux_of_an_invariant_is_its_eigenvalue() {
        let fx = fixture();
        let p = &fx.op.grid.plane;
        let u = -0.05;
        let field = DMatrix::from_fn(p.len(), 4, |a, _| fx.basis.x_plus[a]);
        let fl = flux_profiles(p, &fx.basis, &field, u);
        for v in &fl[0] {
            assert!((v - (fx.basis.c + u)).abs() < 1e-9);
        }
        for v in fl[1].iter().chain(&fl[2]) {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn decay_fit_recovers_a_synthetic_rate() {
        let xg = XGrid::graded(0.005, 1.05, 0.05, 20.0);
        let profile: Vec<f64> = xg.nodes.iter().map(|x| 3.0 * (-0.3 * x).exp()).collect();
        let fit = decay_rate(&xg, &profile).unwrap();
        assert!((fit.gamma_fit - 0.3).abs() < 1e-10);
        assert!((fit.e_fit - 3.0).abs() < 1e-8);
        assert!(!fit.shrunk);
        let flat = vec![0.0; xg.len()];
        assert!(matches!(
            decay_rate(&xg, &flat),
            Err(HalfspaceError::Underflow)
        ));
    }

    #[test]
    fn slow_mode_solves_the_linear_equation() {
        let fx = fixture();
        let u = -0.02;
        let branch = fx.gep.solve(u).unwrap();
        let xg = XGrid::graded(0.005, 1.05, 0.05, 20.0);
        let f = DMatrix::from_fn(branch.phi.len(), xg.len(), |a, j| {
            (-branch.tau * xg.nodes[j]).exp() * branch.phi[a]
        });
        let res = residual_nonlinear(&fx.op, None, &xg, 5, &f, u);
        assert!(res < 1e-6, "{res}");
    }

    #[test]
    fn length_mismatch_is_reported() {
        let fx = fixture();
        let prob = problem(&fx, 0.02, 0.8);
        let zero = DMatrix::zeros(prob.pen.len(), prob.xgrid.len());
        let r = prob.solve_linear(&[0.0; 3], None, &zero, None, &LinearOptions::default());
        assert!(matches!(r, Err(HalfspaceError::Length { .. })));
    }
}
