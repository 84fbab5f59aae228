#![allow(clippy::needless_range_loop)]

use knudsen::collision::{AssemblySpec, BilinearQ, CollisionOperator, QuadratureSpec};
use knudsen::gep::GepSolver;
use knudsen::halfspace::{LinearOptions, PenalizedProblem, XGrid, XGridSpec};
use knudsen::penalty::{apply_flux_p_u, apply_p_u, build_compat, u_sweep, PenalizedOperator};
use knudsen::sone::{extrapolate_to_origin, linearized_data, maxwellian_data, CurveSolver};
use knudsen::spectral::KernelBasis;
use knudsen::velocity::{GridSpec, VelocityGrid};
use knudsen::Tolerances;
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::sync::OnceLock;

struct Fixture {
    op: CollisionOperator,
    basis: KernelBasis,
    gep: GepSolver,
    q: BilinearQ,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let tol = Tolerances::default();
        let grid = VelocityGrid::build(&GridSpec::new(12, 10, 6, 8.0), &tol).unwrap();
        let op = CollisionOperator::assemble(&grid, &AssemblySpec { n_phi: 128 }).unwrap();
        let basis = KernelBasis::build(&grid, &tol).unwrap();
        let gep = GepSolver::new(&op, &basis, &tol).unwrap();
        let q = BilinearQ::build(&op, &QuadratureSpec::default());
        Fixture { op, basis, gep, q }
    })
}

/// Smooth plane function with Gaussian-damped polynomial shape.
fn smooth(c: &[f64; 4]) -> Vec<f64> {
    fixture().op.grid.plane.eval(|x1, r| {
        (c[0] + c[1] * x1 + c[2] * r + c[3] * x1 * r) * (-(x1 * x1 + r * r) / 10.0).exp()
    })
}

fn coeffs() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0..1.0f64)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plane_operator_is_symmetric(a in coeffs(), b in coeffs()) {
        let fx = fixture();
        let p = &fx.op.grid.plane;
        let (f, g) = (smooth(&a), smooth(&b));
        let lf = fx.op.apply_lin_plane(&f);
        let lg = fx.op.apply_lin_plane(&g);
        let scale = 1.0 + p.norm(&lf) * p.norm(&g);
        prop_assert!((p.inner(&f, &lg) - p.inner(&lf, &g)).abs() <= 1e-10 * scale);
        prop_assert!(p.inner(&f, &lf) >= -1e-12 * scale);
    }

    #[test]
    fn collision_invariants_are_annihilated(w in prop::array::uniform3(-2.0..2.0f64)) {
        let fx = fixture();
        let p = &fx.op.grid.plane;
        let f: Vec<f64> = (0..p.len())
            .map(|a| w[0] + w[1] * p.axial[a] + w[2] * p.speed_sq(a))
            .collect();
        prop_assert!(p.norm(&fx.op.apply_lin_plane(&f)) < 1e-9 * (1.0 + p.norm(&f)));
    }

    #[test]
    fn bilinear_term_conserves_mass_momentum_energy(a in coeffs(), b in coeffs()) {
        let fx = fixture();
        let p = &fx.op.grid.plane;
        let qv = fx.q.apply(&smooth(&a), &smooth(&b));
        let scale = 1.0 + p.norm(&qv);
        for k in 0..3 {
            let inv: Vec<f64> = (0..p.len())
                .map(|i| [1.0, p.axial[i], p.speed_sq(i)][k])
                .collect();
            prop_assert!(p.inner(&inv, &qv).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn flux_form_is_diagonal(u in -0.1..0.1f64) {
        let fx = fixture();
        let m = fx.basis.flux_form(&fx.op.grid.plane, u);
        let expected = [u + fx.basis.c, u, u - fx.basis.c];
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { expected[i] } else { 0.0 };
                prop_assert!((m[i][j] - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn slow_projections_are_idempotent(k in 0usize..8, a in coeffs()) {
        let fx = fixture();
        let p = &fx.op.grid.plane;
        let u = u_sweep(0.08, 0.02)[k];
        let br = fx.gep.solve(u).unwrap();
        let f = smooth(&a);
        let once = apply_p_u(p, &br, &f);
        prop_assert!(sup_diff(&apply_p_u(p, &br, &once), &once) < 1e-9);
        let once = apply_flux_p_u(p, &br, &f);
        prop_assert!(sup_diff(&apply_flux_p_u(p, &br, &once), &once) < 1e-9);
    }

    #[test]
    fn slow_rate_has_the_opposite_sign(u in prop_oneof![-0.1..-0.005f64, 0.005..0.1f64]) {
        let br = fixture().gep.solve(u).unwrap();
        prop_assert!(u * br.tau < 0.0);
        prop_assert!(br.normalization_defect.abs() < 1e-9);
    }

    #[test]
    fn compat_spectrum_keeps_its_sign_pattern(u in -0.1..0.1f64, gamma in 0.05..1.0f64) {
        let fx = fixture();
        let br = fx.gep.solve(u).unwrap();
        let c = build_compat(&fx.op.grid.plane, &fx.basis, &br, fx.gep.tau_dot, 2.0 * gamma, 2.0 * gamma)
            .unwrap();
        let e = c.eigenvalues;
        prop_assert!(e[0] > e[1] && e[1] > 0.0 && e[2] < 0.0);
        prop_assert!(c.eigen_residual < 1e-9);
    }

    #[test]
    fn wall_data_linearizes(dr in -1e-3..1e-3f64, dt in -1e-3..1e-3f64, u in -1e-3..1e-3f64) {
        let p = &fixture().op.grid.plane;
        let exact = maxwellian_data(p, 1.0 + dr, 1.0 + dt, u).unwrap();
        let lin = linearized_data(p, 1.0 + dr, 1.0 + dt, u);
        let delta = dr.abs().max(dt.abs()).max(u.abs()).max(1e-12);
        let gap: Vec<f64> = exact.f_b.iter().zip(&lin).map(|(a, b)| a - b).collect();
        prop_assert!(p.norm(&gap) <= 50.0 * delta * delta);
    }

    #[test]
    fn extrapolation_is_exact_for_quadratics(c in prop::array::uniform3(-1.0..1.0f64)) {
        let pts: Vec<(f64, f64, f64)> = [-0.03, -0.02, -0.01, 0.01, 0.02, 0.03]
            .iter()
            .map(|&u| (u, 1.0 + c[0] * u + c[1] * u * u, 1.0 + c[2] * u - c[1] * u * u))
            .collect();
        let (rho, t) = extrapolate_to_origin(&pts).unwrap();
        prop_assert!((rho - 1.0).abs() < 1e-12 && (t - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn linear_layer_solve_is_linear(scale in -3.0..3.0f64, a in coeffs()) {
        let fx = fixture();
        let br = fx.gep.solve(-0.02).unwrap();
        let pen = PenalizedOperator::new(&fx.op, &fx.basis, &br, 0.8);
        let spec = XGridSpec::default();
        let prob = PenalizedProblem::new(pen, XGrid::from_spec(&spec, 0.8), spec.order);
        let n = prob.pen.len();
        let zero = DMatrix::zeros(n, prob.xgrid.len());
        let data = smooth(&a);
        let scaled: Vec<f64> = data.iter().map(|v| scale * v).collect();
        let opts = LinearOptions::default();
        let (g1, _) = prob.solve_linear(&data, None, &zero, None, &opts).unwrap();
        let (g2, _) = prob.solve_linear(&scaled, None, &zero, None, &opts).unwrap();
        let err = (&g2 - &g1 * scale).abs().max();
        prop_assert!(err <= 1e-8 * (1.0 + g1.abs().max() * scale.abs()));
    }
}

#[test]
fn root_does_not_depend_on_the_scaling_of_the_conditions() {
    let fx = fixture();
    let mut cs = CurveSolver::new(&fx.op, &fx.basis, &fx.gep, &fx.q, 0.8);
    let base = cs.find_curve_point(-0.02, (0.975, 0.993)).unwrap();
    cs.root.y_scale = [250.0, 0.02];
    let scaled = cs.find_curve_point(-0.02, (0.975, 0.993)).unwrap();
    assert!((base.rho_w - scaled.rho_w).abs() < 1e-6);
    assert!((base.t_w - scaled.t_w).abs() < 1e-6);
}
