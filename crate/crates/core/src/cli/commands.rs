//! The five subcommands.

use super::context::{constants_block, Basics, Derived};
use super::{CliError, Command, RunConfig, RunReport};
use crate::collision::{
    collision_frequency, kernel_oracle, FullBilinear, OracleEntry, QuadratureSpec,
};
use crate::halfspace::{
    decay_rate, flux_profiles, residual_nonlinear, sup_profile, PenalizedProblem, XGrid,
};
use crate::linalg::{sorted_eigenvalues, symmetric_form};
use crate::penalty::{build_compat, PenalizedOperator};
use crate::sone::{extrapolate_to_origin, maxwellian_data, CurveSolver};
use crate::spectral::{kernel_dimension, KernelCount};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use std::path::Path;
use std::time::Instant;

/// One pass/fail invariant with its measured value.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
            detail: String::new(),
        }
    }

    fn kernel(name: &str, k: &KernelCount, expected: usize) -> Self {
        Check {
            name: name.into(),
            value: k.count as f64,
            threshold: expected as f64,
            pass: k.count == expected && k.count_tight == expected,
            detail: format!(
                "{} below gap/10, {} below gap/100, gap {:.4e}, smallest raw {:?}",
                k.count, k.count_tight, k.gap, k.smallest
            ),
        }
    }
}

pub(super) fn dispatch(
    command: &Command,
    config: &RunConfig,
    report: &mut RunReport,
) -> Result<(), CliError> {
    if let Command::OperatorCheck = command {
        return operator_check(config, report);
    }
    let basics = Basics::build(config, &mut report.timing)?;
    let derived = Derived::build(&basics, config, &mut report.timing);
    let (constants, missing) = constants_block(Some(&basics), derived.as_ref().ok());
    report.constants = constants;
    report.missing_constants = missing;
    let derived = derived?;
    let start = Instant::now();
    let out = match command {
        Command::Gep => cmd_gep(config, &basics, &derived, report),
        Command::Solve { rho_w, t_w } => cmd_solve(
            config,
            &basics,
            &derived,
            rho_w.unwrap_or(config.run.rho_w),
            t_w.unwrap_or(config.run.t_w),
            report,
        ),
        Command::TraceCurve => cmd_trace(config, &basics, &derived, report),
        Command::Tangent => cmd_tangent(config, &basics, &derived, report),
        Command::OperatorCheck => unreachable!(),
    };
    report
        .timing
        .insert(command.name().into(), start.elapsed().as_secs_f64());
    out
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Invariant suites for the grid, the operators and the spectral data.
pub fn operator_checks(b: &Basics, config: &RunConfig) -> Vec<Check> {
    let tol = &config.tolerances;
    let grid = &b.grid;
    let p = &grid.plane;
    let op = &b.op;
    let mut rng = ChaCha8Rng::seed_from_u64(config.run.seed);
    let mut out = Vec::new();

    out.push(Check::below(
        "grid moments",
        grid.moments().max_deviation(),
        tol.tol_quad,
    ));
    out.push(Check::below(
        "basis orthonormality",
        b.basis.gram_deviation(p),
        tol.tol_quad,
    ));
    let mut flux_dev: f64 = 0.0;
    for u in [-0.1, 0.0, 0.1] {
        let m = b.basis.flux_form(p, u);
        let expected = [u + b.basis.c, u, u - b.basis.c];
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { expected[i] } else { 0.0 };
                flux_dev = flux_dev.max((m[i][j] - e).abs());
            }
        }
    }
    out.push(Check::below(
        "flux form diag(u+c, u, u-c)",
        flux_dev,
        tol.tol_op,
    ));

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..config.run.symmetry_pairs)
        .map(|_| {
            (
                random_values(&mut rng, grid.len()),
                random_values(&mut rng, grid.len()),
            )
        })
        .collect();
    match op.symmetry_defect(&pairs) {
        Ok(v) => out.push(Check::below("L symmetry", v, tol.tol_op)),
        Err(e) => out.push(Check {
            name: "L symmetry".into(),
            value: f64::NAN,
            threshold: tol.tol_op,
            pass: false,
            detail: e.to_string(),
        }),
    }
    let min_eig = op
        .sectors
        .iter()
        .map(|s| sorted_eigenvalues(symmetric_form(&s.lin, &p.weight))[0])
        .fold(f64::INFINITY, f64::min);
    out.push(Check::below(
        "L positive semidefinite",
        -min_eig,
        tol.tol_op,
    ));

    let full = kernel_dimension(op, false);
    out.push(Check::kernel("null space dimension (full)", &full, 5));
    let even = kernel_dimension(op, true);
    out.push(Check::kernel(
        "null space dimension (reflection-even)",
        &even,
        3,
    ));

    let invariants = [
        vec![1.0; grid.len()],
        grid.eval(|x| x[0]),
        grid.eval(|x| x[1]),
        grid.eval(|x| x[2]),
        grid.eval(|x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]),
    ];
    let f = random_values(&mut rng, grid.len());
    let lf = op.apply_lin(&f).unwrap_or_default();
    let l_moment = invariants
        .iter()
        .map(|x| grid.inner_unchecked(x, &lf).abs())
        .fold(0.0, f64::max);
    out.push(Check::below("conservation of L", l_moment, tol.tol_op));

    let fp = p.eval(|x1, r| (0.3 * x1 - 0.2 * r).sin() * (-(x1 * x1 + r * r) / 8.0).exp());
    let qf = b.q.apply(&fp, &fp);
    let plane_inv = [
        vec![1.0; p.len()],
        p.axial.clone(),
        (0..p.len()).map(|a| p.speed_sq(a)).collect(),
    ];
    let q_moment = plane_inv
        .iter()
        .map(|x| p.inner(x, &qf).abs())
        .fold(0.0, f64::max);
    let light = QuadratureSpec {
        n_star: 6,
        n_polar: 4,
        n_azim: 8,
    };
    let fq = FullBilinear::new(op, &light);
    let h = grid.eval(|x| {
        (0.4 * x[0] + 0.3 * x[1] - 0.2 * x[2]).sin()
            * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 8.0).exp()
    });
    let full_moment = match fq.apply(&h, &h) {
        Ok(qh) => invariants
            .iter()
            .map(|x| grid.inner_unchecked(x, &qh).abs())
            .fold(0.0, f64::max),
        Err(_) => f64::NAN,
    };
    out.push(Check::below(
        "conservation of Q",
        q_moment.max(full_moment),
        tol.tol_op,
    ));
    let minus_two_q: Vec<f64> =
        b.q.apply(&vec![1.0; p.len()], &fp)
            .iter()
            .map(|v| -2.0 * v)
            .collect();
    let lfp = op.apply_lin_plane(&fp);
    let consistency = minus_two_q
        .iter()
        .zip(&lfp)
        .map(|(a, c)| (a - c).abs())
        .fold(0.0, f64::max);
    out.push(Check::below("-2 Q(1, f) = L f", consistency, tol.tol_op));

    let mut nu_violation: f64 = 0.0;
    for (a, nu) in op.nu_plane.iter().enumerate() {
        let w = 1.0 + p.speed(a);
        nu_violation = nu_violation
            .max(op.nu_minus * w - nu)
            .max(nu - op.nu_plus * w);
    }
    out.push(Check {
        name: "collision frequency bounds".into(),
        value: nu_violation,
        threshold: 1e-12,
        pass: nu_violation <= 1e-12 && op.nu_minus > 0.0,
        detail: format!("ν₋ = {}, ν₊ = {}", op.nu_minus, op.nu_plus),
    });
    let nu0 = collision_frequency(0.0).unwrap_or(f64::NAN);
    out.push(Check::below(
        "ν(0) = 4√(2π)",
        (nu0 - 4.0 * (2.0 * std::f64::consts::PI).sqrt()).abs(),
        1e-12,
    ));

    let g = random_values(&mut rng, grid.len());
    let reflected = match (op.apply_lin(&grid.reflect(&g)), op.apply_lin(&g)) {
        (Ok(a), Ok(c)) => {
            let rc = grid.reflect(&c);
            a.iter()
                .zip(&rc)
                .map(|(x, y)| (x - y).abs() / (1.0 + x.abs()))
                .fold(0.0, f64::max)
        }
        _ => f64::NAN,
    };
    out.push(Check::below(
        "reflection equivariance of L",
        reflected,
        1e-10,
    ));
    out
}

#[derive(Serialize)]
struct OracleSummary {
    entries: Vec<OracleEntry>,
    max_z: f64,
    within_three_sigma: usize,
    max_relative: f64,
}

fn oracle_summary(b: &Basics, config: &RunConfig) -> Option<OracleSummary> {
    if config.run.oracle_entries == 0 {
        return None;
    }
    let entries = kernel_oracle(
        &b.op,
        config.run.oracle_entries,
        config.run.oracle_samples,
        3.0,
        config.run.seed,
    )
    .ok()?;
    let max_z = entries.iter().map(|e| e.z_score()).fold(0.0, f64::max);
    let within = entries.iter().filter(|e| e.z_score() <= 3.0).count();
    let max_relative = entries
        .iter()
        .map(|e| (e.assembled - e.sampled).abs() / e.sampled.abs().max(1e-12))
        .fold(0.0, f64::max);
    Some(OracleSummary {
        entries,
        max_z,
        within_three_sigma: within,
        max_relative,
    })
}

fn operator_check(config: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let basics = Basics::build(config, &mut report.timing)?;
    let start = Instant::now();
    let checks = operator_checks(&basics, config);
    report
        .timing
        .insert("checks".into(), start.elapsed().as_secs_f64());
    let start = Instant::now();
    let oracle = oracle_summary(&basics, config);
    report
        .timing
        .insert("kernel oracle".into(), start.elapsed().as_secs_f64());
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| {
            format!(
                "{} = {:e} (limit {:e}) {}",
                c.name, c.value, c.threshold, c.detail
            )
        })
        .collect();
    let derived = if failed.is_empty() {
        Derived::build(&basics, config, &mut report.timing).ok()
    } else {
        None
    };
    let (constants, missing) = constants_block(Some(&basics), derived.as_ref());
    report.constants = constants;
    report.missing_constants = missing;
    report.results = json!({
        "checks": checks,
        "kernel_oracle": oracle,
        "spectral": basics.consts,
        "moments": basics.grid.moments(),
        "raw_invariant_defects": basics.op.raw_invariant_defects(),
    });
    write_csv(
        &config.run.out.join("checks.csv"),
        &["name", "value", "threshold", "pass"],
        checks.iter().map(|c| {
            vec![
                c.name.clone(),
                format!("{:e}", c.value),
                format!("{:e}", c.threshold),
                c.pass.to_string(),
            ]
        }),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failed.join("; ")))
    }
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn cmd_gep(
    config: &RunConfig,
    b: &Basics,
    d: &Derived,
    report: &mut RunReport,
) -> Result<(), CliError> {
    let tol = &config.tolerances;
    let mut us = if config.run.u_list.len() == 1 {
        config.run.u_list.clone()
    } else {
        crate::penalty::u_sweep(config.run.gep_limit, config.run.gep_step)
    };
    us.push(0.0);
    us.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let p = &b.grid.plane;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut table = Vec::new();
    for &u in &us {
        let br = d.gep.solve(u)?;
        let sign_ok = if u == 0.0 {
            br.tau.abs() < 1e-8
        } else {
            u * br.tau < 0.0
        };
        let orth = b
            .basis
            .functions()
            .iter()
            .map(|x| {
                (0..p.len())
                    .map(|a| p.weight[a] * (p.axial[a] + u) * br.phi[a] * x[a])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max);
        if !sign_ok {
            failures.push(format!("u τ_u < 0 fails at u = {u}"));
        }
        if br.normalization_defect.abs() > tol.tol_gep {
            failures.push(format!(
                "normalization defect {:e} at u = {u}",
                br.normalization_defect
            ));
        }
        if u != 0.0 && (br.psi_phi + 1.0).abs() > 10.0 * tol.tol_gep {
            failures.push(format!("⟨(ξ1+u)ψφ⟩ = {} at u = {u}", br.psi_phi));
        }
        rows.push(vec![
            num(u),
            num(br.tau),
            num(br.z),
            sign_ok.to_string(),
            num(br.normalization_defect),
            num(br.psi_phi),
            num(br.residual),
            num(orth),
        ]);
        table.push(br);
    }
    let relative =
        (d.gep.lambda_ddot_fd - d.gep.lambda_ddot_pinv).abs() / d.gep.lambda_ddot_pinv.abs();
    if relative > 0.05 {
        failures.push(format!("λ̈0 paths disagree by {relative:.3}"));
    }
    write_csv(
        &config.run.out.join("branches.csv"),
        &[
            "u",
            "tau",
            "z",
            "sign_ok",
            "normalization_defect",
            "psi_phi",
            "residual",
            "orthogonality",
        ],
        rows,
    )?;
    report.results = json!({
        "branches": table,
        "tau_dot": d.gep.tau_dot,
        "lambda_ddot_fd": d.gep.lambda_ddot_fd,
        "lambda_ddot_pinv": d.gep.lambda_ddot_pinv,
        "lambda_ddot_relative": relative,
        "validated_radius": d.gep.radius,
    });
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failures.join("; ")))
    }
}

fn curve_solver<'a>(config: &RunConfig, b: &'a Basics, d: &'a Derived) -> CurveSolver<'a> {
    let mut cs = CurveSolver::new(&b.op, &b.basis, &d.gep, &b.q, d.gamma);
    cs.xgrid = config.xgrid.clone();
    cs.options = config.nonlinear.clone();
    cs.root = config.root.clone();
    cs
}

fn check_u(u: f64, d: &Derived) {
    if u.abs() > d.admissible.r {
        log::warn!("|u| = {} exceeds R = {}", u.abs(), d.admissible.r);
    }
}

fn cmd_solve(
    config: &RunConfig,
    b: &Basics,
    d: &Derived,
    rho_w: f64,
    t_w: f64,
    report: &mut RunReport,
) -> Result<(), CliError> {
    let u = config.run.u;
    check_u(u, d);
    let p = &b.grid.plane;
    let data = maxwellian_data(p, rho_w, t_w, u)?;
    if data.gauge > d.bounds.epsilon {
        log::warn!(
            "data norm {:e} exceeds the contraction radius ε = {:e}",
            data.gauge,
            d.bounds.epsilon
        );
    }
    let branch = d.gep.solve(u)?;
    let pen = PenalizedOperator::new(&b.op, &b.basis, &branch, d.gamma);
    let compat = build_compat(p, &b.basis, &branch, d.gep.tau_dot, pen.alpha, pen.beta)?;
    let xgrid = XGrid::from_spec(&config.xgrid, d.gamma);
    let prob = PenalizedProblem::new(pen, xgrid, config.xgrid.order);
    let sol = prob.solve_nonlinear(&b.q, &data.f_b, &config.nonlinear)?;
    let f = prob.depenalize(&sol.g, &sol.h);
    let trace: Vec<f64> = sol.g.column(0).iter().copied().collect();
    let (c1, c2) = compat.residuals(p, &trace);
    let profile = sup_profile(p, &f);
    let fit = decay_rate(&prob.xgrid, &profile).ok();
    let fluxes = flux_profiles(p, &b.basis, &f, u);
    let residual = residual_nonlinear(&b.op, Some(&b.q), &prob.xgrid, prob.transport.order, &f, u);
    let rows = (0..prob.xgrid.len()).map(|j| {
        vec![
            num(prob.xgrid.nodes[j]),
            num(profile[j]),
            num(sol.h[j]),
            num(fluxes[0][j]),
            num(fluxes[1][j]),
            num(fluxes[2][j]),
        ]
    });
    write_csv(
        &config.run.out.join("profile.csv"),
        &[
            "x",
            "sup_weighted_f",
            "h",
            "flux_plus",
            "flux_zero",
            "flux_minus",
        ],
        rows,
    )?;
    let field_rows = (0..p.len()).map(|a| {
        let mut r = vec![num(p.axial[a]), num(p.radial[a]), num(data.f_b[a])];
        r.push(num(f[(a, 0)]));
        r
    });
    write_csv(
        &config.run.out.join("wall_trace.csv"),
        &["xi1", "xi_perp", "f_b", "f_at_wall"],
        field_rows,
    )?;
    let flux_max = fluxes
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    report.results = json!({
        "data": data,
        "c1": c1,
        "c2": c2,
        "nonlinear": sol.report,
        "decay": fit,
        "residual_nonlinear": residual,
        "flux_max": flux_max,
        "compat": compat,
    });
    Ok(())
}

fn cmd_tangent(
    config: &RunConfig,
    b: &Basics,
    d: &Derived,
    report: &mut RunReport,
) -> Result<(), CliError> {
    let cs = curve_solver(config, b, d);
    let t = cs.tangent_at_origin(&config.nonlinear.linear)?;
    report.results = json!({ "tangent": t });
    if t.affinity_defect > config.tolerances.tol_op {
        return Err(CliError::Invariant(format!(
            "affine model defect {:e}",
            t.affinity_defect
        )));
    }
    Ok(())
}

fn cmd_trace(
    config: &RunConfig,
    b: &Basics,
    d: &Derived,
    report: &mut RunReport,
) -> Result<(), CliError> {
    let cs = curve_solver(config, b, d);
    for &u in &config.run.u_list {
        check_u(u, d);
    }
    let tangent = cs.tangent_at_origin(&config.nonlinear.linear)?;
    let rows = cs.trace_curve(
        &config.run.u_list,
        Some((tangent.rho_prime, tangent.t_prime)),
    );
    let found: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| r.point.as_ref().map(|p| (p.u, p.rho_w, p.t_w)))
        .collect();
    let limit = extrapolate_to_origin(&found);
    let mut csv_rows = Vec::new();
    for r in &rows {
        match &r.point {
            Some(pt) => csv_rows.push(vec![
                num(pt.u),
                num(pt.rho_w),
                num(pt.t_w),
                num(pt.p_w),
                num(pt.c1),
                num(pt.c2),
                pt.diagnostics
                    .gamma_fit
                    .map(num)
                    .unwrap_or_else(|| "nan".into()),
                pt.iterations.to_string(),
                "root".into(),
            ]),
            None => csv_rows.push(vec![
                num(r.u),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "0".into(),
                "break".into(),
            ]),
        }
    }
    if let Some((rho, t)) = limit {
        csv_rows.push(vec![
            num(0.0),
            num(rho),
            num(t),
            num(rho * t),
            "nan".into(),
            "nan".into(),
            "nan".into(),
            "0".into(),
            "extrapolated".into(),
        ]);
    }
    csv_rows.push(vec![
        num(0.0),
        num(tangent.rho_prime),
        num(tangent.t_prime),
        num(tangent.rho_prime + tangent.t_prime),
        num(tangent.root_residual[0]),
        num(tangent.root_residual[1]),
        "nan".into(),
        "0".into(),
        "tangent".into(),
    ]);
    write_csv(
        &config.run.out.join("curve.csv"),
        &[
            "u",
            "rho_w",
            "T_w",
            "p_w",
            "C1",
            "C2",
            "gamma_fit",
            "iterations",
            "kind",
        ],
        csv_rows,
    )?;
    let breaks = rows.iter().filter(|r| r.point.is_none()).count();
    report.results = json!({
        "rows": rows,
        "limit_at_origin": limit,
        "tangent": tangent,
    });
    if breaks > 0 {
        return Err(CliError::Solver(format!("{breaks} curve points lost")));
    }
    Ok(())
}
