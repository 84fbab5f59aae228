//! Shared pipeline stages and the constants block of the report.

use super::{CliError, RunConfig};
use crate::collision::{BilinearQ, CollisionError, CollisionOperator, OperatorCache};
use crate::gep::{GepBranch, GepError, GepSolver};
use crate::halfspace::{bound_constants, BoundConstants, HalfspaceError};
use crate::penalty::{
    admissible_constants, gamma_window, u_sweep, AdmissibleConstants, GammaWindow, PenaltyError,
};
use crate::sone::SoneError;
use crate::spectral::{compute_constants, KernelBasis, SpectralConstants, SpectralError};
use crate::velocity::{GridError, VelocityGrid};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::time::Instant;

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Truncation { .. } => CliError::Invariant(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<CollisionError> for CliError {
    fn from(e: CollisionError) -> Self {
        match e {
            CollisionError::Grid(g) => g.into(),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        CliError::Invariant(e.to_string())
    }
}

impl From<GepError> for CliError {
    fn from(e: GepError) -> Self {
        CliError::Invariant(e.to_string())
    }
}

impl From<PenaltyError> for CliError {
    fn from(e: PenaltyError) -> Self {
        match e {
            PenaltyError::GammaOutOfWindow { .. } => CliError::Config(e.to_string()),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

impl From<HalfspaceError> for CliError {
    fn from(e: HalfspaceError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<SoneError> for CliError {
    fn from(e: SoneError) -> Self {
        match e {
            SoneError::NonPositive { .. } => CliError::Config(e.to_string()),
            SoneError::Gep(g) => g.into(),
            SoneError::Penalty(p) => p.into(),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

fn timed<T>(timing: &mut BTreeMap<String, f64>, name: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timing.insert(name.into(), start.elapsed().as_secs_f64());
    out
}

/// Grid, operators and spectral data.
pub struct Basics {
    pub grid: VelocityGrid,
    pub op: CollisionOperator,
    pub basis: KernelBasis,
    pub consts: SpectralConstants,
    pub q: BilinearQ,
}

impl Basics {
    pub fn build(config: &RunConfig, timing: &mut BTreeMap<String, f64>) -> Result<Self, CliError> {
        let tol = &config.tolerances;
        let grid = timed(timing, "grid", || VelocityGrid::build(&config.grid, tol))?;
        let cache = config.run.cache.as_ref().map(OperatorCache::new);
        let op = timed(timing, "assembly", || {
            CollisionOperator::assemble_cached(&grid, &config.assembly, cache.as_ref())
        })?;
        let basis = KernelBasis::build(&grid, tol)?;
        let consts = timed(timing, "spectral", || compute_constants(&op, &basis))?;
        let q = timed(timing, "bilinear", || {
            BilinearQ::build_cached(&op, &config.quadrature, cache.as_ref())
        })?;
        Ok(Basics {
            grid,
            op,
            basis,
            consts,
            q,
        })
    }
}

/// Slow branch, admissible constants, the `γ` window and the estimate constants.
pub struct Derived {
    pub gep: GepSolver,
    pub branches: Vec<GepBranch>,
    pub admissible: AdmissibleConstants,
    pub window: GammaWindow,
    pub gamma: f64,
    pub bounds: BoundConstants,
}

impl Derived {
    pub fn build(
        b: &Basics,
        config: &RunConfig,
        timing: &mut BTreeMap<String, f64>,
    ) -> Result<Self, CliError> {
        let gep = timed(timing, "gep", || {
            GepSolver::new(&b.op, &b.basis, &config.tolerances)
        })?;
        let sweep = u_sweep(0.5 * gep.radius, config.run.constants_step);
        let branches = sweep
            .iter()
            .map(|&u| gep.solve(u))
            .collect::<Result<Vec<_>, _>>()?;
        let admissible = admissible_constants(
            &b.consts,
            &b.grid.plane,
            &b.op.nu_plane,
            &b.basis,
            &branches,
            gep.radius,
        )?;
        let window = timed(timing, "gamma-window", || {
            gamma_window(
                &b.op,
                &b.basis,
                &b.consts,
                &admissible,
                &branches,
                gep.tau_dot,
            )
        });
        let gamma = config.run.gamma.unwrap_or(window.used);
        if gamma > 0.5 * b.consts.nu_minus {
            return Err(PenaltyError::GammaOutOfWindow {
                gamma,
                limit: 0.5 * b.consts.nu_minus,
            }
            .into());
        }
        if gamma > window.certified {
            log::warn!(
                "γ = {gamma} exceeds the certified bound {} (empirical window {})",
                window.certified,
                window.empirical
            );
        }
        let bounds = timed(timing, "bounds", || {
            bound_constants(
                &b.op,
                &b.basis,
                &b.consts,
                &b.q,
                &branches,
                gamma,
                config.run.seed,
            )
        });
        Ok(Derived {
            gep,
            branches,
            admissible,
            window,
            gamma,
            bounds,
        })
    }
}

/// A reported constant with its defining relation.
#[derive(Clone, Debug, Serialize)]
pub struct Anchored {
    pub value: Value,
    pub anchor: &'static str,
}

/// Keys every report must carry.
pub const REQUIRED_CONSTANTS: [&str; 23] = [
    "c", "kappa0", "nu_minus", "nu_plus", "nu_star", "Gamma", "Gamma1", "Gamma2", "R", "gamma",
    "C", "kappa", "L", "Lambda", "epsilon", "E", "Q3", "C_s", "K_star", "K_half", "K_s", "I_2_5/2",
    "I_3_4",
];

pub fn constants_block(
    b: Option<&Basics>,
    d: Option<&Derived>,
) -> (BTreeMap<String, Anchored>, Vec<String>) {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, value: Value, anchor: &'static str| {
        m.insert(k.to_string(), Anchored { value, anchor });
    };
    if let Some(b) = b {
        let c = &b.consts;
        put("c", json!(c.c), "c = √(5/3), ⟨ξ1 X±²⟩ = ±c");
        put(
            "kappa0",
            json!(c.kappa0),
            "⟨f L f⟩ ≥ κ0 ⟨ν (f - Π f)²⟩ for reflection-even f",
        );
        put(
            "kappa0_full",
            json!(c.kappa0_full),
            "κ0 without the reflection restriction",
        );
        put("nu_minus", json!(c.nu_minus), "ν₋ (1+|ξ|) ≤ ν(|ξ|)");
        put("nu_plus", json!(c.nu_plus), "ν(|ξ|) ≤ ν₊ (1+|ξ|)");
        put(
            "nu_star",
            json!(c.nu_star),
            "ν* = max(⟨ν X₊²⟩, ⟨ν X₀²⟩, ⟨ν X₋²⟩)",
        );
    }
    if let Some(d) = d {
        let a = &d.admissible;
        let k = &d.bounds;
        put("Gamma", json!(a.gamma_cap), "Γ = min(3 ν* κ0, Γ1, Γ2)");
        put(
            "Gamma1",
            json!(a.gamma1),
            "Γ1 = κ0 ν₋ / (2 + 4 sup √(⟨ν ψ_u²⟩⟨φ_u²/ν⟩))",
        );
        put(
            "Gamma2",
            json!(a.gamma2),
            "Γ2 = κ0 ν₋⁴ / (48 ν* (⟨ν X₊²⟩ + sup √⟨ν φ_u²⟩(√⟨ν X₀²⟩ + √⟨ν ψ_u²⟩) + 1)²)",
        );
        put("R", json!(a.r), "R = min(r/2, c - 1, 1/(4 sup ‖ψ_u‖))");
        put("gamma", json!(d.gamma), "0 < γ ≤ min(Γ, ν₋/2), α = β = 2γ");
        put(
            "gamma_window",
            json!({"certified": d.window.certified, "empirical": d.window.empirical, "used": d.window.used}),
            "certified = min(Γ, ν₋/2); empirical = largest scanned γ with coercivity and λ2 > γ",
        );
        put(
            "C",
            json!(k.c),
            "C = 1 + 24 ν* / (γ √ν₋) · sup(α‖(ξ1+u)X₊‖ + β‖(ξ1+u)ψ_u‖‖φ_u‖ + ‖K‖)",
        );
        put("kappa", json!(k.kappa), "κ = (ν₋ - γ) / (C ν₋)");
        put(
            "L",
            json!(k.l),
            "‖(g, h)‖ ≤ L (‖f_b‖ + ‖Q‖) for the linear penalized problem",
        );
        put(
            "Lambda",
            json!(k.lambda),
            "Λ = Q₃ max(1, C₃²) (√𝓘_{3,4} ‖ψ_u‖ (1 + L C₃) / (2γ - τ_u) + L)",
        );
        put("epsilon", json!(k.epsilon), "0 < ε < 1/(4 Λ L)");
        put("E", json!(k.e), "E = 2 L ε max(1, C₃)");
        put(
            "Q3",
            json!(k.q3),
            "‖(1+|ξ|)² √M Q(f,g)‖ ≤ Q₃ ‖(1+|ξ|)³ √M f‖ ‖(1+|ξ|)³ √M g‖ (sampled)",
        );
        put("C_s", json!(k.c_s), "C_s = sup ‖(1+|ξ|)^s √M φ_u‖∞");
        put("K_star", json!(k.k_star), "K_* = ‖√M |K^p| (·/√M)‖ on L²");
        put(
            "K_half",
            json!(k.k_half),
            "K_{1/2}: L² → L^∞ with weight (1+|ξ|)^{1/2}",
        );
        put(
            "K_s",
            json!(k.k_s),
            "K_s: L^∞ weight (1+|ξ|)^{s-1} → weight (1+|ξ|)^s",
        );
        put(
            "K_norm",
            json!(k.k_norm),
            "‖K‖ on reflection-even functions",
        );
        put(
            "I_2_5/2",
            json!(k.i_2_5_2),
            "𝓘_{d,s} = ∫_{R^d} dζ / (1+|ζ|)^s, d = 2, s = 5/2",
        );
        put(
            "I_3_4",
            json!(k.i_3_4),
            "𝓘_{d,s} = ∫_{R^d} dζ / (1+|ζ|)^s, d = 3, s = 4",
        );
        put("tau_dot", json!(d.gep.tau_dot), "τ_u = τ̇0 u + O(u²)");
        put(
            "validated_radius",
            json!(d.gep.radius),
            "r: branch continued and checked for |u| ≤ r",
        );
    }
    let missing = REQUIRED_CONSTANTS
        .iter()
        .filter(|k| !m.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    (m, missing)
}
