//! Run configuration: a TOML file with sections, overridden by flags.

use crate::collision::{AssemblySpec, QuadratureSpec};
use crate::halfspace::{NonlinearOptions, XGridSpec};
use crate::sone::RootOptions;
use crate::velocity::GridSpec;
use crate::Tolerances;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// penalization strength; `None` picks the midpoint of the scanned window
    pub gamma: Option<f64>,
    /// points traced by `trace-curve`
    pub u_list: Vec<f64>,
    /// `gep` sweeps `±step, ±2 step, …` up to `limit`
    pub gep_limit: f64,
    pub gep_step: f64,
    /// spacing of the branch sweep used for the suprema in the constants
    pub constants_step: f64,
    pub u: f64,
    pub rho_w: f64,
    pub t_w: f64,
    pub seed: u64,
    pub cache: Option<PathBuf>,
    pub out: PathBuf,
    pub symmetry_pairs: usize,
    pub oracle_entries: usize,
    pub oracle_samples: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            gamma: None,
            u_list: vec![-0.03, -0.02, -0.01, 0.01, 0.02, 0.03],
            gep_limit: 0.1,
            gep_step: 0.01,
            constants_step: 0.025,
            u: -0.03,
            rho_w: 1.0,
            t_w: 1.0,
            seed: 7,
            cache: None,
            out: PathBuf::from("out"),
            symmetry_pairs: 50,
            oracle_entries: 20,
            oracle_samples: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub assembly: AssemblySpec,
    pub quadrature: QuadratureSpec,
    pub xgrid: XGridSpec,
    pub tolerances: Tolerances,
    pub nonlinear: NonlinearOptions,
    pub root: RootOptions,
    pub run: RunSection,
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub gamma: Option<f64>,
    pub u: Option<f64>,
    pub seed: Option<u64>,
    pub cache: Option<PathBuf>,
    pub refine: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Self::from_toml(&text)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.run.out = v.clone();
        }
        if let Some(v) = o.gamma {
            self.run.gamma = Some(v);
        }
        if let Some(v) = o.u {
            self.run.u = v;
            if v != 0.0 {
                self.run.u_list = vec![v];
            }
        }
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = &o.cache {
            self.run.cache = Some(v.clone());
        }
        if o.refine {
            self.grid = self.grid.refined(2.0);
        }
        self.root.tol_root = self.tolerances.tol_root;
        self.nonlinear.tol_fix = self.tolerances.tol_fix;
        self.nonlinear.linear.rtol = self.tolerances.tol_solve;
    }

    pub fn validate(&self) -> Result<(), String> {
        let t = &self.tolerances;
        let named = [
            ("tol_quad", t.tol_quad),
            ("tol_op", t.tol_op),
            ("tol_kernel", t.tol_kernel),
            ("tol_gep", t.tol_gep),
            ("tol_solve", t.tol_solve),
            ("tol_fix", t.tol_fix),
            ("tol_root", t.tol_root),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(g) = self.run.gamma {
            if !(g > 0.0) {
                return Err(format!("gamma must be positive, got {g}"));
            }
        }
        if !(self.run.gep_step > 0.0 && self.run.constants_step > 0.0) {
            return Err("sweep steps must be positive".into());
        }
        if self.run.u_list.iter().any(|u| *u == 0.0 || !u.is_finite()) {
            return Err("u_list must not contain zero".into());
        }
        if !(self.run.rho_w > 0.0 && self.run.t_w > 0.0) {
            return Err("rho_w and t_w must be positive".into());
        }
        let x = &self.xgrid;
        if !(x.h0 > 0.0 && x.ratio >= 1.0 && x.h_max >= x.h0 && x.min_length > 0.0) {
            return Err("x-grid spacing must be positive and non-decreasing".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_and_flags_win() {
        let text =
            "[grid]\nn_axial = 10\n[run]\ngamma = 0.5\nu = -0.02\n[tolerances]\ntol_fix = 1e-9\n";
        let mut c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.grid.n_axial, 10);
        assert_eq!(c.grid.n_radial, GridSpec::default().n_radial);
        c.apply(&Overrides {
            gamma: Some(0.7),
            ..Default::default()
        });
        assert_eq!(c.run.gamma, Some(0.7));
        assert_eq!(c.run.u, -0.02);
        assert_eq!(c.nonlinear.tol_fix, 1e-9);
        c.validate().unwrap();
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::from_toml("[grid]\nbogus = 1\n").is_err());
        let mut c = RunConfig::default();
        c.tolerances.tol_op = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.run.u_list = vec![0.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.run.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
