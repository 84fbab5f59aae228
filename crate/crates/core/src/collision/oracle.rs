//! Monte-Carlo oracle for the compact part: `(K φ)(ξ)` sampled directly from
//! the collision integrals over `(ξ*, ω)` with `ξ* ~ M` and `ω` uniform.

use super::{CollisionError, CollisionOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Smooth probe `(1 + b·ξ) exp(-|ξ - c|² / 2s²)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Probe {
    pub center: [f64; 3],
    pub slope: [f64; 3],
    pub width: f64,
}

impl Probe {
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let mut d2 = 0.0;
        let mut lin = 1.0;
        for k in 0..3 {
            d2 += (x[k] - self.center[k]).powi(2);
            lin += self.slope[k] * x[k];
        }
        lin * (-0.5 * d2 / (self.width * self.width)).exp()
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Probe {
            center: [
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ],
            slope: [
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            ],
            width: rng.random_range(1.5..2.5),
        }
    }
}

/// Mean and standard error of `(K1 + K2 - K3) φ (ξ)`.
pub fn sample_kernel(
    xi: &[f64; 3],
    phi: impl Fn(&[f64; 3]) -> f64 + Sync,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    const CHUNKS: usize = 64;
    let per = samples.div_ceil(CHUNKS);
    let sums: Vec<(f64, f64, usize)> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(c as u64));
            let n = per.min(samples.saturating_sub(c * per));
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let star: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let mut omega: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let norm = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
                omega.iter_mut().for_each(|v| *v /= norm);
                let proj: f64 = (0..3).map(|k| (xi[k] - star[k]) * omega[k]).sum();
                let post: [f64; 3] = std::array::from_fn(|k| xi[k] - proj * omega[k]);
                let post_star: [f64; 3] = std::array::from_fn(|k| star[k] + proj * omega[k]);
                let x = 4.0 * PI * proj.abs() * (phi(&post) + phi(&post_star) - phi(&star));
                s += x;
                s2 += x * x;
            }
            (s, s2, n)
        })
        .collect();
    let (s, s2, n) = sums
        .iter()
        .fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let n = n as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// One sampled comparison between the assembled `K φ` and the oracle.
#[derive(Clone, Debug, Serialize)]
pub struct OracleEntry {
    pub node: usize,
    pub xi: [f64; 3],
    pub probe: Probe,
    pub assembled: f64,
    pub sampled: f64,
    pub std_error: f64,
}

impl OracleEntry {
    /// `|assembled - sampled|` in units of the standard error.
    pub fn z_score(&self) -> f64 {
        (self.assembled - self.sampled).abs() / self.std_error.max(f64::MIN_POSITIVE)
    }
}

/// Compares `n_entries` random rows of the raw assembled `K` acting on
/// random smooth probes against Monte-Carlo evaluation. Nodes are drawn
/// with `|ξ| ≤ max_speed`.
pub fn kernel_oracle(
    op: &CollisionOperator,
    n_entries: usize,
    samples: usize,
    max_speed: f64,
    seed: u64,
) -> Result<Vec<OracleEntry>, CollisionError> {
    let grid = &op.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eligible: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.nodes[i].iter().map(|v| v * v).sum::<f64>().sqrt() <= max_speed)
        .collect();
    let mut out = Vec::with_capacity(n_entries);
    for k in 0..n_entries {
        let node = eligible[rng.random_range(0..eligible.len())];
        let probe = Probe::random(&mut rng);
        let f = grid.eval(|x| probe.eval(x));
        let kf = op.apply_raw_kernel(&f)?;
        let xi = grid.nodes[node];
        let (sampled, std_error) =
            sample_kernel(&xi, |x| probe.eval(x), samples, seed + k as u64 + 1);
        out.push(OracleEntry {
            node,
            xi,
            probe,
            assembled: kf[node],
            sampled,
            std_error,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_probe_gives_the_collision_frequency() {
        // K 1 = ν since L 1 = 0
        let xi = [0.4, -0.2, 0.7];
        let (mean, err) = sample_kernel(&xi, |_| 1.0, 200_000, 3);
        let speed = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nu = super::super::collision_frequency(speed).unwrap();
        assert!((mean - nu).abs() < 4.0 * err, "{mean} {nu} {err}");
    }
}
