//! Gauss rules built from Jacobi matrices (Golub–Welsch plus Newton polish).
//!
//! Weights are normalized so they sum to the total mass of the underlying
//! measure: 1 for the standard normal, 1 for `e^{-t}` on the half line and
//! 2 for Legendre on `[-1, 1]`.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a Gauss rule, nodes ascending.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Orthonormal polynomials p_0..p_{n-1} and p_n' direction from the
/// three-term recurrence `x p_k = b_{k+1} p_{k+1} + a_k p_k + b_k p_{k-1}`.
/// Returns (sum of p_k^2 for k < n, q_n(x), q_n'(x)) where q_n is proportional to p_n.
fn recurrence(x: f64, diag: &[f64], off: &[f64]) -> (f64, f64, f64) {
    let n = diag.len();
    let mut p_prev = 0.0;
    let mut dp_prev = 0.0;
    let mut p = 1.0;
    let mut dp = 0.0;
    let mut sum_sq = 1.0;
    for k in 0..n {
        let b_k = if k == 0 { 0.0 } else { off[k - 1] };
        let q = (x - diag[k]) * p - b_k * p_prev;
        let dq = p + (x - diag[k]) * dp - b_k * dp_prev;
        if k + 1 == n {
            return (sum_sq, q, dq);
        }
        let b_next = off[k];
        p_prev = p;
        dp_prev = dp;
        p = q / b_next;
        dp = dq / b_next;
        sum_sq += p * p;
    }
    unreachable!()
}

fn from_jacobi(diag: Vec<f64>, off: Vec<f64>, mass: f64) -> GaussRule {
    let n = diag.len();
    assert!(n > 0, "empty Gauss rule");
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jac[(k, k)] = diag[k];
        if k + 1 < n {
            jac[(k, k + 1)] = off[k];
            jac[(k + 1, k)] = off[k];
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (_, q, dq) = recurrence(*x, &diag, &off);
            if dq != 0.0 {
                *x -= q / dq;
            }
        }
        let (sum_sq, _, _) = recurrence(*x, &diag, &off);
        weights.push(mass / sum_sq);
    }
    GaussRule { nodes, weights }
}

/// Gauss–Hermite rule for the standard normal density (probabilists' convention).
pub fn gauss_hermite(n: usize) -> GaussRule {
    let diag = vec![0.0; n];
    let off = (1..n).map(|k| (k as f64).sqrt()).collect();
    let mut rule = from_jacobi(diag, off, 1.0);
    // exact odd symmetry
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
    rule
}

/// Gauss–Laguerre rule for the weight `e^{-t}` on `[0, inf)`.
pub fn gauss_laguerre(n: usize) -> GaussRule {
    let diag = (0..n).map(|k| (2 * k + 1) as f64).collect();
    let off = (1..n).map(|k| k as f64).collect();
    from_jacobi(diag, off, 1.0)
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> GaussRule {
    let diag = vec![0.0; n];
    let off = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let mut rule = from_jacobi(diag, off, 2.0);
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    rule
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_reproduces_normal_moments() {
        let rule = gauss_hermite(12);
        let double_fact = [1.0, 1.0, 3.0, 15.0, 105.0, 945.0, 10395.0];
        for k in 0..=11 {
            let m = rule.integrate(|x| x.powi(k as i32));
            let exact = if k % 2 == 1 { 0.0 } else { double_fact[k / 2] };
            assert_relative_eq!(m, exact, epsilon = 1e-9, max_relative = 1e-12);
        }
    }

    #[test]
    fn laguerre_reproduces_factorials() {
        let rule = gauss_laguerre(10);
        let mut fact = 1.0;
        for k in 0..20 {
            if k > 0 {
                fact *= k as f64;
            }
            let m = rule.integrate(|t| t.powi(k));
            assert_relative_eq!(m, fact, max_relative = 1e-11);
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let rule = gauss_legendre(8);
        for k in 0..16 {
            let m = rule.integrate(|x| x.powi(k));
            let exact = if k % 2 == 1 {
                0.0
            } else {
                2.0 / (k as f64 + 1.0)
            };
            assert_relative_eq!(m, exact, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_node_rules() {
        assert_eq!(gauss_hermite(1).nodes, vec![0.0]);
        assert_relative_eq!(gauss_laguerre(1).nodes[0], 1.0);
        assert_relative_eq!(gauss_legendre(1).weights[0], 2.0);
    }
}
