//! Small dense linear-algebra helpers on top of nalgebra, plus restarted GMRES.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Orthogonal projector onto `span(basis)` for the inner product `Σ w f g`.
pub fn weighted_projector(basis: &[Vec<f64>], weight: &[f64]) -> DMatrix<f64> {
    let n = weight.len();
    let k = basis.len();
    let b = DMatrix::from_fn(n, k, |i, j| basis[j][i]);
    let wb = DMatrix::from_fn(n, k, |i, j| weight[i] * basis[j][i]);
    let gram = b.transpose() * &wb;
    let gram_inv = gram
        .try_inverse()
        .expect("projector basis must be linearly independent");
    &b * gram_inv * wb.transpose()
}

/// `D^{1/2} A D^{-1/2}` symmetrized, where `D = diag(weight)`.
pub fn symmetric_form(a: &DMatrix<f64>, weight: &[f64]) -> DMatrix<f64> {
    let n = weight.len();
    let s = DMatrix::from_fn(n, n, |i, j| weight[i].sqrt() * a[(i, j)] / weight[j].sqrt());
    (&s + s.transpose()) * 0.5
}

/// Eigenvalues ascending with matching eigenvector columns.
pub fn sorted_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

pub fn sorted_eigenvalues(a: DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

pub fn matvec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    let m = a.ncols();
    debug_assert_eq!(x.len(), m);
    let mut out = vec![0.0; n];
    for j in 0..m {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        let col = a.column(j);
        for (o, &c) in out.iter_mut().zip(col.iter()) {
            *o += c * xj;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Restarted GMRES for `A x = b` with `x0 = 0`; stops when `|r| <= rtol |b|`.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    restart: usize,
    max_iter: usize,
) -> (Vec<f64>, GmresOutcome) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = norm2(b);
    let mut history = Vec::new();
    if b_norm == 0.0 {
        return (
            x,
            GmresOutcome {
                iterations: 0,
                residual: 0.0,
                converged: true,
                history,
            },
        );
    }
    let target = rtol * b_norm;
    let mut iterations = 0;
    let mut r = b.to_vec();
    let mut beta = b_norm;
    history.push(beta / b_norm);
    while iterations < max_iter {
        let m = restart.min(max_iter - iterations);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let mut w = apply(&basis[k]);
            // modified Gram–Schmidt, twice for robustness
            for _ in 0..2 {
                for (j, v) in basis.iter().enumerate() {
                    let c = dot(&w, v);
                    h[(j, k)] += c;
                    axpy(-c, v, &mut w);
                }
            }
            let wn = norm2(&w);
            h[(k + 1, k)] = wn;
            for j in 0..k {
                let t = cs[j] * h[(j, k)] + sn[j] * h[(j + 1, k)];
                h[(j + 1, k)] = -sn[j] * h[(j, k)] + cs[j] * h[(j + 1, k)];
                h[(j, k)] = t;
            }
            let denom = (h[(k, k)].powi(2) + h[(k + 1, k)].powi(2)).sqrt();
            cs[k] = h[(k, k)] / denom;
            sn[k] = h[(k + 1, k)] / denom;
            h[(k, k)] = denom;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            history.push(g[k + 1].abs() / b_norm);
            if g[k + 1].abs() <= target || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // back substitution
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[(i, j)] * y[j];
            }
            y[i] = s / h[(i, i)];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut x);
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        beta = norm2(&r);
        if beta <= target {
            return (
                x,
                GmresOutcome {
                    iterations,
                    residual: beta / b_norm,
                    converged: true,
                    history,
                },
            );
        }
    }
    (
        x,
        GmresOutcome {
            iterations,
            residual: beta / b_norm,
            converged: false,
            history,
        },
    )
}

/// Solves the dense system by LU; `None` when singular.
pub fn solve_dense(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    a.clone()
        .lu()
        .solve(&rhs)
        .map(|x| x.iter().copied().collect())
}
