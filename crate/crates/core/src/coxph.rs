//! Cox proportional hazards with Breslow ties and an optional ridge
//! penalty, fitted by Newton–Raphson with step halving.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numcore::{cholesky_solve, dot, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub beta: Vec<f64>,
    /// Penalized log partial likelihood at `beta`.
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxConfig {
    pub ridge: f64,
    pub max_iter: usize,
    /// Convergence threshold on the gradient max-norm.
    pub tol: f64,
}

impl Default for CoxConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-4,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

struct Evaluation {
    log_likelihood: f64,
    gradient: Vec<f64>,
    /// Negative Hessian (observed information), when requested.
    information: Option<Matrix>,
}

fn validate(x: &Matrix, t: &[f64], e: &[bool]) -> Result<()> {
    if x.rows() != t.len() {
        return Err(Error::lengths("cox", x.rows(), t.len()));
    }
    if t.len() != e.len() {
        return Err(Error::lengths("cox", t.len(), e.len()));
    }
    if !e.iter().any(|&d| d) {
        return Err(Error::InvalidArgument("Cox fit needs at least one event".into()));
    }
    Ok(())
}

fn evaluate(
    x: &Matrix,
    t: &[f64],
    e: &[bool],
    beta: &[f64],
    ridge: f64,
    with_information: bool,
) -> Evaluation {
    let (n, p) = x.shape();
    let eta: Vec<f64> = (0..n).map(|i| dot(x.row(i), beta)).collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|&v| libm::exp(v - shift)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| t[b].total_cmp(&t[a]));

    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = Matrix::zeros(p, p);
    let mut ll = 0.0;
    let mut grad = vec![0.0; p];
    let mut info = Matrix::zeros(p, p);

    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && t[order[end]] == t[order[start]] {
            end += 1;
        }
        // risk set: everyone with time >= the current time
        for &i in &order[start..end] {
            let xi = x.row(i);
            s0 += w[i];
            for a in 0..p {
                s1[a] += w[i] * xi[a];
                if with_information {
                    for b in 0..p {
                        s2[(a, b)] += w[i] * xi[a] * xi[b];
                    }
                }
            }
        }
        for &i in order[start..end].iter().filter(|&&i| e[i]) {
            ll += eta[i] - shift - libm::log(s0);
            for a in 0..p {
                grad[a] += x[(i, a)] - s1[a] / s0;
            }
            if with_information {
                for a in 0..p {
                    for b in 0..p {
                        info[(a, b)] += s2[(a, b)] / s0 - s1[a] * s1[b] / (s0 * s0);
                    }
                }
            }
        }
        start = end;
    }
    ll -= 0.5 * ridge * dot(beta, beta);
    for a in 0..p {
        grad[a] -= ridge * beta[a];
        info[(a, a)] += ridge;
    }
    Evaluation {
        log_likelihood: ll,
        gradient: grad,
        information: with_information.then_some(info),
    }
}

/// Penalized Breslow log partial likelihood at `beta`.
pub fn partial_log_likelihood(
    x: &Matrix,
    t: &[f64],
    e: &[bool],
    beta: &[f64],
    ridge: f64,
) -> Result<f64> {
    validate(x, t, e)?;
    if beta.len() != x.cols() {
        return Err(Error::lengths("partial_log_likelihood", x.cols(), beta.len()));
    }
    Ok(evaluate(x, t, e, beta, ridge, false).log_likelihood)
}

/// Gradient of [`partial_log_likelihood`] with respect to `beta`.
pub fn partial_likelihood_gradient(
    x: &Matrix,
    t: &[f64],
    e: &[bool],
    beta: &[f64],
    ridge: f64,
) -> Result<Vec<f64>> {
    validate(x, t, e)?;
    if beta.len() != x.cols() {
        return Err(Error::lengths("partial_likelihood_gradient", x.cols(), beta.len()));
    }
    Ok(evaluate(x, t, e, beta, ridge, false).gradient)
}

const MAX_HALVINGS: usize = 40;

/// Maximizes the penalized partial likelihood from `β = 0`. On failure to
/// converge the best iterate is returned with `converged = false`.
pub fn cox_fit(x: &Matrix, t: &[f64], e: &[bool], cfg: &CoxConfig) -> Result<CoxModel> {
    validate(x, t, e)?;
    let p = x.cols();
    let mut beta = vec![0.0; p];
    let mut current = evaluate(x, t, e, &beta, cfg.ridge, true);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        let max_grad = current.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if max_grad < cfg.tol {
            converged = true;
            break;
        }
        let info = current.information.as_ref().expect("requested");
        let Ok(step) = cholesky_solve(info, &current.gradient) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let eval = evaluate(x, t, e, &candidate, cfg.ridge, true);
            if eval.log_likelihood.is_finite() && eval.log_likelihood >= current.log_likelihood {
                accepted = Some((candidate, eval));
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((b, eval)) => {
                beta = b;
                current = eval;
            }
            None => break,
        }
    }
    if !converged {
        let max_grad = current.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        converged = max_grad < cfg.tol;
    }
    Ok(CoxModel {
        beta,
        log_likelihood: current.log_likelihood,
        converged,
        iterations,
    })
}

/// Linear predictor `x·β`.
pub fn cox_risk(model: &CoxModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != model.beta.len() {
        return Err(Error::lengths("cox_risk", model.beta.len(), x.cols()));
    }
    Ok(x.row_iter().map(|r| dot(r, &model.beta)).collect())
}

/// Per-column standardization of a design matrix (mean 0, sd 1; constant
/// columns are only centered).
pub fn standardize_columns(x: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
    let means = x.column_means();
    let n = x.rows().max(1) as f64;
    let mut sds = vec![0.0; x.cols()];
    for row in x.row_iter() {
        for ((s, v), m) in sds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    sds.iter_mut().for_each(|s| {
        let sd = libm::sqrt(*s / n);
        *s = if sd < 1e-12 { 1.0 } else { sd };
    });
    (apply_standardization(x, &means, &sds), means, sds)
}

pub fn apply_standardization(x: &Matrix, means: &[f64], sds: &[f64]) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for ((v, m), s) in out.row_mut(i).iter_mut().zip(means).zip(sds) {
            *v = (*v - m) / s;
        }
    }
    out
}
