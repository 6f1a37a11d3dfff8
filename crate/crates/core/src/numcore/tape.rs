//! Matrix-valued reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the adjoint. Nodes only reference earlier nodes, so insertion
//! order is a topological order and the backward pass is a single reverse
//! sweep.

use alloc::vec;
use alloc::vec::Vec;

use super::matrix::{dot, Matrix};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One pairwise term of the survival contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    pub kind: PairKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    /// `weight * d_ij^2`
    Pull,
    /// `weight * max(0, margin - d_ij)^2`
    Push,
}

/// Per-column statistics of a batch seen by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance, as used for normalization.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBroadcast(Var, Var),
    Relu(Var),
    RowL2Normalize {
        x: Var,
        eps: f64,
        norms: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Sum(Var),
    MeanOf(Vec<Var>),
    ContrastiveCrossEntropy {
        logits: Var,
        probs: Matrix,
    },
    PairwiseSurvival {
        z: Var,
        terms: Vec<PairTerm>,
        margin: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Adjoint of `var`, zero-filled when the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input. Parameters and constants are both leaves; callers
    /// read adjoints only for the ones they care about.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    /// `x + 1·bias` with `bias` of shape 1 x cols.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row_broadcast(self.value(bias))?;
        Ok(self.push(value, Op::AddRowBroadcast(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    /// Each row divided by `max(‖row‖₂, eps)`.
    pub fn row_l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let input = self.value(x);
        let norms = input.row_norms();
        let value = input.row_l2_normalize(eps);
        self.push(value, Op::RowL2Normalize { x, eps, norms })
    }

    /// Batch normalization using the statistics of the batch itself.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let input = self.value(x);
        let n = input.rows();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let mean = input.column_means();
        let mut var = vec![0.0; input.cols()];
        for row in input.row_iter() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let out = self.normalize_columns(x, gamma, beta, &mean, inv_std, true)?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Batch normalization with frozen statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let inv_std = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        self.normalize_columns(x, gamma, beta, mean, inv_std, false)
    }

    fn normalize_columns(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let input = self.value(x);
        let cols = input.cols();
        for (name, len) in [("mean", mean.len()), ("inv_std", inv_std.len())] {
            if len != cols {
                return Err(Error::lengths(name, cols, len));
            }
        }
        for p in [gamma, beta] {
            if self.value(p).shape() != (1, cols) {
                return Err(Error::dims("batch_norm", (1, cols), self.value(p).shape()));
            }
        }
        let mut xhat = input.clone();
        for i in 0..xhat.rows() {
            for ((v, m), s) in xhat.row_mut(i).iter_mut().zip(mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let mut value = xhat.clone();
        for i in 0..value.rows() {
            for ((v, g), b) in value.row_mut(i).iter_mut().zip(g).zip(b) {
                *v = *v * g + b;
            }
        }
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).shape();
        let total = self.sum(x);
        self.scale(total, 1.0 / (r * c).max(1) as f64)
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean_of needs at least one input".into()))?;
        let mut acc = self.value(*first).clone();
        for &x in &xs[1..] {
            acc.add_assign(self.value(x))?;
        }
        let value = acc.scale(1.0 / xs.len() as f64);
        Ok(self.push(value, Op::MeanOf(xs.to_vec())))
    }

    /// Mean over rows of `-log(exp(L_ii) / Σ_{j∈D_i} exp(L_ij))` for a square
    /// logit matrix, where `D_i` is every column except `i`, or every column
    /// when `include_diagonal` is set.
    pub fn contrastive_cross_entropy(&mut self, logits: Var, include_diagonal: bool) -> Result<Var> {
        let l = self.value(logits);
        let n = l.rows();
        if l.cols() != n {
            return Err(Error::dims("contrastive_cross_entropy", l.shape(), (n, n)));
        }
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let mut probs = Matrix::zeros(n, n);
        let mut total = 0.0;
        for i in 0..n {
            let row = l.row(i);
            let in_denominator = |j: usize| include_diagonal || j != i;
            let max = (0..n)
                .filter(|&j| in_denominator(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in (0..n).filter(|&j| in_denominator(j)) {
                let e = libm::exp(row[j] - max);
                probs[(i, j)] = e;
                denom += e;
            }
            probs.row_mut(i).iter_mut().for_each(|p| *p /= denom);
            total += max + libm::log(denom) - row[i];
        }
        let value = Matrix::scalar(total / n as f64);
        Ok(self.push(value, Op::ContrastiveCrossEntropy { logits, probs }))
    }

    /// `Σ_terms weight * d_ij^2` (pull) or `weight * max(0, margin - d_ij)^2`
    /// (push), with `d_ij` the Euclidean distance between rows `i` and `j`.
    pub fn pairwise_survival(&mut self, z: Var, terms: Vec<PairTerm>, margin: f64) -> Result<Var> {
        let zv = self.value(z);
        let n = zv.rows();
        if let Some(t) = terms.iter().find(|t| t.i >= n || t.j >= n) {
            return Err(Error::InvalidArgument(alloc::format!(
                "pair ({}, {}) out of range for {} rows",
                t.i,
                t.j,
                n
            )));
        }
        let mut total = 0.0;
        for t in &terms {
            let d = distance(zv.row(t.i), zv.row(t.j));
            total += t.weight
                * match t.kind {
                    PairKind::Pull => d * d,
                    PairKind::Push => {
                        let h = (margin - d).max(0.0);
                        h * h
                    }
                };
        }
        Ok(self.push(
            Matrix::scalar(total),
            Op::PairwiseSurvival { z, terms, margin },
        ))
    }

    /// Adjoints of the 1x1 node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let (rows, cols) = self.value(output).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarOutput { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            for (var, contribution) in self.adjoints(node, &upstream)? {
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(upstream);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn adjoints(&self, node: &Node, dy: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let da = dy.matmul_transposed(self.value(*b))?;
                let db = self.value(*a).transposed_matmul(dy)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => vec![(*a, dy.transpose())],
            Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Sub(a, b) => vec![(*a, dy.clone()), (*b, dy.scale(-1.0))],
            Op::Mul(a, b) => {
                let da = dy.hadamard(self.value(*b))?;
                let db = dy.hadamard(self.value(*a))?;
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, s) => vec![(*a, dy.scale(*s))],
            Op::AddRowBroadcast(x, bias) => vec![(*x, dy.clone()), (*bias, dy.column_sums())],
            Op::Relu(x) => {
                let mask = self.value(*x);
                let dx = dy.zip_with("relu", mask, |g, v| if v > 0.0 { g } else { 0.0 })?;
                vec![(*x, dx)]
            }
            Op::RowL2Normalize { x, eps, norms } => {
                let y = &node.value;
                let mut dx = dy.clone();
                for (i, &n) in norms.iter().enumerate() {
                    let row = dx.row_mut(i);
                    if n > *eps {
                        let radial = dot(y.row(i), dy.row(i));
                        for (g, yv) in row.iter_mut().zip(y.row(i)) {
                            *g = (*g - yv * radial) / n;
                        }
                    } else {
                        row.iter_mut().for_each(|g| *g /= eps);
                    }
                }
                vec![(*x, dx)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let g = self.value(*gamma).as_slice();
                let dgamma = dy.hadamard(xhat)?.column_sums();
                let dbeta = dy.column_sums();
                let n = dy.rows() as f64;
                let mut dx = Matrix::zeros(dy.rows(), dy.cols());
                for c in 0..dy.cols() {
                    let scale = g[c] * inv_std[c];
                    if *batch_stats {
                        // dxhat = dy*gamma; dx = inv_std/n * (n*dxhat - Σdxhat - xhat*Σ(dxhat*xhat))
                        let sum_dy = dbeta.as_slice()[c];
                        let sum_dy_xhat = dgamma.as_slice()[c];
                        for r in 0..dy.rows() {
                            dx[(r, c)] = scale / n
                                * (n * dy[(r, c)] - sum_dy - xhat[(r, c)] * sum_dy_xhat);
                        }
                    } else {
                        for r in 0..dy.rows() {
                            dx[(r, c)] = scale * dy[(r, c)];
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                vec![(*x, Matrix::filled(r, c, dy.to_scalar()?))]
            }
            Op::MeanOf(xs) => {
                let share = dy.scale(1.0 / xs.len() as f64);
                xs.iter().map(|&x| (x, share.clone())).collect()
            }
            Op::ContrastiveCrossEntropy { logits, probs } => {
                let n = probs.rows();
                let s = dy.to_scalar()? / n as f64;
                let mut dl = probs.clone();
                for i in 0..n {
                    dl[(i, i)] -= 1.0;
                }
                vec![(*logits, dl.scale(s))]
            }
            Op::PairwiseSurvival { z, terms, margin } => {
                let zv = self.value(*z);
                let s = dy.to_scalar()?;
                let mut dz = Matrix::zeros(zv.rows(), zv.cols());
                for t in terms {
                    let (zi, zj) = (zv.row(t.i), zv.row(t.j));
                    // coefficient on (z_i - z_j) in d(term)/d(z_i)
                    let coef = match t.kind {
                        PairKind::Pull => 2.0,
                        PairKind::Push => {
                            let d = distance(zi, zj);
                            if d < *margin && d > 0.0 {
                                -2.0 * (margin - d) / d
                            } else {
                                0.0
                            }
                        }
                    } * t.weight
                        * s;
                    if coef == 0.0 {
                        continue;
                    }
                    for k in 0..zv.cols() {
                        let g = coef * (zi[k] - zj[k]);
                        dz[(t.i, k)] += g;
                        dz[(t.j, k)] -= g;
                    }
                }
                vec![(*z, dz)]
            }
        };
        Ok(out)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(super::matrix::squared_distance(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).to_scalar().unwrap(), 6.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        let y = tape.relu(x);
        assert_eq!(
            tape.backward(y).unwrap_err(),
            Error::NonScalarOutput { rows: 2, cols: 2 }
        );
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(1.0));
        let unused = tape.leaf(Matrix::zeros(2, 3));
        let y = tape.scale(x, 2.0);
        let g = tape.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Matrix::zeros(2, 3));
    }

    #[test]
    fn batch_norm_train_needs_two_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(1, 3));
        let g = tape.leaf(Matrix::filled(1, 3, 1.0));
        let b = tape.leaf(Matrix::zeros(1, 3));
        assert_eq!(
            tape.batch_norm_train(x, g, b, 1e-5).unwrap_err(),
            Error::BatchTooSmall(1)
        );
    }
}
