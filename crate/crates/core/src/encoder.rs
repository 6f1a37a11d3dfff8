//! Per-modality MLP encoder: linear → batch norm → ReLU → linear projection
//! → row ℓ2 normalization.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numcore::{BatchStats, Matrix, Rng, Tape, Var, NORM_EPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, proj_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            proj_dim,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.proj_dim == 0 {
            return Err(Error::InvalidArgument(
                "encoder dimensions must all be >= 1".into(),
            ));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidArgument(
                "bn_eps must be > 0 and bn_momentum in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only; forward is pure.
    Eval,
}

/// Trainable weights and batch-norm state of one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// input_dim x hidden_dim
    pub w1: Matrix,
    /// 1 x hidden_dim
    pub b1: Matrix,
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// hidden_dim x proj_dim
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Names of the trainable tensors, in [`EncoderParams::trainable`] order.
pub const TRAINABLE_NAMES: [&str; 6] = ["w1", "b1", "gamma", "beta", "w2", "b2"];

/// Leaf handles of one encoder's trainable tensors on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub w1: Var,
    pub b1: Var,
    pub gamma: Var,
    pub beta: Var,
    pub w2: Var,
    pub b2: Var,
}

impl EncoderVars {
    pub fn as_array(&self) -> [Var; 6] {
        [self.w1, self.b1, self.gamma, self.beta, self.w2, self.b2]
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases, identity batch norm.
    pub fn init(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let w1 = glorot(config.input_dim, h, rng);
        let w2 = glorot(h, config.proj_dim, rng);
        Ok(Self {
            config,
            w1,
            b1: Matrix::zeros(1, h),
            gamma: Matrix::filled(1, h, 1.0),
            beta: Matrix::zeros(1, h),
            running_mean: vec![0.0; h],
            running_var: vec![1.0; h],
            w2,
            b2: Matrix::zeros(1, config.proj_dim),
        })
    }

    pub fn trainable(&self) -> [&Matrix; 6] {
        [&self.w1, &self.b1, &self.gamma, &self.beta, &self.w2, &self.b2]
    }

    pub fn trainable_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.gamma,
            &mut self.beta,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    /// Puts the trainable tensors on `tape` as leaves.
    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            gamma: tape.leaf(self.gamma.clone()),
            beta: tape.leaf(self.beta.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    /// Records the forward pass on `tape`. In [`Mode::Train`] the running
    /// statistics are updated from the batch.
    pub fn forward_on_tape(
        &mut self,
        tape: &mut Tape,
        vars: &EncoderVars,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.config.input_dim {
            return Err(Error::dims(
                "encoder forward",
                tape.value(x).shape(),
                (tape.value(x).rows(), self.config.input_dim),
            ));
        }
        let pre = tape.matmul(x, vars.w1)?;
        let pre = tape.add_row_broadcast(pre, vars.b1)?;
        let normed = match mode {
            Mode::Train => {
                let (out, stats) =
                    tape.batch_norm_train(pre, vars.gamma, vars.beta, self.config.bn_eps)?;
                self.update_running(&stats, tape.value(x).rows());
                out
            }
            Mode::Eval => tape.batch_norm_eval(
                pre,
                vars.gamma,
                vars.beta,
                &self.running_mean,
                &self.running_var,
                self.config.bn_eps,
            )?,
        };
        let act = tape.relu(normed);
        let proj = tape.matmul(act, vars.w2)?;
        let proj = tape.add_row_broadcast(proj, vars.b2)?;
        Ok(tape.row_l2_normalize(proj, NORM_EPS))
    }

    fn update_running(&mut self, stats: &BatchStats, n: usize) {
        let m = self.config.bn_momentum;
        // running variance tracks the unbiased estimate
        let correction = n as f64 / (n as f64 - 1.0);
        for (r, v) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * v * correction;
        }
    }

    /// Unit-norm embeddings of the rows of `x`.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let input = tape.leaf(x.clone());
        let out = self.forward_on_tape(&mut tape, &vars, input, mode)?;
        Ok(tape.value(out).clone())
    }

    /// Eval-mode embeddings; does not touch any state.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        let mut scratch = self.clone();
        scratch.forward(x, Mode::Eval)
    }

    /// All tensors by name, including batch-norm running statistics.
    pub fn named_tensors(&self) -> Vec<(String, Matrix)> {
        let mut out: Vec<(String, Matrix)> = TRAINABLE_NAMES
            .iter()
            .zip(self.trainable())
            .map(|(n, m)| (String::from(*n), m.clone()))
            .collect();
        out.push(("running_mean".into(), Matrix::row_vector(&self.running_mean)));
        out.push(("running_var".into(), Matrix::row_vector(&self.running_var)));
        out
    }

    /// Rebuilds parameters from [`EncoderParams::named_tensors`] output.
    pub fn from_named_tensors(
        config: EncoderConfig,
        mut lookup: impl FnMut(&str) -> Option<Matrix>,
    ) -> Result<Self> {
        config.validate()?;
        let (d, h, p) = (config.input_dim, config.hidden_dim, config.proj_dim);
        let mut take = |name: &str, shape: (usize, usize)| -> Result<Matrix> {
            let m = lookup(name)
                .ok_or_else(|| Error::InvalidArgument(alloc::format!("missing tensor {name}")))?;
            if m.shape() != shape {
                return Err(Error::dims("checkpoint tensor", shape, m.shape()));
            }
            Ok(m)
        };
        let params = Self {
            config,
            w1: take("w1", (d, h))?,
            b1: take("b1", (1, h))?,
            gamma: take("gamma", (1, h))?,
            beta: take("beta", (1, h))?,
            w2: take("w2", (h, p))?,
            b2: take("b2", (1, p))?,
            running_mean: take("running_mean", (1, h))?.into_vec(),
            running_var: take("running_var", (1, h))?.into_vec(),
        };
        if params.running_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(
                "running variance entries must be positive".into(),
            ));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::norm;

    fn random_input(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.normal()).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn shapes() {
        let p = EncoderParams::init(EncoderConfig::new(10, 128, 64), &mut Rng::new(0)).unwrap();
        assert_eq!(p.w1.shape(), (10, 128));
        assert_eq!(p.w2.shape(), (128, 64));
        assert_eq!(p.b1.shape(), (1, 128));
        assert_eq!(p.b2.shape(), (1, 64));
        assert!(p.gamma.as_slice().iter().all(|&g| g == 1.0));
        assert!(p.running_var.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = EncoderConfig::new(7, 16, 8);
        let a = EncoderParams::init(cfg, &mut Rng::new(3)).unwrap();
        let b = EncoderParams::init(cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_mean_is_near_zero() {
        let cfg = EncoderConfig::new(100, 128, 64);
        let p = EncoderParams::init(cfg, &mut Rng::new(11)).unwrap();
        let w = p.w1.as_slice();
        let bound = libm::sqrt(6.0 / 228.0);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        // uniform(-b, b) has sd b/sqrt(3); 3 standard errors of the mean
        let se = bound / libm::sqrt(3.0) / libm::sqrt(w.len() as f64);
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
        assert!(w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn rows_are_unit_norm() {
        let mut rng = Rng::new(5);
        let mut p = EncoderParams::init(EncoderConfig::new(6, 12, 4), &mut rng).unwrap();
        let x = random_input(9, 6, &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            let z = p.forward(&x, mode).unwrap();
            for row in z.row_iter() {
                assert!((norm(row) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eval_is_pure() {
        let mut rng = Rng::new(9);
        let mut p = EncoderParams::init(EncoderConfig::new(5, 8, 3), &mut rng).unwrap();
        let x = random_input(4, 5, &mut rng);
        let before = p.clone();
        let a = p.forward(&x, Mode::Eval).unwrap();
        let b = p.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(p, before);
    }

    #[test]
    fn train_updates_running_stats() {
        let mut rng = Rng::new(9);
        let mut p = EncoderParams::init(EncoderConfig::new(5, 8, 3), &mut rng).unwrap();
        let x = random_input(6, 5, &mut rng);
        p.forward(&x, Mode::Train).unwrap();
        assert!(p.running_mean.iter().any(|&m| m != 0.0));
        assert!(p.running_var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn train_rejects_single_row() {
        let mut rng = Rng::new(1);
        let mut p = EncoderParams::init(EncoderConfig::new(3, 4, 2), &mut rng).unwrap();
        let x = random_input(1, 3, &mut rng);
        assert_eq!(p.forward(&x, Mode::Train), Err(Error::BatchTooSmall(1)));
        assert!(p.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn wrong_input_width() {
        let mut rng = Rng::new(1);
        let mut p = EncoderParams::init(EncoderConfig::new(3, 4, 2), &mut rng).unwrap();
        assert!(p.forward(&Matrix::zeros(4, 5), Mode::Eval).is_err());
    }

    #[test]
    fn encoders_do_not_share_storage() {
        let cfg = EncoderConfig::new(4, 6, 3);
        let mut rng = Rng::new(2);
        let mut encoders = [
            EncoderParams::init(cfg, &mut rng).unwrap(),
            EncoderParams::init(cfg, &mut rng).unwrap(),
        ];
        let snapshot = encoders[1].clone();
        encoders[0].w1[(0, 0)] += 1.0;
        encoders[0].running_var[0] = 5.0;
        assert_eq!(encoders[1], snapshot);
    }

    #[test]
    fn named_tensor_round_trip() {
        let mut rng = Rng::new(4);
        let mut p = EncoderParams::init(EncoderConfig::new(5, 6, 3), &mut rng).unwrap();
        p.forward(&random_input(4, 5, &mut rng), Mode::Train).unwrap();
        let named = p.named_tensors();
        let back = EncoderParams::from_named_tensors(p.config, |n| {
            named.iter().find(|(k, _)| k == n).map(|(_, m)| m.clone())
        })
        .unwrap();
        assert_eq!(back, p);
    }
}
