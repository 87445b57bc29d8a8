//! Sample-reweighted decorrelation of representation variables.
//!
//! With sample weights `w = softplus(u)` over the `n` training nodes and a
//! representation `H` (`n x p`), the weighted cross-moment of column `m`
//! against every other column is
//!
//! ```text
//! c_m = H[:,m]^T diag(w) H[:,-m] / n - (H[:,m]^T w / n) (H[:,-m]^T w / n)
//! ```
//!
//! and the loss is `Σ_m (γ^T |c_m|)^2 + λ1/n Σ w_i^2 + λ2 (mean(w) - 1)^2`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Adam, Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Where the square sits in the decorrelation term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LcdVariant {
    /// `Σ_m (γ^T |c_m|)^2`
    #[default]
    SqOutside,
    /// `Σ_m γ^T (c_m ⊙ c_m)`
    SqInside,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcdConfig {
    pub enabled: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma_trainable: bool,
    pub variant: LcdVariant,
}

impl Default for LcdConfig {
    fn default() -> Self {
        LcdConfig {
            enabled: true,
            lambda1: 0.1,
            lambda2: 1.0,
            gamma_trainable: false,
            variant: LcdVariant::SqOutside,
        }
    }
}

impl LcdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(format!(
                "lcd.lambda1 and lcd.lambda2 must be non-negative, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// `softplus^-1(1)`: raw value whose softplus is exactly one.
pub fn inverse_softplus_one() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

/// Trainable sample weights (and optionally variable emphasis weights).
#[derive(Clone, Debug, PartialEq)]
pub struct LcdState {
    /// `n x 1` raw weights; the effective weights are `softplus(u)`.
    pub u: Matrix,
    /// `1 x (p-1)`. Raw values passed through softplus when trainable,
    /// used directly otherwise.
    pub gamma: Matrix,
    pub config: LcdConfig,
}

impl LcdState {
    pub fn new(num_samples: usize, num_vars: usize, config: LcdConfig) -> Self {
        let gamma_init = if config.gamma_trainable {
            inverse_softplus_one()
        } else {
            1.0
        };
        LcdState {
            u: Matrix::filled(num_samples, 1, inverse_softplus_one()),
            gamma: Matrix::filled(1, num_vars.saturating_sub(1), gamma_init),
            config,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.u.data().iter().map(|&v| softplus(v)).collect()
    }

    pub fn effective_gamma(&self) -> Vec<f64> {
        if self.config.gamma_trainable {
            self.gamma.data().iter().map(|&v| softplus(v)).collect()
        } else {
            self.gamma.data().to_vec()
        }
    }

    /// Puts the weight parameters on the tape. Returns `(w, gamma, leaves)`
    /// where `leaves` are the trainable raw parameters in `[u, gamma?]` order.
    pub fn to_tape(&self, tape: &mut Tape) -> (Var, Var, Vec<Var>) {
        let u = tape.leaf(self.u.clone());
        let w = tape.softplus(u);
        let mut leaves = vec![u];
        let gamma = if self.config.gamma_trainable {
            let raw = tape.leaf(self.gamma.clone());
            leaves.push(raw);
            tape.softplus(raw)
        } else {
            tape.constant(self.gamma.clone())
        };
        (w, gamma, leaves)
    }

    /// Evaluates the loss for a fixed representation.
    pub fn loss_value(&self, h: &Matrix) -> Result<f64> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let (w, gamma, _) = self.to_tape(&mut tape);
        let loss = lcd_loss(&mut tape, hv, w, gamma, &self.config)?;
        Ok(tape.value(loss).data()[0])
    }

    /// One optimizer update of `u` from its gradient. Positivity of `w` comes
    /// from the softplus parameterization, never from clipping.
    pub fn step_weights(&mut self, grad_u: &Matrix, adam: &mut Adam) -> Result<()> {
        adam.step(&mut [&mut self.u], &[grad_u])
    }

    /// Gradient of the loss with respect to `u` for a fixed representation.
    pub fn weight_gradient(&self, h: &Matrix) -> Result<(f64, Matrix)> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let (w, gamma, leaves) = self.to_tape(&mut tape);
        let loss = lcd_loss(&mut tape, hv, w, gamma, &self.config)?;
        tape.backward(loss)?;
        let value = tape.value(loss).data()[0];
        let grad = tape
            .grad(leaves[0])
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(self.u.rows(), 1));
        Ok((value, grad))
    }
}

/// Weighted cross-moments of column `m` against every other column, in
/// ascending column order.
pub fn weighted_cov(h: &Matrix, w: &[f64], m: usize) -> Vec<f64> {
    let (n, p) = h.shape();
    let nf = n as f64;
    let mean_m: f64 = (0..n).map(|i| h[(i, m)] * w[i]).sum::<f64>() / nf;
    (0..p)
        .filter(|&k| k != m)
        .map(|k| {
            let cross: f64 = (0..n).map(|i| h[(i, m)] * w[i] * h[(i, k)]).sum::<f64>() / nf;
            let mean_k: f64 = (0..n).map(|i| h[(i, k)] * w[i]).sum::<f64>() / nf;
            cross - mean_m * mean_k
        })
        .collect()
}

/// Weighted Pearson correlation between columns `a` and `b` with weights
/// normalized to sum to one.
pub fn weighted_correlation(h: &Matrix, w: &[f64], a: usize, b: usize) -> f64 {
    let total: f64 = w.iter().sum();
    let n = h.rows();
    let mean = |c: usize| (0..n).map(|i| w[i] * h[(i, c)]).sum::<f64>() / total;
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..n {
        let da = h[(i, a)] - ma;
        let db = h[(i, b)] - mb;
        cov += w[i] * da * db;
        va += w[i] * da * da;
        vb += w[i] * db * db;
    }
    cov / (va * vb).sqrt()
}

/// All weighted cross-moments as a `p x p` matrix on the tape.
fn cross_moment_matrix(tape: &mut Tape, h: Var, w: Var) -> Result<Var> {
    let n = tape.value(h).rows() as f64;
    let hw = tape.scale_rows(h, w)?;
    let ht = tape.transpose(h);
    let second = tape.matmul(ht, hw)?;
    let second = tape.scale(second, 1.0 / n);
    let wt = tape.transpose(w);
    let mean = tape.matmul(wt, h)?;
    let mean = tape.scale(mean, 1.0 / n);
    let mean_t = tape.transpose(mean);
    let outer = tape.matmul(mean_t, mean)?;
    tape.sub(second, outer)
}

/// Full regularizer on the tape. `h` is `n x p`, `w` is `n x 1` (positive),
/// `gamma` is `1 x (p-1)`.
pub fn lcd_loss(tape: &mut Tape, h: Var, w: Var, gamma: Var, cfg: &LcdConfig) -> Result<Var> {
    let (n, p) = tape.value(h).shape();
    if n < 2 {
        return Err(Error::Config(format!("lcd needs at least 2 samples, got {n}")));
    }
    if tape.value(w).shape() != (n, 1) {
        return Err(Error::shape(
            "lcd_loss",
            format!("weights {:?} for {n} samples", tape.value(w).shape()),
        ));
    }
    if tape.value(gamma).shape() != (1, p.saturating_sub(1)) {
        return Err(Error::shape(
            "lcd_loss",
            format!("gamma {:?} for {p} variables", tape.value(gamma).shape()),
        ));
    }

    let moments = cross_moment_matrix(tape, h, w)?;
    let mut decor: Option<Var> = None;
    if p >= 2 {
        let magnitude = tape.abs(moments);
        for m in 0..p {
            let others: Vec<usize> = (0..p).filter(|&k| k != m).collect();
            let row = tape.gather_rows(magnitude, &[m])?;
            let c_m = tape.gather_cols(row, &others)?;
            let term = match cfg.variant {
                LcdVariant::SqOutside => {
                    let weighted = tape.mul(gamma, c_m)?;
                    let s = tape.sum_all(weighted);
                    tape.square(s)
                }
                LcdVariant::SqInside => {
                    let sq = tape.square(c_m);
                    let weighted = tape.mul(gamma, sq)?;
                    tape.sum_all(weighted)
                }
            };
            decor = Some(match decor {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
    }

    let w_sq = tape.square(w);
    let w_sq = tape.sum_all(w_sq);
    let reg1 = tape.scale(w_sq, cfg.lambda1 / n as f64);
    let w_mean = tape.mean_all(w)?;
    let one = tape.constant(Matrix::scalar(1.0));
    let dev = tape.sub(w_mean, one)?;
    let dev = tape.square(dev);
    let reg2 = tape.scale(dev, cfg.lambda2);
    let regs = tape.add(reg1, reg2)?;
    match decor {
        Some(d) => tape.add(d, regs),
        None => Ok(regs),
    }
}
