//! Dynamic feedback network: a shared 3-layer tanh MLP emitting one score per
//! active candidate, trained from binary satisfaction signals by policy
//! gradient on the softmax of its outputs.
//!
//! Sign convention: with the default [`GradientSign::Ascent`], an update with
//! reward `r = 1` moves parameters along `+grad log pi(chosen)`, increasing the
//! probability of the chosen candidate. [`GradientSign::Descent`] applies the
//! opposite sign.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientSign {
    #[default]
    Ascent,
    Descent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardScheme {
    /// Satisfied = 1, unsatisfied = 0 (no update).
    #[default]
    ZeroOne,
    /// Satisfied = +1, unsatisfied = -1.
    PlusMinus,
}

impl RewardScheme {
    pub fn reward(self, satisfied: bool) -> f64 {
        match (self, satisfied) {
            (_, true) => 1.0,
            (RewardScheme::ZeroOne, false) => 0.0,
            (RewardScheme::PlusMinus, false) => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackNet {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
    w3: DMatrix<f64>,
    b3: DVector<f64>,
    /// Candidate id of every output row.
    outputs: Vec<String>,
    recent: Vec<VecDeque<f64>>,
    window: usize,
}

/// Gradients of `log pi(chosen | e)` with respect to every parameter.
#[derive(Debug, Clone)]
pub struct NetGrad {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
}

struct Forward {
    h1: DVector<f64>,
    h2: DVector<f64>,
    out: DVector<f64>,
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    DMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / sum).collect()
}

/// `1 / (Var + epsilon)` with population variance; zero below two samples.
pub fn confidence(recent: &[f64], epsilon: f64) -> f64 {
    if recent.len() < 2 {
        return 0.0;
    }
    let n = recent.len() as f64;
    let mean = recent.iter().sum::<f64>() / n;
    let var = recent.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    1.0 / (var + epsilon)
}

impl FeedbackNet {
    /// Hidden layers are Xavier-uniform from `seed`; the output layer starts
    /// at zero so an untrained net scores every candidate 0.
    pub fn new(input: usize, hidden: usize, outputs: Vec<String>, window: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = outputs.len();
        Self {
            w1: xavier(hidden, input, &mut rng),
            b1: DVector::zeros(hidden),
            w2: xavier(hidden, hidden, &mut rng),
            b2: DVector::zeros(hidden),
            w3: DMatrix::zeros(out, hidden),
            b3: DVector::zeros(out),
            recent: vec![VecDeque::new(); out],
            outputs,
            window: window.max(1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn width(&self) -> usize {
        self.outputs.len()
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn recent(&self, output: usize) -> &VecDeque<f64> {
        &self.recent[output]
    }

    pub fn output_layer_mut(&mut self) -> (&mut DMatrix<f64>, &mut DVector<f64>) {
        (&mut self.w3, &mut self.b3)
    }

    fn forward_full(&self, e: &[f64]) -> Result<Forward> {
        if e.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: e.len(),
            });
        }
        let x = DVector::from_column_slice(e);
        let h1 = (&self.w1 * &x + &self.b1).map(f64::tanh);
        let h2 = (&self.w2 * &h1 + &self.b2).map(f64::tanh);
        let out = &self.w3 * &h2 + &self.b3;
        Ok(Forward { h1, h2, out })
    }

    /// Pure forward pass.
    pub fn forward(&self, e: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_full(e)?.out.iter().copied().collect())
    }

    /// Forward pass for `active` candidates; the scores are appended to the
    /// per-output variance windows.
    pub fn df_scores(&mut self, e: &[f64], active: usize) -> Result<Vec<f64>> {
        if active != self.width() {
            return Err(Error::WidthMismatch {
                net: self.width(),
                active,
            });
        }
        let scores = self.forward(e)?;
        for (buf, &s) in self.recent.iter_mut().zip(&scores) {
            if buf.len() == self.window {
                buf.pop_front();
            }
            buf.push_back(s);
        }
        Ok(scores)
    }

    pub fn confidence(&self, output: usize, epsilon: f64) -> f64 {
        let buf: Vec<f64> = self.recent[output].iter().copied().collect();
        confidence(&buf, epsilon)
    }

    pub fn policy(&self, e: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(e)?))
    }

    pub fn log_prob(&self, e: &[f64], chosen: usize) -> Result<f64> {
        let out = self.forward(e)?;
        if chosen >= out.len() {
            return Err(Error::IndexOutOfRange {
                index: chosen,
                len: out.len(),
            });
        }
        let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + out.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        Ok(out[chosen] - lse)
    }

    /// Backprop of `log pi(chosen | e)`: the output gradient is
    /// `onehot(chosen) - pi`.
    pub fn log_prob_grad(&self, e: &[f64], chosen: usize) -> Result<NetGrad> {
        let fw = self.forward_full(e)?;
        if chosen >= fw.out.len() {
            return Err(Error::IndexOutOfRange {
                index: chosen,
                len: fw.out.len(),
            });
        }
        let pi = softmax(fw.out.as_slice());
        let mut g_out = DVector::from_iterator(pi.len(), pi.iter().map(|p| -p));
        g_out[chosen] += 1.0;

        let w3 = &g_out * fw.h2.transpose();
        let g_h2 = self.w3.transpose() * &g_out;
        let g_a2 = g_h2.component_mul(&fw.h2.map(|h| 1.0 - h * h));
        let w2 = &g_a2 * fw.h1.transpose();
        let g_h1 = self.w2.transpose() * &g_a2;
        let g_a1 = g_h1.component_mul(&fw.h1.map(|h| 1.0 - h * h));
        let x = DVector::from_column_slice(e);
        let w1 = &g_a1 * x.transpose();
        Ok(NetGrad {
            w1,
            b1: g_a1,
            w2,
            b2: g_a2,
            w3,
            b3: g_out,
        })
    }

    /// One REINFORCE step: `theta <- theta + sign * eta * r * grad log pi`.
    pub fn policy_update(
        &mut self,
        e: &[f64],
        chosen: usize,
        reward: f64,
        eta: f64,
        sign: GradientSign,
    ) -> Result<()> {
        if chosen >= self.width() {
            return Err(Error::IndexOutOfRange {
                index: chosen,
                len: self.width(),
            });
        }
        if reward == 0.0 || eta == 0.0 {
            return Ok(());
        }
        let g = self.log_prob_grad(e, chosen)?;
        let scale = match sign {
            GradientSign::Ascent => eta * reward,
            GradientSign::Descent => -eta * reward,
        };
        self.w1 += g.w1 * scale;
        self.b1 += g.b1 * scale;
        self.w2 += g.w2 * scale;
        self.b2 += g.b2 * scale;
        self.w3 += g.w3 * scale;
        self.b3 += g.b3 * scale;
        Ok(())
    }

    /// Grows (zero rows) or truncates the output layer. Hidden layers and the
    /// remaining rows are untouched.
    pub fn resize(&mut self, count: usize) {
        let ids: Vec<String> = (0..count)
            .map(|i| {
                self.outputs
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("#{i}"))
            })
            .collect();
        self.sync_outputs(&ids);
    }

    /// Re-keys the output layer to `ids`: rows of retained ids are kept,
    /// new ids get a fresh zero row and an empty variance window.
    pub fn sync_outputs(&mut self, ids: &[String]) {
        if ids == self.outputs.as_slice() {
            return;
        }
        let hidden = self.hidden_dim();
        let mut w3 = DMatrix::zeros(ids.len(), hidden);
        let mut b3 = DVector::zeros(ids.len());
        let mut recent = vec![VecDeque::new(); ids.len()];
        for (new_row, id) in ids.iter().enumerate() {
            if let Some(old_row) = self.outputs.iter().position(|o| o == id) {
                w3.row_mut(new_row).copy_from(&self.w3.row(old_row));
                b3[new_row] = self.b3[old_row];
                recent[new_row] = std::mem::take(&mut self.recent[old_row]);
            }
        }
        self.w3 = w3;
        self.b3 = b3;
        self.recent = recent;
        self.outputs = ids.to_vec();
    }

    /// All parameters flattened (w1, b1, w2, b2, w3, b3; column-major).
    pub fn params(&self) -> Vec<f64> {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w3.as_slice(),
            self.b3.as_slice(),
        ]
        .concat()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for dst in [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.b3.as_mut_slice(),
        ] {
            let n = dst.len();
            dst.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "parameter count mismatch");
    }
}

impl NetGrad {
    /// Flattened in the same order as [`FeedbackNet::params`].
    pub fn flat(&self) -> Vec<f64> {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
            self.w3.as_slice(),
            self.b3.as_slice(),
        ]
        .concat()
    }
}
