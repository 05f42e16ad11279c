//! Per-frame token posteriors from a CTC head, stored in the log domain.

use crate::error::{Error, Result};
use crate::nn::{log_softmax, log_sum_exp, Matrix};

/// Row tolerance for matrices loaded from 32-bit storage.
pub const F32_ROW_TOL: f64 = 1e-4;
/// Row tolerance for matrices computed in f64.
pub const F64_ROW_TOL: f64 = 1e-6;

/// T x V matrix of log-probabilities; every row log-sum-exps to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    frames: usize,
    vocab_size: usize,
    logp: Vec<f64>,
}

impl PosteriorMatrix {
    /// Normalize raw logits row-wise with log-softmax.
    pub fn from_logits(rows: &Matrix) -> Result<Self> {
        let mut logp = Vec::with_capacity(rows.rows() * rows.cols());
        for t in 0..rows.rows() {
            logp.extend(log_softmax(rows.row(t))?);
        }
        Ok(PosteriorMatrix {
            frames: rows.rows(),
            vocab_size: rows.cols(),
            logp,
        })
    }

    /// Accept already-normalized log rows, checking each row's mass.
    pub fn from_log_rows(
        frames: usize,
        vocab_size: usize,
        logp: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        if logp.len() != frames * vocab_size {
            return Err(Error::shape(format!(
                "posterior {}x{} expects {} values, got {}",
                frames,
                vocab_size,
                frames * vocab_size,
                logp.len()
            )));
        }
        if vocab_size < 2 {
            return Err(Error::domain(
                "posterior needs blank plus at least one token",
            ));
        }
        for t in 0..frames {
            let row = &logp[t * vocab_size..(t + 1) * vocab_size];
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::domain(format!(
                    "posterior row {t} has an invalid entry"
                )));
            }
            let mass = log_sum_exp(row);
            if mass.abs() > tol {
                return Err(Error::domain(format!(
                    "posterior row {t} log-sum-exps to {mass:.3e}, outside +/-{tol:.0e}"
                )));
            }
        }
        Ok(PosteriorMatrix {
            frames,
            vocab_size,
            logp,
        })
    }

    /// Build from linear-domain probability rows (each summing to 1).
    pub fn from_linear_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let frames = rows.len();
        let vocab_size = rows.first().map_or(0, |r| r.len());
        let mut logp = Vec::with_capacity(frames * vocab_size);
        for row in rows {
            if row.len() != vocab_size {
                return Err(Error::shape("ragged posterior rows"));
            }
            logp.extend(row.iter().map(|p| p.ln()));
        }
        PosteriorMatrix::from_log_rows(frames, vocab_size, logp, F64_ROW_TOL)
    }

    /// Uniform posterior, handy in tests: every entry is 1/V.
    pub fn uniform(frames: usize, vocab_size: usize) -> Self {
        let lp = -(vocab_size as f64).ln();
        PosteriorMatrix {
            frames,
            vocab_size,
            logp: vec![lp; frames * vocab_size],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Log-probability row for frame `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.logp[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    pub fn get(&self, t: usize, v: usize) -> f64 {
        self.logp[t * self.vocab_size + v]
    }

    pub fn log_data(&self) -> &[f64] {
        &self.logp
    }

    /// Linear-domain probability row for frame `t`.
    pub fn linear_row(&self, t: usize) -> Vec<f64> {
        self.row(t).iter().map(|lp| lp.exp()).collect()
    }

    /// All rows converted to linear probabilities.
    pub fn to_linear(&self) -> Vec<Vec<f64>> {
        (0..self.frames).map(|t| self.linear_row(t)).collect()
    }
}
