//! Minimal deterministic numeric primitives: row-major matrices, softmax,
//! layer norm, affine maps and an LSTM cell. Everything is plain `f64` with
//! no hidden state, so results are bit-reproducible across runs.

use crate::error::{Error, Result};

/// Default layer-norm epsilon used when a weight bundle does not override it.
pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from row-major data. Fails if the length does not match or any
    /// entry is non-finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {}x{} expects {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("matrix contains a non-finite entry"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged rows"));
        }
        Matrix::from_vec(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "matvec: matrix has {} cols, vector has {}",
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
        Ok(out)
    }
}

/// Numerically stable softmax (max subtraction before exponentiation).
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("softmax input contains a non-finite entry"));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Log-domain softmax; rows produced here log-sum-exp to 0 up to rounding.
pub fn log_softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::domain("log_softmax of an empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(
            "log_softmax input contains a non-finite entry",
        ));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    Ok(x.iter().map(|v| v - log_sum).collect())
}

/// Sum of probabilities in log space over a small set of terms.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `gain ⊙ (x − mean) / sqrt(var + eps) + bias`, variance is the population
/// variance over the vector.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::domain("layer_norm of an empty vector"));
    }
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(Error::shape(format!(
            "layer_norm: x has {} entries, gain {}, bias {}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::domain("layer_norm eps must be > 0"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    Ok(x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| g * (v - mean) / denom + b)
        .collect())
}

/// `W x + b`.
pub fn linear(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.rows() {
        return Err(Error::shape(format!(
            "linear: bias has {} entries, matrix has {} rows",
            b.len(),
            w.rows()
        )));
    }
    let mut out = w.matvec(x)?;
    for (o, bv) in out.iter_mut().zip(b) {
        *o += bv;
    }
    Ok(out)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden and cell state of one LSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            hidden: vec![0.0; hidden_size],
            cell: vec![0.0; hidden_size],
        }
    }
}

/// LSTM cell parameters. Gate order along the 4h axis is input, forget,
/// candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// 4h x input_size
    pub w_input: Matrix,
    /// 4h x h
    pub w_hidden: Matrix,
    /// 4h
    pub bias: Vec<f64>,
}

impl LstmWeights {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmWeights {
            w_input: Matrix::zeros(4 * hidden_size, input_size),
            w_hidden: Matrix::zeros(4 * hidden_size, hidden_size),
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w_input.cols()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden_size();
        if self.w_input.rows() != 4 * h || self.w_hidden.rows() != 4 * h || self.bias.len() != 4 * h
        {
            return Err(Error::shape(format!(
                "lstm weights inconsistent: w_input {}x{}, w_hidden {}x{}, bias {}",
                self.w_input.rows(),
                self.w_input.cols(),
                self.w_hidden.rows(),
                self.w_hidden.cols(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// One step of the standard LSTM recurrence:
///
/// ```text
/// z = W_in x + W_h h + bias
/// i = sigmoid(z_i), f = sigmoid(z_f), g = tanh(z_g), o = sigmoid(z_o)
/// c' = f * c + i * g
/// h' = o * tanh(c')
/// ```
pub fn lstm_cell(x: &[f64], prev: &LstmState, w: &LstmWeights) -> Result<LstmState> {
    w.check()?;
    let h = w.hidden_size();
    if x.len() != w.input_size() {
        return Err(Error::shape(format!(
            "lstm input has {} entries, weights expect {}",
            x.len(),
            w.input_size()
        )));
    }
    if prev.hidden.len() != h || prev.cell.len() != h {
        return Err(Error::shape(format!(
            "lstm state has hidden {} / cell {}, weights expect {}",
            prev.hidden.len(),
            prev.cell.len(),
            h
        )));
    }

    let zx = w.w_input.matvec(x)?;
    let zh = w.w_hidden.matvec(&prev.hidden)?;
    let mut hidden = vec![0.0; h];
    let mut cell = vec![0.0; h];
    for j in 0..h {
        let zi = zx[j] + zh[j] + w.bias[j];
        let zf = zx[h + j] + zh[h + j] + w.bias[h + j];
        let zg = zx[2 * h + j] + zh[2 * h + j] + w.bias[2 * h + j];
        let zo = zx[3 * h + j] + zh[3 * h + j] + w.bias[3 * h + j];
        let c = sigmoid(zf) * prev.cell[j] + sigmoid(zi) * zg.tanh();
        cell[j] = c;
        hidden[j] = sigmoid(zo) * c.tanh();
    }
    Ok(LstmState { hidden, cell })
}
