//! GRU hidden-layer forward pass.
//!
//! Gate convention:
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)
//! r  = sigmoid(Wr x + Ur h + br)
//! h~ = tanh(Wh x + Uh (r * h) + bh)
//! h' = (1 - z) * h + z * h~
//! ```
//!
//! Weights are stored as f32 and promoted to f64; every pre-activation is
//! accumulated as `sum_j W[i][j] x[j]` (j ascending), then `sum_j U[i][j] h[j]`
//! (j ascending), then the bias. The scalar and batched paths share one
//! kernel, so their outputs agree bit for bit.

use rayon::prelude::*;

use crate::backend::FrameBatch;
use crate::error::{Error, Result};
use crate::model::{Matrix, ModelParams};

/// Hidden state of the recurrent layer.
pub type HistoryVector = Vec<f64>;

/// Arithmetic used by the batched path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MathMode {
    /// Plain multiply then add, bitwise identical to [`gru_step`].
    #[default]
    Reference,
    /// Fused multiply-add accumulation. Deterministic, but not bitwise equal
    /// to the reference path.
    Fused,
}

/// Floating-point operations charged per GRU row by the cost model.
pub fn flops_per_row(hidden: usize, embed: usize) -> u64 {
    let (h, d) = (hidden as u64, embed as u64);
    6 * h * d + 6 * h * h + 12 * h
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn preact(w: &Matrix, u: &Matrix, b: &[f32], i: usize, x: &[f64], h: &[f64], mode: MathMode) -> f64 {
    let mut acc = 0.0f64;
    match mode {
        MathMode::Reference => {
            for (&wj, &xj) in w.row(i).iter().zip(x) {
                acc += f64::from(wj) * xj;
            }
            for (&uj, &hj) in u.row(i).iter().zip(h) {
                acc += f64::from(uj) * hj;
            }
        }
        MathMode::Fused => {
            for (&wj, &xj) in w.row(i).iter().zip(x) {
                acc = f64::from(wj).mul_add(xj, acc);
            }
            for (&uj, &hj) in u.row(i).iter().zip(h) {
                acc = f64::from(uj).mul_add(hj, acc);
            }
        }
    }
    acc + f64::from(b[i])
}

/// Unchecked kernel: `x` has length D, `h` and `out` length H.
pub(crate) fn gru_row(model: &ModelParams, x: &[f64], h: &[f64], out: &mut [f64], mode: MathMode) {
    let hidden = h.len();
    let mut z = vec![0.0f64; hidden];
    let mut rh = vec![0.0f64; hidden];
    for i in 0..hidden {
        z[i] = sigmoid(preact(&model.w_z, &model.u_z, &model.b_z, i, x, h, mode));
        let r = sigmoid(preact(&model.w_r, &model.u_r, &model.b_r, i, x, h, mode));
        rh[i] = r * h[i];
    }
    for i in 0..hidden {
        let cand = preact(&model.w_h, &model.u_h, &model.b_h, i, x, &rh, mode).tanh();
        out[i] = (1.0 - z[i]) * h[i] + z[i] * cand;
    }
}

fn check_inputs(model: &ModelParams, x: &[f64], h: &[f64]) -> Result<()> {
    let (hidden, embed) = (model.dims.hidden(), model.dims.embed());
    if x.len() != embed || h.len() != hidden {
        return Err(Error::Dimension(format!(
            "gru input has embedding length {} and state length {}, model expects {embed} and {hidden}",
            x.len(),
            h.len()
        )));
    }
    if x.iter().chain(h).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value in gru input".into()));
    }
    Ok(())
}

/// One GRU step from embedding `x` and history `h`.
pub fn gru_step(model: &ModelParams, x: &[f64], h: &[f64]) -> Result<HistoryVector> {
    check_inputs(model, x, h)?;
    let mut out = vec![0.0; h.len()];
    gru_row(model, x, h, &mut out, MathMode::Reference);
    Ok(out)
}

/// Runs every row of a packed batch. Rows are processed in parallel; each
/// row's arithmetic is independent of the others.
pub fn gru_batch(model: &ModelParams, batch: &FrameBatch, mode: MathMode) -> Result<Vec<HistoryVector>> {
    let (hidden, embed) = (model.dims.hidden(), model.dims.embed());
    if batch.hidden() != hidden || batch.embed() != embed {
        return Err(Error::Dimension(format!(
            "batch packed for H={} D={}, model has H={hidden} D={embed}",
            batch.hidden(),
            batch.embed()
        )));
    }
    batch.check_layout()?;
    if batch.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value in batch".into()));
    }
    let outputs = (0..batch.rows())
        .into_par_iter()
        .map(|i| {
            let (h, x) = batch.row(i);
            let mut out = vec![0.0; hidden];
            gru_row(model, x, h, &mut out, mode);
            out
        })
        .collect();
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_model, ModelDims};

    #[test]
    fn zero_model_halves_state() {
        let model = ModelParams::zeros(ModelDims::new(4, 3, 2, 8, 2)).unwrap();
        let h = vec![0.7, -0.25, 0.123456789];
        let out = gru_step(&model, &[0.3, -0.9], &h).unwrap();
        for (o, hi) in out.iter().zip(&h) {
            assert_eq!(*o, 0.5 * hi);
        }
    }

    #[test]
    fn single_unit_hand_value() {
        let mut model = ModelParams::zeros(ModelDims::new(2, 1, 1, 4, 2)).unwrap();
        model.w_h.as_mut_slice()[0] = 1.0;
        let out = gru_step(&model, &[0.5], &[0.0]).unwrap();
        assert!((out[0] - 0.2310585786).abs() < 1e-10);
        assert!((out[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn zero_state_skips_recurrent_term() {
        let model = generate_model(ModelDims::new(10, 5, 4, 16, 3), 9).unwrap();
        let x: Vec<f64> = model.embedding(3).unwrap().iter().map(|&v| v as f64).collect();
        let out = gru_step(&model, &x, &[0.0; 5]).unwrap();
        for i in 0..5 {
            let mut zp = 0.0;
            let mut cp = 0.0;
            for j in 0..4 {
                zp += model.w_z.row(i)[j] as f64 * x[j];
                cp += model.w_h.row(i)[j] as f64 * x[j];
            }
            let z = 1.0 / (1.0 + (-(zp + model.b_z[i] as f64)).exp());
            let expect = z * (cp + model.b_h[i] as f64).tanh();
            assert!((out[i] - expect).abs() < 1e-15);
            assert!(out[i].abs() < 1.0);
        }
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let model = ModelParams::zeros(ModelDims::new(4, 3, 2, 8, 2)).unwrap();
        assert!(matches!(gru_step(&model, &[0.0], &[0.0; 3]), Err(Error::Dimension(_))));
        assert!(matches!(gru_step(&model, &[0.0; 2], &[0.0; 4]), Err(Error::Dimension(_))));
        assert!(matches!(
            gru_step(&model, &[0.0, f64::NAN], &[0.0; 3]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn flop_budget() {
        assert_eq!(flops_per_row(128, 128), 6 * 128 * 128 * 2 + 12 * 128);
        assert_eq!(flops_per_row(1, 1), 24);
    }
}
