//! Training losses and their gradients with respect to network outputs.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::ops::log_sum_exp;
use crate::types::{MaskGrid, TokenGrid};

/// Components of the combined objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub audio_ce: f64,
    pub semantic: f64,
    pub total: f64,
    pub n_masked: usize,
}

/// `alpha * audio + beta * semantic`.
pub fn combined_loss(audio_ce: f64, semantic: f64, alpha: f64, beta: f64, n_masked: usize) -> LossBreakdown {
    let semantic = if beta == 0.0 { 0.0 } else { semantic };
    LossBreakdown {
        audio_ce,
        semantic,
        total: alpha * audio_ce + beta * semantic,
        n_masked,
    }
}

fn check_logit_shape(logits: &Array3<f64>, targets: &TokenGrid, mask: &MaskGrid) -> Result<()> {
    let (k, t, v) = logits.dim();
    if (k, t) != (targets.layers(), targets.frames()) || v < targets.vocab() {
        return Err(Error::shape(
            "audio logits",
            (targets.layers(), targets.frames(), targets.vocab()),
            (k, t, v),
        ));
    }
    mask.check_matches(targets)
}

/// Mean over masked cells of `-log softmax(logits)[target]`.
pub fn masked_cross_entropy(logits: &Array3<f64>, targets: &TokenGrid, mask: &MaskGrid) -> Result<f64> {
    Ok(masked_cross_entropy_impl(logits, targets, mask, false)?.0)
}

/// Loss and its gradient with respect to `logits`; unmasked cells get
/// exactly zero gradient.
pub fn masked_cross_entropy_grad(
    logits: &Array3<f64>,
    targets: &TokenGrid,
    mask: &MaskGrid,
) -> Result<(f64, Array3<f64>)> {
    let (loss, grad) = masked_cross_entropy_impl(logits, targets, mask, true)?;
    Ok((loss, grad.unwrap()))
}

fn masked_cross_entropy_impl(
    logits: &Array3<f64>,
    targets: &TokenGrid,
    mask: &MaskGrid,
    want_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    check_logit_shape(logits, targets, mask)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::invalid("mask", "no masked cells; the audio loss would be vacuous"));
    }
    let mut grad = want_grad.then(|| Array3::zeros(logits.raw_dim()));
    let mut total = 0.0;
    for k in 0..targets.layers() {
        for t in 0..targets.frames() {
            if !mask.is_masked(k, t) {
                continue;
            }
            let row = logits.slice(ndarray::s![k, t, ..]);
            let lse = log_sum_exp(row);
            let target = targets.get(k, t) as usize;
            total += lse - row[target];
            if let Some(g) = grad.as_mut() {
                let mut grow = g.slice_mut(ndarray::s![k, t, ..]);
                grow.zip_mut_with(&row, |gv, &x| *gv = (x - lse).exp() / n as f64);
                grow[target] -= 1.0 / n as f64;
            }
        }
    }
    Ok((total / n as f64, grad))
}

/// Source row for output row `j` when resampling `t_in` rows to `t_out`:
/// `min(t_in - 1, floor((j + 0.5) * t_in / t_out))`, in exact integer form.
pub fn nn_index_map(t_in: usize, t_out: usize) -> Vec<usize> {
    (0..t_out)
        .map(|j| (((2 * j + 1) * t_in) / (2 * t_out)).min(t_in - 1))
        .collect()
}

/// Nearest-neighbour resampling of rows.
pub fn nn_interpolate(seq: ArrayView2<'_, f64>, t_out: usize) -> Result<Array2<f64>> {
    if seq.nrows() == 0 || t_out == 0 {
        return Err(Error::invalid("interpolation", "lengths must be >= 1"));
    }
    let map = nn_index_map(seq.nrows(), t_out);
    Ok(seq.select(Axis(0), &map))
}

pub fn interpolate_codes(codes: &[u32], t_out: usize) -> Result<Vec<u32>> {
    if codes.is_empty() || t_out == 0 {
        return Err(Error::invalid("interpolation", "lengths must be >= 1"));
    }
    Ok(nn_index_map(codes.len(), t_out).into_iter().map(|i| codes[i]).collect())
}

/// Mean cross-entropy over all `T` frames against codes resampled to `T`.
pub fn semantic_ce(logits: &Array2<f64>, codes: &[u32]) -> Result<f64> {
    Ok(semantic_ce_grad(logits, codes)?.0)
}

pub fn semantic_ce_grad(logits: &Array2<f64>, codes: &[u32]) -> Result<(f64, Array2<f64>)> {
    let (t, c) = logits.dim();
    if let Some(bad) = codes.iter().find(|&&x| x as usize >= c) {
        return Err(Error::invalid("semantic codes", format!("{bad} outside [0, {c})")));
    }
    let aligned = interpolate_codes(codes, t)?;
    let mut grad = Array2::zeros((t, c));
    let mut total = 0.0;
    for (j, &code) in aligned.iter().enumerate() {
        let row = logits.row(j);
        let lse = log_sum_exp(row);
        total += lse - row[code as usize];
        let mut g = grad.row_mut(j);
        g.zip_mut_with(&row, |gv, &x| *gv = (x - lse).exp() / t as f64);
        g[code as usize] -= 1.0 / t as f64;
    }
    Ok((total / t as f64, grad))
}

/// Continuous distillation loss `1 - mean_d cos(pred[:, d], target[:, d])`,
/// cosines taken along time.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineLoss {
    pub loss: f64,
    /// Feature dimensions whose prediction or target column had zero norm;
    /// their cosine counts as 0.
    pub degenerate_dims: Vec<usize>,
}

pub fn semantic_cosine(pred: &Array2<f64>, target_feats: &Array2<f64>) -> Result<CosineLoss> {
    Ok(semantic_cosine_grad(pred, target_feats)?.0)
}

pub fn semantic_cosine_grad(pred: &Array2<f64>, target_feats: &Array2<f64>) -> Result<(CosineLoss, Array2<f64>)> {
    let (t, dims) = pred.dim();
    if dims == 0 || dims != target_feats.ncols() {
        return Err(Error::shape("semantic features width", target_feats.ncols(), dims));
    }
    let target = nn_interpolate(target_feats.view(), t)?;
    let mut grad = Array2::zeros((t, dims));
    let mut cos_sum = 0.0;
    let mut degenerate_dims = Vec::new();
    for d in 0..dims {
        let p = pred.column(d);
        let q = target.column(d);
        let np = p.dot(&p).sqrt();
        let nq = q.dot(&q).sqrt();
        if np == 0.0 || nq == 0.0 {
            degenerate_dims.push(d);
            continue;
        }
        let cos = p.dot(&q) / (np * nq);
        cos_sum += cos;
        let mut g = grad.column_mut(d);
        for i in 0..t {
            let dcos = q[i] / (np * nq) - cos * p[i] / (np * np);
            g[i] = -dcos / dims as f64;
        }
    }
    Ok((
        CosineLoss {
            loss: 1.0 - cos_sum / dims as f64,
            degenerate_dims,
        },
        grad,
    ))
}

/// Huber loss on `pred_log_s - ln(true_s)`.
pub fn huber_log_duration(pred_log_s: f64, true_s: f64, delta: f64) -> Result<f64> {
    Ok(huber_log_duration_grad(pred_log_s, true_s, delta)?.0)
}

/// Loss and derivative with respect to `pred_log_s`.
pub fn huber_log_duration_grad(pred_log_s: f64, true_s: f64, delta: f64) -> Result<(f64, f64)> {
    if true_s <= 0.0 || !true_s.is_finite() {
        return Err(Error::invalid("duration", format!("true duration {true_s} must be positive")));
    }
    let e = pred_log_s - true_s.ln();
    if e.abs() <= delta {
        Ok((0.5 * e * e, e))
    } else {
        Ok((delta * (e.abs() - 0.5 * delta), delta * e.signum()))
    }
}
