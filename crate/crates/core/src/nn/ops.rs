use ndarray::{Array2, ArrayView1, ArrayViewMut1};

/// Sinusoidal position code: `sin(pos / 10000^(2i/d))` on even columns and
/// `cos` on odd ones.
pub fn add_positional_encoding(mut row: ArrayViewMut1<'_, f64>, pos: usize) {
    let d = row.len();
    for i in 0..d {
        let exponent = (2 * (i / 2)) as f64 / d as f64;
        let angle = pos as f64 / 10_000f64.powf(exponent);
        row[i] += if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

pub fn positional_encoding(len: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, d));
    for (pos, row) in pe.rows_mut().into_iter().enumerate() {
        add_positional_encoding(row, pos);
    }
    pe
}

/// In-place softmax of one row.
pub fn softmax_inplace(mut row: ArrayViewMut1<'_, f64>) {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0;
    row.mapv_inplace(|x| {
        let e = (x - max).exp();
        sum += e;
        e
    });
    row.mapv_inplace(|x| x / sum);
}

pub fn softmax_rows(m: &mut Array2<f64>) {
    for row in m.rows_mut() {
        softmax_inplace(row);
    }
}

/// `log(sum(exp(row)))`, stabilized.
pub fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
