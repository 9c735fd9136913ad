//! Transformer building blocks with explicit forward caches and backward
//! passes. Activations are row-major `rows x features` matrices; several
//! sequences are packed along the rows and attention is restricted to each
//! sequence's [`Segment`].

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};

use super::ops::softmax_rows;
use super::params::{ParamId, ParamStore};
use crate::rng::SeededRng;

const LN_EPS: f64 = 1e-5;
pub(crate) const WEIGHT_STD: f64 = 0.02;

/// Contiguous rows belonging to one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Per-sequence conditioning vectors and the sequence owning each row.
#[derive(Debug, Clone, Copy)]
pub struct RowCond<'a> {
    /// `n_sequences x cond_dim`.
    pub vectors: &'a Array2<f64>,
    pub row_item: &'a [usize],
}

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, std: f64, rng: &mut SeededRng) -> Self {
        Self {
            w: ps.normal(format!("{name}.w"), (d_in, d_out), std, rng),
            b: ps.zeros(format!("{name}.b"), (1, d_out)),
        }
    }

    pub fn zeroed(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            w: ps.zeros(format!("{name}.w"), (d_in, d_out)),
            b: ps.zeros(format!("{name}.b"), (1, d_out)),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(ps.get(self.w));
        y += ps.get(self.b);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, ps: &ParamStore, grads: &mut ParamStore, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.backward_params(grads, x, dy);
        dy.dot(&ps.get(self.w).t())
    }

    pub fn backward_params(&self, grads: &mut ParamStore, x: &Array2<f64>, dy: &Array2<f64>) {
        general_mat_mul(1.0, &x.t(), dy, 1.0, grads.get_mut(self.w));
        let db = dy.sum_axis(Axis(0));
        let mut gb = grads.get_mut(self.b).row_mut(0);
        gb += &db;
    }
}

#[derive(Debug, Clone)]
struct Modulation {
    scale: Linear,
    shift: Linear,
}

/// Layer normalization whose output is modulated per sequence:
/// `(1 + scale(c)) * LN(x) + shift(c)`, with `scale` and `shift` affine in the
/// conditioning vector `c`. Without modulation this is plain LN.
#[derive(Debug, Clone)]
pub struct AdaLn {
    gain: ParamId,
    bias: ParamId,
    modulation: Option<Modulation>,
}

#[derive(Debug)]
pub struct AdaLnCache {
    normed: Array2<f64>,
    inv_std: Array1<f64>,
    ln: Array2<f64>,
    scale: Option<Array2<f64>>,
}

impl AdaLn {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, cond_dim: Option<usize>) -> Self {
        let gain = ps.ones(format!("{name}.gain"), (1, d));
        let bias = ps.zeros(format!("{name}.bias"), (1, d));
        let modulation = cond_dim.map(|c| Modulation {
            scale: Linear::zeroed(ps, &format!("{name}.scale"), c, d),
            shift: Linear::zeroed(ps, &format!("{name}.shift"), c, d),
        });
        Self { gain, bias, modulation }
    }

    pub fn is_modulated(&self) -> bool {
        self.modulation.is_some()
    }

    /// Same parameters with the conditioning path removed.
    pub fn unmodulated(&self) -> Self {
        Self {
            modulation: None,
            ..self.clone()
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array2<f64>, cond: Option<RowCond<'_>>) -> (Array2<f64>, AdaLnCache) {
        let (n, d) = x.dim();
        let mut normed = Array2::zeros((n, d));
        let mut inv_std = Array1::zeros(n);
        for (r, row) in x.rows().into_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            normed.row_mut(r).assign(&row.mapv(|v| (v - mean) * is));
        }
        let mut ln = &normed * ps.get(self.gain);
        ln += ps.get(self.bias);

        match (&self.modulation, cond) {
            (Some(m), Some(c)) => {
                let scale = m.scale.forward(ps, c.vectors);
                let shift = m.shift.forward(ps, c.vectors);
                let mut y = ln.clone();
                for (r, mut row) in y.rows_mut().into_iter().enumerate() {
                    let item = c.row_item[r];
                    row.zip_mut_with(&scale.row(item), |v, &s| *v *= 1.0 + s);
                    row += &shift.row(item);
                }
                (
                    y,
                    AdaLnCache {
                        normed,
                        inv_std,
                        ln,
                        scale: Some(scale),
                    },
                )
            }
            _ => (
                ln.clone(),
                AdaLnCache {
                    normed,
                    inv_std,
                    ln,
                    scale: None,
                },
            ),
        }
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        grads: &mut ParamStore,
        cache: &AdaLnCache,
        cond: Option<RowCond<'_>>,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let d = dy.ncols();
        let dln = match (&self.modulation, cond, &cache.scale) {
            (Some(m), Some(c), Some(scale)) => {
                let items = c.vectors.nrows();
                let mut dscale = Array2::zeros((items, d));
                let mut dshift = Array2::zeros((items, d));
                let mut dln = dy.clone();
                for (r, mut row) in dln.rows_mut().into_iter().enumerate() {
                    let item = c.row_item[r];
                    let mut ds = dscale.row_mut(item);
                    ds.zip_mut_with(&(&dy.row(r) * &cache.ln.row(r)), |a, &b| *a += b);
                    let mut dh = dshift.row_mut(item);
                    dh += &dy.row(r);
                    row.zip_mut_with(&scale.row(item), |v, &s| *v *= 1.0 + s);
                }
                m.scale.backward_params(grads, c.vectors, &dscale);
                m.shift.backward_params(grads, c.vectors, &dshift);
                dln
            }
            _ => dy.clone(),
        };

        {
            let dg = (&dln * &cache.normed).sum_axis(Axis(0));
            let mut g = grads.get_mut(self.gain).row_mut(0);
            g += &dg;
        }
        {
            let db = dln.sum_axis(Axis(0));
            let mut b = grads.get_mut(self.bias).row_mut(0);
            b += &db;
        }

        let dnormed = &dln * ps.get(self.gain);
        let mut dx = Array2::zeros(dy.raw_dim());
        for r in 0..dy.nrows() {
            let dn = dnormed.row(r);
            let nr = cache.normed.row(r);
            let mean_dn = dn.sum() / d as f64;
            let mean_dn_n = dn.dot(&nr) / d as f64;
            let is = cache.inv_std[r];
            let mut out = dx.row_mut(r);
            for j in 0..d {
                out[j] = is * (dn[j] - mean_dn - nr[j] * mean_dn_n);
            }
        }
        dx
    }
}

/// Bidirectional multi-head self-attention within each segment.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    n_heads: usize,
}

#[derive(Debug)]
pub struct AttentionCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights per (segment, head), segment-major.
    probs: Vec<Array2<f64>>,
    merged: Array2<f64>,
}

impl SelfAttention {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, n_heads: usize, rng: &mut SeededRng) -> Self {
        Self {
            q: Linear::new(ps, &format!("{name}.q"), d, d, WEIGHT_STD, rng),
            k: Linear::new(ps, &format!("{name}.k"), d, d, WEIGHT_STD, rng),
            v: Linear::new(ps, &format!("{name}.v"), d, d, WEIGHT_STD, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, WEIGHT_STD, rng),
            n_heads,
        }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &Array2<f64>,
        segments: &[Segment],
        record: bool,
    ) -> (Array2<f64>, Option<AttentionCache>) {
        let q = self.q.forward(ps, x);
        let k = self.k.forward(ps, x);
        let v = self.v.forward(ps, x);
        let d = x.ncols();
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut merged = Array2::zeros(x.raw_dim());
        let mut probs = Vec::new();
        for seg in segments {
            let rows = seg.start..seg.end();
            for h in 0..self.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut p = Array2::zeros((seg.len, seg.len));
                general_mat_mul(scale, &qh, &kh.t(), 0.0, &mut p);
                softmax_rows(&mut p);
                let mut out = merged.slice_mut(s![rows.clone(), cols]);
                general_mat_mul(1.0, &p, &vh, 0.0, &mut out);
                if record {
                    probs.push(p);
                }
            }
        }
        let y = self.o.forward(ps, &merged);
        let cache = record.then(|| AttentionCache {
            input: x.clone(),
            q,
            k,
            v,
            probs,
            merged,
        });
        (y, cache)
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        grads: &mut ParamStore,
        cache: &AttentionCache,
        segments: &[Segment],
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let dmerged = self.o.backward(ps, grads, &cache.merged, dy);
        let d = dy.ncols();
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(dy.raw_dim());
        let mut dk = Array2::zeros(dy.raw_dim());
        let mut dv = Array2::zeros(dy.raw_dim());
        let mut probs = cache.probs.iter();
        for seg in segments {
            let rows = seg.start..seg.end();
            for h in 0..self.n_heads {
                let p = probs.next().expect("attention cache matches segments");
                let cols = h * dh..(h + 1) * dh;
                let qh = cache.q.slice(s![rows.clone(), cols.clone()]);
                let kh = cache.k.slice(s![rows.clone(), cols.clone()]);
                let vh = cache.v.slice(s![rows.clone(), cols.clone()]);
                let douth = dmerged.slice(s![rows.clone(), cols.clone()]);

                let mut dp = douth.dot(&vh.t());
                general_mat_mul(1.0, &p.t(), &douth, 1.0, &mut dv.slice_mut(s![rows.clone(), cols.clone()]));

                // softmax backward: dS = P * (dP - rowsum(dP * P))
                for (mut dprow, prow) in dp.rows_mut().into_iter().zip(p.rows()) {
                    let inner = dprow.dot(&prow);
                    dprow.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - inner) * scale);
                }
                general_mat_mul(1.0, &dp, &kh, 1.0, &mut dq.slice_mut(s![rows.clone(), cols.clone()]));
                general_mat_mul(1.0, &dp.t(), &qh, 1.0, &mut dk.slice_mut(s![rows.clone(), cols]));
            }
        }
        let mut dx = self.q.backward(ps, grads, &cache.input, &dq);
        dx += &self.k.backward(ps, grads, &cache.input, &dk);
        dx += &self.v.backward(ps, grads, &cache.input, &dv);
        dx
    }
}

/// Position-wise `ReLU(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug)]
pub struct FeedForwardCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut SeededRng) -> Self {
        Self {
            up: Linear::new(ps, &format!("{name}.up"), d, d_ff, WEIGHT_STD, rng),
            down: Linear::new(ps, &format!("{name}.down"), d_ff, d, WEIGHT_STD, rng),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let mut hidden = self.up.forward(ps, x);
        hidden.mapv_inplace(|v| v.max(0.0));
        let y = self.down.forward(ps, &hidden);
        (
            y,
            FeedForwardCache {
                input: x.clone(),
                hidden,
            },
        )
    }

    pub fn backward(&self, ps: &ParamStore, grads: &mut ParamStore, cache: &FeedForwardCache, dy: &Array2<f64>) -> Array2<f64> {
        let mut dhidden = self.down.backward(ps, grads, &cache.hidden, dy);
        dhidden.zip_mut_with(&cache.hidden, |g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
        self.up.backward(ps, grads, &cache.input, &dhidden)
    }
}

/// Pre-norm block: `x + Attn(N1(x))`, then `+ FF(N2(.))`.
#[derive(Debug, Clone)]
pub struct Block {
    norm1: AdaLn,
    attn: SelfAttention,
    norm2: AdaLn,
    ff: FeedForward,
}

#[derive(Debug)]
pub struct BlockCache {
    norm1: AdaLnCache,
    attn: AttentionCache,
    norm2: AdaLnCache,
    ff: FeedForwardCache,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        d: usize,
        n_heads: usize,
        d_ff: usize,
        cond_dim: Option<usize>,
        rng: &mut SeededRng,
    ) -> Self {
        Self {
            norm1: AdaLn::new(ps, &format!("{name}.norm1"), d, cond_dim),
            attn: SelfAttention::new(ps, &format!("{name}.attn"), d, n_heads, rng),
            norm2: AdaLn::new(ps, &format!("{name}.norm2"), d, cond_dim),
            ff: FeedForward::new(ps, &format!("{name}.ff"), d, d_ff, rng),
        }
    }

    fn unmodulated(&self) -> Self {
        Self {
            norm1: self.norm1.unmodulated(),
            norm2: self.norm2.unmodulated(),
            ..self.clone()
        }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &Array2<f64>,
        segments: &[Segment],
        cond: Option<RowCond<'_>>,
        record: bool,
    ) -> (Array2<f64>, Option<BlockCache>) {
        let (a, norm1) = self.norm1.forward(ps, x, cond);
        let (attn_out, attn) = self.attn.forward(ps, &a, segments, record);
        let x1 = x + &attn_out;
        let (b, norm2) = self.norm2.forward(ps, &x1, cond);
        let (ff_out, ff) = self.ff.forward(ps, &b);
        let x2 = x1 + &ff_out;
        let cache = attn.map(|attn| BlockCache { norm1, attn, norm2, ff });
        (x2, cache)
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        grads: &mut ParamStore,
        cache: &BlockCache,
        segments: &[Segment],
        cond: Option<RowCond<'_>>,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let db = self.ff.backward(ps, grads, &cache.ff, dy);
        let mut dx1 = self.norm2.backward(ps, grads, &cache.norm2, cond, &db);
        dx1 += dy;
        let da = self.attn.backward(ps, grads, &cache.attn, segments, &dx1);
        let mut dx = self.norm1.backward(ps, grads, &cache.norm1, cond, &da);
        dx += &dx1;
        dx
    }
}

/// Stack of pre-norm blocks followed by a final normalization.
#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<Block>,
    final_norm: AdaLn,
}

#[derive(Debug)]
pub struct EncoderCache {
    blocks: Vec<BlockCache>,
    final_norm: AdaLnCache,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        n_layers: usize,
        d: usize,
        n_heads: usize,
        d_ff: usize,
        cond_dim: Option<usize>,
        rng: &mut SeededRng,
    ) -> Self {
        let blocks = (0..n_layers)
            .map(|i| Block::new(ps, &format!("{name}.blocks.{i}"), d, n_heads, d_ff, cond_dim, rng))
            .collect();
        let final_norm = AdaLn::new(ps, &format!("{name}.final_norm"), d, cond_dim);
        Self { blocks, final_norm }
    }

    pub fn unmodulated(&self) -> Self {
        Self {
            blocks: self.blocks.iter().map(Block::unmodulated).collect(),
            final_norm: self.final_norm.unmodulated(),
        }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: Array2<f64>,
        segments: &[Segment],
        cond: Option<RowCond<'_>>,
        record: bool,
    ) -> (Array2<f64>, Option<EncoderCache>) {
        let mut h = x;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(ps, &h, segments, cond, record);
            h = next;
            caches.extend(cache);
        }
        let (z, final_norm) = self.final_norm.forward(ps, &h, cond);
        let cache = record.then(|| EncoderCache {
            blocks: caches,
            final_norm,
        });
        (z, cache)
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        grads: &mut ParamStore,
        cache: &EncoderCache,
        segments: &[Segment],
        cond: Option<RowCond<'_>>,
        dz: &Array2<f64>,
    ) -> Array2<f64> {
        let mut dh = self.final_norm.backward(ps, grads, &cache.final_norm, cond, dz);
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            dh = block.backward(ps, grads, bc, segments, cond, &dh);
        }
        dh
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.normal())
    }

    /// Central-difference gradient of `f` w.r.t. every entry of `x`.
    fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let h = 1e-5;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    #[test]
    fn adaln_zero_modulation_is_plain_ln() {
        let mut rng = SeededRng::new(0);
        let mut ps = ParamStore::new();
        let ada = AdaLn::new(&mut ps, "n", 8, Some(3));
        let x = rand_matrix(5, 8, &mut rng);
        let cond = rand_matrix(2, 3, &mut rng);
        let rows = [0, 0, 1, 1, 1];
        let (y, _) = ada.forward(&ps, &x, Some(RowCond { vectors: &cond, row_item: &rows }));
        let (plain, _) = ada.unmodulated().forward(&ps, &x, None);
        assert_eq!(y, plain);
        for r in plain.rows() {
            assert!(r.sum().abs() < 1e-9);
        }
    }

    #[test]
    fn adaln_constant_input_gives_bias_closed_form() {
        let mut rng = SeededRng::new(1);
        let mut ps = ParamStore::new();
        let ada = AdaLn::new(&mut ps, "n", 4, Some(2));
        for t in ps.tensors_mut() {
            t.mapv_inplace(|_| rng.normal());
        }
        let x = Array2::from_elem((1, 4), 3.0);
        let cond = array![[0.3, -0.7]];
        let (y, _) = ada.forward(&ps, &x, Some(RowCond { vectors: &cond, row_item: &[0] }));
        let m = ada.modulation.as_ref().unwrap();
        let scale = m.scale.forward(&ps, &cond);
        let shift = m.shift.forward(&ps, &cond);
        let bias = ps.get(ada.bias);
        for j in 0..4 {
            let want = (1.0 + scale[[0, j]]) * bias[[0, j]] + shift[[0, j]];
            assert!((y[[0, j]] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn adaln_distinguishes_speakers_once_trained() {
        let mut rng = SeededRng::new(2);
        let mut ps = ParamStore::new();
        let ada = AdaLn::new(&mut ps, "n", 6, Some(3));
        for t in ps.tensors_mut() {
            t.mapv_inplace(|_| rng.normal());
        }
        let x = rand_matrix(1, 6, &mut rng);
        let c = rand_matrix(2, 3, &mut rng);
        let (y0, _) = ada.forward(&ps, &x, Some(RowCond { vectors: &c, row_item: &[0] }));
        let (y1, _) = ada.forward(&ps, &x, Some(RowCond { vectors: &c, row_item: &[1] }));
        assert!(y0.iter().zip(&y1).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn encoder_input_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(3);
        let mut ps = ParamStore::new();
        let enc = Encoder::new(&mut ps, "e", 2, 8, 2, 12, Some(3), &mut rng);
        for t in ps.tensors_mut() {
            t.mapv_inplace(|v| v + 0.3 * rng.normal());
        }
        let segments = [Segment { start: 0, len: 3 }, Segment { start: 3, len: 2 }];
        let rows = [0, 0, 0, 1, 1];
        let cond = rand_matrix(2, 3, &mut rng);
        let rc = RowCond { vectors: &cond, row_item: &rows };
        let x = rand_matrix(5, 8, &mut rng);
        let w = rand_matrix(5, 8, &mut rng);
        let loss = |x: &Array2<f64>| {
            let (z, _) = enc.forward(&ps, x.clone(), &segments, Some(rc), false);
            (&z * &w).sum()
        };
        let (_, cache) = enc.forward(&ps, x.clone(), &segments, Some(rc), true);
        let mut grads = ps.zeros_like();
        let dx = enc.backward(&ps, &mut grads, &cache.unwrap(), &segments, Some(rc), &w);
        assert_close(&dx, &numeric_grad(&x, loss), 1e-6);
    }

    #[test]
    fn attention_is_confined_to_segments() {
        let mut rng = SeededRng::new(4);
        let mut ps = ParamStore::new();
        let attn = SelfAttention::new(&mut ps, "a", 8, 2, &mut rng);
        for t in ps.tensors_mut() {
            t.mapv_inplace(|v| v + 0.5 * rng.normal());
        }
        let segments = [Segment { start: 0, len: 3 }, Segment { start: 3, len: 4 }];
        let x = rand_matrix(7, 8, &mut rng);
        let (y, _) = attn.forward(&ps, &x, &segments, false);
        let mut x2 = x.clone();
        x2.row_mut(5).mapv_inplace(|v| v + 1.0);
        let (y2, _) = attn.forward(&ps, &x2, &segments, false);
        assert_eq!(y.slice(s![0..3, ..]), y2.slice(s![0..3, ..]));
        assert_ne!(y.slice(s![3..7, ..]), y2.slice(s![3..7, ..]));
    }
}
