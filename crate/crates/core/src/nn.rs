//! Transformer sublayers built on [`Tensor`] ops.
//!
//! Sequences are batched as `[B, L, d]`. Attention weights come back as
//! `[B, h, L_q, L_k]` so callers can inspect them per head.

use crate::autodiff::{Tensor, MASK_BIAS};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Boolean `[L_q × L_k]` visibility matrix; `true` means the query may
/// attend to the key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask of {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                allowed.len()
            )));
        }
        if let Some(r) = (0..rows).find(|&r| !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a)) {
            return Err(Error::Contract(format!(
                "attention mask row {r} excludes every key"
            )));
        }
        Ok(AttentionMask { rows, cols, allowed })
    }

    /// Query `t` sees keys `0..=t`.
    pub fn causal(len: usize) -> Self {
        let allowed = (0..len * len).map(|i| i % len <= i / len).collect();
        AttentionMask {
            rows: len,
            cols: len,
            allowed,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn bias(&self) -> Tensor {
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { MASK_BIAS })
            .collect();
        Tensor::new(&[self.rows, self.cols], data).expect("mask dims")
    }
}

/// `softmax(Q Kᵀ / √d_h + mask) V` over the last two dimensions.
///
/// `q` is `[.., L_q, d_h]`, `k` and `v` are `[.., L_k, d_h]` with matching
/// leading dimensions. Returns the output and the row-stochastic weights.
pub fn scaled_dot_product_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&AttentionMask>,
) -> Result<(Tensor, Tensor)> {
    let rank = q.rank();
    if rank < 2 || k.rank() != rank || v.rank() != rank {
        return Err(Error::Shape(format!(
            "attention needs equal-rank q/k/v, got {:?}, {:?}, {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let (lq, dh) = (q.shape()[rank - 2], q.shape()[rank - 1]);
    let lk = k.shape()[rank - 2];
    if k.shape()[rank - 1] != dh || v.shape()[rank - 2] != lk {
        return Err(Error::Shape(format!(
            "attention key/value mismatch: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let mut scores = q.matmul(&k.transpose(rank - 2, rank - 1)?)?.scale(1.0 / (dh as f64).sqrt());
    if let Some(mask) = mask {
        if (mask.rows, mask.cols) != (lq, lk) {
            return Err(Error::Shape(format!(
                "mask is {}x{}, scores are {lq}x{lk}",
                mask.rows, mask.cols
            )));
        }
        scores = scores.add(&mask.bias())?;
    }
    let weights = scores.softmax(rank - 1)?;
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

/// Per-head projections stored column-blocked: head `i` of `wq` is columns
/// `i·d_h .. (i+1)·d_h`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub heads: usize,
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    x.reshape(&[b, l, heads, d / heads])?.permute(&[0, 2, 1, 3])
}

/// `Concat(head_1 … head_h) W^O` with
/// `head_i = Attention(x_q W_i^Q, x_kv W_i^K, x_kv W_i^V)`.
///
/// `x_q` is `[B, L_q, d]`, `x_kv` is `[B, L_k, d]`. Returns the output and
/// weights `[B, h, L_q, L_k]`.
pub fn multi_head_attention(
    x_q: &Tensor,
    x_kv: &Tensor,
    params: &AttentionParams,
    mask: Option<&AttentionMask>,
) -> Result<(Tensor, Tensor)> {
    if x_q.rank() != 3 || x_kv.rank() != 3 || x_q.shape()[0] != x_kv.shape()[0] {
        return Err(Error::Shape(format!(
            "multi-head attention expects [B, L, d] inputs, got {:?} and {:?}",
            x_q.shape(),
            x_kv.shape()
        )));
    }
    let d = x_q.shape()[2];
    let h = params.heads;
    if h == 0 || !d.is_multiple_of(h) {
        return Err(Error::Config(format!("d_model {d} is not divisible by {h} heads")));
    }
    let (b, lq) = (x_q.shape()[0], x_q.shape()[1]);
    let q = split_heads(&x_q.matmul(&params.wq)?, h)?;
    let k = split_heads(&x_kv.matmul(&params.wk)?, h)?;
    let v = split_heads(&x_kv.matmul(&params.wv)?, h)?;
    let (heads, weights) = scaled_dot_product_attention(&q, &k, &v, mask)?;
    let concat = heads.permute(&[0, 2, 1, 3])?.reshape(&[b, lq, d])?;
    Ok((concat.matmul(&params.wo)?, weights))
}

/// Sinusoidal table `[length, d]`:
/// `PE(p, 2i) = sin(p / 10000^{2i/d})`, `PE(p, 2i+1) = cos(p / 10000^{2i/d})`.
pub fn positional_encoding(length: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding needs an even width, got {d}")));
    }
    let mut data = vec![0.0; length * d];
    for pos in 0..length {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = angle.sin();
            data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(&[length, d], data)
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub scale: Tensor,
    pub shift: Tensor,
}

pub fn layer_norm(x: &Tensor, params: &LayerNormParams) -> Result<Tensor> {
    x.layer_norm(&params.scale, &params.shift, LAYER_NORM_EPS)
}

#[derive(Clone, Debug)]
pub struct FeedForwardParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// `relu(x W₁ + b₁) W₂ + b₂`, position-wise.
pub fn feed_forward(x: &Tensor, p: &FeedForwardParams) -> Result<Tensor> {
    x.matmul(&p.w1)?.add(&p.b1)?.relu().matmul(&p.w2)?.add(&p.b2)
}

#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub ff: FeedForwardParams,
    pub ln2: LayerNormParams,
}

#[derive(Clone, Debug)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ff: FeedForwardParams,
    pub ln3: LayerNormParams,
}

/// Self-attention then feed-forward, each wrapped as `norm(x + sublayer(x))`.
pub fn encoder_layer(x: &Tensor, p: &EncoderLayerParams) -> Result<Tensor> {
    let (a, _) = multi_head_attention(x, x, &p.attn, None)?;
    let h = layer_norm(&x.add(&a)?, &p.ln1)?;
    let f = feed_forward(&h, &p.ff)?;
    layer_norm(&h.add(&f)?, &p.ln2)
}

/// Output of one decoder layer plus its self- and cross-attention weights.
pub struct DecoderLayerOutput {
    pub hidden: Tensor,
    pub self_weights: Tensor,
    pub cross_weights: Tensor,
}

/// Causal self-attention, attention over `memory`, then feed-forward.
pub fn decoder_layer(y: &Tensor, memory: &Tensor, p: &DecoderLayerParams) -> Result<DecoderLayerOutput> {
    let mask = AttentionMask::causal(y.shape()[1]);
    let (s, self_weights) = multi_head_attention(y, y, &p.self_attn, Some(&mask))?;
    let h1 = layer_norm(&y.add(&s)?, &p.ln1)?;
    let (c, cross_weights) = multi_head_attention(&h1, memory, &p.cross_attn, None)?;
    let h2 = layer_norm(&h1.add(&c)?, &p.ln2)?;
    let f = feed_forward(&h2, &p.ff)?;
    Ok(DecoderLayerOutput {
        hidden: layer_norm(&h2.add(&f)?, &p.ln3)?,
        self_weights,
        cross_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn single_key_returns_its_value() {
        let q = t(&[2, 3], &[0.3, -1.0, 2.0, 1.0, 1.0, 1.0]);
        let k = t(&[1, 3], &[0.5, 0.5, 0.5]);
        let v = t(&[1, 3], &[7.0, 8.0, 9.0]);
        let (out, w) = scaled_dot_product_attention(&q, &k, &v, None).unwrap();
        assert_eq!(w.data(), &[1.0, 1.0]);
        assert_eq!(out.data(), &[7.0, 8.0, 9.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn two_key_weights() {
        let q = t(&[1, 2], &[1.0, 0.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let (_, w) = scaled_dot_product_attention(&q, &eye, &eye, None).unwrap();
        let e = (1.0 / 2f64.sqrt()).exp();
        let expected = [e / (e + 1.0), 1.0 / (e + 1.0)];
        assert!((w.data()[0] - expected[0]).abs() < 1e-12);
        assert!((w.data()[1] - expected[1]).abs() < 1e-12);
        assert!((w.data()[0] - 0.6698).abs() < 1e-4);
    }

    #[test]
    fn masked_key_is_ignored() {
        let q = t(&[1, 2], &[0.4, -0.7]);
        let k = t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        let v = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 50.0, 60.0]);
        let mask = AttentionMask::new(1, 3, vec![true, true, false]).unwrap();
        let (out, w) = scaled_dot_product_attention(&q, &k, &v, Some(&mask)).unwrap();
        assert!(w.data()[2] < 1e-6);
        let k2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let v2 = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (out2, _) = scaled_dot_product_attention(&q, &k2, &v2, None).unwrap();
        for (a, b) in out.data().iter().zip(out2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        assert!(matches!(
            AttentionMask::new(2, 2, vec![true, false, false, false]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn causal_mask_shape() {
        let m = AttentionMask::causal(3);
        assert_eq!(
            m.allowed,
            vec![true, false, false, true, true, false, true, true, true]
        );
    }

    #[test]
    fn positional_rows() {
        let pe = positional_encoding(5, 6).unwrap();
        assert_eq!(&pe.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        for pos in 0..5 {
            assert_eq!(pe.data()[pos * 6], (pos as f64).sin());
        }
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(positional_encoding(3, 5).is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        let x = Tensor::zeros(&[1, 2, 6]).unwrap();
        let w = Tensor::zeros(&[6, 6]).unwrap();
        let p = AttentionParams {
            wq: w.clone(),
            wk: w.clone(),
            wv: w.clone(),
            wo: w,
            heads: 4,
        };
        assert!(matches!(multi_head_attention(&x, &x, &p, None), Err(Error::Config(_))));
    }

    #[test]
    fn zero_feed_forward_yields_bias() {
        let x = t(&[1, 2, 2], &[1.0, -2.0, 3.0, 0.5]);
        let p = FeedForwardParams {
            w1: Tensor::zeros(&[2, 4]).unwrap(),
            b1: Tensor::zeros(&[4]).unwrap(),
            w2: Tensor::zeros(&[4, 2]).unwrap(),
            b2: t(&[2], &[0.25, -0.75]),
        };
        let y = feed_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[0.25, -0.75, 0.25, -0.75]);
    }
}
