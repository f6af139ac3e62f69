//! Elementwise, shape, reduction and normalization primitives.

use super::tensor::{BackwardCtx, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        }
    }
}

fn strip_leading_ones(shape: &[usize]) -> &[usize] {
    let k = shape.iter().take_while(|&&d| d == 1).count();
    &shape[k.min(shape.len().saturating_sub(1))..]
}

/// Output shape of a binary op. Allowed: equal shapes, a single-element
/// operand, or one shape being a trailing suffix of the other.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b {
        return Ok(a.to_vec());
    }
    if nb == 1 {
        return Ok(a.to_vec());
    }
    if na == 1 {
        return Ok(b.to_vec());
    }
    let (sa, sb) = (strip_leading_ones(a), strip_leading_ones(b));
    if a.len() >= sb.len() && a.ends_with(sb) {
        return Ok(a.to_vec());
    }
    if b.len() >= sa.len() && b.ends_with(sa) {
        return Ok(b.to_vec());
    }
    Err(Error::Shape(format!(
        "cannot broadcast shapes {a:?} and {b:?} (only trailing-dimension and scalar broadcasting is supported)"
    )))
}

/// Sums `g` into a buffer of length `period` (`g[i]` lands in `i % period`).
fn reduce_to(g: &[f64], period: usize) -> Vec<f64> {
    if period == g.len() {
        return g.to_vec();
    }
    let mut out = vec![0.0; period];
    for chunk in g.chunks_exact(period) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn binary(a: &Tensor, b: &Tensor, kind: Binary) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let data: Vec<f64> = if na == n && nb == n {
        ad.iter().zip(bd).map(|(&x, &y)| kind.apply(x, y)).collect()
    } else if na == n {
        let mut out = Vec::with_capacity(n);
        for chunk in ad.chunks_exact(nb) {
            out.extend(chunk.iter().zip(bd).map(|(&x, &y)| kind.apply(x, y)));
        }
        out
    } else {
        let mut out = Vec::with_capacity(n);
        for chunk in bd.chunks_exact(na) {
            out.extend(ad.iter().zip(chunk).map(|(&x, &y)| kind.apply(x, y)));
        }
        out
    };
    Ok(Tensor::from_op(
        shape,
        data,
        kind.name(),
        vec![a.clone(), b.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let a = &ctx.inputs[0];
            let b = &ctx.inputs[1];
            let (na, nb) = (a.numel(), b.numel());
            let g = ctx.grad;
            let ga = ctx.needs(0).then(|| match kind {
                Binary::Add | Binary::Sub => reduce_to(g, na),
                Binary::Mul => {
                    let bd = b.data();
                    let prod: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * bd[i % nb]).collect();
                    reduce_to(&prod, na)
                }
            });
            let gb = ctx.needs(1).then(|| match kind {
                Binary::Add => reduce_to(g, nb),
                Binary::Sub => reduce_to(g, nb).into_iter().map(|v| -v).collect(),
                Binary::Mul => {
                    let ad = a.data();
                    let prod: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * ad[i % na]).collect();
                    reduce_to(&prod, nb)
                }
            });
            vec![ga, gb]
        }),
    ))
}

fn unary(
    x: &Tensor,
    name: &'static str,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        name,
        vec![x.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let xd = ctx.inputs[0].data();
            let g = ctx
                .grad
                .iter()
                .zip(xd)
                .zip(ctx.out)
                .map(|((g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(g)]
        }),
    )
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(x: &Tensor, axis: usize) -> Result<()> {
    if axis >= x.rank() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Sub)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Mul)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, "scale", |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, "add_scalar", |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        unary(
            self,
            "relu",
            |v| if v > 0.0 { v } else { 0.0 },
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn exp(&self) -> Tensor {
        unary(self, "exp", f64::exp, |_, y| y)
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Tensor {
        unary(self, "ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    /// Reorders dimensions: output dim `i` is input dim `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::Shape(format!(
                "invalid permutation {axes:?} for shape {:?}",
                self.shape()
            )));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let data = permute_data(self.data(), &in_shape, axes);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape_bw = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            "permute",
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                vec![Some(permute_data(ctx.grad, &out_shape_bw, &inverse))]
            }),
        ))
    }

    /// Swaps two dimensions.
    pub fn transpose(&self, d0: usize, d1: usize) -> Result<Tensor> {
        check_axis(self, d0)?;
        check_axis(self, d1)?;
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        axes.swap(d0, d1);
        self.permute(&axes)
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        check_axis(first, axis)?;
        for t in tensors {
            let ok = t.rank() == first.rank()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Shape(format!(
                    "concat along axis {axis}: {:?} incompatible with {:?}",
                    t.shape(),
                    first.shape()
                )));
            }
        }
        let (outer, _, inner) = axis_extents(first.shape(), axis);
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (t, &w) in tensors.iter().zip(&widths) {
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        Ok(Tensor::from_op(
            shape,
            data,
            "concat",
            tensors.to_vec(),
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut grads: Vec<Vec<f64>> =
                    widths.iter().map(|&w| Vec::with_capacity(outer * w)).collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (g, &w) in grads.iter_mut().zip(&widths) {
                        g.extend_from_slice(&ctx.grad[offset..offset + w]);
                        offset += w;
                    }
                }
                grads
                    .into_iter()
                    .enumerate()
                    .map(|(i, g)| ctx.needs(i).then_some(g))
                    .collect()
            }),
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            "sum",
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Sums over one axis, removing it (a rank-1 input yields shape `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis)?;
        let (outer, n, inner) = axis_extents(self.shape(), axis);
        let x = self.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_op(
            shape,
            data,
            "sum_axis",
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        g.extend_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis)?;
        let n = self.shape()[axis] as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis)?;
        if !self.is_finite() {
            return Err(Error::Numeric("softmax input contains non-finite values".into()));
        }
        let (outer, n, inner) = axis_extents(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..n {
                    let e = (x[idx(k)] - max).exp();
                    y[idx(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    y[idx(k)] /= z;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            "softmax",
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (g, y) = (ctx.grad, ctx.out);
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..n {
                            dx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis)?;
        if !self.is_finite() {
            return Err(Error::Numeric("log_softmax input contains non-finite values".into()));
        }
        let (outer, n, inner) = axis_extents(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..n).map(|k| (x[idx(k)] - max).exp()).sum();
                let lse = max + z.ln();
                for k in 0..n {
                    y[idx(k)] = x[idx(k)] - lse;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            "log_softmax",
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (g, y) = (ctx.grad, ctx.out);
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let gsum: f64 = (0..n).map(|k| g[idx(k)]).sum();
                        for k in 0..n {
                            dx[idx(k)] = g[idx(k)] - y[idx(k)].exp() * gsum;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Normalizes over the last axis: `(x - mean) / sqrt(var + eps) * scale + shift`.
    pub fn layer_norm(&self, scale: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().expect("rank >= 1");
        if scale.shape() != [d] || shift.shape() != [d] {
            return Err(Error::Shape(format!(
                "layer_norm over {:?} needs scale/shift [{d}], got {:?}/{:?}",
                self.shape(),
                scale.shape(),
                shift.shape()
            )));
        }
        let x = self.data();
        let rows = x.len() / d;
        let (gamma, beta) = (scale.data(), shift.data());
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gamma[j] + beta[j];
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            "layer_norm",
            vec![self.clone(), scale.clone(), shift.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad;
                let gamma = ctx.inputs[1].data();
                let dx = ctx.needs(0).then(|| {
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gamma[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = gr[j] * gamma[j];
                            dx[r * d + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    dx
                });
                let dscale = ctx.needs(1).then(|| {
                    let mut ds = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            ds[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                    ds
                });
                let dshift = ctx.needs(2).then(|| reduce_to(g, d));
                vec![dx, dscale, dshift]
            }),
        ))
    }

    /// Row lookup: `table` is `[n, d]`, result is `[ids.len(), d]`.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "gather_rows needs a rank-2 table, got {:?}",
                self.shape()
            )));
        }
        if ids.is_empty() {
            return Err(Error::Shape("gather_rows with no indices".into()));
        }
        let (n, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("row index {bad} out of range for table of {n} rows")));
        }
        let table = self.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&table[i * d..(i + 1) * d]);
        }
        let ids = ids.to_vec();
        Ok(Tensor::from_op(
            vec![ids.len(), d],
            data,
            "gather_rows",
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let mut g = vec![0.0; n * d];
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..d {
                        g[i * d + j] += ctx.grad[r * d + j];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

pub(crate) fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let last = rank - 1;
    let (last_len, last_stride) = (out_shape[last], strides[last]);
    loop {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.extend((0..last_len).map(|k| data[base + k * last_stride]));
        // advance all but the last dimension
        let mut dim = last;
        loop {
            if dim == 0 {
                return out;
            }
            dim -= 1;
            idx[dim] += 1;
            if idx[dim] < out_shape[dim] {
                break;
            }
            idx[dim] = 0;
        }
    }
}
