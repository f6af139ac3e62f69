use super::tensor::{BackwardCtx, Tensor};
use crate::error::{Error, Result};

/// `c = op(a) · op(b)` (or `c += ...` when `accumulate`), where `a` is
/// logically `m×k` and `b` is `k×n`. A transposed operand is stored in the
/// transposed row-major layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the bounds asserted above cover every element addressed by the
    // given dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Matrix product.
    ///
    /// * `[.., m, k] × [k, n] -> [.., m, n]` (leading dims folded into rows)
    /// * `[B.., m, k] × [B.., k, n] -> [B.., m, n]` (batched, same leading dims)
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self, other);
        let mismatch = || {
            Error::Shape(format!(
                "matmul dimension mismatch: {:?} × {:?}",
                a.shape(),
                b.shape()
            ))
        };
        if a.rank() < 2 || b.rank() < 2 {
            return Err(mismatch());
        }
        let k = a.shape()[a.rank() - 1];
        if b.shape()[b.rank() - 2] != k {
            return Err(mismatch());
        }
        let n = b.shape()[b.rank() - 1];

        if b.rank() == 2 {
            let m = a.numel() / k;
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = n;
            return Ok(Tensor::from_op(
                shape,
                out,
                "matmul",
                vec![a.clone(), b.clone()],
                Box::new(move |ctx: &BackwardCtx<'_>| {
                    let (ad, bd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                    let ga = ctx.needs(0).then(|| {
                        let mut ga = vec![0.0; m * k];
                        gemm(m, n, k, ctx.grad, false, bd, true, &mut ga, false);
                        ga
                    });
                    let gb = ctx.needs(1).then(|| {
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, ad, true, ctx.grad, false, &mut gb, false);
                        gb
                    });
                    vec![ga, gb]
                }),
            ));
        }

        if a.rank() != b.rank() || a.shape()[..a.rank() - 2] != b.shape()[..b.rank() - 2] {
            return Err(mismatch());
        }
        let m = a.shape()[a.rank() - 2];
        let batch: usize = a.shape()[..a.rank() - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..],
                false,
                &b.data()[i * k * n..],
                false,
                &mut out[i * m * n..],
                false,
            );
        }
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(Tensor::from_op(
            shape,
            out,
            "batched_matmul",
            vec![a.clone(), b.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (ad, bd) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let g = ctx.grad;
                let ga = ctx.needs(0).then(|| {
                    let mut ga = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        gemm(m, n, k, &g[i * m * n..], false, &bd[i * k * n..], true, &mut ga[i * m * k..], false);
                    }
                    ga
                });
                let gb = ctx.needs(1).then(|| {
                    let mut gb = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        gemm(k, m, n, &ad[i * m * k..], true, &g[i * m * n..], false, &mut gb[i * k * n..], false);
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}
