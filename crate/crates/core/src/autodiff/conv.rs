use super::linalg::gemm;
use super::tensor::{BackwardCtx, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution over NHWC input.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    height: usize,
    width: usize,
    in_ch: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.in_ch
    }

    fn positions(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Calls `f(col_index, input_index)` for every in-bounds tap of output
    /// position `p`; padding taps are skipped.
    #[inline]
    fn for_each_tap(&self, p: usize, mut f: impl FnMut(usize, usize)) {
        let ox = p % self.out_w;
        let oy = (p / self.out_w) % self.out_h;
        let b = p / (self.out_w * self.out_h);
        for ki in 0..self.kh {
            let y = (oy * self.sh + ki) as isize - self.ph as isize;
            if y < 0 || y >= self.height as isize {
                continue;
            }
            for kj in 0..self.kw {
                let x = (ox * self.sw + kj) as isize - self.pw as isize;
                if x < 0 || x >= self.width as isize {
                    continue;
                }
                let src = ((b * self.height + y as usize) * self.width + x as usize) * self.in_ch;
                let col = (ki * self.kw + kj) * self.in_ch;
                for c in 0..self.in_ch {
                    f(col + c, src + c);
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let k = self.patch();
        let mut cols = vec![0.0; self.positions() * k];
        for p in 0..self.positions() {
            let row = &mut cols[p * k..(p + 1) * k];
            self.for_each_tap(p, |col, src| row[col] = x[src]);
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let k = self.patch();
        let mut x = vec![0.0; self.batch * self.height * self.width * self.in_ch];
        for p in 0..self.positions() {
            let row = &cols[p * k..(p + 1) * k];
            self.for_each_tap(p, |col, dst| x[dst] += row[col]);
        }
        x
    }
}

impl Tensor {
    /// 2-D convolution, channels-last.
    ///
    /// `self` is `[B, H, W, C_in]`, `weight` is `[kh, kw, C_in, C_out]`,
    /// `bias` is `[C_out]`; the result is `[B, H_out, W_out, C_out]` with
    /// `H_out = (H + 2·pad_h − kh) / stride_h + 1` (likewise for width).
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[3] != ws[2] || bias.shape() != [ws[3]] {
            return Err(Error::Shape(format!(
                "conv2d: input {xs:?}, weight {ws:?}, bias {:?} are inconsistent",
                bias.shape()
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Shape("conv2d stride must be positive".into()));
        }
        let (kh, kw) = (ws[0], ws[1]);
        if xs[1] + 2 * padding.0 < kh || xs[2] + 2 * padding.1 < kw {
            return Err(Error::Shape(format!("conv2d kernel {kh}x{kw} larger than padded input {xs:?}")));
        }
        let geo = Geometry {
            batch: xs[0],
            height: xs[1],
            width: xs[2],
            in_ch: xs[3],
            out_ch: ws[3],
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
            out_h: (xs[1] + 2 * padding.0 - kh) / stride.0 + 1,
            out_w: (xs[2] + 2 * padding.1 - kw) / stride.1 + 1,
        };
        let (p, k, co) = (geo.positions(), geo.patch(), geo.out_ch);
        let cols = geo.im2col(self.data());
        let mut out = vec![0.0; p * co];
        for row in out.chunks_exact_mut(co) {
            row.copy_from_slice(bias.data());
        }
        gemm(p, k, co, &cols, false, weight.data(), false, &mut out, true);

        Ok(Tensor::from_op(
            vec![geo.batch, geo.out_h, geo.out_w, co],
            out,
            "conv2d",
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad;
                let dx = ctx.needs(0).then(|| {
                    let mut dcols = vec![0.0; p * k];
                    gemm(p, co, k, g, false, ctx.inputs[1].data(), true, &mut dcols, false);
                    geo.col2im(&dcols)
                });
                let dw = ctx.needs(1).then(|| {
                    let mut dw = vec![0.0; k * co];
                    gemm(k, p, co, &cols, true, g, false, &mut dw, false);
                    dw
                });
                let db = ctx.needs(2).then(|| {
                    let mut db = vec![0.0; co];
                    for row in g.chunks_exact(co) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    db
                });
                vec![dx, dw, db]
            }),
        ))
    }
}
