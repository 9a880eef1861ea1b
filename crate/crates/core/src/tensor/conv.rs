//! 2-D convolution, nearest-neighbour upsampling and average pooling.
//!
//! Convolution lowers each sample to a column matrix (im2col) and runs the
//! GEMM kernels; backward recomputes the columns rather than caching them,
//! trading a little compute for a much smaller live graph.

use crate::error::{Error, Result};

use super::gemm::{gemm_ab, gemm_abt, gemm_atb};
use super::{Element, TensorBase};

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

fn conv_dims(
    input: &[usize],
    weight: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    if input.len() != 4 {
        return Err(Error::bad_shape("conv2d", input, "input must be [N,C,H,W]"));
    }
    if weight.len() != 4 {
        return Err(Error::bad_shape("conv2d", weight, "weight must be [F,C,kh,kw]"));
    }
    if stride < 1 {
        return Err(Error::bad_shape("conv2d", input, "stride must be >= 1"));
    }
    let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
    let (f, wc, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
    if c != wc {
        return Err(Error::shape("conv2d", input, weight));
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::bad_shape(
            "conv2d",
            weight,
            format!("kernel exceeds padded input {}x{}", h + 2 * padding, w + 2 * padding),
        ));
    }
    Ok(ConvDims {
        n,
        c,
        h,
        w,
        f,
        kh,
        kw,
        oh: (h + 2 * padding - kh) / stride + 1,
        ow: (w + 2 * padding - kw) / stride + 1,
        stride,
        padding,
    })
}

/// Output-row range for kernel offset `k` such that the input coordinate
/// `o*stride + k - padding` stays inside [0, limit).
fn valid_range(k: usize, stride: usize, padding: usize, limit: usize, out: usize) -> (usize, usize) {
    let lo = if k < padding {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let max_coord = limit + padding;
    if k >= max_coord {
        return (0, 0);
    }
    let hi = ((max_coord - 1 - k) / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Gathers one sample into columns: row (c,ki,kj), column (oh,ow).
fn im2col<E: Element>(x: &[E], d: &ConvDims, col: &mut [E]) {
    col.iter_mut().for_each(|v| *v = E::zero());
    let spatial = d.oh * d.ow;
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            let (oh_lo, oh_hi) = valid_range(ki, d.stride, d.padding, d.h, d.oh);
            for kj in 0..d.kw {
                let (ow_lo, ow_hi) = valid_range(kj, d.stride, d.padding, d.w, d.ow);
                if ow_lo >= ow_hi {
                    continue;
                }
                let row = (c * d.kh + ki) * d.kw + kj;
                for oh in oh_lo..oh_hi {
                    let ih = oh * d.stride + ki - d.padding;
                    let iw0 = ow_lo * d.stride + kj - d.padding;
                    let dst = &mut col[row * spatial + oh * d.ow + ow_lo
                        ..row * spatial + oh * d.ow + ow_hi];
                    if d.stride == 1 {
                        dst.copy_from_slice(&plane[ih * d.w + iw0..ih * d.w + iw0 + dst.len()]);
                    } else {
                        for (t, v) in dst.iter_mut().enumerate() {
                            *v = plane[ih * d.w + iw0 + t * d.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back onto one sample's gradient plane.
fn col2im_add<E: Element>(col: &[E], d: &ConvDims, dx: &mut [E]) {
    let spatial = d.oh * d.ow;
    for c in 0..d.c {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            let (oh_lo, oh_hi) = valid_range(ki, d.stride, d.padding, d.h, d.oh);
            for kj in 0..d.kw {
                let (ow_lo, ow_hi) = valid_range(kj, d.stride, d.padding, d.w, d.ow);
                if ow_lo >= ow_hi {
                    continue;
                }
                let row = (c * d.kh + ki) * d.kw + kj;
                for oh in oh_lo..oh_hi {
                    let ih = oh * d.stride + ki - d.padding;
                    let iw0 = ow_lo * d.stride + kj - d.padding;
                    let src = &col[row * spatial + oh * d.ow + ow_lo
                        ..row * spatial + oh * d.ow + ow_hi];
                    for (t, v) in src.iter().enumerate() {
                        plane[ih * d.w + iw0 + t * d.stride] += *v;
                    }
                }
            }
        }
    }
}

impl<E: Element> TensorBase<E> {
    pub fn conv2d(
        &self,
        weight: &Self,
        bias: Option<&Self>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let d = conv_dims(self.shape(), weight.shape(), stride, padding)?;
        if let Some(b) = bias {
            if b.shape() != [d.f] {
                return Err(Error::shape("conv2d", weight.shape(), b.shape()));
            }
        }
        let spatial = d.oh * d.ow;
        let ckk = d.c * d.kh * d.kw;
        let mut out = vec![E::zero(); d.n * d.f * spatial];
        {
            let x = self.data();
            let w = weight.data();
            let mut col = vec![E::zero(); ckk * spatial];
            for s in 0..d.n {
                im2col(&x[s * d.c * d.h * d.w..], &d, &mut col);
                gemm_ab(
                    d.f,
                    ckk,
                    spatial,
                    &w,
                    &col,
                    &mut out[s * d.f * spatial..(s + 1) * d.f * spatial],
                );
            }
            if let Some(b) = bias {
                let bv = b.data();
                for s in 0..d.n {
                    for f in 0..d.f {
                        let base = (s * d.f + f) * spatial;
                        for v in out[base..base + spatial].iter_mut() {
                            *v += bv[f];
                        }
                    }
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Ok(Self::from_op(
            vec![d.n, d.f, d.oh, d.ow],
            out,
            parents,
            Box::new(move |grad, _out, parents| {
                let input = &parents[0];
                let weight = &parents[1];
                let x = input.data();
                let w = weight.data();
                let spatial = d.oh * d.ow;
                let ckk = d.c * d.kh * d.kw;

                let mut gx = if input.requires_grad() {
                    Some(vec![E::zero(); x.len()])
                } else {
                    None
                };
                let mut gw = if weight.requires_grad() {
                    Some(vec![E::zero(); w.len()])
                } else {
                    None
                };
                let mut col = vec![E::zero(); ckk * spatial];
                for s in 0..d.n {
                    let g_out = &grad[s * d.f * spatial..(s + 1) * d.f * spatial];
                    if let Some(gx) = gx.as_mut() {
                        col.iter_mut().for_each(|v| *v = E::zero());
                        gemm_atb(ckk, d.f, spatial, &w, g_out, &mut col);
                        col2im_add(&col, &d, &mut gx[s * d.c * d.h * d.w..]);
                    }
                    if let Some(gw) = gw.as_mut() {
                        im2col(&x[s * d.c * d.h * d.w..], &d, &mut col);
                        gemm_abt(d.f, spatial, ckk, g_out, &col, gw);
                    }
                }
                let gb = if has_bias {
                    let mut gb = vec![E::zero(); d.f];
                    for s in 0..d.n {
                        for f in 0..d.f {
                            let base = (s * d.f + f) * spatial;
                            for v in &grad[base..base + spatial] {
                                gb[f] += *v;
                            }
                        }
                    }
                    Some(gb)
                } else {
                    None
                };

                let mut outs = vec![gx, gw];
                if has_bias {
                    outs.push(gb);
                }
                outs
            }),
        ))
    }

    /// Replicates each pixel into a factor×factor block.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Self> {
        if factor < 1 {
            return Err(Error::bad_shape("upsample_nearest", self.shape(), "factor must be >= 1"));
        }
        if self.shape().len() != 4 {
            return Err(Error::bad_shape("upsample_nearest", self.shape(), "input must be [N,C,H,W]"));
        }
        let (n, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![E::zero(); n * c * oh * ow];
        {
            let x = self.data();
            for p in 0..n * c {
                for ih in 0..h {
                    let src = &x[p * h * w + ih * w..p * h * w + (ih + 1) * w];
                    for fi in 0..factor {
                        let base = p * oh * ow + (ih * factor + fi) * ow;
                        let dst = &mut out[base..base + ow];
                        for (iw, &v) in src.iter().enumerate() {
                            dst[iw * factor..(iw + 1) * factor].iter_mut().for_each(|t| *t = v);
                        }
                    }
                }
            }
        }
        Ok(Self::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |grad, _out, parents| {
                let mut g = vec![E::zero(); parents[0].len()];
                for p in 0..n * c {
                    for ih in 0..h {
                        for iw in 0..w {
                            let mut acc = E::zero();
                            for fi in 0..factor {
                                let base = p * oh * ow + (ih * factor + fi) * ow + iw * factor;
                                for t in &grad[base..base + factor] {
                                    acc += *t;
                                }
                            }
                            g[p * h * w + ih * w + iw] = acc;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Non-overlapping factor×factor mean pooling, composed from reshape and
    /// reduction so gradients come for free.
    pub fn avg_pool(&self, factor: usize) -> Result<Self> {
        if self.shape().len() != 4 {
            return Err(Error::bad_shape("avg_pool", self.shape(), "input must be [N,C,H,W]"));
        }
        let (n, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        if factor < 1 || h % factor != 0 || w % factor != 0 {
            return Err(Error::bad_shape(
                "avg_pool",
                self.shape(),
                format!("spatial dims not divisible by {factor}"),
            ));
        }
        self.reshape(&[n, c, h / factor, factor, w / factor, factor])?
            .reduce_mean(&[3, 5], false)
    }
}

/// Direct six-nested-loop convolution used as the correctness reference for
/// the GEMM-based implementation. Slow on purpose.
pub fn conv2d_reference<E: Element>(
    input: &TensorBase<E>,
    weight: &TensorBase<E>,
    bias: Option<&TensorBase<E>>,
    stride: usize,
    padding: usize,
) -> Result<TensorBase<E>> {
    let d = conv_dims(input.shape(), weight.shape(), stride, padding)?;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![E::zero(); d.n * d.f * d.oh * d.ow];
    for s in 0..d.n {
        for f in 0..d.f {
            for oh in 0..d.oh {
                for ow in 0..d.ow {
                    let mut acc = match bias {
                        Some(b) => b.data()[f],
                        None => E::zero(),
                    };
                    for c in 0..d.c {
                        for ki in 0..d.kh {
                            for kj in 0..d.kw {
                                let ih = (oh * d.stride + ki) as isize - d.padding as isize;
                                let iw = (ow * d.stride + kj) as isize - d.padding as isize;
                                if ih < 0 || iw < 0 || ih >= d.h as isize || iw >= d.w as isize {
                                    continue;
                                }
                                let xi = ((s * d.c + c) * d.h + ih as usize) * d.w + iw as usize;
                                let wi = ((f * d.c + c) * d.kh + ki) * d.kw + kj;
                                acc += x[xi] * w[wi];
                            }
                        }
                    }
                    out[((s * d.f + f) * d.oh + oh) * d.ow + ow] = acc;
                }
            }
        }
    }
    TensorBase::from_vec(&[d.n, d.f, d.oh, d.ow], out)
}
