//! 3×3 convolution with zero padding of width one.
//!
//! `O[b,o,x,y] = Σ_i Σ_{(dx,dy)∈{-1,0,1}²} I[b,i,x+dx,y+dy] · K[o,i,dx+1,dy+1]`,
//! entries of `I` outside the image read as zero, so spatial size is kept.

use super::Tensor;
use crate::error::{Error, Result};

pub const KERNEL_SIZE: usize = 3;

#[derive(Debug, Clone)]
pub struct ConvGradients {
    pub grad_input: Tensor,
    pub grad_kernel: Tensor,
}

fn check_kernel(input: &Tensor, kernel: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, ci, h, w) = input.dims4()?;
    let (co, kci, kh, kw) = kernel.dims4()?;
    if kh != KERNEL_SIZE || kw != KERNEL_SIZE {
        return Err(Error::dim(format!("kernel must be 3×3, got {kh}×{kw}")));
    }
    if kci != ci {
        return Err(Error::dim(format!(
            "kernel expects {kci} input channels, input has {ci}"
        )));
    }
    Ok((b, ci, co, h, w))
}

/// Valid output range along one axis for kernel offset `k` (0..3): the
/// positions `p` for which `p + k - 1` lies inside `0..len`.
#[inline]
fn valid_range(k: usize, len: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { len.saturating_sub(1) } else { len };
    (lo, hi)
}

pub fn conv2d_forward(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (b, ci, co, h, w) = check_kernel(input, kernel)?;
    let inp = input.data();
    let ker = kernel.data();
    let mut out = vec![0.0; b * co * h * w];
    let plane = h * w;
    for bi in 0..b {
        for o in 0..co {
            let out_plane = &mut out[(bi * co + o) * plane..(bi * co + o + 1) * plane];
            for i in 0..ci {
                let in_plane = &inp[(bi * ci + i) * plane..(bi * ci + i + 1) * plane];
                let kbase = (o * ci + i) * 9;
                for kx in 0..3 {
                    let (x0, x1) = valid_range(kx, h);
                    for ky in 0..3 {
                        let k = ker[kbase + kx * 3 + ky];
                        let (y0, y1) = valid_range(ky, w);
                        for x in x0..x1 {
                            let src = (x + kx - 1) * w;
                            let dst = &mut out_plane[x * w + y0..x * w + y1];
                            let s = &in_plane[src + y0 + ky - 1..src + y1 + ky - 1];
                            for (d, &v) in dst.iter_mut().zip(s) {
                                *d += k * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, co, h, w], out)
}

/// Gradients of a scalar loss through [`conv2d_forward`], given the upstream
/// gradient `∂L/∂O`.
///
/// `grad_kernel[o,i,x',y'] = Σ_{b,x,y} ∂L/∂O[b,o,x,y] · I[b,i,x+x',y+y']`;
/// `grad_input` is the transposed convolution of `upstream` with `kernel`.
pub fn conv2d_backward(upstream: &Tensor, input: &Tensor, kernel: &Tensor) -> Result<ConvGradients> {
    let (b, ci, co, h, w) = check_kernel(input, kernel)?;
    if upstream.shape() != [b, co, h, w] {
        return Err(Error::dim(format!(
            "upstream shape {:?} does not match conv output [{b}, {co}, {h}, {w}]",
            upstream.shape()
        )));
    }
    let inp = input.data();
    let ker = kernel.data();
    let up = upstream.data();
    let plane = h * w;
    let mut gin = vec![0.0; inp.len()];
    let mut gker = vec![0.0; ker.len()];
    for bi in 0..b {
        for o in 0..co {
            let up_plane = &up[(bi * co + o) * plane..(bi * co + o + 1) * plane];
            for i in 0..ci {
                let in_off = (bi * ci + i) * plane;
                let kbase = (o * ci + i) * 9;
                for kx in 0..3 {
                    let (x0, x1) = valid_range(kx, h);
                    for ky in 0..3 {
                        let k = ker[kbase + kx * 3 + ky];
                        let (y0, y1) = valid_range(ky, w);
                        let mut acc = 0.0;
                        for x in x0..x1 {
                            let src = in_off + (x + kx - 1) * w + y0 + ky - 1;
                            let len = y1 - y0;
                            let g = &up_plane[x * w + y0..x * w + y1];
                            let s = &inp[src..src + len];
                            for (&gv, &sv) in g.iter().zip(s) {
                                acc += gv * sv;
                            }
                            let gi = &mut gin[src..src + len];
                            for (d, &gv) in gi.iter_mut().zip(g) {
                                *d += k * gv;
                            }
                        }
                        gker[kbase + kx * 3 + ky] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGradients {
        grad_input: Tensor::new(input.shape(), gin)?,
        grad_kernel: Tensor::new(kernel.shape(), gker)?,
    })
}
