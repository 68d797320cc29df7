use crate::error::{Error, Result};
use crate::tensor::{conv2d_backward, conv2d_forward, matmul_transpose_b, transpose_a_matmul, Tensor};

/// Fully connected layer `y = x·Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGradients {
    pub grad_input: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::dim(format!("bias shape {:?} for {out} outputs", bias.shape())));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut out = matmul_transpose_b(input, &self.weight)?;
        let n = self.outputs();
        for row in out.data_mut().chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn backward(&self, upstream: &Tensor, input: &Tensor) -> Result<DenseGradients> {
        let (b, out) = upstream.dims2()?;
        if out != self.outputs() || input.shape() != [b, self.inputs()] {
            return Err(Error::dim("dense backward shapes do not match forward"));
        }
        let grad_input = crate::tensor::matmul(upstream, &self.weight)?;
        let grad_weight = transpose_a_matmul(upstream, input)?;
        let mut gb = vec![0.0; out];
        for row in upstream.data().chunks(out) {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        Ok(DenseGradients {
            grad_input,
            grad_weight,
            grad_bias: Tensor::new(&[out], gb)?,
        })
    }
}

/// 3×3 same-padding convolution without bias.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub kernel: Tensor,
}

impl Conv3x3 {
    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d_forward(input, &self.kernel)
    }

    pub fn backward(&self, upstream: &Tensor, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let g = conv2d_backward(upstream, input, &self.kernel)?;
        Ok((g.grad_input, g.grad_kernel))
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient through ReLU given the pre-activation it was applied to.
pub fn relu_backward(upstream: &Tensor, pre: &Tensor) -> Result<Tensor> {
    upstream.zip_with(pre, |g, p| if p > 0.0 { g } else { 0.0 })
}

/// `[b, c, h, w] → [b, c]` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let plane = h * w;
    let data = x.data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
    Tensor::new(&[b, c], data)
}

pub fn global_avg_pool_backward(upstream: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let &[b, c, h, w] = input_shape else {
        return Err(Error::dim("pooling input must be rank 4"));
    };
    if upstream.shape() != [b, c] {
        return Err(Error::dim("pooling upstream shape mismatch"));
    }
    let plane = h * w;
    let data = upstream
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
        .collect();
    Tensor::new(input_shape, data)
}

/// Zero-pads the channel axis of `[b, c, h, w]` up to `channels`.
pub fn pad_channels(x: &Tensor, channels: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if channels < c {
        return Err(Error::dim(format!("cannot pad {c} channels down to {channels}")));
    }
    if channels == c {
        return Ok(x.clone());
    }
    let plane = h * w;
    let mut out = vec![0.0; b * channels * plane];
    for bi in 0..b {
        let src = &x.data()[bi * c * plane..(bi + 1) * c * plane];
        out[bi * channels * plane..bi * channels * plane + c * plane].copy_from_slice(src);
    }
    Tensor::new(&[b, channels, h, w], out)
}

/// Keeps the first `channels` channels: the adjoint of [`pad_channels`].
pub fn unpad_channels(x: &Tensor, channels: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if channels == c {
        return Ok(x.clone());
    }
    if channels > c {
        return Err(Error::dim("unpad to more channels than present"));
    }
    let plane = h * w;
    let data = (0..b)
        .flat_map(|bi| x.data()[bi * c * plane..bi * c * plane + channels * plane].iter().copied())
        .collect();
    Tensor::new(&[b, channels, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_forward_adds_bias() {
        let d = Dense::new(
            Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap(),
            Tensor::new(&[2], vec![0.5, 1.0]).unwrap(),
        )
        .unwrap();
        let y = d.forward(&Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[11.5, -3.0]);
    }

    #[test]
    fn pool_and_backward() {
        let x = Tensor::new(&[1, 2, 1, 2], vec![1.0, 3.0, -2.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.0, 1.0]);
        let g = global_avg_pool_backward(&Tensor::new(&[1, 2], vec![2.0, 4.0]).unwrap(), x.shape()).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn pad_then_unpad_round_trips() {
        let x = Tensor::new(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = pad_channels(&x, 3).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(unpad_channels(&p, 1).unwrap(), x);
    }

    #[test]
    fn relu_gradient_masks_non_positive() {
        let pre = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&pre).data(), &[0.0, 0.0, 2.0]);
        let up = Tensor::full(&[3], 5.0).unwrap();
        assert_eq!(relu_backward(&up, &pre).unwrap().data(), &[0.0, 0.0, 5.0]);
    }
}
