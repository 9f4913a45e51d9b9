//! 3×3 convolution with zero padding 1, via im2col and GEMM.
//!
//! Weights are `[9·cin, cout]`, rows ordered `(ky, kx, cin)`.

use super::gemm::gemm;
use super::graph::{Backward, Graph, NodeId};
use super::ops::column_sums;
use super::Tensor;
use crate::error::{Error, Result};

fn out_extent(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

fn im2col(x: &[f64], h: usize, w: usize, cin: usize, stride: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (out_extent(h, stride), out_extent(w, stride));
    let k = 9 * cin;
    let mut cols = vec![0.0; oh * ow * k];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            for ky in 0..3 {
                let iy = (oy * stride + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (ox * stride + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * cin;
                    let dst = (ky * 3 + kx) * cin;
                    row[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                }
            }
        }
    }
    (cols, oh, ow)
}

fn col2im(cols: &[f64], h: usize, w: usize, cin: usize, stride: usize) -> Vec<f64> {
    let (oh, ow) = (out_extent(h, stride), out_extent(w, stride));
    let k = 9 * cin;
    let mut dx = vec![0.0; h * w * cin];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            for ky in 0..3 {
                let iy = (oy * stride + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (ox * stride + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * cin;
                    let src = (ky * 3 + kx) * cin;
                    dx[dst..dst + cin].iter_mut().zip(&row[src..src + cin]).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    dx
}

fn check(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<(usize, usize, usize, usize)> {
    let (h, w, cin) = x.hwc()?;
    let (k, cout) = weight.matrix()?;
    if k != 9 * cin {
        return Err(Error::dim("conv3x3", x.shape(), weight.shape()));
    }
    if bias.shape() != [cout] {
        return Err(Error::dim("conv3x3 bias", weight.shape(), bias.shape()));
    }
    if stride == 0 {
        return Err(Error::Config("conv3x3 stride must be positive".into()));
    }
    Ok((h, w, cin, cout))
}

fn forward(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<(Tensor, Vec<f64>)> {
    let (h, w, cin, cout) = check(x, weight, bias, stride)?;
    let (cols, oh, ow) = im2col(x.data(), h, w, cin, stride);
    let mut out = vec![0.0; oh * ow * cout];
    for row in out.chunks_exact_mut(cout) {
        row.copy_from_slice(bias.data());
    }
    gemm(oh * ow, 9 * cin, cout, &cols, false, weight.data(), false, 1.0, &mut out);
    Ok((Tensor::from_vec(&[oh, ow, cout], out)?, cols))
}

pub fn conv3x3(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    forward(x, weight, bias, stride).map(|(t, _)| t)
}

struct Conv3x3Backward {
    stride: usize,
    cols: Vec<f64>,
}

impl Backward for Conv3x3Backward {
    fn name(&self) -> &'static str {
        "conv3x3"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, weight) = (inputs[0], inputs[1]);
        let (h, w, cin) = x.hwc().expect("conv3x3 input");
        let (k, cout) = weight.matrix().expect("conv3x3 weight");
        let pixels = output.numel() / cout;
        let dx = needs[0].then(|| {
            let mut dcols = vec![0.0; pixels * k];
            gemm(pixels, cout, k, grad, false, weight.data(), true, 0.0, &mut dcols);
            col2im(&dcols, h, w, cin, self.stride)
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; k * cout];
            gemm(k, pixels, cout, &self.cols, true, grad, false, 0.0, &mut dw);
            dw
        });
        let db = needs[2].then(|| column_sums(grad, cout));
        vec![dx, dw, db]
    }
}

impl Graph {
    pub fn conv3x3(&mut self, x: NodeId, weight: NodeId, bias: NodeId, stride: usize) -> Result<NodeId> {
        let (v, cols) = forward(self.value(x), self.value(weight), self.value(bias), stride)?;
        Ok(self.push(v, &[x, weight, bias], Box::new(Conv3x3Backward { stride, cols })))
    }
}
