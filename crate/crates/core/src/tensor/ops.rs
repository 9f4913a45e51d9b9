//! Forward kernels and their recorded backward passes.
//!
//! Each kernel exists as a plain function over [`Tensor`] values and as a
//! [`Graph`] method that records it on the tape.

use super::{gemm, Backward, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// matmul

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix()?;
    let (k2, n) = b.matrix()?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Tensor::from_vec(&[m, n], out)
}

/// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix()?;
    let (n, k2) = b.matrix()?;
    if k != k2 {
        return Err(Error::dim("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), true, 0.0, &mut out);
    Tensor::from_vec(&[m, n], out)
}

struct MatMulBackward {
    transpose_rhs: bool,
}

impl Backward for MatMulBackward {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k) = a.matrix().expect("matmul lhs");
        let n = grad.len() / m;
        let da = needs[0].then(|| {
            let mut da = vec![0.0; m * k];
            // dA = dC · Bᵀ   (or dC · B when B was used transposed)
            gemm(m, n, k, grad, false, b.data(), !self.transpose_rhs, 0.0, &mut da);
            da
        });
        let db = needs[1].then(|| {
            let mut db = vec![0.0; k * n];
            if self.transpose_rhs {
                // B is [n×k]: dB = dCᵀ · A
                gemm(n, m, k, grad, true, a.data(), false, 0.0, &mut db);
            } else {
                gemm(k, m, n, a.data(), true, grad, false, 0.0, &mut db);
            }
            db
        });
        vec![da, db]
    }
}

// ---------------------------------------------------------------------------
// conv1x1

pub fn conv1x1(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (h, w, cin) = x.hwc()?;
    let (wcin, cout) = weight.matrix()?;
    if wcin != cin {
        return Err(Error::dim("conv1x1", x.shape(), weight.shape()));
    }
    if bias.shape() != [cout] {
        return Err(Error::dim("conv1x1 bias", weight.shape(), bias.shape()));
    }
    let mut out = vec![0.0; h * w * cout];
    for row in out.chunks_exact_mut(cout) {
        row.copy_from_slice(bias.data());
    }
    gemm(h * w, cin, cout, x.data(), false, weight.data(), false, 1.0, &mut out);
    Tensor::from_vec(&[h, w, cout], out)
}

struct Conv1x1Backward;

impl Backward for Conv1x1Backward {
    fn name(&self) -> &'static str {
        "conv1x1"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, weight) = (inputs[0], inputs[1]);
        let (cin, cout) = weight.matrix().expect("conv1x1 weight");
        let pixels = x.numel() / cin;
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; pixels * cin];
            gemm(pixels, cout, cin, grad, false, weight.data(), true, 0.0, &mut dx);
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; cin * cout];
            gemm(cin, pixels, cout, x.data(), true, grad, false, 0.0, &mut dw);
            dw
        });
        let db = needs[2].then(|| column_sums(grad, cout));
        vec![dx, dw, db]
    }
}

pub(crate) fn column_sums(grad: &[f64], cols: usize) -> Vec<f64> {
    let mut db = vec![0.0; cols];
    for row in grad.chunks_exact(cols) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    db
}

// ---------------------------------------------------------------------------
// elementwise activations

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

#[derive(Clone, Copy)]
enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

struct ActivationBackward {
    kind: Activation,
    /// Restricts the activation to one channel of the last axis.
    channel: Option<(usize, usize)>,
}

impl Backward for ActivationBackward {
    fn name(&self) -> &'static str {
        match self.kind {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    fn backward(&self, _: &[&Tensor], output: &Tensor, grad: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let local = |y: f64| match self.kind {
            // relu'(0) is taken as 0
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        };
        let dx = output
            .data()
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(i, (&y, &g))| match self.channel {
                Some((ch, channels)) if i % channels != ch => g,
                _ => g * local(y),
            })
            .collect();
        vec![Some(dx)]
    }
}

/// Applies `tanh` to a single channel of the last axis, identity elsewhere.
pub fn tanh_channel(x: &Tensor, channel: usize) -> Result<Tensor> {
    let channels = *x.shape().last().expect("rank >= 1");
    if channel >= channels {
        return Err(Error::Config(format!("tanh channel {channel} out of range for {channels} channels")));
    }
    let mut out = x.clone();
    out.clear_grad();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if i % channels == channel {
            *v = v.tanh();
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// group normalization

struct GroupNormStats {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn group_norm_impl(
    x: &Tensor,
    groups: usize,
    scale: &Tensor,
    shift: &Tensor,
    eps: f64,
) -> Result<(Tensor, GroupNormStats)> {
    let (h, w, c) = x.hwc()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!("group_norm: {c} channels not divisible into {groups} groups")));
    }
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::dim("group_norm affine", &[c], scale.shape()));
    }
    let cg = c / groups;
    let count = (h * w * cg) as f64;
    let data = x.data();
    let mut mean = vec![0.0; groups];
    for row in data.chunks_exact(c) {
        for (ch, v) in row.iter().enumerate() {
            mean[ch / cg] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; groups];
    for row in data.chunks_exact(c) {
        for (ch, v) in row.iter().enumerate() {
            let d = v - mean[ch / cg];
            var[ch / cg] += d * d;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / count + eps).sqrt()).collect();
    let mut xhat = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    for (i, v) in data.iter().enumerate() {
        let ch = i % c;
        let g = ch / cg;
        let n = (v - mean[g]) * inv_std[g];
        xhat[i] = n;
        out[i] = n * scale.data()[ch] + shift.data()[ch];
    }
    Ok((Tensor::from_vec(&[h, w, c], out)?, GroupNormStats { xhat, inv_std }))
}

pub fn group_norm(x: &Tensor, groups: usize, scale: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
    group_norm_impl(x, groups, scale, shift, eps).map(|(t, _)| t)
}

struct GroupNormBackward {
    groups: usize,
    stats: GroupNormStats,
}

impl Backward for GroupNormBackward {
    fn name(&self) -> &'static str {
        "group_norm"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let c = inputs[1].numel();
        let scale = inputs[1].data();
        let cg = c / self.groups;
        let xhat = &self.stats.xhat;
        let count = (grad.len() / c * cg) as f64;

        let mut dscale = vec![0.0; c];
        let mut dshift = vec![0.0; c];
        let mut sum_dxhat = vec![0.0; self.groups];
        let mut sum_dxhat_xhat = vec![0.0; self.groups];
        for (i, &g) in grad.iter().enumerate() {
            let ch = i % c;
            dscale[ch] += g * xhat[i];
            dshift[ch] += g;
            let dxh = g * scale[ch];
            sum_dxhat[ch / cg] += dxh;
            sum_dxhat_xhat[ch / cg] += dxh * xhat[i];
        }
        let dx = needs[0].then(|| {
            grad.iter()
                .enumerate()
                .map(|(i, &g)| {
                    let ch = i % c;
                    let grp = ch / cg;
                    let dxh = g * scale[ch];
                    self.stats.inv_std[grp] * (dxh - sum_dxhat[grp] / count - xhat[i] * sum_dxhat_xhat[grp] / count)
                })
                .collect()
        });
        vec![dx, Some(dscale), Some(dshift)]
    }
}

// ---------------------------------------------------------------------------
// bilinear resampling (align_corners = false, edge clamped)

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if lo == hi { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

pub fn resample_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = x.hwc()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resample target extent must be >= 1".into()));
    }
    if (out_h, out_w) == (h, w) {
        let mut t = x.clone();
        t.clear_grad();
        return Ok(t);
    }
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let src = x.data();
    let mut out = vec![0.0; out_h * out_w * c];
    for (oy, ty) in rows.iter().enumerate() {
        for (ox, tx) in cols.iter().enumerate() {
            let dst = &mut out[(oy * out_w + ox) * c..][..c];
            for (y, wy) in [(ty.lo, 1.0 - ty.frac), (ty.hi, ty.frac)] {
                for (xx, wx) in [(tx.lo, 1.0 - tx.frac), (tx.hi, tx.frac)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 {
                        continue;
                    }
                    let s = &src[(y * w + xx) * c..][..c];
                    dst.iter_mut().zip(s).for_each(|(d, v)| *d += wgt * v);
                }
            }
        }
    }
    Tensor::from_vec(&[out_h, out_w, c], out)
}

struct ResampleBackward;

impl Backward for ResampleBackward {
    fn name(&self) -> &'static str {
        "resample_bilinear"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (h, w, c) = inputs[0].hwc().expect("resample input");
        let (out_h, out_w, _) = output.hwc().expect("resample output");
        if (out_h, out_w) == (h, w) {
            return vec![Some(grad.to_vec())];
        }
        let rows = taps(h, out_h);
        let cols = taps(w, out_w);
        let mut dx = vec![0.0; h * w * c];
        for (oy, ty) in rows.iter().enumerate() {
            for (ox, tx) in cols.iter().enumerate() {
                let g = &grad[(oy * out_w + ox) * c..][..c];
                for (y, wy) in [(ty.lo, 1.0 - ty.frac), (ty.hi, ty.frac)] {
                    for (xx, wx) in [(tx.lo, 1.0 - tx.frac), (tx.hi, tx.frac)] {
                        let wgt = wy * wx;
                        if wgt == 0.0 {
                            continue;
                        }
                        let d = &mut dx[(y * w + xx) * c..][..c];
                        d.iter_mut().zip(g).for_each(|(a, b)| *a += wgt * b);
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

// ---------------------------------------------------------------------------
// structural and arithmetic ops

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim("add", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

struct AddBackward;

impl Backward for AddBackward {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| grad.to_vec()), needs[1].then(|| grad.to_vec())]
    }
}

/// Multiplies every element by a single-element tensor.
pub fn scale(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    if s.numel() != 1 {
        return Err(Error::dim("scale", &[1], s.shape()));
    }
    let k = s.data()[0];
    Ok(map(x, |v| k * v))
}

struct ScaleBackward;

impl Backward for ScaleBackward {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, s) = (inputs[0], inputs[1].data()[0]);
        let dx = needs[0].then(|| grad.iter().map(|g| g * s).collect());
        let ds = needs[1].then(|| vec![grad.iter().zip(x.data()).map(|(g, v)| g * v).sum()]);
        vec![dx, ds]
    }
}

struct ReshapeBackward;

impl Backward for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.to_vec())]
    }
}

/// Divides each row of a nonnegative matrix by its sum. A row summing to
/// exactly zero becomes uniform (and passes no gradient), so every output
/// row sums to one even when its entries underflowed.
pub fn row_l1_normalize(x: &Tensor) -> Result<Tensor> {
    let (_, cols) = x.matrix()?;
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(cols) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.fill(1.0 / cols as f64);
        }
    }
    Tensor::from_vec(x.shape(), out)
}

struct RowNormBackward;

impl Backward for RowNormBackward {
    fn name(&self) -> &'static str {
        "row_l1_normalize"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0];
        let (_, cols) = x.matrix().expect("row norm input");
        let mut dx = vec![0.0; x.numel()];
        for ((xr, gr), dr) in x.data().chunks_exact(cols).zip(grad.chunks_exact(cols)).zip(dx.chunks_exact_mut(cols)) {
            let s: f64 = xr.iter().sum();
            if !(s > 0.0) {
                continue;
            }
            let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for (d, g) in dr.iter_mut().zip(gr) {
                *d = g / s - dot / (s * s);
            }
        }
        vec![Some(dx)]
    }
}

// ---------------------------------------------------------------------------
// tape recording

impl Graph {
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, &[a, b], Box::new(MatMulBackward { transpose_rhs: false })))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, &[a, b], Box::new(MatMulBackward { transpose_rhs: true })))
    }

    pub fn conv1x1(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = conv1x1(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.push(v, &[x, weight, bias], Box::new(Conv1x1Backward)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = relu(self.value(x));
        self.push(v, &[x], Box::new(ActivationBackward { kind: Activation::Relu, channel: None }))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = sigmoid(self.value(x));
        self.push(v, &[x], Box::new(ActivationBackward { kind: Activation::Sigmoid, channel: None }))
    }

    pub fn tanh_channel(&mut self, x: NodeId, channel: usize) -> Result<NodeId> {
        let v = tanh_channel(self.value(x), channel)?;
        let channels = *v.shape().last().expect("rank >= 1");
        Ok(self.push(
            v,
            &[x],
            Box::new(ActivationBackward { kind: Activation::Tanh, channel: Some((channel, channels)) }),
        ))
    }

    pub fn group_norm(&mut self, x: NodeId, groups: usize, scale: NodeId, shift: NodeId, eps: f64) -> Result<NodeId> {
        let (v, stats) = group_norm_impl(self.value(x), groups, self.value(scale), self.value(shift), eps)?;
        Ok(self.push(v, &[x, scale, shift], Box::new(GroupNormBackward { groups, stats })))
    }

    pub fn resample_bilinear(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let v = resample_bilinear(self.value(x), out_h, out_w)?;
        Ok(self.push(v, &[x], Box::new(ResampleBackward)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = add(self.value(a), self.value(b))?;
        Ok(self.push(v, &[a, b], Box::new(AddBackward)))
    }

    pub fn scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let v = scale(self.value(x), self.value(s))?;
        Ok(self.push(v, &[x, s], Box::new(ScaleBackward)))
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> Result<NodeId> {
        let mut v = self.value(x).clone();
        v.clear_grad();
        let v = v.reshape(dims)?;
        Ok(self.push(v, &[x], Box::new(ReshapeBackward)))
    }

    pub fn row_l1_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let v = row_l1_normalize(self.value(x))?;
        Ok(self.push(v, &[x], Box::new(RowNormBackward)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(dims, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selector() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&eye, &m).unwrap().data(), m.data());
        let sel = t(&[1, 2], &[1.0, 0.0]);
        let col = t(&[2, 1], &[5.0, 7.0]);
        assert_eq!(matmul(&sel, &col).unwrap().data(), &[5.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[2, 3]).unwrap();
        match matmul(&a, &b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn conv1x1_identity_weight() {
        let x = t(&[2, 2, 2], &[1.0, -2.0, 3.0, 4.0, 0.5, 0.25, -1.0, 9.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::zeros(&[2]).unwrap();
        assert_eq!(conv1x1(&x, &w, &b).unwrap().data(), x.data());
        let bad = Tensor::zeros(&[3, 2]).unwrap();
        assert!(matches!(conv1x1(&x, &bad, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn conv1x1_single_pixel_is_affine() {
        let x = t(&[1, 1, 2], &[2.0, 3.0]);
        let w = t(&[2, 1], &[0.5, -1.0]);
        let b = t(&[1], &[10.0]);
        assert_eq!(conv1x1(&x, &w, &b).unwrap().data(), &[10.0 + 1.0 - 3.0]);
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(&Tensor::scalar(0.0)).data(), &[0.5]);
        let r = relu(&t(&[2], &[-3.0, 3.0]));
        assert_eq!(r.data(), &[0.0, 3.0]);
        let s = sigmoid(&t(&[3], &[-800.0, 0.0, 800.0]));
        assert!(s.is_finite());
    }

    #[test]
    fn tanh_channel_touches_one_channel() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = tanh_channel(&x, 1).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0f64.tanh(), 3.0, 4.0f64.tanh()]);
        assert!(tanh_channel(&x, 2).is_err());
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let x = Tensor::full(&[3, 3, 4], 7.5).unwrap();
        let one = Tensor::full(&[4], 1.0).unwrap();
        let zero = Tensor::zeros(&[4]).unwrap();
        let y = group_norm(&x, 2, &one, &zero, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_norm_indivisible_is_config_error() {
        let x = Tensor::zeros(&[2, 2, 6]).unwrap();
        let one = Tensor::full(&[6], 1.0).unwrap();
        let zero = Tensor::zeros(&[6]).unwrap();
        assert!(matches!(group_norm(&x, 4, &one, &zero, 1e-5), Err(Error::Config(_))));
    }

    #[test]
    fn group_norm_equal_groups_is_instance_norm() {
        let data: Vec<f64> = (0..2 * 3 * 3).map(|i| ((i * 7) % 5) as f64 + 0.1 * i as f64).collect();
        let x = t(&[2, 3, 3], &data);
        let one = Tensor::full(&[3], 1.0).unwrap();
        let zero = Tensor::zeros(&[3]).unwrap();
        let y = group_norm(&x, 3, &one, &zero, 1e-5).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = data.iter().skip(ch).step_by(3).copied().collect();
            let m = vals.iter().sum::<f64>() / 6.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
            for (k, val) in vals.iter().enumerate() {
                let want = (val - m) / (v + 1e-5).sqrt();
                assert!((y.data()[k * 3 + ch] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resample_same_size_is_bit_identical() {
        let data: Vec<f64> = (0..4 * 5 * 2).map(|i| (i as f64).sqrt()).collect();
        let x = t(&[4, 5, 2], &data);
        assert_eq!(resample_bilinear(&x, 4, 5).unwrap().data(), x.data());
        assert!(resample_bilinear(&x, 0, 5).is_err());
    }

    #[test]
    fn resample_constant_stays_constant() {
        let x = Tensor::full(&[4, 6, 3], 2.5).unwrap();
        for (oh, ow) in [(2, 3), (8, 12), (1, 1), (5, 7)] {
            let y = resample_bilinear(&x, oh, ow).unwrap();
            assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
        }
    }

    #[test]
    fn resample_halving_averages_quads() {
        // 4x4 -> 2x2 with align_corners=false samples at (0.5, 0.5) offsets: exact 2x2 mean
        let data: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let x = t(&[4, 4, 1], &data);
        let y = resample_bilinear(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn row_normalize_survives_underflow() {
        let x = t(&[2, 3], &[1e-300, 3e-300, 0.0, 0.0, 0.0, 0.0]);
        let y = row_l1_normalize(&x).unwrap();
        assert_eq!(&y.data()[..3], &[0.25, 0.75, 0.0]);
        assert!(y.data()[3..].iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn row_normalize_rows_sum_to_one() {
        let x = t(&[2, 3], &[1.0, 2.0, 1.0, 0.1, 0.1, 0.2]);
        let y = row_l1_normalize(&x).unwrap();
        for row in y.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
