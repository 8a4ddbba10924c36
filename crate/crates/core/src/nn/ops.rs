//! Differentiable ops. Each `foo` has a matching `foo_backward` that maps the
//! gradient of the output back onto the inputs (and parameters).

use super::{matmul, NnError, Real, Tensor};

/// Geometry of a 1-D convolution. Padding is symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Conv1dSpec {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation,
            padding,
        }
    }

    /// Stride 1 with enough padding to keep the length for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation, dilation * (kernel - 1) / 2)
    }

    pub fn out_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span || self.stride == 0 {
            None
        } else {
            Some((padded - span) / self.stride + 1)
        }
    }
}

struct ConvDims {
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    out_len: usize,
}

fn conv_dims<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: Conv1dSpec,
) -> Result<ConvDims, NnError> {
    if input.shape().len() != 2 || weight.shape().len() != 3 {
        return Err(NnError::ShapeMismatch(format!(
            "conv1d expects input [C, L] and weight [Co, Ci, K], got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    let (c_in, len) = (input.dim(0), input.dim(1));
    let (c_out, w_in, kernel) = (weight.dim(0), weight.dim(1), weight.dim(2));
    if w_in != c_in {
        return Err(NnError::ShapeMismatch(format!(
            "conv1d weight expects {w_in} input channels, input has {c_in}"
        )));
    }
    let out_len = spec.out_len(len, kernel).ok_or_else(|| {
        NnError::ShapeMismatch(format!(
            "kernel {kernel} with dilation {} does not fit length {len}",
            spec.dilation
        ))
    })?;
    Ok(ConvDims {
        c_in,
        len,
        c_out,
        kernel,
        out_len,
    })
}

fn im2col<T: Real>(x: &[T], d: &ConvDims, spec: Conv1dSpec) -> Vec<T> {
    let mut cols = vec![T::zero(); d.c_in * d.kernel * d.out_len];
    for c in 0..d.c_in {
        let xrow = &x[c * d.len..(c + 1) * d.len];
        for k in 0..d.kernel {
            let row = &mut cols[(c * d.kernel + k) * d.out_len..(c * d.kernel + k + 1) * d.out_len];
            let offset = (k * spec.dilation) as isize - spec.padding as isize;
            for (t, slot) in row.iter_mut().enumerate() {
                let src = (t * spec.stride) as isize + offset;
                if src >= 0 && (src as usize) < d.len {
                    *slot = xrow[src as usize];
                }
            }
        }
    }
    cols
}

/// Cross-correlation of `input [C_in, L]` with `weight [C_out, C_in, K]`.
pub fn conv1d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: Conv1dSpec,
) -> Result<Tensor<T>, NnError> {
    let d = conv_dims(input, weight, spec)?;
    if bias.len() != d.c_out {
        return Err(NnError::ShapeMismatch(format!(
            "conv1d bias has {} entries, expected {}",
            bias.len(),
            d.c_out
        )));
    }
    let cols = im2col(input.data(), &d, spec);
    let mut out = vec![T::zero(); d.c_out * d.out_len];
    for (o, row) in out.chunks_mut(d.out_len).enumerate() {
        row.fill(bias.data()[o]);
    }
    matmul(
        d.c_out,
        d.c_in * d.kernel,
        d.out_len,
        weight.data(),
        false,
        &cols,
        false,
        &mut out,
        true,
    );
    Tensor::from_vec(&[d.c_out, d.out_len], out)
}

/// Gradients of [`conv1d`]: `(d input, d weight, d bias)`.
pub fn conv1d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: Conv1dSpec,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let d = conv_dims(input, weight, spec)?;
    if grad_out.shape() != [d.c_out, d.out_len] {
        return Err(NnError::ShapeMismatch(format!(
            "conv1d grad {:?} does not match output [{}, {}]",
            grad_out.shape(),
            d.c_out,
            d.out_len
        )));
    }
    let ck = d.c_in * d.kernel;
    let cols = im2col(input.data(), &d, spec);
    let g = grad_out.data();

    let mut gw = vec![T::zero(); d.c_out * ck];
    matmul(d.c_out, d.out_len, ck, g, false, &cols, true, &mut gw, false);

    let gb: Vec<T> = g.chunks(d.out_len).map(|r| r.iter().copied().sum()).collect();

    let mut gcols = vec![T::zero(); ck * d.out_len];
    matmul(ck, d.c_out, d.out_len, weight.data(), true, g, false, &mut gcols, false);
    let mut gx = vec![T::zero(); d.c_in * d.len];
    for c in 0..d.c_in {
        for k in 0..d.kernel {
            let row = &gcols[(c * d.kernel + k) * d.out_len..(c * d.kernel + k + 1) * d.out_len];
            let offset = (k * spec.dilation) as isize - spec.padding as isize;
            for (t, &v) in row.iter().enumerate() {
                let src = (t * spec.stride) as isize + offset;
                if src >= 0 && (src as usize) < d.len {
                    gx[c * d.len + src as usize] += v;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[d.c_in, d.len], gx)?,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&[d.c_out], gb)?,
    ))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of [`relu`] given its forward *output*.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad.shape(), data).expect("relu_backward shapes")
}

/// Half-open source range `[start, end)` averaged into output bin `i`.
pub fn pool_bin(i: usize, len: usize, out_len: usize) -> (usize, usize) {
    let start = i * len / out_len;
    let end = ((i + 1) * len).div_ceil(out_len);
    (start, end.max(start + 1))
}

/// Averages `input [C, L]` into `out_len` bins per channel regardless of `L`.
pub fn adaptive_avg_pool1d<T: Real>(input: &Tensor<T>, out_len: usize) -> Tensor<T> {
    let (c, len) = (input.dim(0), input.dim(1));
    assert!(len >= 1 && out_len >= 1, "adaptive pool needs L >= 1 and out_len >= 1");
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_len);
    for ch in 0..c {
        let row = &x[ch * len..(ch + 1) * len];
        for i in 0..out_len {
            let (s, e) = pool_bin(i, len, out_len);
            let sum: T = row[s..e].iter().copied().sum();
            out.push(sum / T::of((e - s) as f64));
        }
    }
    Tensor::from_vec(&[c, out_len], out).expect("pool shape")
}

pub fn adaptive_avg_pool1d_backward<T: Real>(in_len: usize, grad: &Tensor<T>) -> Tensor<T> {
    let (c, out_len) = (grad.dim(0), grad.dim(1));
    let g = grad.data();
    let mut gx = vec![T::zero(); c * in_len];
    for ch in 0..c {
        for i in 0..out_len {
            let (s, e) = pool_bin(i, in_len, out_len);
            let share = g[ch * out_len + i] / T::of((e - s) as f64);
            for v in &mut gx[ch * in_len + s..ch * in_len + e] {
                *v += share;
            }
        }
    }
    Tensor::from_vec(&[c, in_len], gx).expect("pool backward shape")
}

fn upsample_taps(t: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let pos = ((t as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Linear interpolation of `input [C, M]` onto `out_len` points (half-pixel centers).
pub fn upsample_linear1d<T: Real>(input: &Tensor<T>, out_len: usize) -> Tensor<T> {
    let (c, m) = (input.dim(0), input.dim(1));
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_len);
    for ch in 0..c {
        let row = &x[ch * m..(ch + 1) * m];
        for t in 0..out_len {
            let (i0, i1, w) = upsample_taps(t, m, out_len);
            let w = T::of(w);
            out.push(row[i0] * (T::one() - w) + row[i1] * w);
        }
    }
    Tensor::from_vec(&[c, out_len], out).expect("upsample shape")
}

pub fn upsample_linear1d_backward<T: Real>(in_len: usize, grad: &Tensor<T>) -> Tensor<T> {
    let (c, out_len) = (grad.dim(0), grad.dim(1));
    let g = grad.data();
    let mut gx = vec![T::zero(); c * in_len];
    for ch in 0..c {
        for t in 0..out_len {
            let (i0, i1, w) = upsample_taps(t, in_len, out_len);
            let w = T::of(w);
            let gv = g[ch * out_len + t];
            gx[ch * in_len + i0] += gv * (T::one() - w);
            gx[ch * in_len + i1] += gv * w;
        }
    }
    Tensor::from_vec(&[c, in_len], gx).expect("upsample backward shape")
}

/// Fully connected layer on the flattened input: `W x + b` with `W [out, in]`.
pub fn linear<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let (n_out, n_in) = (weight.dim(0), weight.dim(1));
    if input.len() != n_in || bias.len() != n_out {
        return Err(NnError::ShapeMismatch(format!(
            "linear {n_in}->{n_out} got input of {} and bias of {}",
            input.len(),
            bias.len()
        )));
    }
    let mut out = bias.data().to_vec();
    matmul(n_out, n_in, 1, weight.data(), false, input.data(), false, &mut out, true);
    Tensor::from_vec(&[n_out], out)
}

/// Gradients of [`linear`]: `(d input, d weight, d bias)`; `d input` keeps the
/// input's shape.
pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n_out, n_in) = (weight.dim(0), weight.dim(1));
    let mut gx = vec![T::zero(); n_in];
    matmul(n_in, n_out, 1, weight.data(), true, grad_out.data(), false, &mut gx, false);
    let mut gw = vec![T::zero(); n_out * n_in];
    matmul(n_out, 1, n_in, grad_out.data(), false, input.data(), false, &mut gw, false);
    (
        Tensor::from_vec(input.shape(), gx).expect("linear gx"),
        Tensor::from_vec(weight.shape(), gw).expect("linear gw"),
        grad_out.clone(),
    )
}

/// Identity in the forward direction.
pub fn grad_reverse<T: Real>(input: &Tensor<T>, _scale: f64) -> Tensor<T> {
    input.clone()
}

/// Multiplies the incoming gradient by `-scale`.
pub fn grad_reverse_backward<T: Real>(grad: &Tensor<T>, scale: f64) -> Tensor<T> {
    let s = T::of(-scale);
    grad.map(|g| g * s)
}

/// Numerically stable softmax, evaluated in `f64`.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Vec<f64> {
    let z: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` and its gradient w.r.t. the logits.
pub fn cross_entropy<T: Real>(
    logits: &Tensor<T>,
    label: usize,
) -> Result<(f64, Tensor<T>), NnError> {
    let n = logits.len();
    if label >= n {
        return Err(NnError::LabelOutOfRange { label, n_class: n });
    }
    let z: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - z[label];
    let grad: Vec<T> = z
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let p = (v - log_sum).exp();
            T::of(if i == label { p - 1.0 } else { p })
        })
        .collect();
    Ok((loss, Tensor::from_vec(logits.shape(), grad)?))
}

/// Mean squared error and its gradient w.r.t. `pred`.
pub fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::ShapeMismatch(format!(
            "mse over {} vs {} values",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).as_f64();
            loss += d * d;
            T::of(2.0 * d / n)
        })
        .collect();
    Ok((loss / n, Tensor::from_vec(pred.shape(), grad)?))
}

/// Stacks `[Ca, L]` and `[Cb, L]` into `[Ca + Cb, L]`.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if a.dim(1) != b.dim(1) {
        return Err(NnError::ShapeMismatch(format!(
            "cannot concat lengths {} and {}",
            a.dim(1),
            b.dim(1)
        )));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[a.dim(0) + b.dim(0), a.dim(1)], data)
}

/// Splits a gradient of [`concat_channels`] back into its two parts.
pub fn split_channels<T: Real>(grad: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let (c, len) = (grad.dim(0), grad.dim(1));
    let (a, b) = grad.data().split_at(first * len);
    (
        Tensor::from_vec(&[first, len], a.to_vec()).expect("split a"),
        Tensor::from_vec(&[c - first, len], b.to_vec()).expect("split b"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 4], &[0.5, -1.0, 2.0, 3.0]);
        let y = conv1d(&x, &t(&[1, 1, 1], &[1.0]), &t(&[1], &[0.0]), Conv1dSpec::new(1, 1, 0)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_hand_examples() {
        let w = t(&[1, 1, 2], &[1.0, 1.0]);
        let b = t(&[1], &[0.0]);
        let y = conv1d(&t(&[1, 3], &[1.0, 2.0, 3.0]), &w, &b, Conv1dSpec::new(1, 1, 0)).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
        let y = conv1d(&t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]), &w, &b, Conv1dSpec::new(1, 2, 0)).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let w = t(&[1, 1, 3], &[1.0, 1.0, 1.0]);
        let err = conv1d(&t(&[1, 4], &[1.0; 4]), &w, &t(&[1], &[0.0]), Conv1dSpec::new(1, 2, 0));
        assert!(matches!(err, Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn pool_examples() {
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(adaptive_avg_pool1d(&x, 4).data(), x.data());
        assert_eq!(adaptive_avg_pool1d(&x, 2).data(), &[1.5, 3.5]);
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        assert_eq!(adaptive_avg_pool1d(&x, 2).data(), &[1.5, 2.5]);
    }

    #[test]
    fn grl_forward_and_backward() {
        let x = t(&[2], &[1.0, 2.0]);
        assert_eq!(grad_reverse(&x, 1.0).data(), &[1.0, 2.0]);
        let g = grad_reverse_backward(&t(&[2], &[1.0, 1.0]), 1.0);
        assert_eq!(g.data(), &[-1.0, -1.0]);
        // d/dx x^2 at 3 through GRL(0.5): upstream 2x = 6, reversed -> -3
        let g = grad_reverse_backward(&t(&[1], &[6.0]), 0.5);
        assert_eq!(g.data(), &[-3.0]);
        let g = grad_reverse_backward(&t(&[2], &[4.0, -7.0]), 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = cross_entropy(&t(&[10], &[0.0; 10]), 3).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        let mut z = vec![0.0; 4];
        z[2] = 1e6;
        let (l, _) = cross_entropy(&t(&[4], &z), 2).unwrap();
        assert!(l.abs() < 1e-12);
        let (l, _) = cross_entropy(&t(&[2], &[1.0, 2.0]), 1).unwrap();
        assert!((l - ((1.0 + 1f64.exp()).ln() - 1.0)).abs() < 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);
        let (l, _) = cross_entropy(&t(&[2], &[1.0, 2.0]), 0).unwrap();
        assert!((l - (1.0 + 1f64.exp()).ln()).abs() < 1e-12);
        assert_eq!(
            cross_entropy(&t(&[2], &[1.0, 2.0]), 2).unwrap_err(),
            NnError::LabelOutOfRange { label: 2, n_class: 2 }
        );
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&Tensor::<f32>::from_vec(&[3], vec![100.0, -3.0, 7.5]).unwrap());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn upsample_identity_at_same_length() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 5.0]);
        assert_eq!(upsample_linear1d(&x, 3).data(), x.data());
    }
}
