//! Forward and backward kernels for the differentiable operations.
//!
//! Layouts: feature maps are `H x W x C`, convolution kernels are
//! `K x K x Cin x Cout`, dense weights are `n x m`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryFn {
    Relu,
    Softplus,
    Log,
    Exp,
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Relu => "relu",
            UnaryFn::Softplus => "softplus",
            UnaryFn::Log => "log",
            UnaryFn::Exp => "exp",
        }
    }
}

/// `log(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn conv_geometry(
    input: &[usize],
    kernel: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let (h, w, cin) = match *input {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::shape(format!("conv input must be HxWxC, got {input:?}"))),
    };
    let (k, cout) = match *kernel {
        [k1, k2, ci, co] if k1 == k2 => {
            if ci != cin {
                return Err(Error::shape(format!(
                    "kernel expects {ci} input channels, input has {cin}"
                )));
            }
            (k1, co)
        }
        _ => {
            return Err(Error::shape(format!(
                "conv kernel must be KxKxCinxCout, got {kernel:?}"
            )))
        }
    };
    if stride == 0 {
        return Err(Error::shape("conv stride must be positive"));
    }
    if k > h + 2 * padding || k > w + 2 * padding {
        return Err(Error::shape(format!(
            "kernel {k} larger than padded input {h}x{w} (padding {padding})"
        )));
    }
    Ok(ConvGeom {
        h,
        w,
        cin,
        k,
        cout,
        stride,
        padding,
        oh: (h + 2 * padding - k) / stride + 1,
        ow: (w + 2 * padding - k) / stride + 1,
    })
}

/// Input pixel feeding output `(o, kk)` along one axis, if inside the image.
#[inline]
fn tap(o: usize, kk: usize, g: &ConvGeom, extent: usize) -> Option<usize> {
    let pos = (o * g.stride + kk).checked_sub(g.padding)?;
    (pos < extent).then_some(pos)
}

/// Zero-padded 2-D cross-correlation.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = conv_geometry(input.dims(), kernel.dims(), stride, padding)?;
    Ok(conv2d_raw(input.data(), kernel.data(), &g))
}

pub(crate) fn conv2d_raw(x: &[f64], kern: &[f64], g: &ConvGeom) -> Tensor {
    let mut out = vec![0.0; g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let acc = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
            for ky in 0..g.k {
                let Some(iy) = tap(oy, ky, g, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = tap(ox, kx, g, g.w) else { continue };
                    let px = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                    let kbase = (ky * g.k + kx) * g.cin;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let krow = &kern[(kbase + ci) * g.cout..][..g.cout];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += v * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.oh, g.ow, g.cout], out).expect("conv output extents")
}

/// Gradients of a convolution w.r.t. its input and kernel.
pub(crate) fn conv2d_backward(
    x: &[f64],
    kern: &[f64],
    gout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; kern.len()];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let go = &gout[(oy * g.ow + ox) * g.cout..][..g.cout];
            for ky in 0..g.k {
                let Some(iy) = tap(oy, ky, g, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = tap(ox, kx, g, g.w) else { continue };
                    let pbase = (iy * g.w + ix) * g.cin;
                    let kbase = (ky * g.k + kx) * g.cin;
                    for ci in 0..g.cin {
                        let krow = (kbase + ci) * g.cout;
                        let kr = &kern[krow..][..g.cout];
                        let dot: f64 = kr.iter().zip(go).map(|(a, b)| a * b).sum();
                        gx[pbase + ci] += dot;
                        let v = x[pbase + ci];
                        if v != 0.0 {
                            for (d, &gv) in gk[krow..][..g.cout].iter_mut().zip(go) {
                                *d += v * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

/// Fully connected layer on the flattened input.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, m) = dense_geometry(input.dims(), weights.dims(), bias.dims())?;
    let mut out = bias.data().to_vec();
    for (i, &v) in input.data().iter().enumerate() {
        let row = &weights.data()[i * m..][..m];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += v * w;
        }
    }
    debug_assert_eq!(input.len(), n);
    Ok(Tensor::from_vec(out))
}

pub(crate) fn dense_geometry(
    input: &[usize],
    weights: &[usize],
    bias: &[usize],
) -> Result<(usize, usize)> {
    let n: usize = input.iter().product();
    let (rows, m) = match *weights {
        [r, m] => (r, m),
        _ => return Err(Error::shape(format!("dense weights must be n x m, got {weights:?}"))),
    };
    if rows != n {
        return Err(Error::shape(format!(
            "dense input has {n} values, weights expect {rows}"
        )));
    }
    if bias.iter().product::<usize>() != m {
        return Err(Error::shape(format!("dense bias {bias:?} does not match {m} outputs")));
    }
    Ok((n, m))
}

/// Mean over the spatial axes of an `H x W x C` tensor.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    let mut out = vec![0.0; c];
    for px in input.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let inv = 1.0 / (h * w) as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(Tensor::from_vec(out))
}

pub fn apply_unary(input: &Tensor, f: UnaryFn) -> Result<Tensor> {
    if f == UnaryFn::Log {
        if let Some(bad) = input.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain(format!("log of nonpositive value {bad}")));
        }
    }
    let data = input
        .data()
        .iter()
        .map(|&x| match f {
            UnaryFn::Relu => x.max(0.0),
            UnaryFn::Softplus => softplus(x),
            UnaryFn::Log => x.ln(),
            UnaryFn::Exp => x.exp(),
        })
        .collect();
    Tensor::new(input.dims().to_vec(), data)
}

pub(crate) fn unary_backward(f: UnaryFn, x: &[f64], y: &[f64], gout: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(y)
        .zip(gout)
        .map(|((&x, &y), &g)| match f {
            UnaryFn::Relu => {
                if x > 0.0 {
                    g
                } else {
                    0.0
                }
            }
            UnaryFn::Softplus => g * sigmoid(x),
            UnaryFn::Log => g / x,
            UnaryFn::Exp => g * y,
        })
        .collect()
}

/// `-log softmax(logits)[label]`.
pub fn softmax_xent(logits: &Tensor, label: usize) -> Result<f64> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::Index(format!(
            "label {label} out of range for {} classes",
            z.len()
        )));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - z[label])
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Rng, Stream};

    fn random(dims: &[usize], rng: &mut Rng) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(dims.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    /// Six nested loops straight from the definition.
    fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (h, w, cin) = x.hwc().unwrap();
        let (ks, cout) = (k.dims()[0], k.dims()[3]);
        let oh = (h + 2 * pad - ks) / stride + 1;
        let ow = (w + 2 * pad - ks) / stride + 1;
        let mut out = vec![0.0; oh * ow * cout];
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut s = 0.0;
                    for ky in 0..ks {
                        for kx in 0..ks {
                            for ci in 0..cin {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += x.at3(iy as usize, ix as usize, ci)
                                    * k.data()[((ky * ks + kx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    out[(oy * ow + ox) * cout + co] = s;
                }
            }
        }
        Tensor::new(vec![oh, ow, cout], out).unwrap()
    }

    #[test]
    fn conv_scalar() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap().data(), &[6.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = Rng::new(1, Stream::Data);
        let x = random(&[5, 4, 3], &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = Rng::new(2, Stream::Data);
        let x = random(&[8, 8, 3], &mut rng);
        let k = random(&[3, 3, 3, 4], &mut rng);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
            let got = conv2d(&x, &k, stride, pad).unwrap();
            let want = conv_oracle(&x, &k, stride, pad);
            assert_eq!(got.dims(), want.dims());
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn conv_output_extent() {
        let x = Tensor::zeros(&[32, 32, 3]);
        let k = Tensor::zeros(&[3, 3, 3, 16]);
        assert_eq!(conv2d(&x, &k, 2, 1).unwrap().dims(), &[16, 16, 16]);
        let x = Tensor::zeros(&[7, 9, 3]);
        assert_eq!(conv2d(&x, &k, 2, 0).unwrap().dims(), &[3, 4, 16]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros(&[4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(Error::Shape(_))));
        let k = Tensor::zeros(&[5, 5, 2, 1]);
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());
        let b = Tensor::from_vec(vec![0.5, 0.25]);
        assert_eq!(dense(&x, &Tensor::zeros(&[3, 2]), &b).unwrap().data(), b.data());
    }

    #[test]
    fn dense_matches_dot_products() {
        let mut rng = Rng::new(3, Stream::Data);
        let x = random(&[12], &mut rng);
        let w = random(&[12, 5], &mut rng);
        let b = random(&[5], &mut rng);
        let got = dense(&x, &w, &b).unwrap();
        for j in 0..5 {
            let col: f64 = (0..12).map(|i| x.data()[i] * w.data()[i * 5 + j]).sum();
            assert!((got.data()[j] - (col + b.data()[j])).abs() < 1e-12);
        }
        assert!(matches!(
            dense(&random(&[11], &mut rng), &w, &b),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gap_examples() {
        let t = Tensor::full(&[3, 5, 1], 7.0);
        assert_eq!(global_avg_pool(&t).unwrap().data(), &[7.0]);
        let t = Tensor::new(vec![2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(global_avg_pool(&t).unwrap().data(), &[2.5]);

        let mut rng = Rng::new(4, Stream::Data);
        let t = random(&[8, 8, 192], &mut rng);
        let got = global_avg_pool(&t).unwrap();
        for c in 0..192 {
            let mut s = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    s += t.at3(y, x, c);
                }
            }
            assert!((got.data()[c] - s / 64.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unary_examples() {
        let t = Tensor::from_vec(vec![-3.0, 3.0]);
        assert_eq!(apply_unary(&t, UnaryFn::Relu).unwrap().data(), &[0.0, 3.0]);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        assert!(softplus(1000.0).is_finite());
        assert!(softplus(-1000.0) >= 0.0);
        let bad = Tensor::from_vec(vec![1.0, 0.0]);
        assert!(matches!(apply_unary(&bad, UnaryFn::Log), Err(Error::Domain(_))));
    }

    #[test]
    fn xent_examples() {
        let z = Tensor::from_vec(vec![0.3; 4]);
        assert!((softmax_xent(&z, 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        let z = Tensor::from_vec(vec![0.0, 1e3, 0.0]);
        assert!(softmax_xent(&z, 1).unwrap().abs() < 1e-12);
        assert!(matches!(softmax_xent(&z, 3), Err(Error::Index(_))));

        let mut rng = Rng::new(5, Stream::Data);
        for _ in 0..50 {
            let z = random(&[6], &mut rng);
            let label = rng.below(6);
            let direct = -(z.data()[label].exp() / z.data().iter().map(|v| v.exp()).sum::<f64>()).ln();
            assert!((softmax_xent(&z, label).unwrap() - direct).abs() < 1e-10);
        }
    }
}
