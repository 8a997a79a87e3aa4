//! Dense row-major `f64` tensors and the raw numeric kernels behind the
//! traced operations in [`crate::autodiff`].

use crate::error::{Error, Result};

/// Norm floor used by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::contract(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Accumulates `other` into `self` element by element.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::Dimension {
            op,
            lhs: t.shape.clone(),
            rhs: vec![rank],
        });
    }
    Ok(())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank("matmul", a, 2)?;
    expect_rank("matmul", b, 2)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            for (o, bv) in row.iter_mut().zip(&b.data[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Gradients of `a·b` w.r.t. both operands given the output gradient.
pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut ga = vec![0.0; m * k];
    let mut gb = vec![0.0; k * n];
    for i in 0..m {
        let g_row = &grad.data[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b.data[p * n..(p + 1) * n];
            ga[i * k + p] = g_row.iter().zip(b_row).map(|(g, b)| g * b).sum();
            let av = a.data[i * k + p];
            for (gbv, g) in gb[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                *gbv += av * g;
            }
        }
    }
    (
        Tensor {
            shape: a.shape.clone(),
            data: ga,
        },
        Tensor {
            shape: b.shape.clone(),
            data: gb,
        },
    )
}

fn check_conv(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    expect_rank("conv2d", input, 3)?;
    expect_rank("conv2d", kernels, 4)?;
    let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let c_out = kernels.shape[0];
    if kernels.shape[1] != c_in || kernels.shape[2] != 3 || kernels.shape[3] != 3 {
        return Err(Error::Dimension {
            op: "conv2d",
            lhs: input.shape.clone(),
            rhs: kernels.shape.clone(),
        });
    }
    if bias.shape != [c_out] {
        return Err(Error::Dimension {
            op: "conv2d bias",
            lhs: kernels.shape.clone(),
            rhs: bias.shape.clone(),
        });
    }
    Ok((c_in, c_out, h, w))
}

/// Valid output index range for a tap offset `d` ∈ {-1, 0, 1} along an axis of length `n`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { n - 1 } else { n };
    (lo, hi.max(lo))
}

/// 3×3 cross-correlation, stride 1, zero padding 1, plus per-channel bias.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, c_out, h, w) = check_conv(input, kernels, bias)?;
    let plane = h * w;
    let mut out = vec![0.0; c_out * plane];
    for o in 0..c_out {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        out_plane.fill(bias.data[o]);
        for c in 0..c_in {
            let in_plane = &input.data[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let wv = kernels.data[((o * c_in + c) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        let sx0 = (x0 as isize + dx) as usize;
                        let src = &in_plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, h, w], out)
}

/// Returns gradients for (input, kernels, bias).
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let c_out = kernels.shape[0];
    let plane = h * w;
    let mut g_in = vec![0.0; c_in * plane];
    let mut g_k = vec![0.0; kernels.len()];
    let mut g_b = vec![0.0; c_out];
    for (o, gb) in g_b.iter_mut().enumerate() {
        let g_plane = &grad.data[o * plane..(o + 1) * plane];
        *gb = g_plane.iter().sum();
        for c in 0..c_in {
            let in_plane = &input.data[c * plane..(c + 1) * plane];
            let gi_plane = &mut g_in[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let kidx = ((o * c_in + c) * 3 + ky) * 3 + kx;
                    let wv = kernels.data[kidx];
                    let sx0 = (x0 as isize + dx) as usize;
                    let span = x1 - x0;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let g = &g_plane[y * w + x0..y * w + x1];
                        let s = &in_plane[sy * w + sx0..sy * w + sx0 + span];
                        acc += g.iter().zip(s).map(|(g, s)| g * s).sum::<f64>();
                        let gi = &mut gi_plane[sy * w + sx0..sy * w + sx0 + span];
                        for (d, g) in gi.iter_mut().zip(g) {
                            *d += wv * g;
                        }
                    }
                    g_k[kidx] = acc;
                }
            }
        }
    }
    (
        Tensor {
            shape: input.shape.clone(),
            data: g_in,
        },
        Tensor {
            shape: kernels.shape.clone(),
            data: g_k,
        },
        Tensor {
            shape: vec![c_out],
            data: g_b,
        },
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| sigmoid_scalar(v)).collect(),
    }
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Per-channel spatial mean of a `[c, h, w]` tensor.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    expect_rank("global_avg_pool", x, 3)?;
    let (c, plane) = (x.shape[0], x.shape[1] * x.shape[2]);
    let data = (0..c)
        .map(|ch| x.data[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(vec![c], data)
}

/// Non-overlapping 2×2 mean pooling of a `[c, h, w]` tensor with even `h`, `w`.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    expect_rank("avg_pool2", x, 3)?;
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension {
            op: "avg_pool2",
            lhs: x.shape.clone(),
            rhs: vec![2, 2],
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x.data[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &src[2 * y * w..2 * y * w + w];
            let r1 = &src[(2 * y + 1) * w..(2 * y + 1) * w + w];
            for x in 0..ow {
                dst[y * ow + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub(crate) fn avg_pool2_backward(input_shape: &[usize], grad: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut g = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                g[(ch * h + y) * w + x] = 0.25 * grad.data[(ch * oh + y / 2) * ow + x / 2];
            }
        }
    }
    Tensor {
        shape: input_shape.to_vec(),
        data: g,
    }
}

/// `v / max(‖v‖₂, NORM_EPS)`.
pub fn l2_normalize(v: &Tensor) -> Tensor {
    let denom = l2_norm(v).max(NORM_EPS);
    Tensor {
        shape: v.shape.clone(),
        data: v.data.iter().map(|x| x / denom).collect(),
    }
}

pub(crate) fn l2_norm(v: &Tensor) -> f64 {
    v.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shape_product_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert_eq!(Tensor::scalar(3.0).len(), 1);
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let got = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
                assert_eq!(got.data()[i * 2 + j].to_bits(), acc.to_bits());
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let input = Tensor::full(&[2, 4, 4], 0.7);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let b = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let out = conv2d(&input, &k, &b).unwrap();
        assert_eq!(out.shape(), &[3, 4, 4]);
        for o in 0..3 {
            assert!(out.data()[o * 16..(o + 1) * 16].iter().all(|&v| v == b.data()[o]));
        }
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random(&[1, 5, 6], &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let out = conv2d(&input, &k, &Tensor::vector(vec![0.0])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random(&[2, 5, 5], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let got = conv2d(&input, &k, &b).unwrap();
        for o in 0..3 {
            for y in 0..5i64 {
                for x in 0..5i64 {
                    let mut acc = b.data()[o];
                    for c in 0..2 {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if (0..5).contains(&sy) && (0..5).contains(&sx) {
                                    acc += k.data()[((o * 2 + c) * 3 + ky as usize) * 3 + kx as usize]
                                        * input.data()[(c * 5 + sy as usize) * 5 + sx as usize];
                                }
                            }
                        }
                    }
                    let v = got.data()[(o * 5 + y as usize) * 5 + x as usize];
                    assert!((v - acc).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let err = conv2d(&Tensor::zeros(&[2, 4, 4]), &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1]));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&Tensor::vector(vec![-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert!(relu(&Tensor::full(&[3, 2], -4.0)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_means() {
        let constant = Tensor::full(&[1, 3, 3], 5.0);
        assert_eq!(global_avg_pool(&constant).unwrap().data(), &[5.0]);
        let ch = Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(global_avg_pool(&ch).unwrap().data(), &[4.0]);
        assert_eq!(avg_pool2(&ch).unwrap().data(), &[4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[4, 8, 8], &mut rng);
        let got = global_avg_pool(&x).unwrap();
        for c in 0..4 {
            let mut s = 0.0;
            for i in 0..64 {
                s += x.data()[c * 64 + i];
            }
            assert_eq!(got.data()[c], s / 64.0);
        }
    }

    #[test]
    fn normalize_cases() {
        let v = l2_normalize(&Tensor::vector(vec![3.0, 4.0]));
        assert!((v.data()[0] - 0.6).abs() < 1e-15 && (v.data()[1] - 0.8).abs() < 1e-15);
        let unit = Tensor::vector(vec![0.0, 1.0, 0.0]);
        assert_eq!(l2_normalize(&unit), unit);
        let zero = Tensor::zeros(&[4]);
        assert_eq!(l2_normalize(&zero), zero);
    }
}
