use serde::{Deserialize, Serialize};

use super::spatial_dims;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    /// Output size `ceil(in / stride)`; odd padding goes to the bottom/right.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    Standard,
    Depthwise { multiplier: usize },
    Pointwise,
}

/// Geometry of a 2-D convolution.
///
/// Kernel layouts: standard and pointwise use `[K, K, C_in, C_out]`;
/// depthwise uses `[K, K, C_out]` where output channel `c * m + j` reads
/// input channel `c` (`m` is the channel multiplier).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
    pub mode: ConvMode,
}

/// Output extent and leading padding along one axis.
fn axis_geometry(input: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if input < k {
                None
            } else {
                Some(((input - k) / stride + 1, 0))
            }
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = ((out - 1) * stride + k).saturating_sub(input);
            Some((out, needed / 2))
        }
    }
}

impl ConvSpec {
    pub fn standard(k: usize, stride: usize, padding: Padding, cin: usize, cout: usize) -> Self {
        ConvSpec {
            kernel_size: k,
            stride,
            padding,
            in_channels: cin,
            out_channels: cout,
            mode: ConvMode::Standard,
        }
    }

    pub fn pointwise(cin: usize, cout: usize) -> Self {
        ConvSpec {
            kernel_size: 1,
            stride: 1,
            padding: Padding::Valid,
            in_channels: cin,
            out_channels: cout,
            mode: ConvMode::Pointwise,
        }
    }

    pub fn depthwise(k: usize, stride: usize, padding: Padding, channels: usize) -> Self {
        ConvSpec {
            kernel_size: k,
            stride,
            padding,
            in_channels: channels,
            out_channels: channels,
            mode: ConvMode::Depthwise { multiplier: 1 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("conv spec {self:?}: {m}")));
        if self.kernel_size == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("sizes must be positive");
        }
        match self.mode {
            ConvMode::Pointwise if self.kernel_size != 1 => bad("pointwise requires kernel_size 1"),
            ConvMode::Depthwise { multiplier: 0 } => bad("multiplier must be >= 1"),
            ConvMode::Depthwise { multiplier } if self.out_channels != self.in_channels * multiplier => {
                bad("depthwise requires out_channels == in_channels * multiplier")
            }
            _ => Ok(()),
        }
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        let k = self.kernel_size;
        match self.mode {
            ConvMode::Depthwise { .. } => vec![k, k, self.out_channels],
            _ => vec![k, k, self.in_channels, self.out_channels],
        }
    }

    /// `(out_h, out_w, pad_top, pad_left)`, or `None` if the input is too small.
    pub fn output_geometry(&self, h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
        let (oh, pt) = axis_geometry(h, self.kernel_size, self.stride, self.padding)?;
        let (ow, pl) = axis_geometry(w, self.kernel_size, self.stride, self.padding)?;
        Some((oh, ow, pt, pl))
    }

    pub fn multiplier(&self) -> usize {
        match self.mode {
            ConvMode::Depthwise { multiplier } => multiplier,
            _ => 1,
        }
    }

    pub fn is_depthwise(&self) -> bool {
        matches!(self.mode, ConvMode::Depthwise { .. })
    }
}

/// Gradients of a convolution with respect to its inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

struct Geometry {
    b: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pt: usize,
    pl: usize,
    batched: bool,
}

fn check<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    spec: &ConvSpec,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Geometry> {
    spec.validate()?;
    let (b, h, w, c, batched) = spatial_dims(op, input.shape())?;
    if c != spec.in_channels {
        return Err(Error::shape(op, format!("input has {c} channels, spec expects {}", spec.in_channels)));
    }
    if kernel.shape() != spec.kernel_shape() {
        return Err(Error::shape(
            op,
            format!("kernel {:?}, spec expects {:?}", kernel.shape(), spec.kernel_shape()),
        ));
    }
    if let Some(bias) = bias {
        if bias.shape() != [spec.out_channels] {
            return Err(Error::shape(op, format!("bias {:?}", bias.shape())));
        }
    }
    let (oh, ow, pt, pl) = spec
        .output_geometry(h, w)
        .ok_or_else(|| Error::shape(op, format!("input {h}x{w} smaller than kernel")))?;
    Ok(Geometry { b, h, w, oh, ow, pt, pl, batched })
}

fn output_shape(g: &Geometry, c: usize) -> Vec<usize> {
    if g.batched {
        vec![g.b, g.oh, g.ow, c]
    } else {
        vec![g.oh, g.ow, c]
    }
}

/// Input coordinate for output position `o` and kernel tap `k`, if inside.
#[inline]
fn tap(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k).checked_sub(pad)?;
    (pos < extent).then_some(pos)
}

/// Cross-correlation of a standard or pointwise convolution.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if spec.is_depthwise() {
        return Err(Error::InvalidArgument("conv2d called with a depthwise spec".into()));
    }
    let g = check("conv2d", input, spec, kernel, bias)?;
    let (k, s, cin, cout) = (spec.kernel_size, spec.stride, spec.in_channels, spec.out_channels);
    let x = input.data();
    let kd = kernel.data();
    let mut out = vec![T::zero(); g.b * g.oh * g.ow * cout];
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o_off = ((b * g.oh + oy) * g.ow + ox) * cout;
                let acc = &mut out[o_off..o_off + cout];
                if let Some(bias) = bias {
                    acc.copy_from_slice(bias.data());
                }
                for ky in 0..k {
                    let Some(iy) = tap(oy, ky, s, g.pt, g.h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, kx, s, g.pl, g.w) else { continue };
                        let i_off = ((b * g.h + iy) * g.w + ix) * cin;
                        let k_off = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let v = x[i_off + ci];
                            let row = &kd[k_off + ci * cout..k_off + (ci + 1) * cout];
                            for (a, &kv) in acc.iter_mut().zip(row) {
                                *a += v * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(output_shape(&g, cout), out)?.ensure_finite("conv2d")
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    kernel: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = check("conv2d_backward", input, spec, kernel, None)?;
    let (k, s, cin, cout) = (spec.kernel_size, spec.stride, spec.in_channels, spec.out_channels);
    if grad_out.shape() != output_shape(&g, cout) {
        return Err(Error::shape("conv2d_backward", format!("grad {:?}", grad_out.shape())));
    }
    let x = input.data();
    let kd = kernel.data();
    let gd = grad_out.data();
    let mut gk = vec![T::zero(); kd.len()];
    let mut gb = vec![T::zero(); cout];
    let mut gx = if need_input_grad { vec![T::zero(); x.len()] } else { Vec::new() };
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o_off = ((b * g.oh + oy) * g.ow + ox) * cout;
                let go = &gd[o_off..o_off + cout];
                if has_bias {
                    for (a, &v) in gb.iter_mut().zip(go) {
                        *a += v;
                    }
                }
                for ky in 0..k {
                    let Some(iy) = tap(oy, ky, s, g.pt, g.h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, kx, s, g.pl, g.w) else { continue };
                        let i_off = ((b * g.h + iy) * g.w + ix) * cin;
                        let k_off = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let v = x[i_off + ci];
                            let r = k_off + ci * cout..k_off + (ci + 1) * cout;
                            for (a, &gv) in gk[r.clone()].iter_mut().zip(go) {
                                *a += v * gv;
                            }
                            if need_input_grad {
                                let dot = kd[r].iter().zip(go).fold(T::zero(), |acc, (&kv, &gv)| acc + kv * gv);
                                gx[i_off + ci] += dot;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: if need_input_grad { Some(Tensor::new(input.shape().to_vec(), gx)?) } else { None },
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: if has_bias { Some(Tensor::new(vec![cout], gb)?) } else { None },
    })
}

/// Per-channel spatial cross-correlation.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if !spec.is_depthwise() {
        return Err(Error::InvalidArgument("depthwise_conv2d requires a depthwise spec".into()));
    }
    let g = check("depthwise_conv2d", input, spec, kernel, bias)?;
    let (k, s, cin, cout, m) = (spec.kernel_size, spec.stride, spec.in_channels, spec.out_channels, spec.multiplier());
    let x = input.data();
    let kd = kernel.data();
    let mut out = vec![T::zero(); g.b * g.oh * g.ow * cout];
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o_off = ((b * g.oh + oy) * g.ow + ox) * cout;
                let acc = &mut out[o_off..o_off + cout];
                if let Some(bias) = bias {
                    acc.copy_from_slice(bias.data());
                }
                for ky in 0..k {
                    let Some(iy) = tap(oy, ky, s, g.pt, g.h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, kx, s, g.pl, g.w) else { continue };
                        let i_off = ((b * g.h + iy) * g.w + ix) * cin;
                        let k_off = (ky * k + kx) * cout;
                        let xs = &x[i_off..i_off + cin];
                        let ks = &kd[k_off..k_off + cout];
                        if m == 1 {
                            for ((a, &xv), &kv) in acc.iter_mut().zip(xs).zip(ks) {
                                *a += xv * kv;
                            }
                        } else {
                            for (c, &xv) in xs.iter().enumerate() {
                                for j in 0..m {
                                    acc[c * m + j] += xv * ks[c * m + j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(output_shape(&g, cout), out)?.ensure_finite("depthwise_conv2d")
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    kernel: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = check("depthwise_conv2d_backward", input, spec, kernel, None)?;
    let (k, s, cin, cout, m) = (spec.kernel_size, spec.stride, spec.in_channels, spec.out_channels, spec.multiplier());
    if grad_out.shape() != output_shape(&g, cout) {
        return Err(Error::shape("depthwise_conv2d_backward", format!("grad {:?}", grad_out.shape())));
    }
    let x = input.data();
    let kd = kernel.data();
    let gd = grad_out.data();
    let mut gk = vec![T::zero(); kd.len()];
    let mut gb = vec![T::zero(); cout];
    let mut gx = if need_input_grad { vec![T::zero(); x.len()] } else { Vec::new() };
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o_off = ((b * g.oh + oy) * g.ow + ox) * cout;
                let go = &gd[o_off..o_off + cout];
                if has_bias {
                    for (a, &v) in gb.iter_mut().zip(go) {
                        *a += v;
                    }
                }
                for ky in 0..k {
                    let Some(iy) = tap(oy, ky, s, g.pt, g.h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = tap(ox, kx, s, g.pl, g.w) else { continue };
                        let i_off = ((b * g.h + iy) * g.w + ix) * cin;
                        let k_off = (ky * k + kx) * cout;
                        for c in 0..cin {
                            let xv = x[i_off + c];
                            for j in 0..m {
                                let o = c * m + j;
                                gk[k_off + o] += xv * go[o];
                                if need_input_grad {
                                    gx[i_off + c] += kd[k_off + o] * go[o];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: if need_input_grad { Some(Tensor::new(input.shape().to_vec(), gx)?) } else { None },
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: if has_bias { Some(Tensor::new(vec![cout], gb)?) } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = Rng::new(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    /// Direct nested-loop evaluation of a valid, stride-1 single-channel window sum.
    fn window_oracle(img: &[Vec<f64>], ker: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (h, w, k) = (img.len(), img[0].len(), ker.len());
        (0..=h - k)
            .map(|i| {
                (0..=w - k)
                    .map(|j| {
                        let mut s = 0.0;
                        for a in 0..k {
                            for b in 0..k {
                                s += img[i + a][j + b] * ker[a][b];
                            }
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identity_kernel() {
        let x = random(&[4, 5, 1], 1);
        let spec = ConvSpec::pointwise(1, 1);
        let y = conv2d(&x, &spec, &t(&[1, 1, 1, 1], &[1.0]), None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_annihilates() {
        let x = random(&[2, 4, 4, 3], 2);
        let spec = ConvSpec::standard(3, 1, Padding::Same, 3, 5);
        let y = conv2d(&x, &spec, &Tensor::zeros(&spec.kernel_shape()), None).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_sum_matches_nested_loop_oracle() {
        let img = vec![vec![1., 2., 3.], vec![4., 5., 6.], vec![7., 8., 9.]];
        let ker = vec![vec![1., 1.], vec![1., 1.]];
        let expected = window_oracle(&img, &ker);
        assert_eq!(expected, vec![vec![12., 16.], vec![24., 28.]]);
        let x = t(&[3, 3, 1], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let spec = ConvSpec::standard(2, 1, Padding::Valid, 1, 1);
        let y = conv2d(&x, &spec, &t(&[2, 2, 1, 1], &[1., 1., 1., 1.]), None).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn output_geometry_formulas() {
        let same = ConvSpec::standard(3, 2, Padding::Same, 3, 8);
        assert_eq!(same.output_geometry(224, 224), Some((112, 112, 0, 0)));
        assert_eq!(same.output_geometry(7, 7), Some((4, 4, 1, 1)));
        let valid = ConvSpec::standard(3, 2, Padding::Valid, 3, 8);
        assert_eq!(valid.output_geometry(7, 9), Some((3, 4, 0, 0)));
        assert_eq!(valid.output_geometry(2, 2), None);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let x = random(&[4, 4, 2], 3);
        let spec = ConvSpec::standard(3, 1, Padding::Same, 3, 1);
        assert!(conv2d(&x, &spec, &Tensor::zeros(&spec.kernel_shape()), None).is_err());
        let spec = ConvSpec::standard(3, 1, Padding::Same, 2, 1);
        assert!(conv2d(&x, &spec, &Tensor::zeros(&[2, 2, 2, 1]), None).is_err());
    }

    #[test]
    fn pointwise_requires_unit_kernel() {
        let mut spec = ConvSpec::pointwise(2, 2);
        spec.kernel_size = 3;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn depthwise_identity_and_channel_independence() {
        let x = random(&[3, 3, 2], 4);
        let spec = ConvSpec::depthwise(1, 1, Padding::Valid, 2);
        let y = depthwise_conv2d(&x, &spec, &Tensor::ones(&[1, 1, 2]), None).unwrap();
        assert_eq!(y, x);

        let mut z = x.clone();
        for (i, v) in z.data_mut().iter_mut().enumerate() {
            if i % 2 == 1 {
                *v = 0.0;
            }
        }
        let spec = ConvSpec::depthwise(2, 1, Padding::Valid, 2);
        let y = depthwise_conv2d(&z, &spec, &random(&[2, 2, 2], 5), None).unwrap();
        assert!(y.data().iter().skip(1).step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn depthwise_matches_per_channel_conv2d() {
        let x = random(&[3, 3, 2], 6);
        let kernel = random(&[2, 2, 2], 7);
        let spec = ConvSpec::depthwise(2, 1, Padding::Valid, 2);
        let y = depthwise_conv2d(&x, &spec, &kernel, None).unwrap();
        for c in 0..2 {
            let xc: Vec<f64> = x.data().iter().skip(c).step_by(2).copied().collect();
            let kc: Vec<f64> = kernel.data().iter().skip(c).step_by(2).copied().collect();
            let single = ConvSpec::standard(2, 1, Padding::Valid, 1, 1);
            let yc = conv2d(&t(&[3, 3, 1], &xc), &single, &t(&[2, 2, 1, 1], &kc), None).unwrap();
            let got: Vec<f64> = y.data().iter().skip(c).step_by(2).copied().collect();
            assert_eq!(got, yc.data());
        }
    }

    #[test]
    fn depthwise_multiplier_reads_source_channel() {
        let x = t(&[1, 1, 2], &[2.0, 3.0]);
        let spec = ConvSpec {
            mode: ConvMode::Depthwise { multiplier: 2 },
            out_channels: 4,
            ..ConvSpec::depthwise(1, 1, Padding::Valid, 2)
        };
        let y = depthwise_conv2d(&x, &spec, &t(&[1, 1, 4], &[1., 10., 100., 1000.]), None).unwrap();
        assert_eq!(y.data(), &[2., 20., 300., 3000.]);
    }
}
