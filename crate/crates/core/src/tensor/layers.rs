use super::Tensor;
use crate::error::{Error, Result};

/// 2-D convolution (cross-correlation, no kernel flip).
///
/// `weight` is `out_ch × in_ch × kh × kw`, `bias` is `out_ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if weight.rank() != 4 {
            return Err(Error::shape("Conv2d::new", weight.shape(), &[0, 0, 0, 0]));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape("Conv2d::new", weight.shape(), bias.shape()));
        }
        if stride == 0 {
            return Err(Error::usage("conv stride must be >= 1"));
        }
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    fn out_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < kh || pw < kw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

/// Per-channel leaky rectifier with learned negative slope.
#[derive(Debug, Clone, PartialEq)]
pub struct PRelu {
    pub alpha: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
}

/// Fully connected layer; `weight` is `out × in`, the input is flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Softmax {
    pub axis: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(Conv2d),
    PRelu(PRelu),
    MaxPool(MaxPool2d),
    Dense(Dense),
    Softmax(Softmax),
}

impl LayerSpec {
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            LayerSpec::Conv(c) => conv2d_forward(input, c),
            LayerSpec::PRelu(p) => prelu(input, &p.alpha),
            LayerSpec::MaxPool(m) => maxpool2d(input, m.window, m.stride),
            LayerSpec::Dense(d) => dense_forward(input, d),
            LayerSpec::Softmax(s) => softmax(input, s.axis),
        }
    }

    /// Backward pass given the layer input and upstream gradient.
    ///
    /// Returns the input gradient and the parameter gradients in
    /// [`LayerSpec::params`] order.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        match self {
            LayerSpec::Conv(c) => {
                let (gi, gw, gb) = conv2d_backward(input, c, grad_out)?;
                Ok((gi, vec![gw, gb]))
            }
            LayerSpec::PRelu(p) => {
                let (gi, ga) = prelu_backward(input, &p.alpha, grad_out)?;
                Ok((gi, vec![ga]))
            }
            LayerSpec::MaxPool(m) => Ok((maxpool2d_backward(input, m.window, m.stride, grad_out)?, vec![])),
            LayerSpec::Dense(d) => {
                let (gi, gw, gb) = dense_backward(input, d, grad_out)?;
                Ok((gi, vec![gw, gb]))
            }
            LayerSpec::Softmax(s) => {
                let out = softmax(input, s.axis)?;
                Ok((softmax_backward(&out, s.axis, grad_out)?, vec![]))
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            LayerSpec::Conv(c) => vec![&c.weight, &c.bias],
            LayerSpec::PRelu(p) => vec![&p.alpha],
            LayerSpec::Dense(d) => vec![&d.weight, &d.bias],
            LayerSpec::MaxPool(_) | LayerSpec::Softmax(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            LayerSpec::Conv(c) => vec![&mut c.weight, &mut c.bias],
            LayerSpec::PRelu(p) => vec![&mut p.alpha],
            LayerSpec::Dense(d) => vec![&mut d.weight, &mut d.bias],
            LayerSpec::MaxPool(_) | LayerSpec::Softmax(_) => vec![],
        }
    }
}

pub fn conv2d_forward(input: &Tensor, layer: &Conv2d) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if c != layer.in_channels() {
        return Err(Error::shape("conv2d", input.shape(), layer.weight.shape()));
    }
    let (oh, ow) = layer
        .out_extent(h, w)
        .ok_or_else(|| Error::shape("conv2d", input.shape(), layer.weight.shape()))?;
    let (kh, kw) = layer.kernel();
    let oc_n = layer.out_channels();
    let (s, pad) = (layer.stride, layer.padding as isize);
    let x = input.data();
    let wt = layer.weight.data();
    let mut out = vec![0f32; oc_n * oh * ow];

    for oc in 0..oc_n {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(layer.bias.data()[oc]);
        for ic in 0..c {
            let src = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let k = wt[((oc * c + ic) * kh + ky) * kw + kx];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                *d += k * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oc_n, oh, ow], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    layer: &Conv2d,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = layer
        .out_extent(h, w)
        .ok_or_else(|| Error::shape("conv2d_backward", input.shape(), layer.weight.shape()))?;
    let oc_n = layer.out_channels();
    if grad_out.shape() != [oc_n, oh, ow] || c != layer.in_channels() {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &[oc_n, oh, ow]));
    }
    let (kh, kw) = layer.kernel();
    let (s, pad) = (layer.stride, layer.padding as isize);
    let x = input.data();
    let g = grad_out.data();
    let wt = layer.weight.data();
    let mut gx = vec![0f32; c * h * w];
    let mut gw = vec![0f32; wt.len()];
    let mut gb = vec![0f32; oc_n];

    for oc in 0..oc_n {
        let gplane = &g[oc * oh * ow..(oc + 1) * oh * ow];
        gb[oc] = gplane.iter().sum();
        for ic in 0..c {
            let src = &x[ic * h * w..(ic + 1) * h * w];
            let gsrc = &mut gx[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = ((oc * c + ic) * kh + ky) * kw + kx;
                    let k = wt[widx];
                    let mut acc = 0f32;
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                let gv = gplane[oy * ow + ox];
                                acc += gv * src[base + ix as usize];
                                gsrc[base + ix as usize] += k * gv;
                            }
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(layer.weight.shape().to_vec(), gw)?,
        Tensor::new(vec![oc_n], gb)?,
    ))
}

fn pool_extent(input: &Tensor, window: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = input.chw()?;
    if window == 0 || stride == 0 {
        return Err(Error::usage("pool window and stride must be >= 1"));
    }
    if window > h || window > w {
        return Err(Error::shape("maxpool2d", input.shape(), &[c, window, window]));
    }
    Ok((c, h, w, (h - window) / stride + 1, (w - window) / stride + 1))
}

/// Max pooling with floor output sizing.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w, oh, ow) = pool_extent(input, window, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..window {
                    let row = &plane[(oy * stride + ky) * w + ox * stride..][..window];
                    for &v in row {
                        if v > m {
                            m = v;
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Routes each output gradient to the first maximal input of its window.
pub fn maxpool2d_backward(input: &Tensor, window: usize, stride: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w, oh, ow) = pool_extent(input, window, stride)?;
    if grad_out.shape() != [c, oh, ow] {
        return Err(Error::shape("maxpool2d_backward", grad_out.shape(), &[c, oh, ow]));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut gx = vec![0f32; x.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                gx[best] += g[(ch * oh + oy) * ow + ox];
            }
        }
    }
    Tensor::new(input.shape().to_vec(), gx)
}

fn prelu_blocks(input: &Tensor, alpha: &Tensor) -> Result<usize> {
    let channels = input.shape()[0];
    if alpha.len() != channels {
        return Err(Error::shape("prelu", input.shape(), alpha.shape()));
    }
    Ok(input.len() / channels)
}

/// PReLU with one slope per leading-axis channel.
pub fn prelu(input: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    let block = prelu_blocks(input, alpha)?;
    let out = input
        .data()
        .chunks(block)
        .zip(alpha.data())
        .flat_map(|(chunk, &a)| chunk.iter().map(move |&v| if v >= 0.0 { v } else { a * v }))
        .collect();
    Tensor::new(input.shape().to_vec(), out)
}

pub fn prelu_backward(input: &Tensor, alpha: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let block = prelu_blocks(input, alpha)?;
    if grad_out.shape() != input.shape() {
        return Err(Error::shape("prelu_backward", grad_out.shape(), input.shape()));
    }
    let mut gx = vec![0f32; input.len()];
    let mut ga = vec![0f32; alpha.len()];
    for (ch, &a) in alpha.data().iter().enumerate() {
        let range = ch * block..(ch + 1) * block;
        for ((&v, &g), d) in input.data()[range.clone()]
            .iter()
            .zip(&grad_out.data()[range.clone()])
            .zip(&mut gx[range])
        {
            if v >= 0.0 {
                *d = g;
            } else {
                *d = a * g;
                ga[ch] += v * g;
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(alpha.shape().to_vec(), ga)?,
    ))
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::usage(format!("softmax axis {axis} out of range for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis`.
pub fn softmax(input: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = axis_split(input.shape(), axis)?;
    let x = input.data();
    let mut out = vec![0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| x[idx(k)]).fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = (0..n).map(|k| ((x[idx(k)] - m) as f64).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (k, e) in exps.iter().enumerate() {
                out[idx(k)] = (e / total) as f32;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Gradient through softmax given its *output*.
pub fn softmax_backward(output: &Tensor, axis: usize, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape("softmax_backward", output.shape(), grad_out.shape()));
    }
    let (outer, n, inner) = axis_split(output.shape(), axis)?;
    let (s, g) = (output.data(), grad_out.data());
    let mut gx = vec![0f32; s.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let dot: f32 = (0..n).map(|k| s[idx(k)] * g[idx(k)]).sum();
            for k in 0..n {
                gx[idx(k)] = s[idx(k)] * (g[idx(k)] - dot);
            }
        }
    }
    Tensor::new(output.shape().to_vec(), gx)
}

pub fn dense_forward(input: &Tensor, layer: &Dense) -> Result<Tensor> {
    let (out_n, in_n) = dense_dims(input, layer)?;
    let x = input.data();
    let out = layer
        .weight
        .data()
        .chunks(in_n)
        .zip(layer.bias.data())
        .map(|(row, &b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b)
        .collect::<Vec<_>>();
    debug_assert_eq!(out.len(), out_n);
    Tensor::new(vec![out_n], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`; the input gradient keeps the input's shape.
pub fn dense_backward(input: &Tensor, layer: &Dense, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (out_n, in_n) = dense_dims(input, layer)?;
    if grad_out.len() != out_n {
        return Err(Error::shape("dense_backward", grad_out.shape(), &[out_n]));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut gx = vec![0f32; in_n];
    let mut gw = vec![0f32; out_n * in_n];
    for (o, row) in layer.weight.data().chunks(in_n).enumerate() {
        let go = g[o];
        for ((d, &w), (gwv, &xv)) in gx.iter_mut().zip(row).zip(gw[o * in_n..].iter_mut().zip(x)) {
            *d += w * go;
            *gwv = go * xv;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(layer.weight.shape().to_vec(), gw)?,
        Tensor::new(vec![out_n], g.to_vec())?,
    ))
}

fn dense_dims(input: &Tensor, layer: &Dense) -> Result<(usize, usize)> {
    let ws = layer.weight.shape();
    if ws.len() != 2 || layer.bias.len() != ws[0] || input.len() != ws[1] {
        return Err(Error::shape("dense", input.shape(), ws));
    }
    Ok((ws[0], ws[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    // Straight quadruple loop in f64, written independently of the kernel.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (oc, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Vec::new();
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o] as f64;
                    for i in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.data()[((o * c + i) * kh + ky) * kw + kx] as f64
                                        * x.data()[(i * h + iy as usize) * wd + ix as usize] as f64;
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_conv_returns_input() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let layer = Conv2d::new(t(&[1, 1, 1, 1], &[1.0]), t(&[1], &[0.0]), 1, 0).unwrap();
        assert_eq!(conv2d_forward(&x, &layer).unwrap(), x);
    }

    #[test]
    fn zero_input_conv_is_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::zeros(&[1, 5, 5]);
        let layer = Conv2d::new(Tensor::uniform(&[1, 1, 3, 3], -1.0, 1.0, &mut rng), t(&[1], &[0.75]), 1, 0).unwrap();
        let y = conv2d_forward(&x, &layer).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn conv_matches_naive_loop_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::uniform(&[2, 5, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[3], -1.0, 1.0, &mut rng);
        let layer = Conv2d::new(w.clone(), b.clone(), 1, 0).unwrap();
        let got = conv2d_forward(&x, &layer).unwrap();
        let want = naive_conv(&x, &w, &b, 1, 0);
        assert_eq!(got.shape(), &[3, 3, 3]);
        for (g, e) in got.data().iter().zip(&want) {
            assert!(((*g as f64) - e).abs() <= 1e-5 * e.abs().max(1.0), "{g} vs {e}");
        }
    }

    #[test]
    fn conv_output_extent_with_stride_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[2, 7, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[4, 2, 3, 2], -1.0, 1.0, &mut rng);
        let b = Tensor::zeros(&[4]);
        let layer = Conv2d::new(w.clone(), b.clone(), 2, 1).unwrap();
        let got = conv2d_forward(&x, &layer).unwrap();
        // floor((7 + 2 - 3)/2) + 1 = 4, floor((6 + 2 - 2)/2) + 1 = 4
        assert_eq!(got.shape(), &[4, 4, 4]);
        let want = naive_conv(&x, &w, &b, 2, 1);
        for (g, e) in got.data().iter().zip(&want) {
            assert!(((*g as f64) - e).abs() <= 1e-5 * e.abs().max(1.0));
        }
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let layer = Conv2d::new(Tensor::zeros(&[1, 2, 3, 3]), Tensor::zeros(&[1]), 1, 0).unwrap();
        match conv2d_forward(&Tensor::zeros(&[3, 5, 5]), &layer) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![3, 5, 5]);
                assert_eq!(right, vec![1, 2, 3, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        assert!(conv2d_forward(&Tensor::zeros(&[2, 2, 2]), &layer).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let c = Tensor::filled(&[2, 6, 6], 3.5);
        assert!(maxpool2d(&c, 2, 2).unwrap().data().iter().all(|&v| v == 3.5));
        let x = t(&[1, 2, 2], &[1., 2., 3., 4.]);
        assert_eq!(maxpool2d(&x, 2, 2).unwrap(), t(&[1, 1, 1], &[4.0]));
        assert!(matches!(maxpool2d(&x, 3, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn maxpool_floor_sizing() {
        let x = Tensor::zeros(&[1, 22, 22]);
        assert_eq!(maxpool2d(&x, 3, 2).unwrap().shape(), &[1, 10, 10]);
        let x = Tensor::zeros(&[1, 5, 5]);
        assert_eq!(maxpool2d(&x, 2, 2).unwrap().shape(), &[1, 2, 2]);
    }

    #[test]
    fn prelu_examples() {
        let a = t(&[1], &[0.25]);
        assert_eq!(prelu(&t(&[1], &[-2.0]), &a).unwrap().data(), &[-0.5]);
        assert_eq!(prelu(&t(&[1], &[3.0]), &a).unwrap().data(), &[3.0]);
        assert!(matches!(prelu(&Tensor::zeros(&[2, 2, 2]), &a), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&t(&[2], &[0.0, 0.0]), 0).unwrap().data(), &[0.5, 0.5]);
        assert!(softmax(&t(&[2], &[0.0, 0.0]), 1).is_err());
    }

    #[test]
    fn softmax_seeded_vector_against_extended_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f32> = (0..7).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let got = softmax(&Tensor::from_vec(v.clone()), 0).unwrap();
        let denom: f64 = v.iter().map(|&x| (x as f64).exp()).sum();
        for (g, &x) in got.data().iter().zip(&v) {
            assert!((*g as f64 - (x as f64).exp() / denom).abs() < 1e-7);
        }
        let total: f64 = got.data().iter().map(|&x| x as f64).sum();
        assert!((total - 1.0).abs() <= 1e-6);
        for i in 0..7 {
            for j in 0..7 {
                if v[i] < v[j] {
                    assert!(got.data()[i] <= got.data()[j]);
                }
            }
        }
    }

    #[test]
    fn softmax_over_channel_axis_of_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::uniform(&[2, 3, 4], -3.0, 3.0, &mut rng);
        let s = softmax(&x, 0).unwrap();
        for i in 0..12 {
            let sum = s.data()[i] + s.data()[12 + i];
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_examples() {
        let x = t(&[3], &[1., -2., 3.]);
        let eye = Dense {
            weight: t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]),
            bias: Tensor::zeros(&[3]),
        };
        assert_eq!(dense_forward(&x, &eye).unwrap(), x);
        let zero = Dense {
            weight: Tensor::zeros(&[2, 3]),
            bias: t(&[2], &[0.5, -1.5]),
        };
        assert_eq!(dense_forward(&x, &zero).unwrap().data(), &[0.5, -1.5]);
        assert!(dense_forward(&t(&[2], &[1., 2.]), &zero).is_err());
    }

    #[test]
    fn dense_seeded_against_naive_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform(&[4], -1.0, 1.0, &mut rng);
        let d = Dense {
            weight: Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng),
            bias: Tensor::uniform(&[3], -1.0, 1.0, &mut rng),
        };
        let y = dense_forward(&x, &d).unwrap();
        for o in 0..3 {
            let mut acc = d.bias.data()[o] as f64;
            for i in 0..4 {
                acc += d.weight.data()[o * 4 + i] as f64 * x.data()[i] as f64;
            }
            assert!((y.data()[o] as f64 - acc).abs() <= 1e-6 * acc.abs().max(1.0));
        }
    }

    #[test]
    fn maxpool_backward_routes_to_first_max() {
        let x = t(&[1, 2, 2], &[5., 5., 1., 2.]);
        let g = maxpool2d_backward(&x, 2, 2, &t(&[1, 1, 1], &[3.0])).unwrap();
        assert_eq!(g.data(), &[3., 0., 0., 0.]);
    }
}
