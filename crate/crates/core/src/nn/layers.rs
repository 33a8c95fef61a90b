use rand::Rng;

use super::{glorot, ParamLayout};

const K: usize = 3;
const STRIDE: isize = 2;
const PAD: isize = 1;

/// Fully connected layer, weights row-major `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    w: usize,
    b: usize,
}

impl Dense {
    pub fn new(layout: &mut ParamLayout, group: &str, name: &str, inputs: usize, outputs: usize) -> Self {
        let w = layout.alloc(group, &format!("{name}.weight"), inputs * outputs);
        let b = layout.alloc(group, &format!("{name}.bias"), outputs);
        Dense { inputs, outputs, w, b }
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        glorot(params, self.w, self.inputs * self.outputs, self.inputs, self.outputs, rng);
        params[self.b..self.b + self.outputs].fill(0.0);
    }

    pub fn weight_offset(&self) -> usize {
        self.w
    }

    pub fn bias_offset(&self) -> usize {
        self.b
    }

    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        debug_assert_eq!(y.len(), self.outputs);
        let w = &p[self.w..self.w + self.inputs * self.outputs];
        for (o, out) in y.iter_mut().enumerate() {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            *out = p[self.b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `g` and, if given, input gradients into `dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], dx: Option<&mut [f64]>) {
        let n = self.inputs;
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g[self.b + o] += d;
            let grow = &mut g[self.w + o * n..self.w + (o + 1) * n];
            for (gw, &xi) in grow.iter_mut().zip(x) {
                *gw += d * xi;
            }
        }
        if let Some(dx) = dx {
            let w = &p[self.w..self.w + n * self.outputs];
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (dxi, &wi) in dx.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                    *dxi += d * wi;
                }
            }
        }
    }
}

/// Output side of a 3x3, stride-2, padding-1 convolution: `ceil(n / 2)`.
pub fn downsampled(n: usize) -> usize {
    n.div_ceil(2)
}

/// 3x3 convolution with stride 2 and zero padding 1; weights `(out, in, 3, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    w: usize,
    b: usize,
}

impl Conv2d {
    pub fn new(
        layout: &mut ParamLayout,
        group: &str,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        in_h: usize,
        in_w: usize,
    ) -> Self {
        let w = layout.alloc(group, &format!("{name}.weight"), out_channels * in_channels * K * K);
        let b = layout.alloc(group, &format!("{name}.bias"), out_channels);
        Conv2d {
            in_channels,
            out_channels,
            in_h,
            in_w,
            out_h: downsampled(in_h),
            out_w: downsampled(in_w),
            w,
            b,
        }
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let len = self.out_channels * self.in_channels * K * K;
        glorot(params, self.w, len, self.in_channels * K * K, self.out_channels * K * K, rng);
        params[self.b..self.b + self.out_channels].fill(0.0);
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_h * self.out_w
    }

    #[inline]
    fn widx(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        self.w + ((o * self.in_channels + c) * K + ky) * K + kx
    }

    #[inline]
    fn source(&self, y: usize, ky: usize, limit: usize) -> Option<usize> {
        let s = y as isize * STRIDE - PAD + ky as isize;
        (s >= 0 && (s as usize) < limit).then_some(s as usize)
    }

    pub fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        let (ih, iw) = (self.in_h, self.in_w);
        for o in 0..self.out_channels {
            for y in 0..self.out_h {
                for xo in 0..self.out_w {
                    let mut acc = p[self.b + o];
                    for c in 0..self.in_channels {
                        for ky in 0..K {
                            let Some(sy) = self.source(y, ky, ih) else { continue };
                            for kx in 0..K {
                                let Some(sx) = self.source(xo, kx, iw) else { continue };
                                acc += p[self.widx(o, c, ky, kx)] * x[(c * ih + sy) * iw + sx];
                            }
                        }
                    }
                    out[(o * self.out_h + y) * self.out_w + xo] = acc;
                }
            }
        }
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dout: &[f64], g: &mut [f64], mut dx: Option<&mut [f64]>) {
        let (ih, iw) = (self.in_h, self.in_w);
        for o in 0..self.out_channels {
            for y in 0..self.out_h {
                for xo in 0..self.out_w {
                    let d = dout[(o * self.out_h + y) * self.out_w + xo];
                    if d == 0.0 {
                        continue;
                    }
                    g[self.b + o] += d;
                    for c in 0..self.in_channels {
                        for ky in 0..K {
                            let Some(sy) = self.source(y, ky, ih) else { continue };
                            for kx in 0..K {
                                let Some(sx) = self.source(xo, kx, iw) else { continue };
                                let wi = self.widx(o, c, ky, kx);
                                let xi = (c * ih + sy) * iw + sx;
                                g[wi] += d * x[xi];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[xi] += d * p[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Fractionally-strided 3x3 convolution (stride 2, padding 1) producing an
/// explicit output size of `2n - 1` or `2n`; weights `(in, out, 3, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    w: usize,
    b: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layout: &mut ParamLayout,
        group: &str,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        (in_h, in_w): (usize, usize),
        (out_h, out_w): (usize, usize),
    ) -> Self {
        assert!(
            downsampled(out_h) == in_h && downsampled(out_w) == in_w,
            "transposed conv cannot map {in_h}x{in_w} to {out_h}x{out_w}"
        );
        let w = layout.alloc(group, &format!("{name}.weight"), in_channels * out_channels * K * K);
        let b = layout.alloc(group, &format!("{name}.bias"), out_channels);
        ConvTranspose2d {
            in_channels,
            out_channels,
            in_h,
            in_w,
            out_h,
            out_w,
            w,
            b,
        }
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let len = self.in_channels * self.out_channels * K * K;
        glorot(params, self.w, len, self.in_channels * K * K, self.out_channels * K * K, rng);
        params[self.b..self.b + self.out_channels].fill(0.0);
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.w..self.w + self.in_channels * self.out_channels * K * K
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.b..self.b + self.out_channels
    }

    #[inline]
    fn widx(&self, c: usize, o: usize, ky: usize, kx: usize) -> usize {
        self.w + ((c * self.out_channels + o) * K + ky) * K + kx
    }

    #[inline]
    fn target(&self, y: usize, ky: usize, limit: usize) -> Option<usize> {
        let t = y as isize * STRIDE - PAD + ky as isize;
        (t >= 0 && (t as usize) < limit).then_some(t as usize)
    }

    pub fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        let (oh, ow) = (self.out_h, self.out_w);
        for o in 0..self.out_channels {
            out[o * oh * ow..(o + 1) * oh * ow].fill(p[self.b + o]);
        }
        for c in 0..self.in_channels {
            for y in 0..self.in_h {
                for xi in 0..self.in_w {
                    let v = x[(c * self.in_h + y) * self.in_w + xi];
                    if v == 0.0 {
                        continue;
                    }
                    for o in 0..self.out_channels {
                        for ky in 0..K {
                            let Some(ty) = self.target(y, ky, oh) else { continue };
                            for kx in 0..K {
                                let Some(tx) = self.target(xi, kx, ow) else { continue };
                                out[(o * oh + ty) * ow + tx] += p[self.widx(c, o, ky, kx)] * v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dout: &[f64], g: &mut [f64], mut dx: Option<&mut [f64]>) {
        let (oh, ow) = (self.out_h, self.out_w);
        for o in 0..self.out_channels {
            g[self.b + o] += dout[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
        }
        for c in 0..self.in_channels {
            for y in 0..self.in_h {
                for xi in 0..self.in_w {
                    let idx = (c * self.in_h + y) * self.in_w + xi;
                    let v = x[idx];
                    let mut acc = 0.0;
                    for o in 0..self.out_channels {
                        for ky in 0..K {
                            let Some(ty) = self.target(y, ky, oh) else { continue };
                            for kx in 0..K {
                                let Some(tx) = self.target(xi, kx, ow) else { continue };
                                let d = dout[(o * oh + ty) * ow + tx];
                                let wi = self.widx(c, o, ky, kx);
                                g[wi] += v * d;
                                acc += p[wi] * d;
                            }
                        }
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        dx[idx] += acc;
                    }
                }
            }
        }
    }
}
