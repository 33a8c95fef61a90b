//! Dense channel-major grids and the 2D cross-correlation they are coupled by.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// A `(channels, height, width)` stack of real-valued grids, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "grid dims must be positive"
        );
        Grid3 {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::config("grid dims must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::config(format!(
                "grid data has {} values, dims ({channels}, {height}, {width}) need {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Grid3 {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut g = Self::zeros(channels, height, width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    g.set(c, i, j, f(c, i, j));
                }
            }
        }
        g
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    fn offset(&self, c: usize, i: usize, j: usize) -> usize {
        debug_assert!(
            c < self.channels && i < self.height && j < self.width,
            "index ({c}, {i}, {j}) out of bounds for {:?}",
            self.dims()
        );
        (c * self.height + i) * self.width + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, value: f64) {
        let o = self.offset(c, i, j);
        self.data[o] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// The values of every channel at one grid cell.
    pub fn column(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, i, j)).collect()
    }

    pub fn set_column(&mut self, i: usize, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.channels);
        for (c, &v) in values.iter().enumerate() {
            self.set(c, i, j, v);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Grid3) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Cross-correlation kernel coupling `|S|` state channels, with per-state bias.
///
/// Weights are laid out `(out_state, in_state, kernel_row, kernel_col)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel4 {
    states: usize,
    kernel_height: usize,
    kernel_width: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Kernel4 {
    pub fn new(
        states: usize,
        kernel_height: usize,
        kernel_width: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if states == 0 {
            return Err(Error::config("kernel needs at least one state"));
        }
        if kernel_height % 2 == 0 || kernel_width % 2 == 0 {
            return Err(Error::config(format!(
                "kernel must be odd-sized, got {kernel_height}x{kernel_width}"
            )));
        }
        if weights.len() != states * states * kernel_height * kernel_width {
            return Err(Error::config("kernel weight count does not match dims"));
        }
        if bias.len() != states {
            return Err(Error::config("kernel bias length must equal state count"));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::config("kernel contains non-finite values"));
        }
        Ok(Kernel4 {
            states,
            kernel_height,
            kernel_width,
            weights,
            bias,
        })
    }

    pub fn zeros(states: usize, kernel_height: usize, kernel_width: usize) -> Result<Self> {
        Self::new(
            states,
            kernel_height,
            kernel_width,
            vec![0.0; states * states * kernel_height * kernel_width],
            vec![0.0; states],
        )
    }

    /// `weight(m, m, center) = 1`, everything else zero: the identity map.
    pub fn identity(states: usize, kernel_height: usize, kernel_width: usize) -> Result<Self> {
        let mut k = Self::zeros(states, kernel_height, kernel_width)?;
        for m in 0..states {
            k.set_weight(m, m, kernel_height / 2, kernel_width / 2, 1.0);
        }
        Ok(k)
    }

    #[inline]
    pub fn states(&self) -> usize {
        self.states
    }

    #[inline]
    pub fn kernel_dims(&self) -> (usize, usize) {
        (self.kernel_height, self.kernel_width)
    }

    #[inline]
    fn offset(&self, out: usize, inp: usize, r: usize, c: usize) -> usize {
        debug_assert!(out < self.states && inp < self.states);
        debug_assert!(r < self.kernel_height && c < self.kernel_width);
        ((out * self.states + inp) * self.kernel_height + r) * self.kernel_width + c
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize, r: usize, c: usize) -> f64 {
        self.weights[self.offset(out, inp, r, c)]
    }

    pub fn set_weight(&mut self, out: usize, inp: usize, r: usize, c: usize, value: f64) {
        let o = self.offset(out, inp, r, c);
        self.weights[o] = value;
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn set_bias(&mut self, bias: Vec<f64>) -> Result<()> {
        if bias.len() != self.states {
            return Err(Error::config("kernel bias length must equal state count"));
        }
        self.bias = bias;
        Ok(())
    }

    /// Non-negative weights and strictly positive bias, which keeps every
    /// correlation output strictly positive on a probability input.
    pub fn is_positive(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) && self.bias.iter().all(|&b| b > 0.0)
    }
}

/// Centered 2D cross-correlation with zero padding, summed over input states.
///
/// `out[m, i, j] = bias[m] + sum_n sum_{r,c} w[m, n, r, c] * x[n, i + r - rh, j + c - rw]`
/// where `rh, rw` are the kernel half-sizes and out-of-grid cells read as 0.
pub fn cross_correlate(input: &Grid3, kernel: &Kernel4) -> Result<Grid3> {
    cross_correlate_with(Execution::default(), input, kernel)
}

pub fn cross_correlate_with(exec: Execution, input: &Grid3, kernel: &Kernel4) -> Result<Grid3> {
    let (channels, height, width) = input.dims();
    if channels != kernel.states() {
        return Err(Error::config(format!(
            "input has {channels} channels, kernel couples {} states",
            kernel.states()
        )));
    }
    let (kh, kw) = kernel.kernel_dims();
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    let (h, w) = (height as isize, width as isize);

    let mut out = Grid3::zeros(channels, height, width);
    // One chunk per output row of one output channel.
    par::for_each_chunk_mut(exec, &mut out.data, width, |row_index, row| {
        let m = row_index / height;
        let i = (row_index % height) as isize;
        for (j, slot) in row.iter_mut().enumerate() {
            let j = j as isize;
            let mut acc = kernel.bias[m];
            for n in 0..channels {
                for r in 0..kh {
                    let ii = i + r as isize - rh;
                    if ii < 0 || ii >= h {
                        continue;
                    }
                    for c in 0..kw {
                        let jj = j + c as isize - rw;
                        if jj < 0 || jj >= w {
                            continue;
                        }
                        acc += kernel.weight(m, n, r, c) * input.get(n, ii as usize, jj as usize);
                    }
                }
            }
            *slot = acc;
        }
    });
    Ok(out)
}

/// Divides every cell's channel column by its sum.
pub fn normalize_channels(phi: &Grid3) -> Result<Grid3> {
    let (channels, height, width) = phi.dims();
    let mut out = phi.clone();
    for i in 0..height {
        for j in 0..width {
            let mut total = 0.0;
            for c in 0..channels {
                let v = phi.get(c, i, j);
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::domain(format!(
                        "normalization needs strictly positive values, got {v} at ({c}, {i}, {j})"
                    )));
                }
                total += v;
            }
            for c in 0..channels {
                out.set(c, i, j, phi.get(c, i, j) / total);
            }
        }
    }
    Ok(out)
}

/// Tolerance on the sum of a probability vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// `-sum p ln p` with `0 ln 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::domain("entropy of an empty distribution"));
    }
    let mut total = 0.0;
    for &v in p {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("probability {v} outside [0, 1]")));
        }
        total += v;
    }
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
    }
    Ok(p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum::<f64>()
        .max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Four nested loops straight from the definition, padding by bounds test.
    fn naive_correlation(x: &Grid3, k: &Kernel4) -> Grid3 {
        let (s, h, w) = x.dims();
        let (kh, kw) = k.kernel_dims();
        let mut out = Grid3::zeros(s, h, w);
        for m in 0..s {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = k.bias()[m];
                    for n in 0..s {
                        for r in 0..kh {
                            for c in 0..kw {
                                let ii = i as i64 + r as i64 - (kh / 2) as i64;
                                let jj = j as i64 + c as i64 - (kw / 2) as i64;
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                    acc += k.weight(m, n, r, c) * x.get(n, ii as usize, jj as usize);
                                }
                            }
                        }
                    }
                    out.set(m, i, j, acc);
                }
            }
        }
        out
    }

    fn random_grid(rng: &mut impl Rng, s: usize, h: usize, w: usize) -> Grid3 {
        Grid3::from_fn(s, h, w, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_kernel(rng: &mut impl Rng, s: usize, kh: usize, kw: usize) -> Kernel4 {
        let weights = (0..s * s * kh * kw).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
        Kernel4::new(s, kh, kw, weights, bias).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_grid(&mut rng, 3, 5, 4);
        let k = Kernel4::identity(3, 3, 3).unwrap();
        assert_eq!(cross_correlate(&x, &k).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut k = Kernel4::zeros(3, 3, 3).unwrap();
        k.set_bias(vec![0.2, 0.3, 0.5]).unwrap();
        let x = Grid3::filled(3, 4, 6, 0.7);
        let out = cross_correlate(&x, &k).unwrap();
        for (m, b) in [0.2, 0.3, 0.5].into_iter().enumerate() {
            assert!(out.channel(m).iter().all(|&v| v == b));
        }
    }

    #[test]
    fn random_kernel_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_grid(&mut rng, 3, 4, 4);
        let k = random_kernel(&mut rng, 3, 3, 3);
        let out = cross_correlate(&x, &k).unwrap();
        assert!(out.max_abs_diff(&naive_correlation(&x, &k)) <= 1e-12);
    }

    #[test]
    fn hundred_random_instances_match_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = rng.random_range(1..4);
            let h = rng.random_range(1..7);
            let w = rng.random_range(1..7);
            let kh = 2 * rng.random_range(0..3) + 1;
            let kw = 2 * rng.random_range(0..3) + 1;
            let x = random_grid(&mut rng, s, h, w);
            let k = random_kernel(&mut rng, s, kh, kw);
            let out = cross_correlate(&x, &k).unwrap();
            assert!(out.max_abs_diff(&naive_correlation(&x, &k)) <= 1e-12);
        }
    }

    #[test]
    fn sequential_equals_parallel_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_grid(&mut rng, 3, 17, 9);
        let k = random_kernel(&mut rng, 3, 3, 5);
        let a = cross_correlate_with(Execution::Sequential, &x, &k).unwrap();
        let b = cross_correlate_with(Execution::Parallel, &x, &k).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_channels_rejected() {
        let x = Grid3::zeros(2, 3, 3);
        let k = Kernel4::identity(3, 3, 3).unwrap();
        assert!(matches!(cross_correlate(&x, &k), Err(Error::Config(_))));
        assert!(Kernel4::zeros(3, 2, 3).is_err());
    }

    #[test]
    fn normalization_cases() {
        let phi = Grid3::filled(3, 2, 2, 4.2);
        let out = normalize_channels(&phi).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let mut phi = Grid3::filled(3, 1, 1, 1.0);
        phi.set(0, 0, 0, 2.0);
        assert_eq!(normalize_channels(&phi).unwrap().column(0, 0), vec![0.5, 0.25, 0.25]);

        let mut bad = Grid3::filled(3, 2, 2, 1.0);
        bad.set(1, 1, 0, 0.0);
        assert!(matches!(normalize_channels(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn normalization_matches_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let phi = Grid3::from_fn(3, 4, 5, |_, _, _| rng.random_range(0.01..3.0));
            let out = normalize_channels(&phi).unwrap();
            for i in 0..4 {
                for j in 0..5 {
                    let col = phi.column(i, j);
                    let total: f64 = col.iter().sum();
                    let got = out.column(i, j);
                    for (g, v) in got.iter().zip(&col) {
                        assert!((g - v / total).abs() <= 1e-12);
                    }
                    assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(shannon_entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        assert_abs_diff_eq!(shannon_entropy(&[third; 3]).unwrap(), 3f64.ln(), epsilon = 1e-12);
        let hand = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert_abs_diff_eq!(shannon_entropy(&[0.5, 0.25, 0.25]).unwrap(), hand, epsilon = 1e-12);
        assert_abs_diff_eq!(hand, 1.0397, epsilon = 1e-4);
        assert!(shannon_entropy(&[0.5, 0.6]).is_err());
        assert!(shannon_entropy(&[-0.1, 1.1]).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn entropy_is_bounded(p in simplex(4)) {
            let h = shannon_entropy(&p).unwrap();
            prop_assert!(h >= 0.0 && h <= 4f64.ln() + 1e-12);
        }

        #[test]
        fn entropy_zero_only_for_one_hot(p in simplex(3)) {
            let h = shannon_entropy(&p).unwrap();
            let one_hot = p.iter().any(|&v| (v - 1.0).abs() < 1e-12);
            if h.abs() < 1e-12 {
                prop_assert!(p.iter().any(|&v| v > 1.0 - 1e-9));
            }
            if one_hot {
                prop_assert!(h < 1e-9);
            }
        }

        #[test]
        fn correlation_is_linear(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_kernel(&mut rng, 3, 3, 3);
            let x = random_grid(&mut rng, 3, 5, 6);
            let z = random_grid(&mut rng, 3, 5, 6);
            let mut unbiased = k.clone();
            unbiased.set_bias(vec![0.0; 3]).unwrap();
            let combo = Grid3::from_fn(3, 5, 6, |c, i, j| alpha * x.get(c, i, j) + beta * z.get(c, i, j));
            let lhs = cross_correlate(&combo, &k).unwrap();
            let fx = cross_correlate(&x, &unbiased).unwrap();
            let fz = cross_correlate(&z, &unbiased).unwrap();
            let rhs = Grid3::from_fn(3, 5, 6, |c, i, j| {
                alpha * fx.get(c, i, j) + beta * fz.get(c, i, j) + k.bias()[c]
            });
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn normalized_output_is_simplex(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = Grid3::from_fn(3, 4, 4, |_, _, _| rng.random_range(1e-6..10.0));
            let out = normalize_channels(&phi).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let col = out.column(i, j);
                    prop_assert!(col.iter().all(|&v| v >= 0.0));
                    prop_assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }
}
