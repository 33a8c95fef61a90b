use rand::Rng;

use super::{glorot, sigmoid, ParamLayout};

/// Offsets of one gate: input weights `(hidden, input)`, recurrent weights
/// `(hidden, hidden)` and bias.
#[derive(Debug, Clone, PartialEq)]
struct Gate {
    w: usize,
    u: usize,
    b: usize,
}

/// Gated recurrent unit:
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// n  = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * h + z * n
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub inputs: usize,
    pub hidden: usize,
    z: Gate,
    r: Gate,
    n: Gate,
}

/// Activations kept from a forward step for the backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    rh: Vec<f64>,
}

fn matvec_acc(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().enumerate() {
        *v += m[o * cols..(o + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `g[m] += d x^T` and `dx += m^T d`.
fn matvec_back(m: &[f64], cols: usize, x: &[f64], d: &[f64], g: &mut [f64], dx: &mut [f64]) {
    for (o, &dv) in d.iter().enumerate() {
        if dv == 0.0 {
            continue;
        }
        let row = &m[o * cols..(o + 1) * cols];
        let grow = &mut g[o * cols..(o + 1) * cols];
        for i in 0..cols {
            grow[i] += dv * x[i];
            dx[i] += dv * row[i];
        }
    }
}

impl Gru {
    pub fn new(layout: &mut ParamLayout, inputs: usize, hidden: usize) -> Self {
        let mut gate = |group: &str| Gate {
            w: layout.alloc(group, "input_weight", hidden * inputs),
            u: layout.alloc(group, "recurrent_weight", hidden * hidden),
            b: layout.alloc(group, "bias", hidden),
        };
        let z = gate("gru_update");
        let r = gate("gru_reset");
        let n = gate("gru_candidate");
        Gru { inputs, hidden, z, r, n }
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let (i, h) = (self.inputs, self.hidden);
        for g in [&self.z, &self.r, &self.n] {
            glorot(params, g.w, h * i, i, h, rng);
            glorot(params, g.u, h * h, h, h, rng);
            params[g.b..g.b + h].fill(0.0);
        }
    }

    fn pre_activation(&self, p: &[f64], g: &Gate, x: &[f64], h: &[f64]) -> Vec<f64> {
        let (ni, nh) = (self.inputs, self.hidden);
        let mut a = p[g.b..g.b + nh].to_vec();
        matvec_acc(&p[g.w..g.w + nh * ni], ni, x, &mut a);
        matvec_acc(&p[g.u..g.u + nh * nh], nh, h, &mut a);
        a
    }

    pub fn forward(&self, p: &[f64], x: &[f64], h: &[f64]) -> (Vec<f64>, GruCache) {
        debug_assert_eq!(x.len(), self.inputs);
        debug_assert_eq!(h.len(), self.hidden);
        let z: Vec<f64> = self.pre_activation(p, &self.z, x, h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = self.pre_activation(p, &self.r, x, h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = self.pre_activation(p, &self.n, x, &rh).into_iter().map(f64::tanh).collect();
        let next = (0..self.hidden).map(|k| (1.0 - z[k]) * h[k] + z[k] * n[k]).collect();
        let cache = GruCache {
            x: x.to_vec(),
            h: h.to_vec(),
            z,
            r,
            n,
            rh,
        };
        (next, cache)
    }

    /// Given `dh_next = dL/dh'`, accumulates parameter gradients into `g` and
    /// returns `(dL/dx, dL/dh)`.
    pub fn backward(&self, p: &[f64], cache: &GruCache, dh_next: &[f64], g: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        let (ni, nh) = (self.inputs, self.hidden);
        let GruCache { x, h, z, r, n, rh } = cache;
        let mut dx = vec![0.0; ni];
        let mut dh: Vec<f64> = (0..nh).map(|k| dh_next[k] * (1.0 - z[k])).collect();

        let da_n: Vec<f64> = (0..nh).map(|k| dh_next[k] * z[k] * (1.0 - n[k] * n[k])).collect();
        let da_z: Vec<f64> = (0..nh).map(|k| dh_next[k] * (n[k] - h[k]) * z[k] * (1.0 - z[k])).collect();

        let mut drh = vec![0.0; nh];
        self.gate_backward(p, &self.n, x, rh, &da_n, g, &mut dx, &mut drh);
        let da_r: Vec<f64> = (0..nh).map(|k| drh[k] * h[k] * r[k] * (1.0 - r[k])).collect();
        for k in 0..nh {
            dh[k] += drh[k] * r[k];
        }
        self.gate_backward(p, &self.z, x, h, &da_z, g, &mut dx, &mut dh);
        self.gate_backward(p, &self.r, x, h, &da_r, g, &mut dx, &mut dh);
        (dx, dh)
    }

    #[allow(clippy::too_many_arguments)]
    fn gate_backward(
        &self,
        p: &[f64],
        gate: &Gate,
        x: &[f64],
        hin: &[f64],
        da: &[f64],
        g: &mut [f64],
        dx: &mut [f64],
        dh: &mut [f64],
    ) {
        let (ni, nh) = (self.inputs, self.hidden);
        for (k, &d) in da.iter().enumerate() {
            g[gate.b + k] += d;
        }
        matvec_back(&p[gate.w..gate.w + nh * ni], ni, x, da, &mut g[gate.w..gate.w + nh * ni], dx);
        matvec_back(&p[gate.u..gate.u + nh * nh], nh, hin, da, &mut g[gate.u..gate.u + nh * nh], dh);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_scalar_formula() {
        let mut layout = ParamLayout::default();
        let gru = Gru::new(&mut layout, 1, 1);
        // per gate: w, u, b
        let p = vec![0.5, -0.3, 0.1, 1.2, 0.7, -0.2, -0.8, 0.4, 0.05];
        let (x, h) = (0.9, -0.4);
        let z = sigmoid(0.5 * x - 0.3 * h + 0.1);
        let r = sigmoid(1.2 * x + 0.7 * h - 0.2);
        let n = (-0.8 * x + 0.4 * r * h + 0.05).tanh();
        let (next, _) = gru.forward(&p, &[x], &[h]);
        assert!((next[0] - ((1.0 - z) * h + z * n)).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layout = ParamLayout::default();
        let gru = Gru::new(&mut layout, 3, 4);
        let p: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wts: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &[f64], x: &[f64], h: &[f64]| {
            let (o, _) = gru.forward(p, x, h);
            o.iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = gru.forward(&p, &x, &h);
        let mut g = vec![0.0; p.len()];
        let (dx, dh) = gru.backward(&p, &cache, &wts, &mut g);
        let eps = 1e-6;
        let fd = |f: &dyn Fn(f64) -> f64| (f(eps) - f(-eps)) / (2.0 * eps);
        for i in 0..p.len() {
            let d = fd(&|e| {
                let mut q = p.clone();
                q[i] += e;
                loss(&q, &x, &h)
            });
            assert!((d - g[i]).abs() < 1e-8, "param {i}");
        }
        for i in 0..3 {
            let d = fd(&|e| {
                let mut q = x.clone();
                q[i] += e;
                loss(&p, &q, &h)
            });
            assert!((d - dx[i]).abs() < 1e-8);
        }
        for i in 0..4 {
            let d = fd(&|e| {
                let mut q = h.clone();
                q[i] += e;
                loss(&p, &x, &q)
            });
            assert!((d - dh[i]).abs() < 1e-8);
        }
    }
}
