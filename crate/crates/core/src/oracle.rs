//! Scalar reference implementation of the two-layer network, its losses and
//! Adam, written with explicit loops over flat parameter vectors. Used only
//! by tests as an independent check of the matrix code paths.

pub struct Net {
    pub d_in: usize,
    pub h: usize,
    pub c: usize,
    /// W1 (row-major d_in×h), b1, W2 (row-major h×c), b2.
    pub theta: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl Net {
    pub fn new(d_in: usize, h: usize, c: usize, theta: Vec<f64>) -> Self {
        let n = theta.len();
        assert_eq!(n, d_in * h + h + h * c + c);
        Self {
            d_in,
            h,
            c,
            theta,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn w1(&self, i: usize, j: usize) -> f64 {
        self.theta[i * self.h + j]
    }
    fn b1(&self, j: usize) -> f64 {
        self.theta[self.d_in * self.h + j]
    }
    fn w2_off(&self) -> usize {
        self.d_in * self.h + self.h
    }
    fn w2(&self, j: usize, k: usize) -> f64 {
        self.theta[self.w2_off() + j * self.c + k]
    }
    fn b2_off(&self) -> usize {
        self.w2_off() + self.h * self.c
    }
    fn b2(&self, k: usize) -> f64 {
        self.theta[self.b2_off() + k]
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        (0..self.h)
            .map(|j| {
                let mut z = self.b1(j);
                for i in 0..self.d_in {
                    z += x[i] * self.w1(i, j);
                }
                z
            })
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let pre = self.hidden_pre(x);
        (0..self.c)
            .map(|k| {
                let mut z = self.b2(k);
                for j in 0..self.h {
                    z += pre[j].max(0.0) * self.w2(j, k);
                }
                z
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        let mut best = 0;
        for k in 1..l.len() {
            if l[k] > l[best] {
                best = k;
            }
        }
        best
    }

    /// Backpropagates a per-sample logit gradient and accumulates into `g`.
    fn accumulate(&self, x: &[f64], dz: &[f64], g: &mut [f64]) {
        let pre = self.hidden_pre(x);
        for k in 0..self.c {
            g[self.b2_off() + k] += dz[k];
            for j in 0..self.h {
                g[self.w2_off() + j * self.c + k] += pre[j].max(0.0) * dz[k];
            }
        }
        for j in 0..self.h {
            if pre[j] <= 0.0 {
                continue;
            }
            let mut da = 0.0;
            for k in 0..self.c {
                da += dz[k] * self.w2(j, k);
            }
            g[self.d_in * self.h + j] += da;
            for i in 0..self.d_in {
                g[i * self.h + j] += x[i] * da;
            }
        }
    }

    /// Gradient of `scale · Σ wᵢ CE`.
    pub fn grad_wce(&self, xs: &[Vec<f64>], ys: &[usize], ws: &[f64], scale: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.theta.len()];
        for ((x, &y), &w) in xs.iter().zip(ys).zip(ws) {
            let p = softmax(&self.logits(x), 1.0);
            let dz: Vec<f64> = (0..self.c)
                .map(|k| scale * w * (p[k] - if k == y { 1.0 } else { 0.0 }))
                .collect();
            self.accumulate(x, &dz, &mut g);
        }
        g
    }

    /// Gradient of `scale · Σ KL(softmax(t/τ) ‖ softmax(s/τ))`.
    pub fn grad_kd(&self, xs: &[Vec<f64>], teachers: &[Vec<f64>], tau: f64, scale: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.theta.len()];
        for (x, t) in xs.iter().zip(teachers) {
            let q = softmax(&self.logits(x), tau);
            let p = softmax(t, tau);
            let dz: Vec<f64> = (0..self.c).map(|k| scale * (q[k] - p[k]) / tau).collect();
            self.accumulate(x, &dz, &mut g);
        }
        g
    }

    pub fn adam(&mut self, g: &[f64], lr: f64) {
        self.t += 1;
        for i in 0..self.theta.len() {
            self.m[i] = 0.9 * self.m[i] + 0.1 * g[i];
            self.v[i] = 0.999 * self.v[i] + 0.001 * g[i] * g[i];
            let mh = self.m[i] / (1.0 - 0.9f64.powi(self.t));
            let vh = self.v[i] / (1.0 - 0.999f64.powi(self.t));
            self.theta[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }
}

pub fn softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| ((v - mx) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "param {i}: {g} vs {w}");
    }
}
