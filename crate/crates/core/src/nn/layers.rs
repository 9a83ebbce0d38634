//! Linear, layer norm, GELU and the pre-norm ViT block (multi-head
//! self-attention + MLP, residual after each).

use rand::Rng;

use super::{gemm, Init, ParamStore, Scalar, View, P};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: P,
    pub b: P,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.alloc(
            format!("{name}.weight"),
            &[d_in, d_out],
            Init::Xavier {
                fan_in: d_in,
                fan_out: d_out,
            },
            true,
            rng,
        );
        let b = store.alloc(format!("{name}.bias"), &[d_out], Init::Zeros, false, rng);
        Linear { w, b, d_in, d_out }
    }

    /// `y = x W + b` for `rows` input rows.
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], rows: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(rows * self.d_out);
        for _ in 0..rows {
            y.extend_from_slice(self.b.of(params));
        }
        gemm(
            rows,
            self.d_in,
            self.d_out,
            T::one(),
            x,
            View::rm(self.d_in),
            self.w.of(params),
            View::rm(self.d_out),
            T::one(),
            &mut y,
            View::rm(self.d_out),
        );
        y
    }

    /// Accumulates parameter gradients; returns `dx`.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        x: &[T],
        dy: &[T],
        rows: usize,
    ) -> Vec<T> {
        self.accumulate(grads, x, dy, rows);
        let mut dx = vec![T::zero(); rows * self.d_in];
        gemm(
            rows,
            self.d_out,
            self.d_in,
            T::one(),
            dy,
            View::rm(self.d_out),
            self.w.of(params),
            View::t(self.d_out),
            T::zero(),
            &mut dx,
            View::rm(self.d_in),
        );
        dx
    }

    /// Parameter gradients only (input gradient not needed).
    pub fn accumulate<T: Scalar>(&self, grads: &mut [T], x: &[T], dy: &[T], rows: usize) {
        gemm(
            self.d_in,
            rows,
            self.d_out,
            T::one(),
            x,
            View::t(self.d_in),
            dy,
            View::rm(self.d_out),
            T::one(),
            self.w.of_mut(grads),
            View::rm(self.d_out),
        );
        let db = self.b.of_mut(grads);
        for r in 0..rows {
            for (g, &d) in db.iter_mut().zip(&dy[r * self.d_out..(r + 1) * self.d_out]) {
                *g += d;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub g: P,
    pub b: P,
    pub dim: usize,
}

pub struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        let g = store.alloc(format!("{name}.weight"), &[dim], Init::Ones, false, rng);
        let b = store.alloc(format!("{name}.bias"), &[dim], Init::Zeros, false, rng);
        LayerNorm { g, b, dim }
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], rows: usize) -> (Vec<T>, LnCache<T>) {
        let d = self.dim;
        let inv_d = T::c(1.0 / d as f64);
        let g = self.g.of(params);
        let b = self.b.of(params);
        let mut y = vec![T::zero(); rows * d];
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::c(LN_EPS)).sqrt();
            rstd.push(rs);
            for i in 0..d {
                let xh = (row[i] - mean) * rs;
                xhat[r * d + i] = xh;
                y[r * d + i] = xh * g[i] + b[i];
            }
        }
        (y, LnCache { xhat, rstd })
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        cache: &LnCache<T>,
        dy: &[T],
        rows: usize,
    ) -> Vec<T> {
        let d = self.dim;
        let inv_d = T::c(1.0 / d as f64);
        let g = self.g.of(params).to_vec();
        let mut dx = vec![T::zero(); rows * d];
        {
            let dg = self.g.of_mut(grads);
            for r in 0..rows {
                for i in 0..d {
                    dg[i] += dy[r * d + i] * cache.xhat[r * d + i];
                }
            }
        }
        {
            let db = self.b.of_mut(grads);
            for r in 0..rows {
                for i in 0..d {
                    db[i] += dy[r * d + i];
                }
            }
        }
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for i in 0..d {
                let dxh = dyr[i] * g[i];
                s1 += dxh;
                s2 += dxh * xh[i];
            }
            let rs = cache.rstd[r];
            for i in 0..d {
                let dxh = dyr[i] * g[i];
                dx[r * d + i] = rs * (dxh - s1 * inv_d - xh[i] * s2 * inv_d);
            }
        }
        dx
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::c(GELU_K);
    let c = T::c(0.044715);
    let half = T::c(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::c(GELU_K);
    let c = T::c(0.044715);
    let half = T::c(0.5);
    let inner = k * (x + c * x * x * x);
    let th = inner.tanh();
    let sech2 = T::one() - th * th;
    half * (T::one() + th) + half * x * sech2 * k * (T::one() + T::c(3.0) * c * x * x)
}

/// In-place row softmax.
pub fn softmax_rows<T: Scalar>(x: &mut [T], cols: usize) {
    for row in x.chunks_mut(cols) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub width: usize,
    pub heads: usize,
}

pub struct BlockCache<T> {
    rows: usize,
    ln1: LnCache<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    /// `heads x rows x rows` attention probabilities.
    attn: Vec<T>,
    o: Vec<T>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

impl Block {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        mlp_ratio: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(width.is_multiple_of(heads), "width must be divisible by heads");
        let hidden = (width as f64 * mlp_ratio).round() as usize;
        Block {
            ln1: LayerNorm::new(store, &format!("{name}.norm1"), width, rng),
            qkv: Linear::new(store, &format!("{name}.attn.qkv"), width, 3 * width, rng),
            proj: Linear::new(store, &format!("{name}.attn.proj"), width, width, rng),
            ln2: LayerNorm::new(store, &format!("{name}.norm2"), width, rng),
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), width, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), hidden, width, rng),
            width,
            heads,
        }
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], rows: usize) -> (Vec<T>, BlockCache<T>) {
        let w = self.width;
        let dh = w / self.heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let (h1, ln1) = self.ln1.forward(params, x, rows);
        let qkv = self.qkv.forward(params, &h1, rows);
        let mut attn = vec![T::zero(); self.heads * rows * rows];
        let mut o = vec![T::zero(); rows * w];
        for h in 0..self.heads {
            let s = &mut attn[h * rows * rows..(h + 1) * rows * rows];
            // Q K^T
            gemm(
                rows, dh, rows, scale,
                &qkv, View { offset: h * dh, rs: 3 * w, cs: 1 },
                &qkv, View { offset: w + h * dh, rs: 1, cs: 3 * w },
                T::zero(), s, View::rm(rows),
            );
            softmax_rows(s, rows);
            // P V
            gemm(
                rows, rows, dh, T::one(),
                s, View::rm(rows),
                &qkv, View { offset: 2 * w + h * dh, rs: 3 * w, cs: 1 },
                T::zero(), &mut o, View { offset: h * dh, rs: w, cs: 1 },
            );
        }
        let a = self.proj.forward(params, &o, rows);
        let x1: Vec<T> = x.iter().zip(&a).map(|(&p, &q)| p + q).collect();
        let (h2, ln2) = self.ln2.forward(params, &x1, rows);
        let u = self.fc1.forward(params, &h2, rows);
        let g: Vec<T> = u.iter().map(|&v| gelu(v)).collect();
        let m = self.fc2.forward(params, &g, rows);
        let y: Vec<T> = x1.iter().zip(&m).map(|(&p, &q)| p + q).collect();
        let cache = BlockCache { rows, ln1, h1, qkv, attn, o, ln2, h2, u, g };
        (y, cache)
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        c: &BlockCache<T>,
        dy: &[T],
    ) -> Vec<T> {
        let rows = c.rows;
        let w = self.width;
        let dh = w / self.heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());

        // MLP branch
        let dg = self.fc2.backward(params, grads, &c.g, dy, rows);
        let du: Vec<T> = dg.iter().zip(&c.u).map(|(&d, &u)| d * gelu_grad(u)).collect();
        let dh2 = self.fc1.backward(params, grads, &c.h2, &du, rows);
        let dln2 = self.ln2.backward(params, grads, &c.ln2, &dh2, rows);
        let dx1: Vec<T> = dy.iter().zip(&dln2).map(|(&a, &b)| a + b).collect();

        // Attention branch
        let d_o = self.proj.backward(params, grads, &c.o, &dx1, rows);
        let mut dqkv = vec![T::zero(); rows * 3 * w];
        let mut dp = vec![T::zero(); rows * rows];
        for h in 0..self.heads {
            let p = &c.attn[h * rows * rows..(h + 1) * rows * rows];
            let do_v = View { offset: h * dh, rs: w, cs: 1 };
            // dP = dO V^T
            gemm(
                rows, dh, rows, T::one(),
                &d_o, do_v,
                &c.qkv, View { offset: 2 * w + h * dh, rs: 1, cs: 3 * w },
                T::zero(), &mut dp, View::rm(rows),
            );
            // dV = P^T dO
            gemm(
                rows, rows, dh, T::one(),
                p, View::t(rows),
                &d_o, do_v,
                T::zero(), &mut dqkv, View { offset: 2 * w + h * dh, rs: 3 * w, cs: 1 },
            );
            // softmax backward, then the 1/sqrt(dh) scale
            for r in 0..rows {
                let pr = &p[r * rows..(r + 1) * rows];
                let dpr = &mut dp[r * rows..(r + 1) * rows];
                let dot: T = pr.iter().zip(dpr.iter()).map(|(&a, &b)| a * b).sum();
                for (d, &pv) in dpr.iter_mut().zip(pr) {
                    *d = pv * (*d - dot) * scale;
                }
            }
            // dQ = dS K
            gemm(
                rows, rows, dh, T::one(),
                &dp, View::rm(rows),
                &c.qkv, View { offset: w + h * dh, rs: 3 * w, cs: 1 },
                T::zero(), &mut dqkv, View { offset: h * dh, rs: 3 * w, cs: 1 },
            );
            // dK = dS^T Q
            gemm(
                rows, rows, dh, T::one(),
                &dp, View::t(rows),
                &c.qkv, View { offset: h * dh, rs: 3 * w, cs: 1 },
                T::zero(), &mut dqkv, View { offset: w + h * dh, rs: 3 * w, cs: 1 },
            );
        }
        let dh1 = self.qkv.backward(params, grads, &c.h1, &dqkv, rows);
        let dln1 = self.ln1.backward(params, grads, &c.ln1, &dh1, rows);
        dx1.iter().zip(&dln1).map(|(&a, &b)| a + b).collect()
    }
}
