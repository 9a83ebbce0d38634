//! 1-D convolution and transposed convolution in channels-last layout
//! (`[batch, length, channels]`), implemented with im2col + gemm.

use rand::Rng;

use super::{gemm, Init, ParamStore, Scalar, View, P};

#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub w: P,
    pub b: P,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.alloc(
            format!("{name}.weight"),
            &[kernel * c_in, c_out],
            Init::Xavier {
                fan_in: kernel * c_in,
                fan_out: c_out,
            },
            true,
            rng,
        );
        let b = store.alloc(format!("{name}.bias"), &[c_out], Init::Zeros, false, rng);
        Conv1d {
            w,
            b,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn im2col<T: Scalar>(&self, x: &[T], batch: usize, len: usize) -> Vec<T> {
        let lo = self.out_len(len);
        let kc = self.kernel * self.c_in;
        let mut cols = vec![T::zero(); batch * lo * kc];
        for n in 0..batch {
            for o in 0..lo {
                let row = &mut cols[(n * lo + o) * kc..(n * lo + o + 1) * kc];
                for j in 0..self.kernel {
                    let pos = (o * self.stride + j) as isize - self.pad as isize;
                    if pos < 0 || pos as usize >= len {
                        continue;
                    }
                    let src = (n * len + pos as usize) * self.c_in;
                    row[j * self.c_in..(j + 1) * self.c_in]
                        .copy_from_slice(&x[src..src + self.c_in]);
                }
            }
        }
        cols
    }

    /// Returns the output and the im2col buffer needed for backward.
    pub fn forward<T: Scalar>(
        &self,
        params: &[T],
        x: &[T],
        batch: usize,
        len: usize,
    ) -> (Vec<T>, Vec<T>) {
        assert_eq!(x.len(), batch * len * self.c_in);
        let lo = self.out_len(len);
        let rows = batch * lo;
        let kc = self.kernel * self.c_in;
        let cols = self.im2col(x, batch, len);
        let mut y = Vec::with_capacity(rows * self.c_out);
        for _ in 0..rows {
            y.extend_from_slice(self.b.of(params));
        }
        gemm(
            rows, kc, self.c_out, T::one(),
            &cols, View::rm(kc),
            self.w.of(params), View::rm(self.c_out),
            T::one(), &mut y, View::rm(self.c_out),
        );
        (y, cols)
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        cols: &[T],
        dy: &[T],
        batch: usize,
        len: usize,
    ) -> Vec<T> {
        let lo = self.out_len(len);
        let rows = batch * lo;
        let kc = self.kernel * self.c_in;
        gemm(
            kc, rows, self.c_out, T::one(),
            cols, View::t(kc),
            dy, View::rm(self.c_out),
            T::one(), self.w.of_mut(grads), View::rm(self.c_out),
        );
        let db = self.b.of_mut(grads);
        for r in 0..rows {
            for (g, &d) in db.iter_mut().zip(&dy[r * self.c_out..(r + 1) * self.c_out]) {
                *g += d;
            }
        }
        let mut dcols = vec![T::zero(); rows * kc];
        gemm(
            rows, self.c_out, kc, T::one(),
            dy, View::rm(self.c_out),
            self.w.of(params), View::t(self.c_out),
            T::zero(), &mut dcols, View::rm(kc),
        );
        let mut dx = vec![T::zero(); batch * len * self.c_in];
        for n in 0..batch {
            for o in 0..lo {
                let row = &dcols[(n * lo + o) * kc..(n * lo + o + 1) * kc];
                for j in 0..self.kernel {
                    let pos = (o * self.stride + j) as isize - self.pad as isize;
                    if pos < 0 || pos as usize >= len {
                        continue;
                    }
                    let dst = (n * len + pos as usize) * self.c_in;
                    for c in 0..self.c_in {
                        dx[dst + c] += row[j * self.c_in + c];
                    }
                }
            }
        }
        dx
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose1d {
    pub w: P,
    pub b: P,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.alloc(
            format!("{name}.weight"),
            &[c_in, kernel * c_out],
            Init::Xavier {
                fan_in: c_in * kernel / stride,
                fan_out: c_out,
            },
            true,
            rng,
        );
        let b = store.alloc(format!("{name}.bias"), &[c_out], Init::Zeros, false, rng);
        ConvTranspose1d {
            w,
            b,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len - 1) * self.stride + self.kernel - 2 * self.pad
    }

    /// Returns the output; backward needs only the input.
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], batch: usize, len: usize) -> Vec<T> {
        assert_eq!(x.len(), batch * len * self.c_in);
        let lo = self.out_len(len);
        let kc = self.kernel * self.c_out;
        let rows = batch * len;
        let mut cols = vec![T::zero(); rows * kc];
        gemm(
            rows, self.c_in, kc, T::one(),
            x, View::rm(self.c_in),
            self.w.of(params), View::rm(kc),
            T::zero(), &mut cols, View::rm(kc),
        );
        let bias = self.b.of(params);
        let mut y = Vec::with_capacity(batch * lo * self.c_out);
        for _ in 0..batch * lo {
            y.extend_from_slice(bias);
        }
        for n in 0..batch {
            for i in 0..len {
                let row = &cols[(n * len + i) * kc..(n * len + i + 1) * kc];
                for j in 0..self.kernel {
                    let pos = (i * self.stride + j) as isize - self.pad as isize;
                    if pos < 0 || pos as usize >= lo {
                        continue;
                    }
                    let dst = (n * lo + pos as usize) * self.c_out;
                    for c in 0..self.c_out {
                        y[dst + c] += row[j * self.c_out + c];
                    }
                }
            }
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        x: &[T],
        dy: &[T],
        batch: usize,
        len: usize,
    ) -> Vec<T> {
        let lo = self.out_len(len);
        let kc = self.kernel * self.c_out;
        let rows = batch * len;
        let db = self.b.of_mut(grads);
        for r in 0..batch * lo {
            for (g, &d) in db.iter_mut().zip(&dy[r * self.c_out..(r + 1) * self.c_out]) {
                *g += d;
            }
        }
        let mut dcols = vec![T::zero(); rows * kc];
        for n in 0..batch {
            for i in 0..len {
                let row = &mut dcols[(n * len + i) * kc..(n * len + i + 1) * kc];
                for j in 0..self.kernel {
                    let pos = (i * self.stride + j) as isize - self.pad as isize;
                    if pos < 0 || pos as usize >= lo {
                        continue;
                    }
                    let src = (n * lo + pos as usize) * self.c_out;
                    row[j * self.c_out..(j + 1) * self.c_out]
                        .copy_from_slice(&dy[src..src + self.c_out]);
                }
            }
        }
        gemm(
            self.c_in, rows, kc, T::one(),
            x, View::t(self.c_in),
            &dcols, View::rm(kc),
            T::one(), self.w.of_mut(grads), View::rm(kc),
        );
        let mut dx = vec![T::zero(); rows * self.c_in];
        gemm(
            rows, kc, self.c_in, T::one(),
            &dcols, View::rm(kc),
            self.w.of(params), View::t(kc),
            T::zero(), &mut dx, View::rm(self.c_in),
        );
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_check(
        n_params: usize,
        params: &mut [f64],
        x: &mut [f64],
        analytic_p: &[f64],
        analytic_x: &[f64],
        loss: &dyn Fn(&[f64], &[f64]) -> f64,
    ) {
        let h = 1e-6;
        for i in 0..n_params {
            let o = params[i];
            params[i] = o + h;
            let lp = loss(params, x);
            params[i] = o - h;
            let lm = loss(params, x);
            params[i] = o;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - analytic_p[i]).abs() < 1e-6 * num.abs().max(1.0), "p{i}");
        }
        for i in 0..x.len() {
            let o = x[i];
            x[i] = o + h;
            let lp = loss(params, x);
            x[i] = o - h;
            let lm = loss(params, x);
            x[i] = o;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - analytic_x[i]).abs() < 1e-6 * num.abs().max(1.0), "x{i}");
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::default();
        let conv = Conv1d::new(&mut store, "c", 3, 4, 4, 2, 1, &mut rng);
        let (batch, len) = (2, 8);
        let lo = conv.out_len(len);
        assert_eq!(lo, 4);
        let mut x: Vec<f64> = (0..batch * len * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..batch * lo * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cols) = conv.forward(&store.data, &x, batch, len);
        let mut g = store.zeros_like();
        let dx = conv.backward(&store.data, &mut g, &cols, &probe, batch, len);
        let loss = |p: &[f64], x: &[f64]| {
            let (y, _) = conv.forward(p, x, batch, len);
            y.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let n = store.len();
        fd_check(n, &mut store.data, &mut x, &g, &dx, &loss);
    }

    #[test]
    fn conv_transpose_gradients_and_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::default();
        let ct = ConvTranspose1d::new(&mut store, "t", 3, 2, 4, 2, 1, &mut rng);
        let (batch, len) = (2, 4);
        let lo = ct.out_len(len);
        assert_eq!(lo, 8);
        let mut x: Vec<f64> = (0..batch * len * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..batch * lo * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = store.zeros_like();
        let dx = ct.backward(&store.data, &mut g, &x, &probe, batch, len);
        let loss = |p: &[f64], x: &[f64]| {
            let y = ct.forward(p, x, batch, len);
            y.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let n = store.len();
        fd_check(n, &mut store.data, &mut x, &g, &dx, &loss);
    }
}
