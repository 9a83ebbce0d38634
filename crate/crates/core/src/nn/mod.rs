//! Minimal dense neural-network toolkit with hand-written backward passes.
//!
//! Everything is row-major and generic over [`Scalar`] so the same code trains
//! in `f32` and is gradient-checked in `f64`. Parameters live in one flat
//! buffer ([`ParamStore`]); layers hold [`P`] handles into it.

pub mod adamw;
pub mod conv;
pub mod layers;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use adamw::{AdamW, AdamWConfig};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Sum
    + Send
    + Sync
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + 'static
{
    /// # Safety
    /// Pointers and strides must address valid `m x k`, `k x n`, `m x n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f32,
        a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f64,
        a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided view of a matrix inside a slice.
#[derive(Clone, Copy, Debug)]
pub struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Plain row-major `rows x cols`.
    pub fn rm(cols: usize) -> Self {
        View { offset: 0, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn t(cols: usize) -> Self {
        View { offset: 0, rs: 1, cs: cols }
    }

    pub fn at(self, offset: usize) -> Self {
        View { offset, ..self }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows.max(1) - 1) * self.rs + (cols.max(1) - 1) * self.cs
    }
}

/// `C = alpha * A B + beta * C` over strided views with bounds checks.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    av: View,
    b: &[T],
    bv: View,
    beta: T,
    c: &mut [T],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(av.last(m, k) < a.len() || k == 0, "gemm: A out of bounds");
    assert!(bv.last(k, n) < b.len() || k == 0, "gemm: B out of bounds");
    assert!(cv.last(m, n) < c.len(), "gemm: C out of bounds");
    // SAFETY: bounds checked above; views are read-only except C.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}

/// Handle to a parameter block inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct P {
    pub off: usize,
    pub len: usize,
}

impl P {
    pub fn of<'a, T>(&self, buf: &'a [T]) -> &'a [T] {
        &buf[self.off..self.off + self.len]
    }

    pub fn of_mut<'a, T>(&self, buf: &'a mut [T]) -> &'a mut [T] {
        &mut buf[self.off..self.off + self.len]
    }
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub p: P,
    pub shape: Vec<usize>,
    /// Whether AdamW weight decay applies.
    pub decay: bool,
}

/// Initialisation for a freshly allocated parameter block.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
}

#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    pub data: Vec<T>,
    pub specs: Vec<ParamSpec>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            data: Vec::new(),
            specs: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn alloc(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        decay: bool,
        rng: &mut impl Rng,
    ) -> P {
        let len: usize = shape.iter().product();
        let p = P {
            off: self.data.len(),
            len,
        };
        match init {
            Init::Zeros => self.data.extend(std::iter::repeat_n(T::zero(), len)),
            Init::Ones => self.data.extend(std::iter::repeat_n(T::one(), len)),
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("valid std");
                self.data.extend((0..len).map(|_| T::c(d.sample(rng))));
            }
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                self.data.extend((0..len).map(|_| T::c(rng.gen_range(-a..a))));
            }
        }
        self.specs.push(ParamSpec {
            name: name.into(),
            p,
            shape: shape.to_vec(),
            decay,
        });
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub fn find(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.data.len()];
        for s in &self.specs {
            for m in &mut mask[s.p.off..s.p.off + s.p.len] {
                *m = s.decay;
            }
        }
        mask
    }

    /// Same layout with values converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            data: self.data.iter().map(|v| U::c(v.to_f64().unwrap_or(0.0))).collect(),
            specs: self.specs.clone(),
        }
    }
}

pub fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A 2x3, B 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        gemm(2, 3, 2, 1.0, &a, View::rm(3), &b, View::rm(2), 0.0, &mut c, View::rm(2));
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // A^T A (3x3) via transposed view
        let mut d = [0.0f64; 9];
        gemm(3, 2, 3, 1.0, &a, View::t(3), &a, View::rm(3), 0.0, &mut d, View::rm(3));
        assert_eq!(d, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
