//! Scalar trait for the network and a row-major GEMM front end.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::exec::{self, Execution};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + 'static
{
    /// Raw strided GEMM, `C = alpha A B + beta C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n`, `m x n`
    /// matrices for the duration of the call.
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

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Whether an operand is used as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// Work (multiply-adds) below which a GEMM is never split.
const PAR_GEMM_WORK: usize = 1 << 18;
/// Smallest row block of a split GEMM.
const MIN_BLOCK_ROWS: usize = 256;

/// `C (m x n) = op(A) op(B) + beta C` on contiguous row-major storage.
/// `A` is stored `m x k` for `Op::N` and `k x m` for `Op::T`; likewise `B`.
///
/// Rows of `C` are split into blocks whose size depends only on the shape;
/// blocks run concurrently under a parallel policy. Either way the same
/// kernel calls happen, so results are bit-identical across policies.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    exec: Execution,
    op_a: Op,
    op_b: Op,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "A too short: {} < {}", a.len(), m * k);
    assert!(b.len() >= k * n, "B too short: {} < {}", b.len(), k * n);
    assert!(c.len() >= m * n, "C too short: {} < {}", c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    let c = &mut c[..m * n];
    // block size depends on the shape only, never on the policy
    // each block repacks B, so only tall products are split
    let block_rows = if m * n * k >= PAR_GEMM_WORK && m >= 2 * MIN_BLOCK_ROWS {
        m.div_ceil(8).max(MIN_BLOCK_ROWS)
    } else {
        m
    };
    exec::for_each_chunk_mut(exec, c, block_rows * n, |bi, cblk| {
        let r0 = bi * block_rows;
        let rows = cblk.len() / n;
        let a_off = r0 as isize * rsa;
        // SAFETY: the row block [r0, r0 + rows) lies inside A and C; B is
        // read in full. Lengths were checked above.
        unsafe {
            T::gemm_raw(
                rows,
                k,
                n,
                T::one(),
                a.as_ptr().offset(a_off),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                cblk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}
