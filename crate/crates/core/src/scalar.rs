use std::fmt::{Debug, Display};

use serde::{Deserialize, Serialize};

/// Numeric precision of a training or checking run.
///
/// Property tests and gradient checks run in 64-bit; training defaults to
/// 32-bit for speed. Checkpoints always store 32-bit values.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => write!(f, "f32"),
            Precision::F64 => write!(f, "f64"),
        }
    }
}

/// Element type of all tensors: f32 or f64, with a fast matrix product.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + Default + Debug + Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// C := alpha * A' * B' + beta * C, where A' is `a` ([m,k] row-major, or
    /// [k,m] when `trans_a`), B' is `b` ([k,n] row-major, or [n,k] when
    /// `trans_b`), and `c` is [m,n] row-major.
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );
}

/// Stride pairs (row, col) for one GEMM operand, honoring transposition.
fn strides(trans: bool, rows: usize, cols: usize) -> (isize, isize) {
    if trans {
        // Stored as [cols, rows] row-major; element (i, j) sits at j*rows + i.
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $prec:expr, $gemm:path) => {
        impl Scalar for $t {
            const PRECISION: Precision = $prec;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                trans_a: bool,
                trans_b: bool,
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm: A length != m*k");
                assert_eq!(b.len(), k * n, "gemm: B length != k*n");
                assert_eq!(c.len(), m * n, "gemm: C length != m*n");
                let (rsa, csa) = strides(trans_a, m, k);
                let (rsb, csb) = strides(trans_b, k, n);
                // Safety: lengths checked above; strides describe in-bounds
                // layouts of the given slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, Precision::F32, matrixmultiply::sgemm);
impl_scalar!(f64, Precision::F64, matrixmultiply::dgemm);

/// True when every element is finite (no NaN or infinity).
pub fn all_finite<T: Scalar>(xs: &[T]) -> bool {
    xs.iter().all(|x| x.is_finite())
}
