//! A small sequential neural-network core: 1-D (de)convolutions over the
//! spectral axis, batch normalization, activations, hand-written reverse-mode
//! gradients and Adam.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

mod adam;
pub mod gradcheck;
mod io;
mod kernels;
mod layer;
mod network;
mod tensor;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub use adam::{AdamConfig, AdamState};
pub use io::{decode_network, encode_network, load_network, save_network, NETWORK_MAGIC};
pub use layer::{LayerKind, LayerSpec, Shape};
pub use network::{init_network, Activations, BackwardOptions, Mode, Network};
pub use tensor::Tensor;

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Fraction of the running statistics kept at each training step.
pub const BN_MOMENTUM: f64 = 0.9;
/// Standard deviation of initial conv/deconv/affine weights.
pub const INIT_STD: f64 = 0.02;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a·b + beta * c` for strided row/column-major operands.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

fn extent(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                assert!(extent(m, k, a_strides) <= a.len(), "gemm: lhs out of bounds");
                assert!(extent(k, n, b_strides) <= b.len(), "gemm: rhs out of bounds");
                assert!(extent(m, n, c_strides) <= c.len(), "gemm: output out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched lies inside the slices checked above,
                // and `c` is exclusively borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposed_operand() {
        // a = [[1, 2], [3, 4]], b^T stored row-major as [[5, 6], [7, 8]] -> b = [[5, 7], [6, 8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let bt = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, (2, 1), &bt, (1, 2), 0.0, &mut c, (2, 1));
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
