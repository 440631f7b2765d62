//! Pauli matrices in the triad basis and the spin-1 matrices of the vector
//! representation.

use nalgebra::{Matrix2, Matrix3, Matrix3x2};
use num_complex::Complex64;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Levi-Civita symbol `ε_ijk`.
#[inline]
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// The index `k` completing `(i, j)` to a permutation, with `ε_ijk`.
#[inline]
pub fn third_index(i: usize, j: usize) -> Option<(usize, f64)> {
    if i == j {
        return None;
    }
    let k = 3 - i - j;
    Some((k, levi_civita(i, j, k)))
}

/// Pauli matrices ordered so that `σ̂₁` measures linear polarization along
/// `u`/`v`, `σ̂₂` along the diagonals, and `σ̂₃` is the helicity:
///
/// ```text
/// σ̂₁ = [[1, 0], [0, −1]]   σ̂₂ = [[0, 1], [1, 0]]   σ̂₃ = [[0, −i], [i, 0]]
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliSet {
    pub sigma: [Matrix2<Complex64>; 3],
}

impl Default for PauliSet {
    fn default() -> Self {
        Self::new()
    }
}

impl PauliSet {
    pub fn new() -> Self {
        let o = Complex64::from(0.0);
        let l = Complex64::from(1.0);
        Self {
            sigma: [
                Matrix2::new(l, o, o, -l),
                Matrix2::new(o, l, l, o),
                Matrix2::new(o, -I, I, o),
            ],
        }
    }

    pub fn helicity(&self) -> Matrix2<Complex64> {
        self.sigma[2]
    }
}

/// Spin-1 matrices `(Σ̂_k)_ij = −iε_ijk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinMatrices {
    pub sigma: [Matrix3<Complex64>; 3],
}

impl Default for SpinMatrices {
    fn default() -> Self {
        Self::new()
    }
}

impl SpinMatrices {
    pub fn new() -> Self {
        let sigma = std::array::from_fn(|k| {
            Matrix3::from_fn(|i, j| -I * levi_civita(i, j, k))
        });
        Self { sigma }
    }

    /// `Σ̂·n` for a real direction.
    pub fn along(&self, n: &nalgebra::Vector3<f64>) -> Matrix3<Complex64> {
        self.sigma[0] * Complex64::from(n.x)
            + self.sigma[1] * Complex64::from(n.y)
            + self.sigma[2] * Complex64::from(n.z)
    }

    /// Two-component form `ϖ†(Σ̂·n)ϖ`.
    pub fn reduced(
        &self,
        varpi: &Matrix3x2<Complex64>,
        n: &nalgebra::Vector3<f64>,
    ) -> Matrix2<Complex64> {
        varpi.adjoint() * self.along(n) * varpi
    }
}

/// `AB − BA` for square matrices.
pub fn commutator<D: nalgebra::Dim + nalgebra::DimName>(
    a: &nalgebra::OMatrix<Complex64, D, D>,
    b: &nalgebra::OMatrix<Complex64, D, D>,
) -> nalgebra::OMatrix<Complex64, D, D>
where
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<D, D>,
{
    a * b - b * a
}
