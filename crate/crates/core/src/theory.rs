//! Finite-dimensional state space underlying the commitment scheme.
//!
//! A commitment to bit `b` with secret index `i` is the superposition
//! `(|0> + (-1)^b |i>) / sqrt(2)` in an `n`-dimensional Hilbert space, where
//! `|0>` is the undelayed component and `|i>` (for `i` in `1..n`) marks which
//! of the `n - 1` allowed delays was applied. This module provides those
//! states, the mixed states an outside observer sees when the secret index
//! is unknown, and the distinguishability measures (trace distance and the
//! Helstrom bound) that quantify how much information about `b` leaks before
//! unveiling.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest tolerated deviation of a squared norm (or a trace) from 1.
pub const NORM_TOL: f64 = 1e-12;
/// Largest tolerated entrywise asymmetry `|m[i][j] - conj(m[j][i])|`.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Most negative eigenvalue a matrix may have and still count as positive
/// semidefinite; absorbs eigensolver rounding.
pub const EIGENVALUE_TOL: f64 = 1e-10;

/// Errors from state and density-matrix construction or comparison.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    /// The Hilbert-space dimension does not admit the requested object.
    #[error("dimension must be at least {min}, got {got}")]
    DimensionTooSmall { min: usize, got: usize },
    /// A basis index fell outside the valid range for the dimension.
    #[error("basis index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    /// Two objects that must share a dimension do not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    /// A state vector's squared norm deviates from 1 beyond [`NORM_TOL`].
    #[error("state is not normalized: squared norm {0}")]
    NotNormalized(f64),
    /// A matrix is not Hermitian within [`HERMITICITY_TOL`].
    #[error("matrix is not Hermitian: largest asymmetry {0:e}")]
    NotHermitian(f64),
    /// A density matrix's trace deviates from 1 beyond [`NORM_TOL`].
    #[error("trace must be 1, got {0}")]
    TraceNotOne(f64),
    /// A density matrix has an eigenvalue below `-EIGENVALUE_TOL`.
    #[error("matrix is not positive semidefinite: smallest eigenvalue {0:e}")]
    NotPositiveSemidefinite(f64),
    /// A matrix that must be square is not.
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// A single commitment bit.
///
/// Serialized as the integer `0` or `1` so that wire messages and structured
/// records stay language-neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Bit {
    Zero,
    One,
}

impl Bit {
    /// The sign `(-1)^b` carried by the delayed component of a commitment.
    pub fn sign(self) -> f64 {
        match self {
            Bit::Zero => 1.0,
            Bit::One => -1.0,
        }
    }

    /// The opposite bit.
    pub fn flipped(self) -> Bit {
        match self {
            Bit::Zero => Bit::One,
            Bit::One => Bit::Zero,
        }
    }
}

impl From<Bit> for u8 {
    fn from(b: Bit) -> u8 {
        match b {
            Bit::Zero => 0,
            Bit::One => 1,
        }
    }
}

impl TryFrom<u8> for Bit {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Bit::Zero),
            1 => Ok(Bit::One),
            other => Err(format!("bit must be 0 or 1, got {other}")),
        }
    }
}

impl std::fmt::Display for Bit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// A normalized pure state in an `n`-dimensional Hilbert space (`n >= 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct TheoreticalState {
    amplitudes: Vec<Complex64>,
}

impl TheoreticalState {
    /// Wraps an amplitude vector, checking dimension and normalization.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self, TheoryError> {
        if amplitudes.len() < 2 {
            return Err(TheoryError::DimensionTooSmall {
                min: 2,
                got: amplitudes.len(),
            });
        }
        let norm_sqr: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > NORM_TOL {
            return Err(TheoryError::NotNormalized(norm_sqr));
        }
        Ok(Self { amplitudes })
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Amplitude on basis vector `k`, which must be `< dim`.
    pub fn amplitude(&self, k: usize) -> Complex64 {
        self.amplitudes[k]
    }

    /// All amplitudes in basis order.
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Inner product `<self|other>` (conjugate-linear in `self`).
    pub fn inner_product(&self, other: &TheoreticalState) -> Result<Complex64, TheoryError> {
        if self.dim() != other.dim() {
            return Err(TheoryError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }
}

/// The commitment state `(|0> + (-1)^b |i>) / sqrt(2)`.
///
/// `i` selects the delayed basis vector and must satisfy `1 <= i <= n - 1`;
/// `n >= 2` is the Hilbert-space dimension.
pub fn make_psi(b: Bit, i: usize, n: usize) -> Result<TheoreticalState, TheoryError> {
    if n < 2 {
        return Err(TheoryError::DimensionTooSmall { min: 2, got: n });
    }
    if i == 0 || i >= n {
        return Err(TheoryError::IndexOutOfRange { index: i, max: n - 1 });
    }
    let c = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); n];
    amplitudes[0] = c;
    amplitudes[i] = c * b.sign();
    TheoreticalState::new(amplitudes)
}

/// A density matrix: Hermitian, unit-trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Wraps a matrix after checking every density-matrix invariant.
    ///
    /// The positivity check runs a full eigendecomposition, so construction
    /// is `O(dim^3)`; use it at boundaries, not in inner loops.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self, TheoryError> {
        let dm = Self { entries };
        dm.validate()?;
        Ok(dm)
    }

    /// Wraps a matrix known to be valid by construction (e.g. a convex
    /// mixture of projectors), skipping the `O(dim^3)` positivity check.
    pub(crate) fn from_valid_parts(entries: DMatrix<Complex64>) -> Self {
        debug_assert_eq!(entries.nrows(), entries.ncols());
        Self { entries }
    }

    /// Rank-one density matrix `|psi><psi|`.
    pub fn from_pure(state: &TheoreticalState) -> Self {
        let n = state.dim();
        let entries = DMatrix::from_fn(n, n, |r, c| {
            state.amplitude(r) * state.amplitude(c).conj()
        });
        Self::from_valid_parts(entries)
    }

    /// Re-checks all invariants: square, Hermitian within
    /// [`HERMITICITY_TOL`], trace within [`NORM_TOL`] of 1, and no
    /// eigenvalue below `-EIGENVALUE_TOL`.
    pub fn validate(&self) -> Result<(), TheoryError> {
        let m = &self.entries;
        if m.nrows() != m.ncols() {
            return Err(TheoryError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(TheoryError::DimensionTooSmall { min: 1, got: 0 });
        }
        let mut asymmetry: f64 = 0.0;
        for r in 0..m.nrows() {
            for c in r..m.ncols() {
                asymmetry = asymmetry.max((m[(r, c)] - m[(c, r)].conj()).norm());
            }
        }
        if asymmetry > HERMITICITY_TOL {
            return Err(TheoryError::NotHermitian(asymmetry));
        }
        let trace = m.trace();
        if (trace.re - 1.0).abs() > NORM_TOL || trace.im.abs() > NORM_TOL {
            return Err(TheoryError::TraceNotOne(trace.re));
        }
        let eigenvalues = hermitian_eigenvalues(m.clone());
        let smallest = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if smallest < -EIGENVALUE_TOL {
            return Err(TheoryError::NotPositiveSemidefinite(smallest));
        }
        Ok(())
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Entry at `(row, col)`.
    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[(row, col)]
    }

    /// The underlying matrix.
    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }
}

/// Eigenvalues of a Hermitian matrix, in unspecified order.
pub(crate) fn hermitian_eigenvalues(m: DMatrix<Complex64>) -> Vec<f64> {
    nalgebra::linalg::SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .cloned()
        .collect()
}

/// The mixed state seen by an observer who knows the committed bit `b` but
/// not the secret index: the uniform mixture of `make_psi(b, i, n)` over
/// `i = 1..n`, each with probability `1 / (n - 1)`.
///
/// The mixture is accumulated term by term over each projector's four
/// nonzero entries, so construction is `O(n)` even though the matrix is
/// stored dense.
pub fn ensemble_density(b: Bit, n: usize) -> Result<DensityMatrix, TheoryError> {
    if n < 2 {
        return Err(TheoryError::DimensionTooSmall { min: 2, got: n });
    }
    let p = 1.0 / (n - 1) as f64;
    let mut entries = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 1..n {
        let psi = make_psi(b, i, n)?;
        let a0 = psi.amplitude(0);
        let ai = psi.amplitude(i);
        entries[(0, 0)] += p * (a0 * a0.conj());
        entries[(0, i)] += p * (a0 * ai.conj());
        entries[(i, 0)] += p * (ai * a0.conj());
        entries[(i, i)] += p * (ai * ai.conj());
    }
    Ok(DensityMatrix::from_valid_parts(entries))
}

/// Closed-form trace distance between the two bit ensembles
/// `ensemble_density(0, n)` and `ensemble_density(1, n)`.
///
/// Their difference is supported entirely on the first row and column —
/// `(rho_0 - rho_1)[0][i] = 1/(n-1)` for `i >= 1` — i.e. it is the rank-2
/// matrix `(|0><u| + |u><0|) / (n-1)` with `u` the sum of the delayed basis
/// vectors, `||u|| = sqrt(n-1)`. Its nonzero eigenvalues are
/// `+-||u||/(n-1) = +-1/sqrt(n-1)`, so the trace distance is
/// `1/sqrt(n-1)`. Unlike [`trace_distance`] this needs no `O(n^3)`
/// eigendecomposition and scales to arbitrary `n`; tests cross-check the
/// two routes on every dimension where the dense route is tractable.
pub fn ensemble_trace_distance(n: usize) -> Result<f64, TheoryError> {
    if n < 2 {
        return Err(TheoryError::DimensionTooSmall { min: 2, got: n });
    }
    Ok(1.0 / ((n - 1) as f64).sqrt())
}

/// Trace distance `0.5 * ||rho - sigma||_1`, computed from the eigenvalues
/// of the Hermitian difference.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64, TheoryError> {
    if rho.dim() != sigma.dim() {
        return Err(TheoryError::DimensionMismatch {
            left: rho.dim(),
            right: sigma.dim(),
        });
    }
    let diff = rho.entries() - sigma.entries();
    let sum: f64 = hermitian_eigenvalues(diff).iter().map(|v| v.abs()).sum();
    Ok(0.5 * sum)
}

/// The Helstrom bound: the best success probability for guessing which of
/// two equiprobable states was prepared, `1/2 + trace_distance / 2`.
pub fn helstrom_probability(
    rho: &DensityMatrix,
    sigma: &DensityMatrix,
) -> Result<f64, TheoryError> {
    Ok(0.5 + trace_distance(rho, sigma)? / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const C: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn re(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn make_psi_places_equal_weight_on_origin_and_delay_slot() {
        let psi = make_psi(Bit::Zero, 1, 2).unwrap();
        assert_eq!(psi.amplitudes(), &[re(C), re(C)]);

        let psi = make_psi(Bit::One, 2, 5).unwrap();
        assert_eq!(
            psi.amplitudes(),
            &[re(C), re(0.0), re(-C), re(0.0), re(0.0)]
        );
    }

    #[test]
    fn make_psi_rejects_bad_dimensions_and_indices() {
        assert_eq!(
            make_psi(Bit::Zero, 1, 1).unwrap_err(),
            TheoryError::DimensionTooSmall { min: 2, got: 1 }
        );
        assert_eq!(
            make_psi(Bit::Zero, 0, 4).unwrap_err(),
            TheoryError::IndexOutOfRange { index: 0, max: 3 }
        );
        assert_eq!(
            make_psi(Bit::Zero, 4, 4).unwrap_err(),
            TheoryError::IndexOutOfRange { index: 4, max: 3 }
        );
    }

    #[test]
    fn opposite_bits_with_same_index_are_exactly_orthogonal() {
        // c*c - c*c cancels exactly in binary floating point.
        for n in [2usize, 3, 7, 32] {
            for i in 1..n {
                let p0 = make_psi(Bit::Zero, i, n).unwrap();
                let p1 = make_psi(Bit::One, i, n).unwrap();
                let ip = p0.inner_product(&p1).unwrap();
                assert_eq!(ip, re(0.0));
            }
        }
    }

    #[test]
    fn opposite_bits_with_different_indices_overlap_by_one_half() {
        let p0 = make_psi(Bit::Zero, 1, 4).unwrap();
        let p1 = make_psi(Bit::One, 3, 4).unwrap();
        // Only the |0> components overlap: c * c = 1/2 up to one ulp.
        let ip = p0.inner_product(&p1).unwrap();
        assert!((ip.re - 0.5).abs() < 1e-15 && ip.im == 0.0, "overlap {ip}");
    }

    #[test]
    fn theoretical_state_rejects_unnormalized_input() {
        let err = TheoreticalState::new(vec![re(1.0), re(1.0)]).unwrap_err();
        assert_eq!(err, TheoryError::NotNormalized(2.0));
    }

    #[test]
    fn ensemble_density_matches_hand_expansion_for_dim_three() {
        // Uniform mixture of (|0> - |1>)/sqrt(2) and (|0> - |2>)/sqrt(2).
        let rho = ensemble_density(Bit::One, 3).unwrap();
        let expected = [
            [0.5, -0.25, -0.25],
            [-0.25, 0.25, 0.0],
            [-0.25, 0.0, 0.25],
        ];
        for (r, row) in expected.iter().enumerate() {
            for (c, want) in row.iter().enumerate() {
                let entry = rho.entry(r, c);
                assert!(
                    (entry.re - want).abs() < 1e-15 && entry.im == 0.0,
                    "entry ({r},{c}) = {entry}"
                );
            }
        }
        rho.validate().unwrap();
    }

    #[test]
    fn ensemble_density_satisfies_all_invariants_for_small_dims() {
        for n in 2..=12 {
            for b in [Bit::Zero, Bit::One] {
                ensemble_density(b, n).unwrap().validate().unwrap();
            }
        }
    }

    #[test]
    fn trace_distance_of_a_state_with_itself_is_zero() {
        let rho = ensemble_density(Bit::Zero, 6).unwrap();
        assert_abs_diff_eq!(trace_distance(&rho, &rho).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn trace_distance_between_bit_ensembles_follows_inverse_sqrt_law() {
        // The difference rho0 - rho1 has rank 2 with eigenvalues
        // +-1/sqrt(n-1), so the trace distance is 1/sqrt(n-1).
        for n in [2usize, 3, 5, 17, 101] {
            let rho0 = ensemble_density(Bit::Zero, n).unwrap();
            let rho1 = ensemble_density(Bit::One, n).unwrap();
            let expected = 1.0 / ((n - 1) as f64).sqrt();
            assert_abs_diff_eq!(
                trace_distance(&rho0, &rho1).unwrap(),
                expected,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn closed_form_trace_distance_agrees_with_the_dense_eigensolver() {
        for n in 2..=40 {
            let rho0 = ensemble_density(Bit::Zero, n).unwrap();
            let rho1 = ensemble_density(Bit::One, n).unwrap();
            let dense = trace_distance(&rho0, &rho1).unwrap();
            let closed = ensemble_trace_distance(n).unwrap();
            assert_abs_diff_eq!(dense, closed, epsilon = 1e-11);
        }
        assert!(ensemble_trace_distance(1).is_err());
    }

    #[test]
    fn helstrom_probability_is_affine_in_trace_distance() {
        let rho0 = ensemble_density(Bit::Zero, 5).unwrap();
        let rho1 = ensemble_density(Bit::One, 5).unwrap();
        let td = trace_distance(&rho0, &rho1).unwrap();
        let p = helstrom_probability(&rho0, &rho1).unwrap();
        assert_eq!(p, 0.5 + td / 2.0);
        // n = 5 gives trace distance exactly representable: 1/2.
        assert_abs_diff_eq!(p, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn validate_rejects_non_hermitian_wrong_trace_and_negative_matrices() {
        let m = DMatrix::from_row_slice(2, 2, &[re(0.5), re(0.3), re(0.1), re(0.5)]);
        assert!(matches!(
            DensityMatrix::new(m).unwrap_err(),
            TheoryError::NotHermitian(_)
        ));

        let m = DMatrix::from_row_slice(2, 2, &[re(0.9), re(0.0), re(0.0), re(0.9)]);
        assert!(matches!(
            DensityMatrix::new(m).unwrap_err(),
            TheoryError::TraceNotOne(_)
        ));

        let m = DMatrix::from_row_slice(2, 2, &[re(1.5), re(0.0), re(0.0), re(-0.5)]);
        assert!(matches!(
            DensityMatrix::new(m).unwrap_err(),
            TheoryError::NotPositiveSemidefinite(_)
        ));
    }

    #[test]
    fn trace_distance_requires_matching_dimensions() {
        let a = ensemble_density(Bit::Zero, 3).unwrap();
        let b = ensemble_density(Bit::One, 4).unwrap();
        assert_eq!(
            trace_distance(&a, &b).unwrap_err(),
            TheoryError::DimensionMismatch { left: 3, right: 4 }
        );
    }

    #[test]
    fn bit_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&Bit::Zero).unwrap(), "0");
        assert_eq!(serde_json::to_string(&Bit::One).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Bit>("1").unwrap(), Bit::One);
        assert!(serde_json::from_str::<Bit>("2").is_err());
    }
}
