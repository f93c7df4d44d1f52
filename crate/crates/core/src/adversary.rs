//! Cheating models for both parties.
//!
//! **Receiver side (concealment):** before unveiling, the receiver holds
//! one of the two bit ensembles and can at best distinguish them with the
//! Helstrom probability `1/2 + 1/(2 sqrt(n-1))` — vanishing advantage as
//! the slot table grows. [`bob_discrimination_attack`] packages those
//! numbers.
//!
//! **Committer side (binding):** instead of committing honestly, the
//! committer can keep a register `alpha` entangled with the photon
//! (register `beta`) and postpone her choice: after the holding phase she
//! measures `alpha` in a basis of her choosing, collapses `beta`, and
//! announces whichever slot index the collapsed state fits best. The
//! canonical such state is [`omega_state`]; [`steer_and_unveil`] evaluates
//! any (state, measurement, announcement) strategy exactly, and
//! [`optimal_cheat_probability`] searches for the best strategy at small
//! `n`. The obstruction to a perfect cheat is quantified by
//! [`exact_steerability_violation`]: an ensemble is steerable from a held
//! purification only if it averages to the reduced density matrix, and the
//! two unveil targets demand different averages.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;
use crate::theory::{
    ensemble_trace_distance, make_psi, Bit, DensityMatrix, TheoreticalState, TheoryError,
};

/// Largest dimension the strategy optimizer accepts; the search space grows
/// as `6 n^2` real parameters and stays trustworthy only at desk scale.
pub const MAX_OPTIMIZER_DIM: usize = 12;

/// Errors from attack construction and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdversaryError {
    /// The dimension does not admit the requested object.
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    /// The optimizer is restricted to desk-scale dimensions.
    #[error("dimension {dim} exceeds the optimizer limit {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    /// Two objects that must share a dimension do not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    /// A bipartite state's Frobenius norm deviates from 1 beyond 1e-12.
    #[error("bipartite state is not normalized: squared Frobenius norm {0}")]
    NotUnitNorm(f64),
    /// Measurement vectors must be pairwise orthonormal within 1e-10.
    #[error("measurement vectors {i} and {j} are not orthonormal: deviation {deviation:e}")]
    NotOrthonormal { i: usize, j: usize, deviation: f64 },
    /// Each outcome needs exactly one announced slot index.
    #[error("expected {vectors} announcements, got {announcements}")]
    AnnouncementLengthMismatch { vectors: usize, announcements: usize },
    /// Announced slot indices are 1-based and bounded by the dimension.
    #[error("announced index {index} for outcome {outcome} out of range 1..={max}")]
    AnnouncementOutOfRange {
        outcome: usize,
        index: usize,
        max: usize,
    },
    /// Ensemble probabilities must be nonnegative and sum to 1.
    #[error("ensemble probabilities must be nonnegative and sum to 1, got sum {0}")]
    ProbabilitiesNotNormalized(f64),
    /// An ensemble must contain at least one state.
    #[error("ensemble must contain at least one state")]
    EmptyEnsemble,
    /// The optimizer produced a non-physical value; reported, never clamped.
    #[error("optimizer diverged: success probability {0} is not in [0, 1]")]
    Diverged(f64),
    /// Optimizer configuration is unusable.
    #[error("invalid optimizer configuration: {0}")]
    BadOptimizerConfig(String),
    /// An error surfaced from the abstract state layer.
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

/// A pure state of the committer's kept register `alpha` (rows) jointly
/// with the in-flight photon register `beta` (columns). Frobenius norm 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EntangledState {
    amplitudes: DMatrix<Complex64>,
}

impl EntangledState {
    /// Wraps an amplitude matrix, checking normalization.
    pub fn new(amplitudes: DMatrix<Complex64>) -> Result<Self, AdversaryError> {
        let norm_sqr: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > 1e-12 {
            return Err(AdversaryError::NotUnitNorm(norm_sqr));
        }
        Ok(Self { amplitudes })
    }

    /// Dimension of the kept register.
    pub fn dim_alpha(&self) -> usize {
        self.amplitudes.nrows()
    }

    /// Dimension of the photon register.
    pub fn dim_beta(&self) -> usize {
        self.amplitudes.ncols()
    }

    /// Amplitude of `|alpha_a> |beta_b>`.
    pub fn amplitude(&self, a: usize, b: usize) -> Complex64 {
        self.amplitudes[(a, b)]
    }

    /// The photon register's reduced density matrix (kept register traced
    /// out): `rho[b][b'] = sum_a M[a][b] conj(M[a][b'])`. This is all an
    /// honest receiver can ever see of a delayed-choice committer.
    pub fn reduced_beta(&self) -> Result<DensityMatrix, AdversaryError> {
        let m = &self.amplitudes;
        let n = self.dim_beta();
        let entries = DMatrix::from_fn(n, n, |b, b2| {
            (0..self.dim_alpha())
                .map(|a| m[(a, b)] * m[(a, b2)].conj())
                .sum()
        });
        Ok(DensityMatrix::new(entries)?)
    }
}

/// The canonical delayed-choice state: the uniform superposition
/// `(1/sqrt(n-1)) sum_i |alpha_i> |phi_i>` pairing kept-register basis
/// vector `i` with the bit-0 commitment state `phi_i = make_psi(0, i, n)`.
/// Its reduced photon state is exactly the bit-0 ensemble, so the receiver
/// cannot tell it from an honest commitment to 0.
pub fn omega_state(n: usize) -> Result<EntangledState, AdversaryError> {
    if n < 2 {
        return Err(AdversaryError::DimensionTooSmall(n));
    }
    let w = 1.0 / ((n - 1) as f64).sqrt();
    let mut amplitudes = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 1..n {
        let phi = make_psi(Bit::Zero, i, n)?;
        for (col, amp) in phi.amplitudes().iter().enumerate() {
            amplitudes[(i, col)] = w * amp;
        }
    }
    EntangledState::new(amplitudes)
}

/// A projective measurement on the kept register plus the announcement the
/// committer makes for each outcome: outcome `k` collapses the photon and
/// announces slot index `announce[k]`.
///
/// The vectors must be pairwise orthonormal; they need not be complete —
/// outcomes in the orthogonal complement never fire for states supported
/// on the measured subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringMeasurement {
    vectors: Vec<DVector<Complex64>>,
    announce: Vec<usize>,
}

impl SteeringMeasurement {
    /// Builds a measurement, checking orthonormality (within 1e-10) and the
    /// announcement map's shape.
    pub fn new(
        vectors: Vec<Vec<Complex64>>,
        announce: Vec<usize>,
    ) -> Result<Self, AdversaryError> {
        if vectors.is_empty() {
            return Err(AdversaryError::DimensionTooSmall(0));
        }
        if vectors.len() != announce.len() {
            return Err(AdversaryError::AnnouncementLengthMismatch {
                vectors: vectors.len(),
                announcements: announce.len(),
            });
        }
        let dim = vectors[0].len();
        let vectors: Vec<DVector<Complex64>> = vectors
            .into_iter()
            .map(DVector::from_vec)
            .collect();
        for v in &vectors {
            if v.len() != dim {
                return Err(AdversaryError::DimensionMismatch {
                    left: dim,
                    right: v.len(),
                });
            }
        }
        for i in 0..vectors.len() {
            for j in i..vectors.len() {
                let ip: Complex64 = vectors[i].dotc(&vectors[j]);
                let expected = if i == j { 1.0 } else { 0.0 };
                let deviation = (ip - Complex64::new(expected, 0.0)).norm();
                if deviation > 1e-10 {
                    return Err(AdversaryError::NotOrthonormal { i, j, deviation });
                }
            }
        }
        for (outcome, &index) in announce.iter().enumerate() {
            if index == 0 {
                return Err(AdversaryError::AnnouncementOutOfRange {
                    outcome,
                    index,
                    max: usize::MAX,
                });
            }
        }
        Ok(Self { vectors, announce })
    }

    /// The measurement the canonical delayed-choice attack uses: project
    /// onto kept-register basis vectors `1..n` and announce the matching
    /// slot index.
    pub fn canonical(n: usize) -> Result<Self, AdversaryError> {
        if n < 2 {
            return Err(AdversaryError::DimensionTooSmall(n));
        }
        let mut vectors = Vec::with_capacity(n - 1);
        let mut announce = Vec::with_capacity(n - 1);
        for i in 1..n {
            let mut v = vec![Complex64::new(0.0, 0.0); n];
            v[i] = Complex64::new(1.0, 0.0);
            vectors.push(v);
            announce.push(i);
        }
        Self::new(vectors, announce)
    }

    /// The same measurement with every vector negated. Physically
    /// identical — used to exhibit global-phase invariance.
    pub fn negated(&self) -> Self {
        Self {
            vectors: self.vectors.iter().map(|v| -v).collect(),
            announce: self.announce.clone(),
        }
    }

    /// Number of explicit outcomes.
    pub fn outcomes(&self) -> usize {
        self.vectors.len()
    }
}

/// Evaluates a delayed-choice strategy exactly (no sampling): measure the
/// kept register, collapse the photon, announce the per-outcome slot index,
/// and let the receiver verify against `make_psi(target, i(k), n)`. Returns
/// the outcome-averaged verification success probability
/// `sum_k p_k |<psi_{i(k)}^target | beta_k>|^2`.
pub fn steer_and_unveil(
    state: &EntangledState,
    measurement: &SteeringMeasurement,
    target: Bit,
) -> Result<f64, AdversaryError> {
    let n_alpha = state.dim_alpha();
    let n = state.dim_beta();
    if n < 2 {
        return Err(AdversaryError::DimensionTooSmall(n));
    }
    let mut total = 0.0;
    for (k, v) in measurement.vectors.iter().enumerate() {
        if v.len() != n_alpha {
            return Err(AdversaryError::DimensionMismatch {
                left: n_alpha,
                right: v.len(),
            });
        }
        let announced = measurement.announce[k];
        if announced >= n {
            return Err(AdversaryError::AnnouncementOutOfRange {
                outcome: k,
                index: announced,
                max: n - 1,
            });
        }
        // Unnormalized collapsed photon state for outcome k:
        // chi[b] = sum_a conj(v[a]) M[a][b]; outcome probability ||chi||^2.
        let chi = DVector::from_fn(n, |b, _| {
            (0..n_alpha)
                .map(|a| v[a].conj() * state.amplitude(a, b))
                .sum::<Complex64>()
        });
        let p_k = chi.norm_squared();
        if p_k == 0.0 {
            continue; // outcome never fires
        }
        let collapsed = chi / Complex64::new(p_k.sqrt(), 0.0);
        let psi = make_psi(target, announced, n)?;
        let overlap: Complex64 = psi
            .amplitudes()
            .iter()
            .zip(collapsed.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        total += p_k * overlap.norm_sqr();
    }
    Ok(total)
}

/// How far an ensemble is from being steerable out of a held state: the
/// Frobenius norm of `sum_k p_k |chi_k><chi_k| - rho`. Steering a photon
/// held by the receiver into the ensemble `{(p_k, chi_k)}` requires the
/// ensemble to average to the photon's density matrix exactly; a strictly
/// positive return value certifies that no measurement on any kept
/// register can do it.
pub fn exact_steerability_violation(
    ensemble: &[(f64, TheoreticalState)],
    rho: &DensityMatrix,
) -> Result<f64, AdversaryError> {
    if ensemble.is_empty() {
        return Err(AdversaryError::EmptyEnsemble);
    }
    let n = rho.dim();
    let p_sum: f64 = ensemble.iter().map(|(p, _)| *p).sum();
    if ensemble.iter().any(|(p, _)| *p < 0.0) || (p_sum - 1.0).abs() > 1e-9 {
        return Err(AdversaryError::ProbabilitiesNotNormalized(p_sum));
    }
    let mut average = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (p, chi) in ensemble {
        if chi.dim() != n {
            return Err(AdversaryError::DimensionMismatch {
                left: n,
                right: chi.dim(),
            });
        }
        for r in 0..n {
            for c in 0..n {
                average[(r, c)] += *p * chi.amplitude(r) * chi.amplitude(c).conj();
            }
        }
    }
    let diff = average - rho.entries();
    Ok(diff.norm())
}

/// Concealment metrics for the receiver's best premature measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcealmentMetrics {
    /// Trace distance between the two bit ensembles: `1/sqrt(n-1)`.
    pub trace_distance: f64,
    /// Best probability of guessing the committed bit before unveiling.
    pub helstrom: f64,
}

/// The receiver's strongest attack before unveiling: distinguish the two
/// bit ensembles. Uses the closed-form trace distance (the ensembles'
/// difference is rank-2; see [`ensemble_trace_distance`]), so it scales to
/// arbitrary `n`; tests cross-check it against the dense eigensolver route
/// wherever that is tractable.
pub fn bob_discrimination_attack(n: usize) -> Result<ConcealmentMetrics, AdversaryError> {
    if n < 2 {
        return Err(AdversaryError::DimensionTooSmall(n));
    }
    let trace_distance = ensemble_trace_distance(n)?;
    Ok(ConcealmentMetrics {
        trace_distance,
        helstrom: 0.5 + trace_distance / 2.0,
    })
}

/// Knobs for the strategy search in [`optimal_cheat_probability`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Independent ascent runs; the first is seeded at the canonical
    /// delayed-choice strategy, the rest at random points.
    pub restarts: usize,
    /// Initial coordinate step of the pattern search.
    pub initial_step: f64,
    /// The search stops once the step shrinks below this.
    pub step_tol: f64,
    /// Hard cap on coordinate sweeps per restart.
    pub max_sweeps: usize,
    /// Seed for the restart starting points (restart `k` uses stream `k`).
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            restarts: 64,
            initial_step: 0.5,
            step_tol: 1e-8,
            max_sweeps: 2000,
            seed: 0,
        }
    }
}

/// Bookkeeping of one optimizer invocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    /// Restarts performed.
    pub restarts: usize,
    /// Restarts whose step shrank below tolerance (vs. hitting the cap).
    pub converged_restarts: usize,
    /// Total objective evaluations.
    pub evaluations: u64,
    /// Index of the restart that produced the reported optimum.
    pub best_restart: usize,
}

/// Best cheating performance found, with convergence metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheatReport {
    /// Verification success when the committer steers toward unveiling 0.
    pub p0: f64,
    /// Verification success when steering toward unveiling 1.
    pub p1: f64,
    /// The cheat figure of merit `(p0 + p1) / 2`; 1 would be a perfect
    /// delayed choice.
    pub p_avg: f64,
    pub convergence: ConvergenceRecord,
}

/// Numerically maximizes the committer's average two-way unveil success
/// over delayed-choice strategies: a bipartite pure state (kept register of
/// dimension `n`) plus one projective measurement-and-announcement per
/// unveil target. Announcements are folded in exactly: for a fixed
/// measurement, the best announcement for outcome `k` is the slot index
/// maximizing the overlap, so the objective takes the per-outcome maximum.
///
/// The search is a multi-restart coordinate pattern search over `6 n^2`
/// real parameters (state matrix entries, Frobenius-normalized, and one
/// unitary per target via Gram-Schmidt). POVM attacks and cross-round
/// entanglement are outside the parametrization and documented as such.
pub fn optimal_cheat_probability(
    n: usize,
    config: &OptimizerConfig,
) -> Result<CheatReport, AdversaryError> {
    if n < 2 {
        return Err(AdversaryError::DimensionTooSmall(n));
    }
    if n > MAX_OPTIMIZER_DIM {
        return Err(AdversaryError::DimensionTooLarge {
            dim: n,
            max: MAX_OPTIMIZER_DIM,
        });
    }
    if config.restarts == 0 {
        return Err(AdversaryError::BadOptimizerConfig(
            "at least one restart is required".into(),
        ));
    }
    if !(config.initial_step > 0.0 && config.step_tol > 0.0)
        || config.step_tol > config.initial_step
    {
        return Err(AdversaryError::BadOptimizerConfig(format!(
            "need 0 < step_tol <= initial_step, got step_tol {} and initial_step {}",
            config.step_tol, config.initial_step
        )));
    }

    let objective = CheatObjective::new(n)?;
    let dim = 6 * n * n;
    let mut best: Option<(Evaluation, usize)> = None;
    let mut evaluations = 0u64;
    let mut converged_restarts = 0usize;

    for restart in 0..config.restarts {
        let mut theta = if restart == 0 {
            canonical_strategy_parameters(n)?
        } else {
            let mut rng = stream_rng(config.seed, restart as u64);
            (0..dim)
                .map(|_| 2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0)
                .collect()
        };
        let outcome = ascend(&objective, &mut theta, config, &mut evaluations)?;
        if outcome.converged {
            converged_restarts += 1;
        }
        if best
            .as_ref()
            .is_none_or(|(b, _)| outcome.value.avg() > b.avg())
        {
            best = Some((outcome.value, restart));
        }
    }

    let (value, best_restart) = best.expect("at least one restart ran");
    Ok(CheatReport {
        p0: value.p0,
        p1: value.p1,
        p_avg: value.avg(),
        convergence: ConvergenceRecord {
            restarts: config.restarts,
            converged_restarts,
            evaluations,
            best_restart,
        },
    })
}

/// Per-target success probabilities at one strategy point.
#[derive(Debug, Clone, Copy)]
struct Evaluation {
    p0: f64,
    p1: f64,
}

impl Evaluation {
    fn avg(&self) -> f64 {
        0.5 * (self.p0 + self.p1)
    }
}

struct RestartOutcome {
    value: Evaluation,
    converged: bool,
}

/// The objective with per-target commitment states precomputed:
/// for target `b`, column `i - 1` of `psi[b]` is `make_psi(b, i, n)`.
struct CheatObjective {
    n: usize,
    psi: [DMatrix<Complex64>; 2],
}

impl CheatObjective {
    fn new(n: usize) -> Result<Self, AdversaryError> {
        let mut psi = [
            DMatrix::from_element(n, n - 1, Complex64::new(0.0, 0.0)),
            DMatrix::from_element(n, n - 1, Complex64::new(0.0, 0.0)),
        ];
        for (b_idx, bit) in [Bit::Zero, Bit::One].into_iter().enumerate() {
            for i in 1..n {
                let state = make_psi(bit, i, n)?;
                for (row, amp) in state.amplitudes().iter().enumerate() {
                    psi[b_idx][(row, i - 1)] = *amp;
                }
            }
        }
        Ok(Self { n, psi })
    }

    /// Success pair for the strategy encoded by `theta` (layout: `2 n^2`
    /// reals for the bipartite state, then `2 n^2` per target unitary).
    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation, AdversaryError> {
        let n = self.n;
        let block = 2 * n * n;
        let mut m = complex_matrix(&theta[0..block], n);
        let frobenius = m.norm();
        if frobenius < 1e-12 {
            // Degenerate all-zero state: worthless but well-defined.
            return Ok(Evaluation { p0: 0.0, p1: 0.0 });
        }
        m.iter_mut().for_each(|z| *z /= frobenius);

        let mut ps = [0.0f64; 2];
        for b in 0..2 {
            let v = unitarize(&theta[block * (1 + b)..block * (2 + b)], n);
            // a[k][i-1] = <outcome k collapsed state | psi_i^b>, unnormalized:
            // the row-k squared magnitudes already carry the outcome weight.
            let a = v.adjoint() * &m * &self.psi[b];
            ps[b] = (0..n)
                .map(|k| {
                    (0..n - 1)
                        .map(|i| a[(k, i)].norm_sqr())
                        .fold(0.0, f64::max)
                })
                .sum();
            if !ps[b].is_finite() || ps[b] > 1.0 + 1e-9 {
                return Err(AdversaryError::Diverged(ps[b]));
            }
        }
        Ok(Evaluation {
            p0: ps[0],
            p1: ps[1],
        })
    }
}

/// Packs reals pairwise into a complex `n x n` matrix (row-major).
fn complex_matrix(reals: &[f64], n: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |r, c| {
        let at = 2 * (r * n + c);
        Complex64::new(reals[at], reals[at + 1])
    })
}

/// Turns arbitrary reals into a unitary via modified Gram-Schmidt on the
/// columns of [`complex_matrix`]. Degenerate columns fall back to canonical
/// basis vectors, so the result is always exactly unitary-shaped.
fn unitarize(reals: &[f64], n: usize) -> DMatrix<Complex64> {
    let raw = complex_matrix(reals, n);
    let mut q = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for j in 0..n {
        let mut v: DVector<Complex64> = raw.column(j).into();
        let mut norm = orthogonalize(&mut v, &q, j);
        if norm < 1e-8 {
            // Fall back deterministically to the first basis vector with a
            // usable component outside the span of the finished columns.
            for e in 0..n {
                v.fill(Complex64::new(0.0, 0.0));
                v[e] = Complex64::new(1.0, 0.0);
                norm = orthogonalize(&mut v, &q, j);
                if norm >= 1e-8 {
                    break;
                }
            }
        }
        v /= Complex64::new(norm, 0.0);
        q.set_column(j, &v);
    }
    q
}

/// Projects out the first `cols` columns of `q` from `v` (two passes for
/// numerical robustness) and returns the remaining norm.
fn orthogonalize(v: &mut DVector<Complex64>, q: &DMatrix<Complex64>, cols: usize) -> f64 {
    for _ in 0..2 {
        for k in 0..cols {
            let qk = q.column(k);
            let overlap: Complex64 = qk.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
            for (vi, qi) in v.iter_mut().zip(qk.iter()) {
                *vi -= overlap * qi;
            }
        }
    }
    v.norm()
}

/// Parameters encoding the canonical delayed-choice strategy: the
/// [`omega_state`] as the bipartite state and identity measurement bases
/// (announcement folding then reproduces the honest announce-`i` map for
/// target 0).
fn canonical_strategy_parameters(n: usize) -> Result<Vec<f64>, AdversaryError> {
    let omega = omega_state(n)?;
    let mut theta = vec![0.0f64; 6 * n * n];
    for r in 0..n {
        for c in 0..n {
            let amp = omega.amplitude(r, c);
            theta[2 * (r * n + c)] = amp.re;
            theta[2 * (r * n + c) + 1] = amp.im;
        }
    }
    for b in 0..2 {
        let base = 2 * n * n * (1 + b);
        for d in 0..n {
            theta[base + 2 * (d * n + d)] = 1.0;
        }
    }
    Ok(theta)
}

/// Coordinate pattern search: sweep all coordinates trying `+-step`,
/// halve the step after a sweep with no improvement, stop below
/// `step_tol` (converged) or at the sweep cap (not converged).
fn ascend(
    objective: &CheatObjective,
    theta: &mut [f64],
    config: &OptimizerConfig,
    evaluations: &mut u64,
) -> Result<RestartOutcome, AdversaryError> {
    const IMPROVEMENT_TOL: f64 = 1e-15;
    let mut current = objective.evaluate(theta)?;
    *evaluations += 1;
    let mut step = config.initial_step;
    let mut sweeps = 0usize;
    while step >= config.step_tol && sweeps < config.max_sweeps {
        sweeps += 1;
        let mut improved = false;
        for d in 0..theta.len() {
            for sign in [1.0, -1.0] {
                let saved = theta[d];
                theta[d] = saved + sign * step;
                let candidate = objective.evaluate(theta)?;
                *evaluations += 1;
                if candidate.avg() > current.avg() + IMPROVEMENT_TOL {
                    current = candidate;
                    improved = true;
                    break;
                }
                theta[d] = saved;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(RestartOutcome {
        value: current,
        converged: step < config.step_tol,
    })
}
