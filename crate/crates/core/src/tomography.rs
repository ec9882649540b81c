//! Link-level tomography: measurement semantics on labelled pairs,
//! correlation accumulation, linear-inversion reconstruction and fidelity.

use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error_model::ErrorState;
use crate::purification::PauliLabel;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    pub fn index(self) -> usize {
        match self {
            Basis::X => 0,
            Basis::Y => 1,
            Basis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Basis::ALL[i]
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Basis::ALL[rng.random_range(0..3)]
    }

    /// Sign of the `basis ⊗ basis` stabilizer on |Φ+⟩.
    fn phi_plus_sign(self) -> i8 {
        match self {
            Basis::Y => -1,
            _ => 1,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::X => "X",
            Basis::Y => "Y",
            Basis::Z => "Z",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn sign(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn from_sign(s: i8) -> Self {
        if s >= 0 {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }

    fn flip(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random::<bool>() {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }
}

/// Single-side marginal of a readout. Every Bell-diagonal half is maximally
/// mixed; Excited/Relaxed are Z eigenstates.
fn marginal<R: Rng + ?Sized>(state: ErrorState, basis: Basis, rng: &mut R) -> Outcome {
    match (state, basis) {
        (ErrorState::Excited, Basis::Z) => Outcome::Minus,
        (ErrorState::Relaxed, Basis::Z) => Outcome::Plus,
        _ => Outcome::random(rng),
    }
}

/// Outcome of whichever side is read out first.
pub fn first_outcome<R: Rng + ?Sized>(state: ErrorState, basis: Basis, rng: &mut R) -> Outcome {
    marginal(state, basis, rng)
}

/// Outcome of the second side, conditioned on the first side's readout.
pub fn second_outcome<R: Rng + ?Sized>(
    first: (ErrorState, Basis, Outcome),
    state: ErrorState,
    basis: Basis,
    rng: &mut R,
) -> Outcome {
    let (first_state, first_basis, first_out) = first;
    match (first_state.pauli(), state.pauli()) {
        (Some(pa), Some(pb)) if first_basis == basis => {
            let joint = pa * pb;
            let mut s = basis.phi_plus_sign();
            if joint.flips(basis) {
                s = -s;
            }
            if s > 0 {
                first_out
            } else {
                first_out.flip()
            }
        }
        _ => marginal(state, basis, rng),
    }
}

/// Joint readout of both halves in the given local bases.
pub fn joint_outcome<R: Rng + ?Sized>(
    states: (ErrorState, ErrorState),
    basis_a: Basis,
    basis_b: Basis,
    rng: &mut R,
) -> (Outcome, Outcome) {
    let oa = first_outcome(states.0, basis_a, rng);
    let ob = second_outcome((states.0, basis_a, oa), states.1, basis_b, rng);
    (oa, ob)
}

/// Ground-truth overlap of a labelled pair with |Φ+⟩.
pub fn actual_fidelity(a: ErrorState, b: ErrorState) -> f64 {
    match (a.pauli(), b.pauli()) {
        (Some(pa), Some(pb)) => {
            if pa * pb == PauliLabel::I {
                1.0
            } else {
                0.0
            }
        }
        _ => 0.25,
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub action_index: u64,
    pub basis: Basis,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationAccumulator {
    /// `counts[basis_a][basis_b][outcome_a][outcome_b]`, outcome 0 = +1.
    pub counts: [[[[u64; 2]; 2]; 3]; 3],
    pub total: u64,
}

fn oi(o: Outcome) -> usize {
    match o {
        Outcome::Plus => 0,
        Outcome::Minus => 1,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TomographyError {
    #[error("reconstruction failed: no samples in basis cell {0}{1}")]
    EmptyCell(Basis, Basis),
}

impl CorrelationAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, a: (Basis, Outcome), b: (Basis, Outcome)) {
        self.counts[a.0.index()][b.0.index()][oi(a.1)][oi(b.1)] += 1;
        self.total += 1;
    }

    pub fn cell_total(&self, a: Basis, b: Basis) -> u64 {
        self.counts[a.index()][b.index()].iter().flatten().sum()
    }

    /// Empirical ⟨a ⊗ b⟩ over records in that basis cell.
    pub fn correlator(&self, a: Basis, b: Basis) -> Option<f64> {
        let c = &self.counts[a.index()][b.index()];
        let n = self.cell_total(a, b);
        (n > 0)
            .then(|| (c[0][0] + c[1][1]) as f64 / n as f64 - (c[0][1] + c[1][0]) as f64 / n as f64)
    }

    /// Empirical ⟨a ⊗ I⟩ (side 0) or ⟨I ⊗ a⟩ (side 1).
    pub fn marginal(&self, side: usize, basis: Basis) -> Option<f64> {
        let (mut plus, mut minus) = (0u64, 0u64);
        for other in Basis::ALL {
            let (ba, bb) = if side == 0 {
                (basis, other)
            } else {
                (other, basis)
            };
            let c = &self.counts[ba.index()][bb.index()];
            for x in 0..2 {
                for y in 0..2 {
                    let mine = if side == 0 { x } else { y };
                    if mine == 0 {
                        plus += c[x][y];
                    } else {
                        minus += c[x][y];
                    }
                }
            }
        }
        let n = plus + minus;
        (n > 0).then(|| (plus as f64 - minus as f64) / n as f64)
    }

    pub fn merge(&mut self, other: &CorrelationAccumulator) {
        for a in 0..3 {
            for b in 0..3 {
                for x in 0..2 {
                    for y in 0..2 {
                        self.counts[a][b][x][y] += other.counts[a][b][x][y];
                    }
                }
            }
        }
        self.total += other.total;
    }
}

pub type Matrix4 = [[Complex64; 4]; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub entries: Matrix4,
}

fn pauli2(i: usize) -> [[Complex64; 2]; 2] {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let im = Complex64::new(0.0, 1.0);
    match i {
        0 => [[one, z], [z, one]],
        1 => [[z, one], [one, z]],
        2 => [[z, -im], [im, z]],
        _ => [[one, z], [z, -one]],
    }
}

/// σ_i ⊗ σ_j with indices 0=I, 1=X, 2=Y, 3=Z.
pub fn pauli_product(i: usize, j: usize) -> Matrix4 {
    let (a, b) = (pauli2(i), pauli2(j));
    let mut m = [[Complex64::new(0.0, 0.0); 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            m[r][c] = a[r / 2][c / 2] * b[r % 2][c % 2];
        }
    }
    m
}

impl DensityMatrix {
    /// ρ = ¼ Σ m[i][j] σ_i ⊗ σ_j, indices 0=I, 1=X, 2=Y, 3=Z.
    pub fn from_moments(m: &[[f64; 4]; 4]) -> Self {
        let mut rho = [[Complex64::new(0.0, 0.0); 4]; 4];
        for (i, row) in m.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let p = pauli_product(i, j);
                for r in 0..4 {
                    for c in 0..4 {
                        rho[r][c] += p[r][c] * (w / 4.0);
                    }
                }
            }
        }
        DensityMatrix { entries: rho }
    }

    pub fn trace(&self) -> Complex64 {
        (0..4).map(|i| self.entries[i][i]).sum()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (0..4)
            .all(|r| (0..4).all(|c| (self.entries[r][c] - self.entries[c][r].conj()).norm() <= tol))
    }

    /// Tr[ρ (σ_i ⊗ σ_j)].
    pub fn expectation(&self, i: usize, j: usize) -> f64 {
        let p = pauli_product(i, j);
        let mut t = Complex64::new(0.0, 0.0);
        for r in 0..4 {
            for c in 0..4 {
                t += self.entries[r][c] * p[c][r];
            }
        }
        t.re
    }

    pub fn maximally_mixed() -> Self {
        let mut m = [[0.0; 4]; 4];
        m[0][0] = 1.0;
        Self::from_moments(&m)
    }

    /// |Φ+⟩⟨Φ+| with a Pauli `label` applied to one half.
    pub fn bell(label: PauliLabel) -> Self {
        let mut m = [[0.0; 4]; 4];
        m[0][0] = 1.0;
        // XX, YY, ZZ stabilizer signs of Φ+ then flipped by the label
        for (k, basis) in [(1, Basis::X), (2, Basis::Y), (3, Basis::Z)] {
            let mut s = basis.phi_plus_sign() as f64;
            if label.flips(basis) {
                s = -s;
            }
            m[k][k] = s;
        }
        Self::from_moments(&m)
    }
}

/// Linear-inversion estimate from the accumulated correlators.
pub fn reconstruct(acc: &CorrelationAccumulator) -> Result<DensityMatrix, TomographyError> {
    let mut m = [[0.0; 4]; 4];
    m[0][0] = 1.0;
    for a in Basis::ALL {
        for b in Basis::ALL {
            m[a.index() + 1][b.index() + 1] = acc
                .correlator(a, b)
                .ok_or(TomographyError::EmptyCell(a, b))?;
        }
    }
    for basis in Basis::ALL {
        // non-empty cells guarantee non-empty marginals
        m[basis.index() + 1][0] = acc.marginal(0, basis).unwrap_or(0.0);
        m[0][basis.index() + 1] = acc.marginal(1, basis).unwrap_or(0.0);
    }
    Ok(DensityMatrix::from_moments(&m))
}

/// Re Tr[ρ |Φ+⟩⟨Φ+|].
pub fn fidelity(rho: &DensityMatrix) -> f64 {
    let e = &rho.entries;
    (e[0][0] + e[0][3] + e[3][0] + e[3][3]).re / 2.0
}

/// (1 + ⟨XX⟩ − ⟨YY⟩ + ⟨ZZ⟩) / 4.
pub fn fidelity_from_correlators(xx: f64, yy: f64, zz: f64) -> f64 {
    (1.0 + xx - yy + zz) / 4.0
}

/// Mean of |F_r − F_a| over trials.
pub fn mean_abs_fidelity_gap(pairs: &[(f64, f64)]) -> f64 {
    assert!(!pairs.is_empty(), "need at least one trial");
    pairs.iter().map(|(r, a)| (r - a).abs()).sum::<f64>() / pairs.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (N−1); 0 for a single value.
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            sigma: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sigma = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        mean,
        sigma,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_core::RngStream;
    use proptest::prelude::*;

    fn exact_acc(label: PauliLabel, per_cell: u64, rng: &mut RngStream) -> CorrelationAccumulator {
        let mut acc = CorrelationAccumulator::new();
        let s = ErrorState::from_pauli(label);
        for a in Basis::ALL {
            for b in Basis::ALL {
                for _ in 0..per_cell {
                    let (oa, ob) = joint_outcome((s, ErrorState::Clean), a, b, rng);
                    acc.record((a, oa), (b, ob));
                }
            }
        }
        acc
    }

    #[test]
    fn clean_pair_correlations() {
        let mut rng = RngStream::new(1, "t");
        let c = (ErrorState::Clean, ErrorState::Clean);
        for _ in 0..100 {
            let (a, b) = joint_outcome(c, Basis::Z, Basis::Z, &mut rng);
            assert_eq!(a, b);
            let (a, b) = joint_outcome(c, Basis::Y, Basis::Y, &mut rng);
            assert_ne!(a, b);
            let (a, b) = joint_outcome(
                (ErrorState::XError, ErrorState::Clean),
                Basis::Z,
                Basis::Z,
                &mut rng,
            );
            assert_ne!(a, b);
        }
    }

    #[test]
    fn excited_is_z_eigenstate() {
        let mut rng = RngStream::new(1, "t");
        for _ in 0..20 {
            assert_eq!(
                first_outcome(ErrorState::Excited, Basis::Z, &mut rng),
                Outcome::Minus
            );
            assert_eq!(
                first_outcome(ErrorState::Relaxed, Basis::Z, &mut rng),
                Outcome::Plus
            );
        }
    }

    #[test]
    fn exact_moments_give_bell_state() {
        let mut m = [[0.0; 4]; 4];
        m[0][0] = 1.0;
        m[1][1] = 1.0;
        m[2][2] = -1.0;
        m[3][3] = 1.0;
        let rho = DensityMatrix::from_moments(&m);
        let half = Complex64::new(0.5, 0.0);
        for (r, c) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert!((rho.entries[r][c] - half).norm() < 1e-12);
        }
        assert!((fidelity(&rho) - 1.0).abs() < 1e-12);
        assert!((fidelity(&DensityMatrix::maximally_mixed()) - 0.25).abs() < 1e-12);
        assert!(fidelity(&DensityMatrix::bell(PauliLabel::X)).abs() < 1e-12);
    }

    #[test]
    fn noiseless_pair_reconstructs_exactly() {
        let mut rng = RngStream::new(2, "t");
        for label in [PauliLabel::I, PauliLabel::X, PauliLabel::Z, PauliLabel::Y] {
            let acc = exact_acc(label, 200, &mut rng);
            let rho = reconstruct(&acc).unwrap();
            let want = if label == PauliLabel::I { 1.0 } else { 0.0 };
            assert!((fidelity(&rho) - want).abs() < 0.2, "{label}");
            // diagonal moments are exact regardless of sampling
            let bell = DensityMatrix::bell(label);
            for k in 1..4 {
                assert!((rho.expectation(k, k) - bell.expectation(k, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_cell_is_reported() {
        let mut acc = CorrelationAccumulator::new();
        acc.record((Basis::X, Outcome::Plus), (Basis::X, Outcome::Plus));
        assert_eq!(
            reconstruct(&acc),
            Err(TomographyError::EmptyCell(Basis::X, Basis::Y))
        );
    }

    #[test]
    fn bell_diagonal_mixture_recovered() {
        let weights = [0.7, 0.1, 0.1, 0.1];
        let mut rng = RngStream::new(4, "mix");
        let mut acc = CorrelationAccumulator::new();
        for _ in 0..1_000_000 {
            let label =
                PauliLabel::from_index(crate::error_model::sample_index(&weights, &mut rng));
            let ba = Basis::random(&mut rng);
            let bb = Basis::random(&mut rng);
            let (oa, ob) = joint_outcome(
                (ErrorState::from_pauli(label), ErrorState::Clean),
                ba,
                bb,
                &mut rng,
            );
            acc.record((ba, oa), (bb, ob));
        }
        let rho = reconstruct(&acc).unwrap();
        for (k, &w) in weights.iter().enumerate() {
            let b = DensityMatrix::bell(PauliLabel::from_index(k));
            // ⟨B_k|ρ|B_k⟩ = Tr[ρ B_k]
            let mut ov = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    ov += (rho.entries[i][j] * b.entries[j][i]).re;
                }
            }
            assert!((ov - w).abs() < 0.005, "{k}: {ov}");
        }
    }

    #[test]
    fn gap_and_summary_arithmetic() {
        assert!((mean_abs_fidelity_gap(&[(0.7, 0.68), (0.8, 0.82)]) - 0.02).abs() < 1e-12);
        assert_eq!(mean_abs_fidelity_gap(&[(0.5, 0.5)]), 0.0);
        let s = summarize(&[0.8, 0.9]);
        assert!((s.mean - 0.85).abs() < 1e-12);
        assert!((s.sigma - 0.070_710_678).abs() < 1e-8);
        assert_eq!(summarize(&[0.3; 5]).sigma, 0.0);
    }

    #[test]
    fn actual_fidelity_values() {
        assert_eq!(actual_fidelity(ErrorState::Clean, ErrorState::Clean), 1.0);
        assert_eq!(actual_fidelity(ErrorState::XError, ErrorState::XError), 1.0);
        assert_eq!(actual_fidelity(ErrorState::ZError, ErrorState::Clean), 0.0);
        assert_eq!(actual_fidelity(ErrorState::Mixed, ErrorState::Mixed), 0.25);
    }

    proptest! {
        #[test]
        fn reconstruction_is_hermitian_unit_trace(cells in proptest::collection::vec(0u64..50, 36)) {
            let mut acc = CorrelationAccumulator::new();
            let mut k = 0;
            for a in 0..3 { for b in 0..3 { for x in 0..2 { for y in 0..2 {
                acc.counts[a][b][x][y] = cells[k] + if x == 0 && y == 0 { 1 } else { 0 };
                k += 1;
            }}}}
            acc.total = acc.counts.iter().flatten().flatten().flatten().sum();
            let rho = reconstruct(&acc).unwrap();
            prop_assert!(rho.is_hermitian(1e-10));
            prop_assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-10);
            for a in Basis::ALL {
                for b in Basis::ALL {
                    let want = acc.correlator(a, b).unwrap();
                    prop_assert!((rho.expectation(a.index() + 1, b.index() + 1) - want).abs() < 1e-12);
                }
            }
            let f2 = fidelity_from_correlators(
                acc.correlator(Basis::X, Basis::X).unwrap(),
                acc.correlator(Basis::Y, Basis::Y).unwrap(),
                acc.correlator(Basis::Z, Basis::Z).unwrap(),
            );
            prop_assert!((fidelity(&rho) - f2).abs() < 1e-12);
        }

        #[test]
        fn exact_moments_reproduce_bell_weights(w in proptest::array::uniform4(0.0f64..1.0)) {
            let s: f64 = w.iter().sum::<f64>() + 1e-9;
            let w = w.map(|x| x / s);
            let mut m = [[0.0; 4]; 4];
            m[0][0] = w.iter().sum();
            for (k, &wk) in w.iter().enumerate() {
                let b = DensityMatrix::bell(PauliLabel::from_index(k));
                for i in 1..4 { m[i][i] += wk * b.expectation(i, i); }
            }
            let rho = DensityMatrix::from_moments(&m);
            prop_assert!((fidelity(&rho) - w[0]).abs() < 1e-12);
        }
    }
}
