//! Stochastic imperfection models.
//!
//! Memory idling follows a seven-state Markov chain over
//! [`ErrorState`]; everything else (fiber, gates, readout, dark counts) is a
//! static-probability Pauli draw.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::purification::PauliLabel;
use crate::sim_core::SimTime;

/// Per-qubit error label. Column/row order of the transition matrix.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorState {
    Clean,
    XError,
    ZError,
    YError,
    Excited,
    Relaxed,
    Mixed,
}

impl ErrorState {
    pub const ALL: [ErrorState; 7] = [
        ErrorState::Clean,
        ErrorState::XError,
        ErrorState::ZError,
        ErrorState::YError,
        ErrorState::Excited,
        ErrorState::Relaxed,
        ErrorState::Mixed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    /// Excited, Relaxed and Mixed: the qubit is no longer entangled with its partner.
    pub fn is_lifecycle(self) -> bool {
        matches!(
            self,
            ErrorState::Excited | ErrorState::Relaxed | ErrorState::Mixed
        )
    }

    pub fn pauli(self) -> Option<PauliLabel> {
        match self {
            ErrorState::Clean => Some(PauliLabel::I),
            ErrorState::XError => Some(PauliLabel::X),
            ErrorState::ZError => Some(PauliLabel::Z),
            ErrorState::YError => Some(PauliLabel::Y),
            _ => None,
        }
    }

    pub fn from_pauli(p: PauliLabel) -> Self {
        match (p.x, p.z) {
            (false, false) => ErrorState::Clean,
            (true, false) => ErrorState::XError,
            (false, true) => ErrorState::ZError,
            (true, true) => ErrorState::YError,
        }
    }

    /// Multiply in a Pauli (modulo phase). Lifecycle states pass through.
    pub fn compose(self, p: PauliLabel) -> Self {
        match self.pauli() {
            Some(own) => Self::from_pauli(own * p),
            None => self,
        }
    }
}

/// Continuous rates behind the memory transition matrix.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryErrorRates {
    /// Combined X+Y+Z rate per second, split equally.
    pub pauli_rate_total: f64,
    /// T1 in seconds; `f64::INFINITY` disables excitation/relaxation.
    pub lifetime_t1: f64,
    /// Excitation : relaxation probability ratio.
    pub excite_to_relax_ratio: f64,
}

impl Default for MemoryErrorRates {
    fn default() -> Self {
        Self {
            pauli_rate_total: 1.0 / 3.0,
            lifetime_t1: 0.05,
            excite_to_relax_ratio: 100.0,
        }
    }
}

impl MemoryErrorRates {
    pub fn zero() -> Self {
        Self {
            pauli_rate_total: 0.0,
            lifetime_t1: f64::INFINITY,
            excite_to_relax_ratio: 100.0,
        }
    }

    /// `(P_X, P_Y, P_Z, P_E, P_R)` for one step of length `tau`.
    pub fn step_probabilities(&self, tau: SimTime) -> (f64, f64, f64, f64, f64) {
        let dt = tau.as_secs_f64();
        let each = self.pauli_rate_total / 3.0 * dt;
        let decay = if self.lifetime_t1.is_finite() && self.lifetime_t1 > 0.0 {
            dt / self.lifetime_t1
        } else {
            0.0
        };
        let r = self.excite_to_relax_ratio;
        let p_e = decay * r / (r + 1.0);
        let p_r = decay / (r + 1.0);
        (each, each, each, p_e, p_r)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ErrorModelError {
    #[error("transition matrix row {row} off-diagonal sum {sum} exceeds 1; step {tau} too large")]
    StepTooLarge { row: usize, sum: f64, tau: SimTime },
    #[error("negative or non-finite rate: {0}")]
    InvalidRate(&'static str),
}

pub type Matrix7 = [[f64; 7]; 7];

fn mat_mul(a: &Matrix7, b: &Matrix7) -> Matrix7 {
    let mut out = [[0.0; 7]; 7];
    for i in 0..7 {
        for k in 0..7 {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..7 {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn vec_mul(v: &[f64; 7], m: &Matrix7) -> [f64; 7] {
    let mut out = [0.0; 7];
    for k in 0..7 {
        let vk = v[k];
        if vk == 0.0 {
            continue;
        }
        for j in 0..7 {
            out[j] += vk * m[k][j];
        }
    }
    out
}

fn identity() -> Matrix7 {
    let mut m = [[0.0; 7]; 7];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// One-step stochastic matrix for memory idling, plus cached `2^k` powers.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    entries: Matrix7,
    tau: SimTime,
    /// `squarings[k]` = entries^(2^k).
    squarings: Vec<Matrix7>,
}

impl TransitionMatrix {
    pub fn entries(&self) -> &Matrix7 {
        &self.entries
    }

    pub fn tau(&self) -> SimTime {
        self.tau
    }

    /// `entries^n` by repeated squaring.
    pub fn power(&self, n: u64) -> Matrix7 {
        let mut acc = identity();
        let mut k = 0;
        let mut rest = n;
        while rest != 0 {
            if rest & 1 == 1 {
                acc = mat_mul(&acc, &self.squarings[k]);
            }
            rest >>= 1;
            k += 1;
        }
        acc
    }

    /// Row `from` of `entries^n`: the label distribution after `n` steps.
    pub fn distribution_after(&self, from: ErrorState, n: u64) -> [f64; 7] {
        let mut v = [0.0; 7];
        v[from.index()] = 1.0;
        let mut k = 0;
        let mut rest = n;
        while rest != 0 {
            if rest & 1 == 1 {
                v = vec_mul(&v, &self.squarings[k]);
            }
            rest >>= 1;
            k += 1;
        }
        v
    }

    /// Number of whole steps in `dt`, rounded to nearest.
    pub fn steps_for(&self, dt: SimTime) -> u64 {
        let tau = self.tau.as_ns().max(1);
        (dt.as_ns() + tau / 2) / tau
    }
}

/// Build the memory matrix with the Pauli stencil in the upper-left block,
/// excitation/relaxation columns, and zero return into the Pauli block from
/// lifecycle rows.
pub fn build_transition_matrix(
    rates: MemoryErrorRates,
    tau: SimTime,
) -> Result<TransitionMatrix, ErrorModelError> {
    if !(rates.pauli_rate_total >= 0.0 && rates.pauli_rate_total.is_finite()) {
        return Err(ErrorModelError::InvalidRate("pauli_rate_total"));
    }
    if !(rates.lifetime_t1 > 0.0) {
        return Err(ErrorModelError::InvalidRate("lifetime_t1"));
    }
    if !(rates.excite_to_relax_ratio >= 0.0 && rates.excite_to_relax_ratio.is_finite()) {
        return Err(ErrorModelError::InvalidRate("excite_to_relax_ratio"));
    }
    let (px, py, pz, pe, pr) = rates.step_probabilities(tau);
    let mut m: Matrix7 = [
        [0.0, px, pz, py, pe, pr, 0.0],
        [px, 0.0, py, pz, pe, pr, 0.0],
        [pz, py, 0.0, px, pe, pr, 0.0],
        [py, pz, px, 0.0, pe, pr, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, pr, 0.0],
        [0.0, 0.0, 0.0, 0.0, pe, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, pe, pr, 0.0],
    ];
    for (i, row) in m.iter_mut().enumerate() {
        let off: f64 = row.iter().sum();
        if off > 1.0 {
            return Err(ErrorModelError::StepTooLarge {
                row: i,
                sum: off,
                tau,
            });
        }
        row[i] = 1.0 - off;
    }
    let mut squarings = Vec::with_capacity(64);
    squarings.push(m);
    for k in 1..64 {
        let prev = &squarings[k - 1];
        let next = mat_mul(prev, prev);
        squarings.push(next);
    }
    Ok(TransitionMatrix {
        entries: m,
        tau,
        squarings,
    })
}

/// Sample an index from a discrete distribution with one uniform draw.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_nonzero = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

/// Idle a qubit for `dt` and sample its new label.
///
/// Partner coupling (a qubit entering Excited/Relaxed mixes its partner) is
/// applied by the caller, which owns both halves of the pair.
pub fn evolve_memory<R: Rng + ?Sized>(
    state: ErrorState,
    dt: SimTime,
    matrix: &TransitionMatrix,
    rng: &mut R,
) -> ErrorState {
    let n = matrix.steps_for(dt);
    if n == 0 {
        return state;
    }
    let dist = matrix.distribution_after(state, n);
    if dist[state.index()] >= 1.0 {
        return state;
    }
    ErrorState::from_index(sample_index(&dist, rng))
}

/// Table I hardware parameters plus the model knobs the simulator needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareParams {
    pub fiber_refractive_index: f64,
    /// X+Y+Z per km, split equally.
    pub fiber_pauli_rate_per_km: f64,
    pub fiber_loss_rate_per_km: f64,
    pub memory: MemoryErrorRates,
    pub emission_zpl_prob: f64,
    pub collection_eff: f64,
    pub detector_eff: f64,
    pub darkcount_rate_per_sec: f64,
    pub detector_recovery_ns: u64,
    pub gate1q_error: f64,
    pub gate2q_error: f64,
    pub meas_error: f64,
    pub qubits_per_qnic: usize,
    /// Base step of the memory Markov chain.
    pub markov_step_ns: u64,
    /// Apply `gate1q_error` to the basis rotation before X/Y readout.
    pub gate1q_on_basis_change: bool,
}

impl Default for HardwareParams {
    fn default() -> Self {
        Self {
            fiber_refractive_index: 1.44,
            fiber_pauli_rate_per_km: 0.03,
            fiber_loss_rate_per_km: 0.04501,
            memory: MemoryErrorRates::default(),
            emission_zpl_prob: 0.46,
            collection_eff: 0.49,
            detector_eff: 0.8,
            darkcount_rate_per_sec: 10.0,
            detector_recovery_ns: 1,
            gate1q_error: 0.0005,
            gate2q_error: 0.02,
            meas_error: 0.05,
            qubits_per_qnic: 100,
            markov_step_ns: 1_000,
            gate1q_on_basis_change: false,
        }
    }
}

impl HardwareParams {
    /// Memory-to-fiber emission probability.
    pub fn emission_prob(&self) -> f64 {
        self.emission_zpl_prob * self.collection_eff
    }

    pub fn markov_step(&self) -> SimTime {
        SimTime::from_ns(self.markov_step_ns)
    }

    /// One-way light propagation delay over `km` of fiber (c = 3e8 m/s).
    pub fn fiber_latency(&self, km: f64) -> SimTime {
        SimTime::from_secs_f64(km * 1_000.0 * self.fiber_refractive_index / SPEED_OF_LIGHT)
    }

    pub fn transition_matrix(&self) -> Result<TransitionMatrix, ErrorModelError> {
        build_transition_matrix(self.memory, self.markov_step())
    }
}

/// Vacuum light speed in m/s, rounded as in the usual link-budget arithmetic.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Fiber noise on a flying qubit: per whole km, X, Y and Z each fire
/// independently with `rate/3`; a trailing fractional km scales those
/// probabilities linearly.
pub fn apply_channel_error<R: Rng + ?Sized>(
    state: ErrorState,
    length_km: f64,
    params: &HardwareParams,
    rng: &mut R,
) -> ErrorState {
    if state.is_lifecycle() || !(length_km > 0.0) {
        return state;
    }
    let each = params.fiber_pauli_rate_per_km / 3.0;
    let whole = length_km.floor() as u64;
    let frac = length_km - whole as f64;
    let mut out = state;
    let mut segment = |p: f64, out: &mut ErrorState| {
        for pauli in [PauliLabel::X, PauliLabel::Y, PauliLabel::Z] {
            if rng.random::<f64>() < p {
                *out = out.compose(pauli);
            }
        }
    };
    for _ in 0..whole {
        segment(each, &mut out);
    }
    if frac > 0.0 {
        segment(each * frac, &mut out);
    }
    out
}

/// All 15 non-identity two-qubit Paulis, index `a + 4b` with `a, b` in I/X/Z/Y order.
pub fn two_qubit_pauli(index: usize) -> (PauliLabel, PauliLabel) {
    (
        PauliLabel::from_index(index % 4),
        PauliLabel::from_index(index / 4),
    )
}

pub fn apply_two_qubit_pauli(
    a: ErrorState,
    b: ErrorState,
    pauli: (PauliLabel, PauliLabel),
) -> (ErrorState, ErrorState) {
    (a.compose(pauli.0), b.compose(pauli.1))
}

/// With probability `rate`, a uniformly chosen non-identity two-qubit Pauli.
pub fn apply_two_qubit_gate_error<R: Rng + ?Sized>(
    a: ErrorState,
    b: ErrorState,
    rate: f64,
    rng: &mut R,
) -> (ErrorState, ErrorState) {
    if rate <= 0.0 || rng.random::<f64>() >= rate {
        return (a, b);
    }
    let idx = rng.random_range(1..16);
    apply_two_qubit_pauli(a, b, two_qubit_pauli(idx))
}

/// With probability `rate`, a uniformly chosen X, Y or Z.
pub fn apply_single_qubit_error<R: Rng + ?Sized>(
    state: ErrorState,
    rate: f64,
    rng: &mut R,
) -> ErrorState {
    if rate <= 0.0 || rng.random::<f64>() >= rate {
        return state;
    }
    state.compose(PauliLabel::from_index(rng.random_range(1..4)))
}

/// Flip a reported bit with probability `rate`.
pub fn apply_measurement_error<R: Rng + ?Sized>(outcome: bool, rate: f64, rng: &mut R) -> bool {
    if rate <= 0.0 {
        return outcome;
    }
    if rng.random::<f64>() < rate {
        !outcome
    } else {
        outcome
    }
}

/// `1 - exp(-rate * window)`.
pub fn dark_count_probability(window: SimTime, rate_per_sec: f64) -> f64 {
    if window == SimTime::ZERO || rate_per_sec <= 0.0 {
        return 0.0;
    }
    -(-rate_per_sec * window.as_secs_f64()).exp_m1()
}

pub fn sample_dark_count<R: Rng + ?Sized>(window: SimTime, rate_per_sec: f64, rng: &mut R) -> bool {
    let p = dark_count_probability(window, rate_per_sec);
    p > 0.0 && rng.random::<f64>() < p
}
