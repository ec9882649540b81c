//! Pauli-frame semantics of the four purification circuits.
//!
//! Each circuit is a short schedule of bilateral CNOTs and readouts over
//! `arity` Bell pairs; pair 0 is the one kept. Both endpoints execute the
//! same schedule on their halves, exchange the readout bits, and keep the
//! pair only if every compared bit coincides.

use std::fmt;
use std::ops::Mul;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error_model::{apply_single_qubit_error, apply_two_qubit_gate_error, ErrorState};
use crate::tomography::{first_outcome, second_outcome, Basis, Outcome};

/// A Pauli modulo phase as `(x, z)` flags; `Y` has both.
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct PauliLabel {
    pub x: bool,
    pub z: bool,
}

impl PauliLabel {
    pub const I: PauliLabel = PauliLabel { x: false, z: false };
    pub const X: PauliLabel = PauliLabel { x: true, z: false };
    pub const Z: PauliLabel = PauliLabel { x: false, z: true };
    pub const Y: PauliLabel = PauliLabel { x: true, z: true };

    /// I, X, Z, Y -> 0, 1, 2, 3.
    pub fn index(self) -> usize {
        self.x as usize + 2 * self.z as usize
    }

    pub fn from_index(i: usize) -> Self {
        PauliLabel {
            x: i & 1 == 1,
            z: i & 2 == 2,
        }
    }

    /// Whether a readout in `basis` anticommutes with this Pauli (i.e. is flipped by it).
    pub fn flips(self, basis: Basis) -> bool {
        match basis {
            Basis::Z => self.x,
            Basis::X => self.z,
            Basis::Y => self.x ^ self.z,
        }
    }

    pub fn name(self) -> &'static str {
        match self.index() {
            0 => "I",
            1 => "X",
            2 => "Z",
            _ => "Y",
        }
    }
}

impl Mul for PauliLabel {
    type Output = PauliLabel;
    fn mul(self, rhs: PauliLabel) -> PauliLabel {
        PauliLabel {
            x: self.x ^ rhs.x,
            z: self.z ^ rhs.z,
        }
    }
}

impl fmt::Display for PauliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Conjugate a Pauli frame through CNOT: X spreads control -> target,
/// Z spreads target -> control.
pub fn propagate_cnot(control: PauliLabel, target: PauliLabel) -> (PauliLabel, PauliLabel) {
    (
        PauliLabel {
            x: control.x,
            z: control.z ^ target.z,
        },
        PauliLabel {
            x: target.x ^ control.x,
            z: target.z,
        },
    )
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    SsSp,
    SsDp,
    DsSp,
    DsDp,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::SsSp, Scheme::SsDp, Scheme::DsSp, Scheme::DsDp];

    pub fn arity(self) -> usize {
        match self {
            Scheme::SsSp => 2,
            Scheme::SsDp | Scheme::DsSp => 3,
            Scheme::DsDp => 5,
        }
    }

    pub fn double_selection(self) -> bool {
        matches!(self, Scheme::DsSp | Scheme::DsDp)
    }

    pub fn double_error(self) -> bool {
        matches!(self, Scheme::SsDp | Scheme::DsDp)
    }

    /// The same error coverage without the verification pairs.
    pub fn single_selection(self) -> Scheme {
        match self {
            Scheme::DsSp => Scheme::SsSp,
            Scheme::DsDp => Scheme::SsDp,
            s => s,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::SsSp => "Ss-Sp",
            Scheme::SsDp => "Ss-Dp",
            Scheme::DsSp => "Ds-Sp",
            Scheme::DsDp => "Ds-Dp",
        }
    }

    pub fn recurrent_label(self) -> &'static str {
        match self {
            Scheme::SsSp => "RSs-Sp",
            Scheme::SsDp => "RSs-Dp",
            Scheme::DsSp => "RDs-Sp",
            Scheme::DsDp => "RDs-Dp",
        }
    }

    /// Accepts `ss-sp`, `SsSp`, `RSs-Sp`, `rds_dp`, ...
    pub fn parse(s: &str) -> Option<Scheme> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let norm = norm.strip_prefix('r').unwrap_or(&norm);
        match norm {
            "sssp" => Some(Scheme::SsSp),
            "ssdp" => Some(Scheme::SsDp),
            "dssp" => Some(Scheme::DsSp),
            "dsdp" => Some(Scheme::DsDp),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which error the round targets first. For double-error schemes `XFirst`
/// is the XZ order and `ZFirst` the ZX order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorTarget {
    XFirst,
    ZFirst,
}

impl ErrorTarget {
    fn other(self) -> Self {
        match self {
            ErrorTarget::XFirst => ErrorTarget::ZFirst,
            ErrorTarget::ZFirst => ErrorTarget::XFirst,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CircuitOp {
    /// Bilateral CNOT between pairs of the group (indices into the inputs).
    Cnot { control: usize, target: usize },
    /// Read out both halves of a consumed pair.
    Measure { pair: usize, basis: Basis },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub scheme: Scheme,
    pub primary_target: ErrorTarget,
    pub arity: usize,
}

impl CircuitSpec {
    pub fn new(scheme: Scheme, primary_target: ErrorTarget) -> Self {
        Self {
            scheme,
            primary_target,
            arity: scheme.arity(),
        }
    }

    /// The CNOT/readout schedule. Kept pair is index 0.
    pub fn ops(&self) -> Vec<CircuitOp> {
        use CircuitOp::*;
        // X detection: kept controls the ancilla, ancilla read in Z.
        // Z detection: ancilla controls the kept pair, ancilla read in X.
        // Double selection adds a verifier that checks the ancilla for the
        // error which would otherwise flow back onto the kept pair.
        let stage = |target: ErrorTarget, anc: usize, verifier: Option<usize>| -> Vec<CircuitOp> {
            match (target, verifier) {
                (ErrorTarget::XFirst, None) => vec![
                    Cnot {
                        control: 0,
                        target: anc,
                    },
                    Measure {
                        pair: anc,
                        basis: Basis::Z,
                    },
                ],
                (ErrorTarget::ZFirst, None) => vec![
                    Cnot {
                        control: anc,
                        target: 0,
                    },
                    Measure {
                        pair: anc,
                        basis: Basis::X,
                    },
                ],
                (ErrorTarget::XFirst, Some(v)) => vec![
                    Cnot {
                        control: 0,
                        target: anc,
                    },
                    Cnot {
                        control: v,
                        target: anc,
                    },
                    Measure {
                        pair: anc,
                        basis: Basis::Z,
                    },
                    Measure {
                        pair: v,
                        basis: Basis::X,
                    },
                ],
                (ErrorTarget::ZFirst, Some(v)) => vec![
                    Cnot {
                        control: anc,
                        target: 0,
                    },
                    Cnot {
                        control: anc,
                        target: v,
                    },
                    Measure {
                        pair: anc,
                        basis: Basis::X,
                    },
                    Measure {
                        pair: v,
                        basis: Basis::Z,
                    },
                ],
            }
        };
        let first = self.primary_target;
        match self.scheme {
            Scheme::SsSp => stage(first, 1, None),
            Scheme::DsSp => stage(first, 1, Some(2)),
            Scheme::SsDp => {
                let mut ops = stage(first, 1, None);
                ops.extend(stage(first.other(), 2, None));
                ops
            }
            Scheme::DsDp => {
                let mut ops = stage(first, 1, Some(2));
                ops.extend(stage(first.other(), 3, Some(4)));
                ops
            }
        }
    }

    pub fn measured_pairs(&self) -> Vec<(usize, Basis)> {
        self.ops()
            .into_iter()
            .filter_map(|op| match op {
                CircuitOp::Measure { pair, basis } => Some((pair, basis)),
                _ => None,
            })
            .collect()
    }

    pub fn describe(&self) -> String {
        let order = match (self.scheme.double_error(), self.primary_target) {
            (false, ErrorTarget::XFirst) => "X",
            (false, ErrorTarget::ZFirst) => "Z",
            (true, ErrorTarget::XFirst) => "XZ",
            (true, ErrorTarget::ZFirst) => "ZX",
        };
        format!("{}({order})", self.scheme)
    }
}

/// Round `round_index` of a recurrence: targets alternate starting with X.
pub fn round_spec(scheme: Scheme, round_index: usize) -> CircuitSpec {
    let target = if round_index.is_multiple_of(2) {
        ErrorTarget::XFirst
    } else {
        ErrorTarget::ZFirst
    };
    CircuitSpec::new(scheme, target)
}

/// One endpoint's local CNOT on two qubit labels, including gate noise.
///
/// Pauli frames propagate exactly. A lifecycle (unentangled) control
/// scrambles the target's X frame, a lifecycle target scrambles the
/// control's Z frame.
pub fn local_cnot<R: Rng + ?Sized>(
    control: ErrorState,
    target: ErrorState,
    gate_error: f64,
    rng: &mut R,
) -> (ErrorState, ErrorState) {
    let (c, t) = match (control.pauli(), target.pauli()) {
        (Some(c), Some(t)) => {
            let (c, t) = propagate_cnot(c, t);
            (ErrorState::from_pauli(c), ErrorState::from_pauli(t))
        }
        (None, Some(_)) => {
            let t = if rng.random::<bool>() {
                target.compose(PauliLabel::X)
            } else {
                target
            };
            (control, t)
        }
        (Some(_), None) => {
            let c = if rng.random::<bool>() {
                control.compose(PauliLabel::Z)
            } else {
                control
            };
            (c, target)
        }
        (None, None) => (control, target),
    };
    apply_two_qubit_gate_error(c, t, gate_error, rng)
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CircuitNoise {
    pub gate2q: f64,
    /// Pre-readout Pauli error probability.
    pub meas: f64,
}

impl CircuitNoise {
    pub const NOISELESS: CircuitNoise = CircuitNoise {
        gate2q: 0.0,
        meas: 0.0,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurificationResult {
    pub success: bool,
    /// Final labels of the kept pair, if it survived.
    pub kept: Option<(ErrorState, ErrorState)>,
    pub parity_a: Vec<bool>,
    pub parity_b: Vec<bool>,
}

/// Run one endpoint's half of `spec` on its qubit labels in place.
/// Returns the labels of the read-out qubits as they stand at readout.
pub fn run_local_half<R: Rng + ?Sized>(
    spec: &CircuitSpec,
    labels: &mut [ErrorState],
    noise: CircuitNoise,
    rng: &mut R,
) -> Vec<(usize, Basis, ErrorState)> {
    assert_eq!(
        labels.len(),
        spec.arity,
        "wrong arity for {}",
        spec.describe()
    );
    let mut readouts = Vec::new();
    for op in spec.ops() {
        match op {
            CircuitOp::Cnot { control, target } => {
                let (c, t) = local_cnot(labels[control], labels[target], noise.gate2q, rng);
                labels[control] = c;
                labels[target] = t;
            }
            CircuitOp::Measure { pair, basis } => {
                let state = apply_single_qubit_error(labels[pair], noise.meas, rng);
                labels[pair] = state;
                readouts.push((pair, basis, state));
            }
        }
    }
    readouts
}

/// Both endpoints' halves of one purification, with joint readout statistics.
pub fn run_circuit<R: Rng + ?Sized>(
    spec: &CircuitSpec,
    inputs: &[(ErrorState, ErrorState)],
    noise: CircuitNoise,
    rng: &mut R,
) -> PurificationResult {
    assert_eq!(
        inputs.len(),
        spec.arity,
        "wrong arity for {}",
        spec.describe()
    );
    let mut side_a: Vec<ErrorState> = inputs.iter().map(|p| p.0).collect();
    let mut side_b: Vec<ErrorState> = inputs.iter().map(|p| p.1).collect();
    let read_a = run_local_half(spec, &mut side_a, noise, rng);
    let read_b = run_local_half(spec, &mut side_b, noise, rng);
    let mut parity_a = Vec::with_capacity(read_a.len());
    let mut parity_b = Vec::with_capacity(read_b.len());
    for ((pair, basis, sa), (_, _, sb)) in read_a.into_iter().zip(read_b) {
        let oa = first_outcome(sa, basis, rng);
        let ob = second_outcome((sa, basis, oa), sb, basis, rng);
        debug_assert!(pair > 0);
        parity_a.push(oa == Outcome::Minus);
        parity_b.push(ob == Outcome::Minus);
    }
    let success = parity_a == parity_b;
    PurificationResult {
        success,
        kept: success.then(|| (side_a[0], side_b[0])),
        parity_a,
        parity_b,
    }
}

/// Exact success probability and conditional kept-pair Pauli distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub success_prob: f64,
    /// Indexed I, X, Z, Y. All zero when `success_prob` is zero.
    pub kept_given_success: [f64; 4],
}

fn convolve_pair(
    dist: &mut [f64],
    arity: usize,
    a: usize,
    b: usize,
    kernel: &[(usize, usize, f64)],
) {
    let mut out = vec![0.0; dist.len()];
    let pa = 4usize.pow(a as u32);
    let pb = 4usize.pow(b as u32);
    for (idx, &w) in dist.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let la = (idx / pa) % 4;
        let lb = (idx / pb) % 4;
        for &(ea, eb, q) in kernel {
            let na = (PauliLabel::from_index(la) * PauliLabel::from_index(ea)).index();
            let nb = if a == b {
                na
            } else {
                (PauliLabel::from_index(lb) * PauliLabel::from_index(eb)).index()
            };
            let mut j = idx - la * pa + na * pa;
            if a != b {
                j = j - lb * pb + nb * pb;
            }
            out[j] += w * q;
        }
    }
    debug_assert_eq!(dist.len(), 4usize.pow(arity as u32));
    dist.copy_from_slice(&out);
}

/// Propagate independent per-pair Pauli distributions (I, X, Z, Y order)
/// through `spec` exactly. Joint labels are tracked, so each endpoint's
/// independent gate and readout noise enters as two convolutions.
pub fn oracle_distribution(
    spec: &CircuitSpec,
    inputs: &[[f64; 4]],
    noise: CircuitNoise,
) -> OracleOutcome {
    let arity = spec.arity;
    assert_eq!(inputs.len(), arity);
    let n = 4usize.pow(arity as u32);
    let mut dist = vec![0.0; n];
    for (idx, slot) in dist.iter_mut().enumerate() {
        let mut w = 1.0;
        let mut rest = idx;
        for input in inputs {
            w *= input[rest % 4];
            rest /= 4;
        }
        *slot = w;
    }
    let gate_kernel: Vec<(usize, usize, f64)> = (0..16)
        .map(|i| {
            let q = if i == 0 {
                1.0 - noise.gate2q
            } else {
                noise.gate2q / 15.0
            };
            (i % 4, i / 4, q)
        })
        .collect();
    let meas_kernel: Vec<(usize, usize, f64)> = (0..4)
        .map(|i| {
            let q = if i == 0 {
                1.0 - noise.meas
            } else {
                noise.meas / 3.0
            };
            (i, i, q)
        })
        .collect();
    let mut checks = Vec::new();
    for op in spec.ops() {
        match op {
            CircuitOp::Cnot { control, target } => {
                let pc = 4usize.pow(control as u32);
                let pt = 4usize.pow(target as u32);
                let mut out = vec![0.0; n];
                for (idx, &w) in dist.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let lc = (idx / pc) % 4;
                    let lt = (idx / pt) % 4;
                    let (nc, nt) =
                        propagate_cnot(PauliLabel::from_index(lc), PauliLabel::from_index(lt));
                    let j = idx - lc * pc - lt * pt + nc.index() * pc + nt.index() * pt;
                    out[j] += w;
                }
                dist = out;
                if noise.gate2q > 0.0 {
                    // one independent draw per endpoint
                    convolve_pair(&mut dist, arity, control, target, &gate_kernel);
                    convolve_pair(&mut dist, arity, control, target, &gate_kernel);
                }
            }
            CircuitOp::Measure { pair, basis } => {
                if noise.meas > 0.0 {
                    convolve_pair(&mut dist, arity, pair, pair, &meas_kernel);
                    convolve_pair(&mut dist, arity, pair, pair, &meas_kernel);
                }
                checks.push((pair, basis));
            }
        }
    }
    let mut success = 0.0;
    let mut kept = [0.0; 4];
    for (idx, &w) in dist.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let coincide = checks.iter().all(|&(pair, basis)| {
            let label = PauliLabel::from_index((idx / 4usize.pow(pair as u32)) % 4);
            !label.flips(basis)
        });
        if coincide {
            success += w;
            kept[idx % 4] += w;
        }
    }
    if success > 0.0 {
        for k in kept.iter_mut() {
            *k /= success;
        }
    }
    OracleOutcome {
        success_prob: success,
        kept_given_success: kept,
    }
}

/// One row per pure-Pauli input assignment for a noiseless circuit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub inputs: Vec<PauliLabel>,
    pub success: bool,
    pub kept: Option<PauliLabel>,
}

pub fn truth_table(spec: &CircuitSpec) -> Vec<TruthRow> {
    let n = 4usize.pow(spec.arity as u32);
    (0..n)
        .map(|idx| {
            let labels: Vec<PauliLabel> = (0..spec.arity)
                .map(|k| PauliLabel::from_index((idx / 4usize.pow(k as u32)) % 4))
                .collect();
            let inputs: Vec<[f64; 4]> = labels
                .iter()
                .map(|l| {
                    let mut v = [0.0; 4];
                    v[l.index()] = 1.0;
                    v
                })
                .collect();
            let out = oracle_distribution(spec, &inputs, CircuitNoise::NOISELESS);
            let success = out.success_prob > 0.5;
            let kept = success.then(|| {
                PauliLabel::from_index(
                    (0..4)
                        .max_by(|&a, &b| {
                            out.kept_given_success[a].total_cmp(&out.kept_given_success[b])
                        })
                        .unwrap(),
                )
            });
            TruthRow {
                inputs: labels,
                success,
                kept,
            }
        })
        .collect()
}

/// Truth table as CSV: `input_0,..,input_{k-1},success,kept`.
pub fn truth_table_csv(spec: &CircuitSpec) -> String {
    let mut out = String::new();
    for k in 0..spec.arity {
        out.push_str(&format!("pair{k},"));
    }
    out.push_str("success,kept\n");
    for row in truth_table(spec) {
        for l in &row.inputs {
            out.push_str(l.name());
            out.push(',');
        }
        out.push_str(if row.success { "1," } else { "0," });
        out.push_str(row.kept.map_or("-", |k| k.name()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_core::RngStream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn cnot_propagation_table() {
        use PauliLabel as P;
        assert_eq!(propagate_cnot(P::I, P::I), (P::I, P::I));
        assert_eq!(propagate_cnot(P::X, P::I), (P::X, P::X));
        assert_eq!(propagate_cnot(P::I, P::Z), (P::Z, P::Z));
        assert_eq!(propagate_cnot(P::Y, P::I), (P::Y, P::X));
        assert_eq!(propagate_cnot(P::I, P::Y), (P::Z, P::Y));
    }

    #[test]
    fn arities() {
        for (s, a) in [
            (Scheme::SsSp, 2),
            (Scheme::SsDp, 3),
            (Scheme::DsSp, 3),
            (Scheme::DsDp, 5),
        ] {
            assert_eq!(CircuitSpec::new(s, ErrorTarget::XFirst).arity, a);
            let max_index = CircuitSpec::new(s, ErrorTarget::ZFirst)
                .ops()
                .iter()
                .map(|op| match *op {
                    CircuitOp::Cnot { control, target } => control.max(target),
                    CircuitOp::Measure { pair, .. } => pair,
                })
                .max()
                .unwrap();
            assert_eq!(max_index + 1, a);
        }
    }

    #[test]
    fn round_alternation() {
        assert_eq!(
            round_spec(Scheme::SsSp, 0).primary_target,
            ErrorTarget::XFirst
        );
        assert_eq!(
            round_spec(Scheme::SsSp, 1).primary_target,
            ErrorTarget::ZFirst
        );
        assert_eq!(round_spec(Scheme::DsDp, 1).describe(), "Ds-Dp(ZX)");
        assert_eq!(round_spec(Scheme::DsDp, 2).describe(), "Ds-Dp(XZ)");
    }

    fn clean_pairs(n: usize) -> Vec<(ErrorState, ErrorState)> {
        vec![(ErrorState::Clean, ErrorState::Clean); n]
    }

    #[test]
    fn ss_sp_detects_kept_x() {
        let spec = CircuitSpec::new(Scheme::SsSp, ErrorTarget::XFirst);
        let mut rng = RngStream::new(3, "p");
        let mut inputs = clean_pairs(2);
        inputs[0].0 = ErrorState::XError;
        for _ in 0..50 {
            let r = run_circuit(&spec, &inputs, CircuitNoise::NOISELESS, &mut rng);
            assert!(!r.success);
            assert_ne!(r.parity_a, r.parity_b);
        }
    }

    #[test]
    fn ss_sp_back_propagates_consumed_z() {
        let spec = CircuitSpec::new(Scheme::SsSp, ErrorTarget::XFirst);
        let mut rng = RngStream::new(3, "p");
        let mut inputs = clean_pairs(2);
        inputs[1].1 = ErrorState::ZError;
        let r = run_circuit(&spec, &inputs, CircuitNoise::NOISELESS, &mut rng);
        assert!(r.success);
        let (a, b) = r.kept.unwrap();
        assert_eq!(a.pauli().unwrap() * b.pauli().unwrap(), PauliLabel::Z);
    }

    #[test]
    fn ds_sp_verifier_catches_consumed_z() {
        let spec = CircuitSpec::new(Scheme::DsSp, ErrorTarget::XFirst);
        let mut rng = RngStream::new(3, "p");
        let mut inputs = clean_pairs(3);
        inputs[1].0 = ErrorState::ZError;
        let r = run_circuit(&spec, &inputs, CircuitNoise::NOISELESS, &mut rng);
        assert!(!r.success);
        // kept pair's own half is untouched by the detected error
        assert_eq!(
            propagate_cnot(PauliLabel::I, PauliLabel::Z).0,
            PauliLabel::Z,
            "without the verifier the Z would land on the kept pair"
        );
    }

    #[test]
    fn noiseless_clean_always_coincides() {
        let mut rng = RngStream::new(9, "p");
        for scheme in Scheme::ALL {
            for target in [ErrorTarget::XFirst, ErrorTarget::ZFirst] {
                let spec = CircuitSpec::new(scheme, target);
                for _ in 0..20 {
                    let r = run_circuit(
                        &spec,
                        &clean_pairs(spec.arity),
                        CircuitNoise::NOISELESS,
                        &mut rng,
                    );
                    assert!(r.success);
                    assert_eq!(r.kept, Some((ErrorState::Clean, ErrorState::Clean)));
                }
            }
        }
    }

    #[test]
    fn oracle_clean_and_kept_x() {
        let spec = CircuitSpec::new(Scheme::SsSp, ErrorTarget::XFirst);
        let clean = [1.0, 0.0, 0.0, 0.0];
        let out = oracle_distribution(&spec, &[clean, clean], CircuitNoise::NOISELESS);
        assert_eq!(out.success_prob, 1.0);
        assert_eq!(out.kept_given_success, [1.0, 0.0, 0.0, 0.0]);

        let p = 0.2;
        let kept = [1.0 - p, p, 0.0, 0.0];
        let out = oracle_distribution(&spec, &[kept, clean], CircuitNoise::NOISELESS);
        assert!((out.success_prob - (1.0 - p)).abs() < 1e-15);
        assert_eq!(out.kept_given_success, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn lifecycle_inputs_give_random_parity() {
        let spec = CircuitSpec::new(Scheme::SsSp, ErrorTarget::XFirst);
        let mut rng = RngStream::new(5, "p");
        let inputs = vec![
            (ErrorState::Mixed, ErrorState::Mixed),
            (ErrorState::Clean, ErrorState::Clean),
        ];
        let n = 20_000;
        let ok = (0..n)
            .filter(|_| run_circuit(&spec, &inputs, CircuitNoise::NOISELESS, &mut rng).success)
            .count();
        let frac = ok as f64 / n as f64;
        assert!(
            (frac - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(),
            "{frac}"
        );
    }

    fn sym(p: f64) -> [f64; 4] {
        [1.0 - p, p / 3.0, p / 3.0, p / 3.0]
    }

    proptest! {
        #[test]
        fn cnot_is_an_involution(c in 0usize..4, t in 0usize..4) {
            let (c1, t1) = propagate_cnot(PauliLabel::from_index(c), PauliLabel::from_index(t));
            let (c2, t2) = propagate_cnot(c1, t1);
            prop_assert_eq!((c2.index(), t2.index()), (c, t));
        }

        #[test]
        fn ss_sp_post_selection_lowers_x(p in 0.0f64..0.05) {
            let spec = CircuitSpec::new(Scheme::SsSp, ErrorTarget::XFirst);
            let input = sym(p);
            let out = oracle_distribution(&spec, &[input, input], CircuitNoise::NOISELESS);
            let x_in = input[1] + input[3];
            let x_out = out.kept_given_success[1] + out.kept_given_success[3];
            prop_assert!(x_out <= x_in);
            if p > 1e-6 {
                prop_assert!(x_out < x_in);
            }
        }

        #[test]
        fn run_circuit_matches_distribution_oracle(scheme_i in 0usize..4, target_x in any::<bool>(), seed in any::<u64>()) {
            let scheme = Scheme::ALL[scheme_i];
            let target = if target_x { ErrorTarget::XFirst } else { ErrorTarget::ZFirst };
            let spec = CircuitSpec::new(scheme, target);
            let mut rng = RngStream::new(seed, "inputs");
            let labels: Vec<usize> = (0..spec.arity).map(|_| rng.random_range(0..4)).collect();
            let inputs: Vec<(ErrorState, ErrorState)> = labels
                .iter()
                .map(|&l| (ErrorState::from_index(l), ErrorState::Clean))
                .collect();
            let deltas: Vec<[f64; 4]> = labels.iter().map(|&l| { let mut v = [0.0; 4]; v[l] = 1.0; v }).collect();
            let oracle = oracle_distribution(&spec, &deltas, CircuitNoise::NOISELESS);
            let r = run_circuit(&spec, &inputs, CircuitNoise::NOISELESS, &mut rng);
            prop_assert_eq!(r.success, oracle.success_prob > 0.5);
            if let Some((a, b)) = r.kept {
                let joint = a.pauli().unwrap() * b.pauli().unwrap();
                prop_assert_eq!(oracle.kept_given_success[joint.index()], 1.0);
            }
        }
    }

    #[test]
    fn noisy_oracle_matches_sampling() {
        let spec = CircuitSpec::new(Scheme::DsSp, ErrorTarget::ZFirst);
        let noise = CircuitNoise {
            gate2q: 0.05,
            meas: 0.04,
        };
        let input = sym(0.15);
        let oracle = oracle_distribution(&spec, &[input; 3], noise);
        let mut rng = RngStream::new(11, "mc");
        let n = 200_000;
        let mut ok = 0usize;
        let mut clean = 0usize;
        for _ in 0..n {
            let inputs: Vec<(ErrorState, ErrorState)> = (0..3)
                .map(|_| {
                    let l = crate::error_model::sample_index(&input, &mut rng);
                    (ErrorState::from_index(l), ErrorState::Clean)
                })
                .collect();
            let r = run_circuit(&spec, &inputs, noise, &mut rng);
            if r.success {
                ok += 1;
                let (a, b) = r.kept.unwrap();
                if a.pauli().unwrap() * b.pauli().unwrap() == PauliLabel::I {
                    clean += 1;
                }
            }
        }
        let ps = ok as f64 / n as f64;
        let se = (oracle.success_prob * (1.0 - oracle.success_prob) / n as f64).sqrt();
        assert!(
            (ps - oracle.success_prob).abs() < 4.0 * se,
            "{ps} vs {}",
            oracle.success_prob
        );
        let fc = clean as f64 / ok as f64;
        let q = oracle.kept_given_success[0];
        let se = (q * (1.0 - q) / ok as f64).sqrt();
        assert!((fc - q).abs() < 4.0 * se, "{fc} vs {q}");
    }

    #[test]
    fn truth_table_has_every_assignment() {
        let spec = CircuitSpec::new(Scheme::DsDp, ErrorTarget::XFirst);
        let rows = truth_table(&spec);
        assert_eq!(rows.len(), 4usize.pow(5));
        assert!(rows[0].success);
        let csv = truth_table_csv(&CircuitSpec::new(Scheme::SsSp, ErrorTarget::XFirst));
        assert!(csv.starts_with("pair0,pair1,success,kept\nI,I,1,I\n"));
    }
}
