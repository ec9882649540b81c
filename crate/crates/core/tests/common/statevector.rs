//! Brute-force statevector simulation of the purification circuits.
//!
//! Pair `i` lives on qubits `2i` (node A) and `2i + 1` (node B). Every input
//! pair starts in Phi+ with its Pauli label applied to the A half; CNOTs act
//! bilaterally. Noiseless bilateral CNOTs map Bell products to Bell products,
//! so every parity observable has expectation exactly +1 or -1.

use qlink_core::error_model::ErrorState;
use qlink_core::purification::{
    run_circuit, CircuitNoise, CircuitOp, CircuitSpec, ErrorTarget, PauliLabel, Scheme,
};
use qlink_core::sim_core::RngStream;
use qlink_core::tomography::Basis;

struct State {
    n: usize,
    amp: Vec<f64>,
}

impl State {
    fn bell_pairs(pairs: usize) -> Self {
        let n = 2 * pairs;
        let mut amp = vec![0.0; 1 << n];
        // Phi+ on each (2i, 2i+1): |00> + |11>
        for idx in 0..1usize << pairs {
            let mut basis = 0usize;
            for i in 0..pairs {
                if idx >> i & 1 == 1 {
                    basis |= 0b11 << (2 * i);
                }
            }
            amp[basis] = 1.0;
        }
        let norm = (amp.iter().map(|a| a * a).sum::<f64>()).sqrt();
        amp.iter_mut().for_each(|a| *a /= norm);
        State { n, amp }
    }

    fn x(&mut self, q: usize) {
        let mut out = vec![0.0; self.amp.len()];
        for (i, a) in self.amp.iter().enumerate() {
            out[i ^ (1 << q)] = *a;
        }
        self.amp = out;
    }

    fn z(&mut self, q: usize) {
        for (i, a) in self.amp.iter_mut().enumerate() {
            if i >> q & 1 == 1 {
                *a = -*a;
            }
        }
    }

    /// Y up to a global phase.
    fn pauli(&mut self, q: usize, p: PauliLabel) {
        if p.z {
            self.z(q);
        }
        if p.x {
            self.x(q);
        }
    }

    fn cnot(&mut self, c: usize, t: usize) {
        let mut out = vec![0.0; self.amp.len()];
        for (i, a) in self.amp.iter().enumerate() {
            let j = if i >> c & 1 == 1 { i ^ (1 << t) } else { i };
            out[j] = *a;
        }
        self.amp = out;
    }

    fn hadamard(&mut self, q: usize) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut out = vec![0.0; self.amp.len()];
        for (i, a) in self.amp.iter().enumerate() {
            let i0 = i & !(1 << q);
            let i1 = i | (1 << q);
            if i >> q & 1 == 0 {
                out[i0] += s * a;
                out[i1] += s * a;
            } else {
                out[i0] += s * a;
                out[i1] -= s * a;
            }
        }
        self.amp = out;
    }

    /// `<P_q1 P_q2>` for P = X or Z.
    fn correlator(&self, q1: usize, q2: usize, basis: Basis) -> f64 {
        let mut s = State {
            n: self.n,
            amp: self.amp.clone(),
        };
        match basis {
            Basis::Z => {}
            Basis::X => {
                s.hadamard(q1);
                s.hadamard(q2);
            }
            Basis::Y => unreachable!("circuits only read out in X or Z"),
        }
        s.amp
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let sign = if (i >> q1 & 1) ^ (i >> q2 & 1) == 1 {
                    -1.0
                } else {
                    1.0
                };
                sign * a * a
            })
            .sum()
    }
}

/// (success, kept joint label) from the statevector.
pub fn statevector_outcome(spec: &CircuitSpec, labels: &[PauliLabel]) -> (bool, PauliLabel) {
    let mut st = State::bell_pairs(spec.arity);
    for (i, &p) in labels.iter().enumerate() {
        st.pauli(2 * i, p);
    }
    let mut success = true;
    for op in spec.ops() {
        match op {
            CircuitOp::Cnot { control, target } => {
                st.cnot(2 * control, 2 * target);
                st.cnot(2 * control + 1, 2 * target + 1);
            }
            CircuitOp::Measure { pair, basis } => {
                let c = st.correlator(2 * pair, 2 * pair + 1, basis);
                assert!(
                    (c.abs() - 1.0).abs() < 1e-9,
                    "parity not deterministic: {c}"
                );
                success &= c > 0.0;
            }
        }
    }
    let zz = st.correlator(0, 1, Basis::Z);
    let xx = st.correlator(0, 1, Basis::X);
    assert!((zz.abs() - 1.0).abs() < 1e-9 && (xx.abs() - 1.0).abs() < 1e-9);
    (
        success,
        PauliLabel {
            x: zz < 0.0,
            z: xx < 0.0,
        },
    )
}

pub fn assignments(arity: usize) -> impl Iterator<Item = Vec<PauliLabel>> {
    (0..4usize.pow(arity as u32)).map(move |mut k| {
        (0..arity)
            .map(|_| {
                let p = PauliLabel::from_index(k % 4);
                k /= 4;
                p
            })
            .collect()
    })
}

pub fn all_specs() -> Vec<CircuitSpec> {
    let mut v = Vec::new();
    for s in Scheme::ALL {
        v.push(CircuitSpec::new(s, ErrorTarget::XFirst));
        v.push(CircuitSpec::new(s, ErrorTarget::ZFirst));
    }
    v
}

/// Noiseless `run_circuit` vs the statevector over every pure-Pauli input
/// of every circuit; returns (cases, mismatch descriptions).
pub fn compare_all() -> (usize, Vec<String>) {
    let mut rng = RngStream::new(1, "statevector");
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for spec in all_specs() {
        for labels in assignments(spec.arity) {
            let (sv_ok, sv_kept) = statevector_outcome(&spec, &labels);
            let inputs: Vec<(ErrorState, ErrorState)> = labels
                .iter()
                .map(|&p| (ErrorState::from_pauli(p), ErrorState::Clean))
                .collect();
            let r = run_circuit(&spec, &inputs, CircuitNoise::NOISELESS, &mut rng);
            let kept = r.kept.map(|(a, b)| a.pauli().unwrap() * b.pauli().unwrap());
            let expected = sv_ok.then_some(sv_kept);
            if r.success != sv_ok || kept != expected {
                mismatches.push(format!(
                    "{} {:?}: sim {:?} oracle {:?}",
                    spec.describe(),
                    labels,
                    kept,
                    expected
                ));
            }
            cases += 1;
        }
    }
    (cases, mismatches)
}
