//! Purification circuits against the statevector oracle.

mod common;

use common::statevector::{all_specs, assignments, compare_all, statevector_outcome};
use qlink_core::purification::{oracle_distribution, round_spec, CircuitNoise, PauliLabel, Scheme};

#[test]
fn noiseless_run_circuit_matches_statevector_for_every_pauli_input() {
    let (cases, mismatches) = compare_all();
    assert_eq!(cases, 2 * (16 + 64 + 64 + 1024));
    assert!(
        mismatches.is_empty(),
        "{} mismatches:\n{}",
        mismatches.len(),
        mismatches.join("\n")
    );
}

#[test]
fn distribution_oracle_matches_statevector_on_mixed_inputs() {
    let inputs = [
        [0.7, 0.1, 0.15, 0.05],
        [0.25; 4],
        [0.55, 0.2, 0.05, 0.2],
        [0.9, 0.0, 0.1, 0.0],
        [0.4, 0.3, 0.2, 0.1],
    ];
    for spec in all_specs() {
        let probs: Vec<[f64; 4]> = inputs[..spec.arity].to_vec();
        let o = oracle_distribution(&spec, &probs, CircuitNoise::NOISELESS);
        let mut ok = 0.0;
        let mut kept = [0.0; 4];
        for labels in assignments(spec.arity) {
            let w: f64 = labels
                .iter()
                .zip(&probs)
                .map(|(p, v)| v[p.index()])
                .product();
            let (s, k) = statevector_outcome(&spec, &labels);
            if s {
                ok += w;
                kept[k.index()] += w;
            }
        }
        assert!((o.success_prob - ok).abs() < 1e-12, "{}", spec.describe());
        for i in 0..4 {
            assert!(
                (o.kept_given_success[i] - kept[i] / ok).abs() < 1e-12,
                "{} label {i}",
                spec.describe()
            );
        }
    }
}

#[test]
fn double_selection_stops_z_back_propagation() {
    // Consumed pair carries Z; the verifier catches it before it reaches the kept pair.
    let spec = round_spec(Scheme::DsSp, 0);
    let (ok, _) = statevector_outcome(&spec, &[PauliLabel::I, PauliLabel::Z, PauliLabel::I]);
    assert!(!ok);
    let single = round_spec(Scheme::SsSp, 0);
    assert_eq!(
        statevector_outcome(&single, &[PauliLabel::I, PauliLabel::Z]),
        (true, PauliLabel::Z)
    );
}
