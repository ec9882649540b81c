use proptest::prelude::*;

use qlink_core::cli::config::{ExperimentConfig, Protocol};
use qlink_core::link_layer::LinkConfig;
use qlink_core::purification::Scheme;
use qlink_core::sim_core::{run_trial, run_trial_with, TrialOptions};

fn config(sr: bool, km: f64, n: u64, protocol: Protocol) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.link = if sr {
        LinkConfig::sender_receiver(km)
    } else {
        LinkConfig::meet_in_the_middle(km)
    };
    c.n_measurements = n;
    c.protocol = protocol;
    c.hardware.emission_zpl_prob = 1.0;
    c.hardware.collection_eff = 1.0;
    c
}

fn protocol_strategy() -> impl Strategy<Value = Protocol> {
    prop_oneof![
        Just(Protocol::Tomography),
        (0usize..4, 1usize..3).prop_map(|(s, r)| Protocol::Recurrent {
            scheme: Scheme::ALL[s],
            rounds: r,
            switch_at: None,
        }),
        (1usize..3).prop_map(|r| Protocol::Recurrent {
            scheme: Scheme::DsSp,
            rounds: r + 1,
            switch_at: Some(r),
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_heralded_pair_is_accounted_for(
        sr in any::<bool>(),
        km in 1.0f64..25.0,
        n in 1u64..300,
        protocol in protocol_strategy(),
        seed in any::<u64>(),
    ) {
        let c = config(sr, km, n, protocol);
        let r = run_trial(&c, seed).unwrap();
        prop_assert!(r.audits_balanced(), "{:?}", r.audits);
        prop_assert!(!r.timed_out);
        prop_assert_eq!(r.measurements, n);
        prop_assert_eq!(r.tallies.total(), n);
        let f = r.f_a.unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((r.throughput - n as f64 / r.elapsed.as_secs_f64()).abs() < 1e-6 * r.throughput);
    }

    #[test]
    fn same_seed_same_result(seed in any::<u64>(), sr in any::<bool>()) {
        let c = config(sr, 10.0, 120, Protocol::single_shot(Scheme::SsDp));
        let opts = TrialOptions { trace: true, decision_log: true };
        let a = run_trial_with(&c, seed, opts).unwrap();
        let b = run_trial_with(&c, seed, opts).unwrap();
        prop_assert_eq!(&a.result, &b.result);
        prop_assert_eq!(a.trace, b.trace);
        prop_assert_eq!(a.decision_logs, b.decision_logs);
    }
}

#[test]
fn photons_meet_at_an_off_centre_bsa() {
    let mut c = config(false, 20.0, 200, Protocol::Tomography);
    c.link.bsa_position_km = 3.0;
    let o = run_trial_with(&c, 9, TrialOptions::default()).unwrap();
    assert!(!o.arrivals.is_empty());
    for [a, b] in &o.arrivals {
        assert_eq!(a, b);
    }
}

#[test]
fn timeout_ends_a_slow_tomography() {
    let mut c = config(false, 20.0, 7000, Protocol::Tomography);
    c.hardware.emission_zpl_prob = 0.46;
    c.hardware.collection_eff = 0.49;
    c.timeout = Some(qlink_core::SimTime::from_ms(200));
    let r = run_trial(&c, 1).unwrap();
    assert!(r.timed_out);
    assert!(r.measurements > 0 && r.measurements < 7000);
    assert_eq!(r.elapsed, qlink_core::SimTime::from_ms(200));
    assert!(r.audits_balanced());
}
