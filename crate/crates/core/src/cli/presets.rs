//! Named sweeps, one per reproduced figure, and the trial batch runner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig, Protocol};
use crate::link_layer::LinkConfig;
use crate::purification::Scheme;
use crate::sim_core::{run_trial, TrialError, TrialResult};
use crate::tomography::{mean_abs_fidelity_gap, summarize};

pub const PRESETS: &[&str] = &[
    "fig12", "fig13", "fig14", "fig15", "fig16", "fig17", "fig18",
];

pub const FIG12_MEASUREMENTS: &[u64] = &[
    1000, 2000, 5000, 7000, 10_000, 20_000, 40_000, 60_000, 80_000, 100_000,
];
pub const DISTANCES_KM: &[f64] = &[1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0];
pub const FIG15_QUBITS: &[usize] = &[100, 200, 300, 400, 500, 600, 700];

/// Largest N_p swept per recurrent scheme at 10 km and 20 km.
pub fn recurrent_range(scheme: Scheme) -> usize {
    match scheme {
        Scheme::SsSp => 7,
        Scheme::SsDp => 4,
        Scheme::DsSp => 5,
        Scheme::DsDp => 3,
    }
}

/// One sweep point: a series label, the swept value and its config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub series: String,
    pub x_name: String,
    pub x: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset `{0}` (expected one of {list})", list = PRESETS.join(", "))]
    Unknown(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trial(#[from] TrialError),
}

/// Settings shared by the recurrence figures: lossless emission into the
/// fiber and ideal CNOTs.
pub fn recurrence_settings(base: &ExperimentConfig, length_km: f64) -> ExperimentConfig {
    let mut c = base.clone();
    c.hardware.emission_zpl_prob = 1.0;
    c.hardware.collection_eff = 1.0;
    c.hardware.gate2q_error = 0.0;
    c.link = LinkConfig::meet_in_the_middle(length_km);
    c.n_measurements = 7000;
    c
}

fn point(series: impl Into<String>, x_name: &str, x: f64, config: ExperimentConfig) -> SweepPoint {
    SweepPoint {
        series: series.into(),
        x_name: x_name.into(),
        x,
        config,
    }
}

fn recurrent(scheme: Scheme, rounds: usize, switch_at: Option<usize>) -> Protocol {
    if rounds == 0 {
        Protocol::Tomography
    } else {
        Protocol::Recurrent {
            scheme,
            rounds,
            switch_at: switch_at.filter(|s| *s < rounds),
        }
    }
}

fn recurrence_sweep(base: &ExperimentConfig, length_km: f64) -> Vec<SweepPoint> {
    let c = recurrence_settings(base, length_km);
    let mut pts = vec![point("baseline", "n_p", 0.0, c.clone())];
    for scheme in Scheme::ALL {
        for n in 1..=recurrent_range(scheme) {
            let mut p = c.clone();
            p.protocol = recurrent(scheme, n, None);
            pts.push(point(scheme.recurrent_label(), "n_p", n as f64, p));
        }
    }
    pts
}

fn distance_sweep(base: &ExperimentConfig, arch: &[LinkConfig]) -> Vec<SweepPoint> {
    let mut pts = Vec::new();
    for link in arch {
        for &km in DISTANCES_KM {
            for scheme in [
                None,
                Some(Scheme::SsSp),
                Some(Scheme::SsDp),
                Some(Scheme::DsSp),
                Some(Scheme::DsDp),
            ] {
                let mut c = base.clone();
                c.n_measurements = 7000;
                c.link = match link.architecture {
                    crate::link_layer::Architecture::MeetInTheMiddle => {
                        LinkConfig::meet_in_the_middle(km)
                    }
                    crate::link_layer::Architecture::SenderReceiver => {
                        LinkConfig::sender_receiver(km)
                    }
                };
                c.protocol = scheme.map_or(Protocol::Tomography, Protocol::single_shot);
                let label = scheme.map_or("none", |s| s.label());
                pts.push(point(
                    format!("{}/{label}", link.architecture.short()),
                    "length_km",
                    km,
                    c,
                ));
            }
        }
    }
    pts
}

/// Sweep points of a named preset on top of `base` (which carries trials,
/// seed and anything the caller overrode).
pub fn preset_points(name: &str, base: &ExperimentConfig) -> Result<Vec<SweepPoint>, PresetError> {
    let pts = match name {
        "fig12" => FIG12_MEASUREMENTS
            .iter()
            .map(|&n| {
                let mut c = base.clone();
                c.link = LinkConfig::meet_in_the_middle(20.0);
                c.protocol = Protocol::Tomography;
                c.n_measurements = n;
                point("tomography", "n_measurements", n as f64, c)
            })
            .collect(),
        "fig13" => distance_sweep(base, &[LinkConfig::meet_in_the_middle(0.0)]),
        "fig14" => distance_sweep(
            base,
            &[
                LinkConfig::meet_in_the_middle(0.0),
                LinkConfig::sender_receiver(0.0),
            ],
        ),
        "fig15" => {
            let mut pts = Vec::new();
            for &q in FIG15_QUBITS {
                let mut c = recurrence_settings(base, 10.0);
                c.hardware.qubits_per_qnic = q;
                for n in 1..=6 {
                    let mut p = c.clone();
                    p.protocol = recurrent(Scheme::SsSp, n, None);
                    pts.push(point(format!("qubits={q}"), "n_p", n as f64, p));
                }
            }
            pts
        }
        "fig16" => recurrence_sweep(base, 10.0),
        "fig17" => recurrence_sweep(base, 20.0),
        "fig18" => {
            let c = recurrence_settings(base, 20.0);
            let mut pts = Vec::new();
            for (series, switch) in [("case-a", 1), ("case-b", 2)] {
                for n in 1..=5 {
                    let mut p = c.clone();
                    p.protocol = recurrent(Scheme::DsSp, n, Some(switch));
                    pts.push(point(series, "n_p", n as f64, p));
                }
            }
            pts
        }
        other => return Err(PresetError::Unknown(other.to_string())),
    };
    Ok(pts)
}

/// Apply `key=value` overrides to every point (flags win over preset settings).
pub fn override_points<S: AsRef<str>>(
    points: &mut [SweepPoint],
    overrides: &[S],
) -> Result<(), ConfigError> {
    for p in points.iter_mut() {
        p.config.apply_overrides(overrides)?;
        p.config.validate()?;
    }
    Ok(())
}

/// Aggregate over the trials of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub preset: String,
    pub series: String,
    pub x_name: String,
    pub x: f64,
    pub trials: usize,
    pub mean_f_r: f64,
    pub sigma_f_r: f64,
    pub min_f_r: f64,
    pub max_f_r: f64,
    pub mean_f_a: f64,
    pub mean_abs_gap: f64,
    pub frac_clean: f64,
    pub frac_x: f64,
    pub frac_z: f64,
    pub frac_y: f64,
    pub frac_other: f64,
    pub mean_throughput: f64,
    pub mean_raw_rate: f64,
    pub mean_elapsed_s: f64,
    pub timed_out: usize,
    pub undefined: usize,
}

pub fn aggregate(preset: &str, pt: &SweepPoint, trials: &[TrialResult]) -> ResultRow {
    let f_r: Vec<f64> = trials.iter().filter_map(|t| t.f_r).collect();
    let f_a: Vec<f64> = trials.iter().filter_map(|t| t.f_a).collect();
    let pairs: Vec<(f64, f64)> = trials
        .iter()
        .filter_map(|t| Some((t.f_r?, t.f_a?)))
        .collect();
    let s = summarize(&f_r);
    let mut fr = [0.0; 5];
    for t in trials {
        for (acc, v) in fr.iter_mut().zip(t.tallies.fractions()) {
            *acc += v;
        }
    }
    let n = trials.len().max(1) as f64;
    let mean = |f: &dyn Fn(&TrialResult) -> f64| trials.iter().map(f).sum::<f64>() / n;
    ResultRow {
        preset: preset.to_string(),
        series: pt.series.clone(),
        x_name: pt.x_name.clone(),
        x: pt.x,
        trials: trials.len(),
        mean_f_r: s.mean,
        sigma_f_r: s.sigma,
        min_f_r: s.min,
        max_f_r: s.max,
        mean_f_a: summarize(&f_a).mean,
        mean_abs_gap: if pairs.is_empty() {
            f64::NAN
        } else {
            mean_abs_fidelity_gap(&pairs)
        },
        frac_clean: fr[0] / n,
        frac_x: fr[1] / n,
        frac_z: fr[2] / n,
        frac_y: fr[3] / n,
        frac_other: fr[4] / n,
        mean_throughput: mean(&|t| t.throughput),
        mean_raw_rate: mean(&|t| t.raw_rate),
        mean_elapsed_s: mean(&|t| t.elapsed.as_secs_f64()),
        timed_out: trials.iter().filter(|t| t.timed_out).count(),
        undefined: trials.iter().filter(|t| t.fidelity_undefined).count(),
    }
}

/// All trials of one config, seeds `seed_base + i`, in trial order.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialResult>, TrialError> {
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| run_trial(cfg, cfg.seed_base.wrapping_add(i)))
        .collect()
}

pub fn run_point(
    preset: &str,
    pt: &SweepPoint,
) -> Result<(ResultRow, Vec<TrialResult>), TrialError> {
    let trials = run_trials(&pt.config)?;
    Ok((aggregate(preset, pt, &trials), trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_shapes() {
        let base = ExperimentConfig::default();
        assert_eq!(preset_points("fig12", &base).unwrap().len(), 10);
        assert_eq!(preset_points("fig13", &base).unwrap().len(), 8 * 5);
        assert_eq!(preset_points("fig14", &base).unwrap().len(), 2 * 8 * 5);
        assert_eq!(preset_points("fig15", &base).unwrap().len(), 7 * 6);
        assert_eq!(
            preset_points("fig16", &base).unwrap().len(),
            1 + 7 + 4 + 5 + 3
        );
        assert_eq!(preset_points("fig18", &base).unwrap().len(), 10);
        assert!(matches!(
            preset_points("fig99", &base),
            Err(PresetError::Unknown(_))
        ));
    }

    #[test]
    fn presets_only_change_what_the_figure_states() {
        let base = ExperimentConfig::default();
        for p in preset_points("fig16", &base).unwrap() {
            let mut changed = p.config.changed_keys();
            changed
                .retain(|k| !["protocol", "scheme", "rounds", "switch_at"].contains(&k.as_str()));
            assert_eq!(
                changed,
                [
                    "emission_zpl_prob",
                    "collection_eff",
                    "gate2q_error",
                    "length_km",
                    "bsa_position_km"
                ]
            );
        }
        for p in preset_points("fig13", &base).unwrap() {
            for k in p.config.changed_keys() {
                assert!(
                    [
                        "length_km",
                        "bsa_position_km",
                        "protocol",
                        "scheme",
                        "rounds"
                    ]
                    .contains(&k.as_str()),
                    "{k}"
                );
            }
        }
    }

    #[test]
    fn case_a_switches_after_one_round() {
        let base = ExperimentConfig::default();
        let pts = preset_points("fig18", &base).unwrap();
        let a5 = pts
            .iter()
            .find(|p| p.series == "case-a" && p.x == 5.0)
            .unwrap();
        assert_eq!(
            a5.config.protocol,
            Protocol::Recurrent {
                scheme: Scheme::DsSp,
                rounds: 5,
                switch_at: Some(1)
            }
        );
        let b1 = pts
            .iter()
            .find(|p| p.series == "case-b" && p.x == 1.0)
            .unwrap();
        assert_eq!(
            b1.config.protocol,
            Protocol::Recurrent {
                scheme: Scheme::DsSp,
                rounds: 1,
                switch_at: None
            }
        );
    }
}
