//! Experiment configuration: Table I defaults, `key = value` files and
//! `--set` overrides, all resolved into one [`ExperimentConfig`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error_model::HardwareParams;
use crate::link_layer::{Architecture, LinkConfig};
use crate::purification::Scheme;
use crate::sim_core::SimTime;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    Tomography,
    /// `rounds` purification rounds before tomography; one round is the single-shot case.
    Recurrent {
        scheme: Scheme,
        rounds: usize,
        switch_at: Option<usize>,
    },
}

impl Protocol {
    pub fn single_shot(scheme: Scheme) -> Self {
        Protocol::Recurrent {
            scheme,
            rounds: 1,
            switch_at: None,
        }
    }

    pub fn rounds(&self) -> usize {
        match self {
            Protocol::Tomography => 0,
            Protocol::Recurrent { rounds, .. } => *rounds,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Protocol::Tomography => "none".into(),
            Protocol::Recurrent {
                scheme,
                rounds: 1,
                switch_at: None,
            } => scheme.label().into(),
            Protocol::Recurrent {
                scheme, switch_at, ..
            } => match switch_at {
                Some(s) => format!(
                    "{}>{}@{s}",
                    scheme.recurrent_label(),
                    scheme.single_selection().recurrent_label()
                ),
                None => scheme.recurrent_label().into(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hardware: HardwareParams,
    pub link: LinkConfig,
    pub protocol: Protocol,
    pub n_measurements: u64,
    pub trials: usize,
    pub seed_base: u64,
    /// Extra RuleSet timeout for tomography-only runs (recurrent ones always have two minutes).
    pub timeout: Option<SimTime>,
    pub event_cap: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hardware: HardwareParams::default(),
            link: LinkConfig::meet_in_the_middle(20.0),
            protocol: Protocol::Tomography,
            n_measurements: 7000,
            trials: 25,
            seed_base: 1,
            timeout: None,
            event_cap: crate::sim_core::DEFAULT_EVENT_CAP,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

fn bad(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn num(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v
        .parse()
        .map_err(|_| bad(key, format!("`{v}` is not a number")))?;
    if x.is_nan() {
        return Err(bad(key, "NaN"));
    }
    Ok(x)
}

fn prob(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x = num(key, v)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(bad(key, format!("{x} is not a probability in [0, 1]")));
    }
    Ok(x)
}

fn nonneg(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x = num(key, v)?;
    if x < 0.0 {
        return Err(bad(key, format!("{x} is negative")));
    }
    Ok(x)
}

fn int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| bad(key, format!("`{v}` is not a non-negative integer")))
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, format!("`{v}` is not a boolean"))),
    }
}

/// Seconds from `12`, `25ms`, `1.5us`, `40ns`, `inf`; bare numbers use `default_unit` seconds.
fn seconds(key: &str, v: &str, default_unit: f64) -> Result<f64, ConfigError> {
    let v = v.trim();
    let (digits, unit) = [("ns", 1e-9), ("us", 1e-6), ("ms", 1e-3), ("s", 1.0)]
        .iter()
        .find_map(|(suf, scale)| v.strip_suffix(suf).map(|d| (d.trim(), *scale)))
        .unwrap_or((v, default_unit));
    let x = nonneg(key, digits)?;
    Ok(x * unit)
}

fn ns(key: &str, v: &str) -> Result<u64, ConfigError> {
    let s = seconds(key, v, 1e-9)?;
    if !s.is_finite() {
        return Err(bad(key, "must be finite"));
    }
    Ok((s * 1e9).round() as u64)
}

fn optional<T>(
    v: &str,
    f: impl FnOnce(&str) -> Result<T, ConfigError>,
) -> Result<Option<T>, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "none" | "" => Ok(None),
        _ => f(v).map(Some),
    }
}

pub const KEYS: &[&str] = &[
    "fiber_refractive_index",
    "fiber_pauli_rate",
    "fiber_loss_rate",
    "memory_pauli_rate",
    "memory_lifetime",
    "excite_relax_ratio",
    "emission_zpl_prob",
    "collection_eff",
    "detector_eff",
    "darkcount_rate",
    "detector_recovery",
    "gate1q_error",
    "gate2q_error",
    "meas_error",
    "qubits_per_qnic",
    "markov_step",
    "gate1q_on_basis_change",
    "architecture",
    "length_km",
    "bsa_position_km",
    "protocol",
    "scheme",
    "rounds",
    "switch_at",
    "n_measurements",
    "trials",
    "seed_base",
    "timeout",
    "event_cap",
];

impl ExperimentConfig {
    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let hw = &mut self.hardware;
        match key {
            "fiber_refractive_index" => {
                let x = num(key, v)?;
                if x < 1.0 {
                    return Err(bad(key, "refractive index below 1"));
                }
                hw.fiber_refractive_index = x;
            }
            "fiber_pauli_rate" => hw.fiber_pauli_rate_per_km = prob(key, v)?,
            "fiber_loss_rate" => hw.fiber_loss_rate_per_km = prob(key, v)?,
            "memory_pauli_rate" => hw.memory.pauli_rate_total = nonneg(key, v)?,
            "memory_lifetime" => {
                let t = seconds(key, v, 1.0)?;
                if t == 0.0 {
                    return Err(bad(key, "lifetime must be positive"));
                }
                hw.memory.lifetime_t1 = t;
            }
            "excite_relax_ratio" => hw.memory.excite_to_relax_ratio = nonneg(key, v)?,
            "emission_zpl_prob" => hw.emission_zpl_prob = prob(key, v)?,
            "collection_eff" => hw.collection_eff = prob(key, v)?,
            "detector_eff" => hw.detector_eff = prob(key, v)?,
            "darkcount_rate" => hw.darkcount_rate_per_sec = nonneg(key, v)?,
            "detector_recovery" => {
                let n = ns(key, v)?;
                if n == 0 {
                    return Err(bad(key, "recovery time must be at least 1 ns"));
                }
                hw.detector_recovery_ns = n;
            }
            "gate1q_error" => hw.gate1q_error = prob(key, v)?,
            "gate2q_error" => hw.gate2q_error = prob(key, v)?,
            "meas_error" => hw.meas_error = prob(key, v)?,
            "qubits_per_qnic" => {
                let n: usize = int(key, v)?;
                if n == 0 {
                    return Err(bad(key, "need at least one qubit"));
                }
                hw.qubits_per_qnic = n;
            }
            "markov_step" => {
                let n = ns(key, v)?;
                if n == 0 {
                    return Err(bad(key, "step must be at least 1 ns"));
                }
                hw.markov_step_ns = n;
            }
            "gate1q_on_basis_change" => hw.gate1q_on_basis_change = boolean(key, v)?,
            "architecture" => {
                let a = Architecture::parse(v).ok_or_else(|| bad(key, "expected mim or sr"))?;
                self.link.architecture = a;
                self.recentre_bsa();
            }
            "length_km" => {
                self.link.total_length_km = nonneg(key, v)?;
                self.recentre_bsa();
            }
            "bsa_position_km" => self.link.bsa_position_km = nonneg(key, v)?,
            "protocol" => {
                self.protocol = match v.to_ascii_lowercase().as_str() {
                    "tomography" | "none" => Protocol::Tomography,
                    "single" | "single-shot" => Protocol::single_shot(self.scheme_or_default()),
                    "recurrent" => Protocol::Recurrent {
                        scheme: self.scheme_or_default(),
                        rounds: self.protocol.rounds().max(1),
                        switch_at: None,
                    },
                    _ => return Err(bad(key, "expected tomography, single or recurrent")),
                }
            }
            "scheme" if v.eq_ignore_ascii_case("none") => self.protocol = Protocol::Tomography,
            "scheme" => {
                let s = Scheme::parse(v)
                    .ok_or_else(|| bad(key, "expected ss-sp, ss-dp, ds-sp or ds-dp"))?;
                match &mut self.protocol {
                    Protocol::Recurrent { scheme, .. } => *scheme = s,
                    Protocol::Tomography => self.protocol = Protocol::single_shot(s),
                }
            }
            "rounds" => {
                let n: usize = int(key, v)?;
                match (&mut self.protocol, n) {
                    (_, 0) => self.protocol = Protocol::Tomography,
                    (Protocol::Recurrent { rounds, .. }, n) => *rounds = n,
                    (Protocol::Tomography, _) => {
                        return Err(bad(key, "set `scheme` before a non-zero round count"))
                    }
                }
            }
            "switch_at" => {
                let s = optional(v, |v| int::<usize>(key, v))?;
                match &mut self.protocol {
                    Protocol::Recurrent { switch_at, .. } => *switch_at = s,
                    Protocol::Tomography if s.is_none() => {}
                    Protocol::Tomography => {
                        return Err(bad(key, "only meaningful for recurrent protocols"))
                    }
                }
            }
            "n_measurements" => self.n_measurements = int(key, v)?,
            "trials" => {
                let n: usize = int(key, v)?;
                if n == 0 {
                    return Err(bad(key, "need at least one trial"));
                }
                self.trials = n;
            }
            "seed_base" => self.seed_base = int(key, v)?,
            "timeout" => {
                self.timeout = optional(v, |v| {
                    let s = seconds(key, v, 1.0)?;
                    if !s.is_finite() {
                        return Err(bad(key, "must be finite"));
                    }
                    Ok(SimTime::from_secs_f64(s))
                })?
            }
            "event_cap" => {
                let n: u64 = int(key, v)?;
                if n == 0 {
                    return Err(bad(key, "cap must be positive"));
                }
                self.event_cap = n;
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn scheme_or_default(&self) -> Scheme {
        match self.protocol {
            Protocol::Recurrent { scheme, .. } => scheme,
            Protocol::Tomography => Scheme::SsSp,
        }
    }

    fn recentre_bsa(&mut self) {
        self.link = match self.link.architecture {
            Architecture::MeetInTheMiddle => {
                LinkConfig::meet_in_the_middle(self.link.total_length_km)
            }
            Architecture::SenderReceiver => LinkConfig::sender_receiver(self.link.total_length_km),
        };
    }

    /// Checks that need the whole config.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.link
            .validate()
            .map_err(|e| bad("bsa_position_km", e.to_string()))?;
        self.hardware
            .transition_matrix()
            .map_err(|e| bad("markov_step", e.to_string()))?;
        if let Protocol::Recurrent {
            rounds, switch_at, ..
        } = self.protocol
        {
            if rounds == 0 {
                return Err(bad("rounds", "recurrent protocol needs at least one round"));
            }
            if let Some(s) = switch_at {
                if s >= rounds {
                    return Err(bad(
                        "switch_at",
                        format!("{s} is not below rounds = {rounds}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines (`#` comments, blank lines ignored) on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// `key=value` pairs as given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, pairs: &[S]) -> Result<(), ConfigError> {
        for p in pairs {
            let p = p.as_ref();
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| bad(p, "expected key=value"))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then the overrides.
    pub fn load<S: AsRef<str>>(path: Option<&Path>, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut c = ExperimentConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?;
            c.apply_text(&text)?;
        }
        c.apply_overrides(overrides)?;
        c.validate()?;
        Ok(c)
    }

    /// Every key with its resolved value, in [`KEYS`] order. Feeding this
    /// back through [`Self::apply_text`] reproduces the config.
    pub fn canonical_text(&self) -> String {
        let hw = &self.hardware;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put(
            "fiber_refractive_index",
            hw.fiber_refractive_index.to_string(),
        );
        put("fiber_pauli_rate", hw.fiber_pauli_rate_per_km.to_string());
        put("fiber_loss_rate", hw.fiber_loss_rate_per_km.to_string());
        put("memory_pauli_rate", hw.memory.pauli_rate_total.to_string());
        put("memory_lifetime", format!("{}s", hw.memory.lifetime_t1));
        put(
            "excite_relax_ratio",
            hw.memory.excite_to_relax_ratio.to_string(),
        );
        put("emission_zpl_prob", hw.emission_zpl_prob.to_string());
        put("collection_eff", hw.collection_eff.to_string());
        put("detector_eff", hw.detector_eff.to_string());
        put("darkcount_rate", hw.darkcount_rate_per_sec.to_string());
        put(
            "detector_recovery",
            format!("{}ns", hw.detector_recovery_ns),
        );
        put("gate1q_error", hw.gate1q_error.to_string());
        put("gate2q_error", hw.gate2q_error.to_string());
        put("meas_error", hw.meas_error.to_string());
        put("qubits_per_qnic", hw.qubits_per_qnic.to_string());
        put("markov_step", format!("{}ns", hw.markov_step_ns));
        put(
            "gate1q_on_basis_change",
            hw.gate1q_on_basis_change.to_string(),
        );
        put("architecture", self.link.architecture.short().to_string());
        put("length_km", self.link.total_length_km.to_string());
        put("bsa_position_km", self.link.bsa_position_km.to_string());
        match self.protocol {
            Protocol::Tomography => {
                put("protocol", "tomography".into());
                put("scheme", "none".into());
                put("rounds", "0".into());
                put("switch_at", "none".into());
            }
            Protocol::Recurrent {
                scheme,
                rounds,
                switch_at,
            } => {
                put("protocol", "recurrent".into());
                put("scheme", scheme.label().to_ascii_lowercase());
                put("rounds", rounds.to_string());
                put(
                    "switch_at",
                    switch_at.map_or("none".into(), |s| s.to_string()),
                );
            }
        }
        put("n_measurements", self.n_measurements.to_string());
        put("trials", self.trials.to_string());
        put("seed_base", self.seed_base.to_string());
        put(
            "timeout",
            self.timeout
                .map_or("none".into(), |t| format!("{}ns", t.as_ns())),
        );
        put("event_cap", self.event_cap.to_string());
        s
    }

    /// First 16 hex digits of SHA-256 over [`Self::canonical_text`].
    pub fn config_hash(&self) -> String {
        let d = Sha256::digest(self.canonical_text().as_bytes());
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Keys whose resolved value differs from the defaults.
    pub fn changed_keys(&self) -> Vec<String> {
        let base = ExperimentConfig::default().canonical_text();
        let mine = self.canonical_text();
        base.lines()
            .zip(mine.lines())
            .filter(|(a, b)| a != b)
            .map(|(_, b)| b.split(" = ").next().unwrap().to_string())
            .collect()
    }
}
