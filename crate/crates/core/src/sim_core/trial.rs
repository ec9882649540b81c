//! One Monte-Carlo trial: two nodes, one BSA, two RuleEngines.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EventCapExceeded, NodeId, PayloadKind, RngStream, Scheduler, SimTime, Target};
use crate::cli::config::{ExperimentConfig, Protocol};
use crate::error_model::ErrorState;
use crate::link_layer::{
    attempt_success_probability, burst_span, compute_emission_timing, dark_herald_probability,
    herald_states, sample_heralds, Architecture, EmissionTiming, LinkMessage, LinkPayload, PairId,
    PairRegistry, QnicSlots, ReadoutKind, SlotState, BSA_ADDRESS,
};
use crate::purification::PauliLabel;
use crate::rule_engine::{EngineAudit, EngineMessage, QubitBackend, RuleEngine};
use crate::ruleset_protocol::{
    build_recurrent_purification_ruleset, build_tomography_ruleset, generate_ruleset_id,
};
use crate::tomography::{fidelity, reconstruct, Basis, Outcome};

#[derive(Clone, Debug, PartialEq)]
pub enum Delivery {
    /// `pairs` is simulation ground truth riding along with `BsaResults`:
    /// the registry ids of the heralded pairs in attempt order.
    Link {
        msg: LinkMessage,
        round: u64,
        pairs: Vec<PairId>,
    },
    Engine(EngineMessage),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    PhotonBurstStart {
        round: u64,
        timing: EmissionTiming,
    },
    PhotonArrivalAtBSA {
        node: NodeId,
        round: u64,
        count: u32,
    },
    ClassicalMessageDelivery(Delivery),
    RuleSetTimeoutCheck,
    TrialEnd,
}

impl PayloadKind for Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::PhotonBurstStart { .. } => "PhotonBurstStart",
            Payload::PhotonArrivalAtBSA { .. } => "PhotonArrivalAtBSA",
            Payload::ClassicalMessageDelivery(Delivery::Link { msg, .. }) => match msg.payload {
                LinkPayload::BootUpNotification => "ClassicalMessageDelivery:BootUpNotification",
                LinkPayload::EmissionTiming(_) => "ClassicalMessageDelivery:EmissionTiming",
                LinkPayload::BurstEnd { .. } => "ClassicalMessageDelivery:BurstEnd",
                LinkPayload::BsaResults(_) => "ClassicalMessageDelivery:BsaResults",
            },
            Payload::ClassicalMessageDelivery(Delivery::Engine(_)) => {
                "ClassicalMessageDelivery:RuleEngine"
            }
            Payload::RuleSetTimeoutCheck => "RuleSetTimeoutCheck",
            Payload::TrialEnd => "TrialEnd",
        }
    }
}

/// Ground-truth error categories of measured pairs (joint label).
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTallies {
    pub clean: u64,
    pub x: u64,
    pub z: u64,
    pub y: u64,
    /// Excitation, relaxation or dark-count mixing on either side.
    pub other: u64,
}

impl ErrorTallies {
    pub fn add(&mut self, a: ErrorState, b: ErrorState) {
        match (a.pauli(), b.pauli()) {
            (Some(pa), Some(pb)) => match pa * pb {
                PauliLabel::I => self.clean += 1,
                PauliLabel::X => self.x += 1,
                PauliLabel::Z => self.z += 1,
                _ => self.y += 1,
            },
            _ => self.other += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.clean + self.x + self.z + self.y + self.other
    }

    /// `[clean, x, z, y, other]` as fractions of the total.
    pub fn fractions(&self) -> [f64; 5] {
        let t = self.total().max(1) as f64;
        [self.clean, self.x, self.z, self.y, self.other].map(|c| c as f64 / t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    /// Reconstructed fidelity; `None` when some basis cell never filled.
    pub f_r: Option<f64>,
    /// Mean ground-truth fidelity of the measured pairs.
    pub f_a: Option<f64>,
    pub fidelity_undefined: bool,
    pub tallies: ErrorTallies,
    pub elapsed: SimTime,
    /// Joined tomography samples.
    pub measurements: u64,
    /// `measurements / elapsed`, per second.
    pub throughput: f64,
    /// Heralded pairs, genuine or dark.
    pub raw_pairs: u64,
    pub raw_rate: f64,
    pub timed_out: bool,
    pub audits: [EngineAudit; 2],
    pub events: u64,
}

impl TrialResult {
    pub fn audits_balanced(&self) -> bool {
        self.audits.iter().all(|a| a.balanced())
    }
}

#[derive(Debug, Error)]
pub enum TrialError {
    #[error(transparent)]
    EventCap(#[from] EventCapExceeded),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Copy, Clone, Debug, Default)]
pub struct TrialOptions {
    pub trace: bool,
    pub decision_log: bool,
}

#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub result: TrialResult,
    pub trace: Option<Vec<String>>,
    pub decision_logs: [Option<Vec<String>>; 2],
    /// BSA arrival ticks of both photon trains, per round.
    pub arrivals: Vec<[SimTime; 2]>,
}

struct NodeLink {
    slots: QnicSlots,
    /// Slots used by each outstanding round, in attempt order.
    emitted: HashMap<u64, (Vec<u32>, SimTime)>,
    basis: RngStream,
}

#[derive(Default)]
struct Bsa {
    booted: [bool; 2],
    counts: [Option<u32>; 2],
    arrivals: [Option<SimTime>; 2],
    ended: [bool; 2],
    stopped: bool,
}

struct Backend<'a> {
    side: usize,
    registry: &'a mut PairRegistry,
    slots: &'a mut QnicSlots,
    basis: &'a mut RngStream,
}

impl QubitBackend for Backend<'_> {
    fn cnot(&mut self, control: PairId, target: PairId, now: SimTime) {
        self.registry.cnot(self.side, control, target, now);
    }

    fn measure(&mut self, pair: PairId, basis: Basis, now: SimTime, kind: ReadoutKind) -> Outcome {
        self.registry.measure(self.side, pair, basis, now, kind)
    }

    fn release(&mut self, pair: PairId) {
        let slot = self.registry.release(self.side, pair);
        self.slots.set(slot, SlotState::Free);
    }

    fn random_basis(&mut self) -> Basis {
        Basis::from_index(self.basis.random_range(0..3))
    }
}

struct World {
    cfg: ExperimentConfig,
    sched: Scheduler<Payload>,
    registry: PairRegistry,
    nodes: [NodeLink; 2],
    engines: [RuleEngine; 2],
    bsa: Bsa,
    bsa_rng: RngStream,
    channel_rng: RngStream,
    arm_latency: [SimTime; 2],
    arms_km: [f64; 2],
    node_latency: SimTime,
    p_genuine: f64,
    p_dark: f64,
    arrivals: Vec<[SimTime; 2]>,
    out: Vec<EngineMessage>,
    ended: bool,
}

fn receiver_mode(cfg: &ExperimentConfig) -> bool {
    cfg.link.architecture == Architecture::SenderReceiver
}

impl World {
    fn new(cfg: &ExperimentConfig, seed: u64, opts: TrialOptions) -> Result<Self, TrialError> {
        cfg.validate()
            .map_err(|e| TrialError::Config(e.to_string()))?;
        let hw = &cfg.hardware;
        let matrix = hw
            .transition_matrix()
            .map_err(|e| TrialError::Config(e.to_string()))?;
        let id = generate_ruleset_id(SimTime::ZERO, 0, seed);
        let (rs0, rs1) = match cfg.protocol {
            Protocol::Tomography => {
                build_tomography_ruleset(id, cfg.n_measurements, 0, 1, cfg.timeout)
            }
            Protocol::Recurrent {
                scheme,
                rounds,
                switch_at,
            } => build_recurrent_purification_ruleset(
                id,
                scheme,
                rounds,
                cfg.n_measurements,
                0,
                1,
                switch_at,
            ),
        };
        let mut engines = [
            RuleEngine::new(0, rs0, SimTime::ZERO),
            RuleEngine::new(1, rs1, SimTime::ZERO),
        ];
        if opts.decision_log {
            engines.iter_mut().for_each(|e| e.enable_log());
        }
        let mut sched = Scheduler::new(cfg.event_cap);
        if opts.trace {
            sched.enable_trace();
        }
        let arms_km = cfg.link.arms_km();
        let node = |n: NodeId| NodeLink {
            slots: QnicSlots::new(hw.qubits_per_qnic),
            emitted: HashMap::new(),
            basis: RngStream::new(seed, &format!("basis-choice/{n}")),
        };
        Ok(Self {
            cfg: cfg.clone(),
            sched,
            registry: PairRegistry::new(hw, matrix, seed),
            nodes: [node(0), node(1)],
            engines,
            bsa: Bsa::default(),
            bsa_rng: RngStream::new(seed, "bsa"),
            channel_rng: RngStream::new(seed, "channel"),
            arm_latency: arms_km.map(|k| hw.fiber_latency(k)),
            arms_km,
            node_latency: hw.fiber_latency(cfg.link.total_length_km),
            p_genuine: attempt_success_probability(&cfg.link, hw),
            p_dark: dark_herald_probability(&cfg.link, hw),
            arrivals: Vec::new(),
            out: Vec::new(),
            ended: false,
        })
    }

    fn send_link(
        &mut self,
        src: u16,
        dst: u16,
        latency: SimTime,
        payload: LinkPayload,
        round: u64,
        pairs: Vec<PairId>,
    ) {
        let now = self.sched.now();
        let target = if dst == BSA_ADDRESS {
            Target::Bsa
        } else {
            Target::Node(dst)
        };
        let msg = LinkMessage {
            src,
            dst,
            sent_at: now,
            payload,
        };
        self.sched.schedule(
            now + latency,
            target,
            Payload::ClassicalMessageDelivery(Delivery::Link { msg, round, pairs }),
        );
    }

    fn boot(&mut self) {
        for n in 0..2u16 {
            let lat = self.arm_latency[n as usize];
            self.send_link(
                n,
                BSA_ADDRESS,
                lat,
                LinkPayload::BootUpNotification,
                0,
                vec![],
            );
        }
        for n in 0..2u16 {
            if let Some(t) = self.engines[n as usize].ruleset().timeout() {
                self.sched
                    .schedule(t, Target::Node(n), Payload::RuleSetTimeoutCheck);
            }
        }
    }

    /// Which nodes emit ahead of time.
    fn emitters(&self) -> &'static [usize] {
        if receiver_mode(&self.cfg) {
            &[0]
        } else {
            &[0, 1]
        }
    }

    fn start_round(&mut self, round: u64) {
        self.bsa.counts = [None; 2];
        self.bsa.arrivals = [None; 2];
        self.bsa.ended = [false; 2];
        let timing = compute_emission_timing(&self.cfg.link, &self.cfg.hardware, self.sched.now());
        for &n in self.emitters() {
            let lat = self.arm_latency[n];
            self.send_link(
                BSA_ADDRESS,
                n as u16,
                lat,
                LinkPayload::EmissionTiming(timing[n]),
                round,
                vec![],
            );
        }
    }

    fn on_bsa(&mut self, payload: Payload) {
        match payload {
            Payload::PhotonArrivalAtBSA { node, count, .. } => {
                self.bsa.counts[node as usize] = Some(count);
                self.bsa.arrivals[node as usize] = Some(self.sched.now());
            }
            Payload::ClassicalMessageDelivery(Delivery::Link { msg, round, .. }) => {
                match msg.payload {
                    LinkPayload::BootUpNotification => {
                        self.bsa.booted[msg.src as usize] = true;
                        if self.bsa.booted == [true, true] {
                            self.start_round(0);
                        }
                    }
                    LinkPayload::BurstEnd { .. } => {
                        self.bsa.ended[msg.src as usize] = true;
                        if self.emitters().iter().all(|&n| self.bsa.ended[n]) {
                            self.evaluate(round);
                        }
                    }
                    ref other => panic!("BSA cannot handle {other:?}"),
                }
            }
            other => panic!("unexpected BSA payload {other:?}"),
        }
    }

    fn evaluate(&mut self, round: u64) {
        let now = self.sched.now();
        let hw = &self.cfg.hardware;
        let interval = hw.detector_recovery_ns;
        let receiver = receiver_mode(&self.cfg);
        let (attempts, limit) = if receiver {
            (
                self.bsa.counts[0].unwrap_or(0),
                Some(self.nodes[1].slots.free() as u32),
            )
        } else {
            let c = self.bsa.counts.map(|c| c.unwrap_or(0));
            (c[0].min(c[1]), None)
        };
        let arrival = self.bsa.arrivals[0].unwrap_or(now);
        if receiver {
            self.arrivals.push([arrival, arrival]);
        } else {
            self.arrivals
                .push(self.bsa.arrivals.map(|a| a.unwrap_or(now)));
        }
        let heralds = sample_heralds(
            attempts,
            limit,
            self.p_genuine,
            self.p_dark,
            &mut self.bsa_rng,
        );
        let receiver_slots = if receiver {
            let s = self.nodes[1].slots.emit(heralds.len());
            self.nodes[1].emitted.insert(round, (s.clone(), arrival));
            s
        } else {
            vec![]
        };
        let mut pairs = Vec::with_capacity(heralds.len());
        let mut bits0 = vec![false; attempts as usize];
        let mut bits1 = if receiver {
            vec![true; heralds.len()]
        } else {
            vec![false; attempts as usize]
        };
        for (k, &(j, genuine)) in heralds.iter().enumerate() {
            let states = herald_states(genuine, self.arms_km, hw, &mut self.channel_rng);
            let (s0, t0) = {
                let (slots, first) = &self.nodes[0].emitted[&round];
                (
                    slots[j as usize],
                    *first + SimTime::from_ns(j as u64 * interval),
                )
            };
            let (s1, t1) = if receiver {
                (
                    receiver_slots[k],
                    arrival + SimTime::from_ns(j as u64 * interval),
                )
            } else {
                let (slots, first) = &self.nodes[1].emitted[&round];
                (
                    slots[j as usize],
                    *first + SimTime::from_ns(j as u64 * interval),
                )
            };
            pairs.push(self.registry.create([s0, s1], states, [t0, t1], now));
            bits0[j as usize] = true;
            if !receiver {
                bits1[j as usize] = true;
            }
        }
        let lat = if receiver {
            [self.arm_latency[0], SimTime::ZERO]
        } else {
            self.arm_latency
        };
        self.send_link(
            BSA_ADDRESS,
            0,
            lat[0],
            LinkPayload::BsaResults(bits0),
            round,
            pairs.clone(),
        );
        self.send_link(
            BSA_ADDRESS,
            1,
            lat[1],
            LinkPayload::BsaResults(bits1),
            round,
            pairs,
        );
        if !self.bsa.stopped {
            self.start_round(round + 1);
        }
    }

    fn on_node(&mut self, n: usize, payload: Payload) {
        let now = self.sched.now();
        match payload {
            Payload::ClassicalMessageDelivery(Delivery::Link { msg, round, pairs }) => {
                match msg.payload {
                    LinkPayload::EmissionTiming(t) => {
                        self.sched.schedule(
                            t.first_emit,
                            Target::Node(n as u16),
                            Payload::PhotonBurstStart { round, timing: t },
                        );
                    }
                    LinkPayload::BsaResults(bits) => self.on_results(n, round, &bits, &pairs),
                    ref other => panic!("node cannot handle {other:?}"),
                }
            }
            Payload::PhotonBurstStart { round, timing } => {
                let node = &mut self.nodes[n];
                let count = node.slots.free().min(timing.burst as usize);
                let slots = node.slots.emit(count);
                node.emitted.insert(round, (slots, now));
                let lat = self.arm_latency[n];
                self.sched.schedule(
                    now + lat,
                    Target::Bsa,
                    Payload::PhotonArrivalAtBSA {
                        node: n as u16,
                        round,
                        count: count as u32,
                    },
                );
                let span = burst_span(&self.cfg.hardware);
                let msg = LinkMessage {
                    src: n as u16,
                    dst: BSA_ADDRESS,
                    sent_at: now + span,
                    payload: LinkPayload::BurstEnd {
                        count: count as u32,
                    },
                };
                self.sched.schedule(
                    now + span + lat,
                    Target::Bsa,
                    Payload::ClassicalMessageDelivery(Delivery::Link {
                        msg,
                        round,
                        pairs: vec![],
                    }),
                );
            }
            Payload::ClassicalMessageDelivery(Delivery::Engine(msg)) => {
                let mut out = std::mem::take(&mut self.out);
                let node = &mut self.nodes[n];
                let mut be = Backend {
                    side: n,
                    registry: &mut self.registry,
                    slots: &mut node.slots,
                    basis: &mut node.basis,
                };
                self.engines[n].on_message(&msg, &mut be, now, &mut out);
                self.out = out;
            }
            Payload::RuleSetTimeoutCheck => {
                let node = &mut self.nodes[n];
                let mut be = Backend {
                    side: n,
                    registry: &mut self.registry,
                    slots: &mut node.slots,
                    basis: &mut node.basis,
                };
                self.engines[n].on_timeout_check(&mut be, now);
            }
            other => panic!("unexpected node payload {other:?}"),
        }
    }

    fn on_results(&mut self, n: usize, round: u64, bits: &[bool], pairs: &[PairId]) {
        let now = self.sched.now();
        let (slots, _) = self.nodes[n].emitted.remove(&round).unwrap_or_default();
        let mut k = 0;
        let mut out = std::mem::take(&mut self.out);
        for (j, &slot) in slots.iter().enumerate() {
            if bits.get(j).copied().unwrap_or(false) {
                self.nodes[n].slots.set(slot, SlotState::Held);
                let pair = pairs[k];
                k += 1;
                let node = &mut self.nodes[n];
                let mut be = Backend {
                    side: n,
                    registry: &mut self.registry,
                    slots: &mut node.slots,
                    basis: &mut node.basis,
                };
                self.engines[n].on_resource_heralded(pair, &mut be, now, &mut out);
            } else {
                self.nodes[n].slots.set(slot, SlotState::Free);
            }
        }
        debug_assert_eq!(k, pairs.len());
        self.out = out;
    }

    fn flush_engine_messages(&mut self) {
        let now = self.sched.now();
        for msg in std::mem::take(&mut self.out) {
            self.sched.schedule(
                now + self.node_latency,
                Target::Node(msg.dst),
                Payload::ClassicalMessageDelivery(Delivery::Engine(msg)),
            );
        }
    }

    fn run(mut self) -> Result<TrialOutput, TrialError> {
        if self.engines.iter().all(|e| e.is_finished()) {
            return Ok(self.finish(SimTime::ZERO));
        }
        self.boot();
        let mut finished_at = None;
        while let Some(ev) = self.sched.pop()? {
            match (ev.target, ev.payload) {
                (_, Payload::TrialEnd) => {
                    finished_at = Some(ev.fire_at);
                    break;
                }
                (Target::Bsa, p) => self.on_bsa(p),
                (Target::Node(n), p) => self.on_node(n as usize, p),
                (Target::Trial, p) => panic!("unexpected trial payload {p:?}"),
            }
            self.flush_engine_messages();
            if !self.bsa.stopped && self.engines.iter().all(|e| e.is_terminated()) {
                self.bsa.stopped = true;
            }
            if !self.ended && self.engines.iter().all(|e| e.is_finished()) {
                self.ended = true;
                let now = self.sched.now();
                self.sched.schedule(now, Target::Trial, Payload::TrialEnd);
            }
        }
        let elapsed = finished_at.unwrap_or(self.sched.now());
        Ok(self.finish(elapsed))
    }

    fn finish(mut self, elapsed: SimTime) -> TrialOutput {
        let acc = self.engines[0].accumulator();
        let measurements = self.engines[0].joined();
        let f_r = reconstruct(acc).ok().map(|rho| fidelity(&rho));
        let mut tallies = ErrorTallies::default();
        let mut fsum = 0.0;
        for m in &self.registry.measured {
            tallies.add(m.states[0], m.states[1]);
            fsum += m.fidelity;
        }
        let nm = self.registry.measured.len();
        let f_a = (nm > 0).then(|| fsum / nm as f64);
        let secs = elapsed.as_secs_f64();
        let per_sec = |x: u64| if secs > 0.0 { x as f64 / secs } else { 0.0 };
        let raw_pairs = self.registry.created();
        let result = TrialResult {
            seed: 0,
            f_r,
            f_a,
            fidelity_undefined: f_r.is_none(),
            tallies,
            elapsed,
            measurements,
            throughput: per_sec(measurements),
            raw_pairs,
            raw_rate: per_sec(raw_pairs),
            timed_out: self.engines.iter().any(|e| e.timed_out()),
            audits: [self.engines[0].audit(), self.engines[1].audit()],
            events: self.sched.processed(),
        };
        TrialOutput {
            result,
            trace: self.sched.take_trace(),
            decision_logs: [self.engines[0].take_log(), self.engines[1].take_log()],
            arrivals: std::mem::take(&mut self.arrivals),
        }
    }
}

pub fn run_trial_with(
    cfg: &ExperimentConfig,
    seed: u64,
    opts: TrialOptions,
) -> Result<TrialOutput, TrialError> {
    let mut out = World::new(cfg, seed, opts)?.run()?;
    out.result.seed = seed;
    Ok(out)
}

pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialResult, TrialError> {
    run_trial_with(cfg, seed, TrialOptions::default()).map(|o| o.result)
}
