//! Entanglement generation over a single link.
//!
//! Two architectures share one round structure. The BSA tells each node
//! when to start emitting so both photon trains reach it at the same tick,
//! each node fires one photon per free memory slot, announces the end of
//! its burst, and the BSA answers with one batched result packet plus the
//! timing of the next round. For SenderReceiver the BSA sits inside node 1
//! and node 1 resets a memory qubit after each failed attempt.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error_model::{
    apply_channel_error, dark_count_probability, evolve_memory, ErrorState, HardwareParams,
    TransitionMatrix,
};
use crate::purification::local_cnot;
use crate::sim_core::{sample_geometric, NodeId, RngStream, SimTime};
use crate::tomography::{actual_fidelity, first_outcome, second_outcome, Basis, Outcome};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    MeetInTheMiddle,
    SenderReceiver,
}

impl Architecture {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mim" | "meetinthemiddle" => Some(Architecture::MeetInTheMiddle),
            "sr" | "senderreceiver" => Some(Architecture::SenderReceiver),
            _ => None,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Architecture::MeetInTheMiddle => "mim",
            Architecture::SenderReceiver => "sr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub architecture: Architecture,
    pub total_length_km: f64,
    /// Distance of the BSA from node 0.
    pub bsa_position_km: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkConfigError {
    #[error("link length must be finite and non-negative, got {0}")]
    Length(f64),
    #[error("BSA position {pos} outside [0, {len}]")]
    BsaPosition { pos: f64, len: f64 },
}

impl LinkConfig {
    pub fn meet_in_the_middle(total_length_km: f64) -> Self {
        Self {
            architecture: Architecture::MeetInTheMiddle,
            total_length_km,
            bsa_position_km: total_length_km / 2.0,
        }
    }

    pub fn sender_receiver(total_length_km: f64) -> Self {
        Self {
            architecture: Architecture::SenderReceiver,
            total_length_km,
            bsa_position_km: total_length_km,
        }
    }

    pub fn validate(&self) -> Result<(), LinkConfigError> {
        if !self.total_length_km.is_finite() || self.total_length_km < 0.0 {
            return Err(LinkConfigError::Length(self.total_length_km));
        }
        let pos = self.bsa_position_km;
        if !(0.0..=self.total_length_km).contains(&pos) {
            return Err(LinkConfigError::BsaPosition {
                pos,
                len: self.total_length_km,
            });
        }
        Ok(())
    }

    /// Fiber length between each node and the BSA.
    pub fn arms_km(&self) -> [f64; 2] {
        let pos = match self.architecture {
            Architecture::MeetInTheMiddle => self.bsa_position_km,
            Architecture::SenderReceiver => self.total_length_km,
        };
        [pos, self.total_length_km - pos]
    }
}

/// Per-photon probability of reaching and clicking the BSA detector.
pub fn photon_detection_prob(arm_km: f64, params: &HardwareParams) -> f64 {
    params.emission_prob()
        * (1.0 - params.fiber_loss_rate_per_km).powf(arm_km)
        * params.detector_eff
}

/// Probability that one attempt heralds a genuine pair.
pub fn attempt_success_probability(link: &LinkConfig, params: &HardwareParams) -> f64 {
    let [a, b] = link.arms_km();
    0.5 * photon_detection_prob(a, params) * photon_detection_prob(b, params)
}

/// Probability that an attempt heralds because of dark counts: one photon
/// lost and the dead detector clicks, or both lost and both click.
pub fn dark_herald_probability(link: &LinkConfig, params: &HardwareParams) -> f64 {
    let [a, b] = link.arms_km();
    let (qa, qb) = (
        photon_detection_prob(a, params),
        photon_detection_prob(b, params),
    );
    let d = dark_count_probability(
        SimTime::from_ns(params.detector_recovery_ns),
        params.darkcount_rate_per_sec,
    );
    0.5 * ((qa * (1.0 - qb) + qb * (1.0 - qa)) * d + (1.0 - qa) * (1.0 - qb) * d * d)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmissionTiming {
    pub first_emit: SimTime,
    pub interval_ns: u64,
    pub burst: u32,
}

/// Burst window: one detector recovery time per memory slot.
pub fn burst_span(params: &HardwareParams) -> SimTime {
    SimTime::from_ns(params.qubits_per_qnic as u64 * params.detector_recovery_ns)
}

/// Timing handed out at `sent_at`. Both trains reach the BSA at
/// `sent_at + 2 * max_arm_latency`.
pub fn compute_emission_timing(
    link: &LinkConfig,
    params: &HardwareParams,
    sent_at: SimTime,
) -> [EmissionTiming; 2] {
    let lat = link.arms_km().map(|km| params.fiber_latency(km));
    let longest = lat[0].max(lat[1]);
    let arrival = sent_at + longest + longest;
    lat.map(|l| EmissionTiming {
        first_emit: arrival - l,
        interval_ns: params.detector_recovery_ns,
        burst: params.qubits_per_qnic as u32,
    })
}

/// Time between consecutive BSA evaluations.
pub fn round_period(link: &LinkConfig, params: &HardwareParams) -> SimTime {
    let lat = link.arms_km().map(|km| params.fiber_latency(km));
    let longest = lat[0].max(lat[1]);
    longest + longest + burst_span(params)
}

/// Long-run raw pair rate with every slot free each round.
pub fn expected_generation_rate(link: &LinkConfig, params: &HardwareParams) -> f64 {
    params.qubits_per_qnic as f64 * attempt_success_probability(link, params)
        / round_period(link, params).as_secs_f64()
}

/// Heralded attempt indices of one round, `true` for genuine.
///
/// `slot_limit` caps the number of heralds (SenderReceiver receiver memory);
/// later attempts fail once it is reached.
pub fn sample_heralds<R: Rng + ?Sized>(
    attempts: u32,
    slot_limit: Option<u32>,
    p_genuine: f64,
    p_dark: f64,
    rng: &mut R,
) -> Vec<(u32, bool)> {
    let p_tot = (p_genuine + p_dark).min(1.0);
    let mut out = Vec::new();
    let mut next: u64 = 0;
    while let Some(skip) = sample_geometric(p_tot, rng) {
        let j = next.saturating_add(skip);
        if j >= attempts as u64 {
            break;
        }
        if slot_limit.is_some_and(|lim| out.len() as u32 >= lim) {
            break;
        }
        let genuine = p_dark <= 0.0 || rng.random::<f64>() * p_tot < p_genuine;
        out.push((j as u32, genuine));
        next = j + 1;
    }
    out
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    BootUpNotification = 0,
    EmissionTiming = 1,
    BurstEnd = 2,
    BsaResults = 3,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkPayload {
    BootUpNotification,
    EmissionTiming(EmissionTiming),
    BurstEnd {
        count: u32,
    },
    /// One bit per attempt, in attempt order.
    BsaResults(Vec<bool>),
}

/// Endpoints: node ids, or [`BSA_ADDRESS`] for the BSA.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkMessage {
    pub src: u16,
    pub dst: u16,
    pub sent_at: SimTime,
    pub payload: LinkPayload,
}

pub const BSA_ADDRESS: u16 = u16::MAX;

impl LinkMessage {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            LinkPayload::BootUpNotification => MessageKind::BootUpNotification,
            LinkPayload::EmissionTiming(_) => MessageKind::EmissionTiming,
            LinkPayload::BurstEnd { .. } => MessageKind::BurstEnd,
            LinkPayload::BsaResults(_) => MessageKind::BsaResults,
        }
    }

    /// `u32` length prefix then `{kind u8, src u16, dst u16, sent_at u64, payload}`, little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = vec![self.kind() as u8];
        body.extend(self.src.to_le_bytes());
        body.extend(self.dst.to_le_bytes());
        body.extend(self.sent_at.as_ns().to_le_bytes());
        match &self.payload {
            LinkPayload::BootUpNotification => {}
            LinkPayload::EmissionTiming(t) => {
                body.extend(t.first_emit.as_ns().to_le_bytes());
                body.extend(t.interval_ns.to_le_bytes());
                body.extend(t.burst.to_le_bytes());
            }
            LinkPayload::BurstEnd { count } => body.extend(count.to_le_bytes()),
            LinkPayload::BsaResults(bits) => {
                body.extend((bits.len() as u32).to_le_bytes());
                let mut bytes = vec![0u8; bits.len().div_ceil(8)];
                for (i, &b) in bits.iter().enumerate() {
                    if b {
                        bytes[i / 8] |= 1 << (i % 8);
                    }
                }
                body.extend(bytes);
            }
        }
        let mut out = (body.len() as u32).to_le_bytes().to_vec();
        out.extend(body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<LinkMessage, WireError> {
        fn take<'a>(b: &mut &'a [u8], n: usize) -> Result<&'a [u8], WireError> {
            if b.len() < n {
                return Err(WireError::Truncated);
            }
            let (h, t) = b.split_at(n);
            *b = t;
            Ok(h)
        }
        let mut b = bytes;
        let len = u32::from_le_bytes(take(&mut b, 4)?.try_into().unwrap()) as usize;
        if b.len() != len {
            return Err(if b.len() < len {
                WireError::Truncated
            } else {
                WireError::Trailing
            });
        }
        let kind = take(&mut b, 1)?[0];
        let src = u16::from_le_bytes(take(&mut b, 2)?.try_into().unwrap());
        let dst = u16::from_le_bytes(take(&mut b, 2)?.try_into().unwrap());
        let sent_at = SimTime::from_ns(u64::from_le_bytes(take(&mut b, 8)?.try_into().unwrap()));
        let u64_at = |b: &mut &[u8]| -> Result<u64, WireError> {
            Ok(u64::from_le_bytes(take(b, 8)?.try_into().unwrap()))
        };
        let u32_at = |b: &mut &[u8]| -> Result<u32, WireError> {
            Ok(u32::from_le_bytes(take(b, 4)?.try_into().unwrap()))
        };
        let payload = match kind {
            0 => LinkPayload::BootUpNotification,
            1 => LinkPayload::EmissionTiming(EmissionTiming {
                first_emit: SimTime::from_ns(u64_at(&mut b)?),
                interval_ns: u64_at(&mut b)?,
                burst: u32_at(&mut b)?,
            }),
            2 => LinkPayload::BurstEnd {
                count: u32_at(&mut b)?,
            },
            3 => {
                let n = u32_at(&mut b)? as usize;
                let bytes = take(&mut b, n.div_ceil(8))?;
                LinkPayload::BsaResults((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
            }
            k => return Err(WireError::BadKind(k)),
        };
        if !b.is_empty() {
            return Err(WireError::Trailing);
        }
        Ok(LinkMessage {
            src,
            dst,
            sent_at,
            payload,
        })
    }
}

impl fmt::Display for LinkMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let addr = |a: u16| {
            if a == BSA_ADDRESS {
                "bsa".to_string()
            } else {
                format!("node{a}")
            }
        };
        write!(
            f,
            "{:?} {}->{}",
            self.kind(),
            addr(self.src),
            addr(self.dst)
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated link message")]
    Truncated,
    #[error("trailing bytes after link message")]
    Trailing,
    #[error("unknown link message kind {0}")]
    BadKind(u8),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotState {
    Free,
    /// Photon out, result not yet known.
    Emitted,
    /// Holds half of a heralded pair.
    Held,
}

/// Memory slots of one QNIC.
#[derive(Clone, Debug)]
pub struct QnicSlots {
    states: Vec<SlotState>,
    free: usize,
}

impl QnicSlots {
    pub fn new(n: usize) -> Self {
        Self {
            states: vec![SlotState::Free; n],
            free: n,
        }
    }

    pub fn capacity(&self) -> usize {
        self.states.len()
    }

    pub fn free(&self) -> usize {
        self.free
    }

    pub fn count(&self, s: SlotState) -> usize {
        self.states.iter().filter(|x| **x == s).count()
    }

    pub fn state(&self, slot: u32) -> SlotState {
        self.states[slot as usize]
    }

    /// Mark up to `n` free slots as emitted, lowest index first.
    pub fn emit(&mut self, n: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(n.min(self.free));
        for (i, s) in self.states.iter_mut().enumerate() {
            if out.len() == n {
                break;
            }
            if *s == SlotState::Free {
                *s = SlotState::Emitted;
                out.push(i as u32);
            }
        }
        self.free -= out.len();
        out
    }

    pub fn set(&mut self, slot: u32, to: SlotState) {
        let s = &mut self.states[slot as usize];
        if *s == SlotState::Free {
            self.free -= 1;
        }
        if to == SlotState::Free {
            self.free += 1;
        }
        *s = to;
    }
}

pub type PairId = u64;

/// Ground truth for one heralded pair. The protocol only ever sees `PairId`s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntangledPairRecord {
    pub pair_id: PairId,
    pub slots: [u32; 2],
    pub states: [ErrorState; 2],
    pub heralded_at: SimTime,
    pub last_touched: [SimTime; 2],
    /// Qubit still sitting in its memory slot.
    pub held: [bool; 2],
    /// Read out already (its label is frozen from then on).
    pub measured: [bool; 2],
    /// `(side, label at readout, basis, outcome)` of the earlier readout.
    pub first_readout: Option<(usize, ErrorState, Basis, Outcome)>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ReadoutKind {
    Tomography,
    Purification,
}

/// Labels of a pair measured on both sides for tomography.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct MeasuredPair {
    pub states: [ErrorState; 2],
    pub fidelity: f64,
}

/// Per-node random streams used by local operations.
#[derive(Clone, Debug)]
pub struct NodeStreams {
    pub memory: RngStream,
    pub gate: RngStream,
    pub measurement: RngStream,
}

impl NodeStreams {
    pub fn new(seed: u64, node: NodeId) -> Self {
        Self {
            memory: RngStream::new(seed, &format!("memory/{node}")),
            gate: RngStream::new(seed, &format!("gate/{node}")),
            measurement: RngStream::new(seed, &format!("measurement/{node}")),
        }
    }
}

/// All live pairs with lazy memory evolution and local operations.
pub struct PairRegistry {
    pairs: HashMap<PairId, EntangledPairRecord>,
    next_id: PairId,
    matrix: TransitionMatrix,
    gate2q: f64,
    gate1q: f64,
    gate1q_on_basis_change: bool,
    meas: f64,
    streams: [NodeStreams; 2],
    /// Both-sided tomography readouts in completion order.
    pub measured: Vec<MeasuredPair>,
}

impl PairRegistry {
    pub fn new(params: &HardwareParams, matrix: TransitionMatrix, seed: u64) -> Self {
        Self {
            pairs: HashMap::new(),
            next_id: 0,
            matrix,
            gate2q: params.gate2q_error,
            gate1q: params.gate1q_error,
            gate1q_on_basis_change: params.gate1q_on_basis_change,
            meas: params.meas_error,
            streams: [NodeStreams::new(seed, 0), NodeStreams::new(seed, 1)],
            measured: Vec::new(),
        }
    }

    pub fn create(
        &mut self,
        slots: [u32; 2],
        states: [ErrorState; 2],
        emitted_at: [SimTime; 2],
        heralded_at: SimTime,
    ) -> PairId {
        let id = self.next_id;
        self.next_id += 1;
        self.pairs.insert(
            id,
            EntangledPairRecord {
                pair_id: id,
                slots,
                states,
                heralded_at,
                last_touched: emitted_at,
                held: [true; 2],
                measured: [false; 2],
                first_readout: None,
            },
        );
        id
    }

    pub fn get(&self, id: PairId) -> Option<&EntangledPairRecord> {
        self.pairs.get(&id)
    }

    pub fn live(&self) -> usize {
        self.pairs.len()
    }

    pub fn created(&self) -> u64 {
        self.next_id
    }

    /// Bring one side's label up to `now`.
    fn touch(&mut self, id: PairId, side: usize, now: SimTime) {
        let rec = self.pairs.get_mut(&id).expect("touching unknown pair");
        if rec.measured[side] {
            return;
        }
        let dt = now.saturating_sub(rec.last_touched[side]);
        rec.last_touched[side] = now;
        let before = rec.states[side];
        let after = evolve_memory(before, dt, &self.matrix, &mut self.streams[side].memory);
        rec.states[side] = after;
        if after != before && matches!(after, ErrorState::Excited | ErrorState::Relaxed) {
            let other = 1 - side;
            if !rec.measured[other] && !rec.states[other].is_lifecycle() {
                rec.states[other] = ErrorState::Mixed;
            }
        }
    }

    /// Local CNOT at `side` between the halves of two pairs.
    pub fn cnot(&mut self, side: usize, control: PairId, target: PairId, now: SimTime) {
        self.touch(control, side, now);
        self.touch(target, side, now);
        let c = self.pairs[&control].states[side];
        let t = self.pairs[&target].states[side];
        let (c, t) = local_cnot(c, t, self.gate2q, &mut self.streams[side].gate);
        self.pairs.get_mut(&control).unwrap().states[side] = c;
        self.pairs.get_mut(&target).unwrap().states[side] = t;
    }

    /// Read out one half. The qubit keeps its slot until [`Self::release`].
    pub fn measure(
        &mut self,
        side: usize,
        id: PairId,
        basis: Basis,
        now: SimTime,
        kind: ReadoutKind,
    ) -> Outcome {
        self.touch(id, side, now);
        let streams = &mut self.streams[side];
        let rec = self.pairs.get_mut(&id).expect("measuring unknown pair");
        assert!(
            !rec.measured[side],
            "pair {id} measured twice at side {side}"
        );
        let mut state = rec.states[side];
        if self.gate1q_on_basis_change && basis != Basis::Z {
            state =
                crate::error_model::apply_single_qubit_error(state, self.gate1q, &mut streams.gate);
        }
        state = crate::error_model::apply_single_qubit_error(
            state,
            self.meas,
            &mut streams.measurement,
        );
        let outcome = match rec.first_readout {
            None => {
                let o = first_outcome(state, basis, &mut streams.measurement);
                rec.first_readout = Some((side, state, basis, o));
                o
            }
            Some((_, fs, fb, fo)) => {
                second_outcome((fs, fb, fo), state, basis, &mut streams.measurement)
            }
        };
        rec.states[side] = state;
        rec.measured[side] = true;
        if kind == ReadoutKind::Tomography && rec.measured[1 - side] {
            self.measured.push(MeasuredPair {
                states: rec.states,
                fidelity: actual_fidelity(rec.states[0], rec.states[1]),
            });
        }
        outcome
    }

    /// Free one side's memory slot; returns the slot index.
    pub fn release(&mut self, side: usize, id: PairId) -> u32 {
        let rec = self.pairs.get_mut(&id).expect("releasing unknown pair");
        assert!(rec.held[side], "pair {id} released twice at side {side}");
        rec.held[side] = false;
        rec.measured[side] = true;
        let slot = rec.slots[side];
        if !rec.held[1 - side] {
            self.pairs.remove(&id);
        }
        slot
    }
}

/// Build the genuine/dark pair labels for one herald: fiber noise on each
/// flying qubit, both sides Mixed for a dark-count herald.
pub fn herald_states<R: Rng + ?Sized>(
    genuine: bool,
    arms_km: [f64; 2],
    params: &HardwareParams,
    rng: &mut R,
) -> [ErrorState; 2] {
    if !genuine {
        return [ErrorState::Mixed; 2];
    }
    [
        apply_channel_error(ErrorState::Clean, arms_km[0], params, rng),
        apply_channel_error(ErrorState::Clean, arms_km[1], params, rng),
    ]
}
