//! Per-node RuleSet executor.
//!
//! Resources enter rule 0 in herald order. Each dispatch walks the rules
//! top-down and fires every rule whose clauses hold, always on the oldest
//! unlocked resources. A purification keeps its first resource locked in
//! place until the partner's parity bits arrive, then promotes it to the
//! next rule or discards it. Because both endpoints see heralds and
//! promotions in the same order, they group the same pairs without any
//! extra coordination.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::link_layer::{PairId, ReadoutKind};
use crate::purification::CircuitOp;
use crate::ruleset_protocol::{evaluate_clause, Action, ClauseContext, RuleSet, RuleSetId};
use crate::sim_core::{NodeId, SimTime};
use crate::tomography::{Basis, CorrelationAccumulator, Outcome};

/// Local quantum operations the engine may request. It never sees labels.
pub trait QubitBackend {
    fn cnot(&mut self, control: PairId, target: PairId, now: SimTime);
    fn measure(&mut self, pair: PairId, basis: Basis, now: SimTime, kind: ReadoutKind) -> Outcome;
    /// Free the local memory slot holding this pair's half.
    fn release(&mut self, pair: PairId);
    fn random_basis(&mut self) -> Basis;
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MessageHeader {
    pub ruleset_id: RuleSetId,
    pub rule_id: u32,
    pub action_index: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageBody {
    Tomography {
        basis: Basis,
        outcome: Outcome,
    },
    /// Readout bits of the consumed qubits, bit `i` for the `i`-th readout.
    Purification {
        parity: u8,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineMessage {
    pub src: NodeId,
    pub dst: NodeId,
    pub header: MessageHeader,
    pub body: MessageBody,
}

/// Where every heralded pair ended up.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineAudit {
    pub heralded: u64,
    pub measured: u64,
    pub consumed: u64,
    pub discarded: u64,
    pub released: u64,
}

impl EngineAudit {
    pub fn balanced(&self) -> bool {
        self.heralded == self.measured + self.consumed + self.discarded + self.released
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Pending {
    Purify { kept: PairId, parity: u8 },
    Tomography { basis: Basis, outcome: Outcome },
}

#[derive(Clone, Debug, Default)]
struct RuleState {
    resources: Vec<PairId>,
    locked: Vec<bool>,
    action_index: u64,
}

impl RuleState {
    fn push(&mut self, pair: PairId) {
        self.resources.push(pair);
        self.locked.push(false);
    }

    fn remove_pair(&mut self, pair: PairId) -> bool {
        match self.resources.iter().position(|p| *p == pair) {
            Some(i) => {
                self.resources.remove(i);
                self.locked.remove(i);
                true
            }
            None => false,
        }
    }
}

pub struct RuleEngine {
    node: NodeId,
    ruleset: RuleSet,
    start: SimTime,
    rules: Vec<RuleState>,
    pending: HashMap<MessageHeader, Pending>,
    inbox: HashMap<MessageHeader, MessageBody>,
    measurements: u64,
    terminated_at: Option<SimTime>,
    timed_out: bool,
    accumulator: CorrelationAccumulator,
    joined: u64,
    open_tomography: u64,
    audit: EngineAudit,
    log: Option<Vec<String>>,
}

impl RuleEngine {
    pub fn new(node: NodeId, ruleset: RuleSet, start: SimTime) -> Self {
        let rules = vec![RuleState::default(); ruleset.rules.len()];
        let mut e = Self {
            node,
            ruleset,
            start,
            rules,
            pending: HashMap::new(),
            inbox: HashMap::new(),
            measurements: 0,
            terminated_at: None,
            timed_out: false,
            accumulator: CorrelationAccumulator::new(),
            joined: 0,
            open_tomography: 0,
            audit: EngineAudit::default(),
            log: None,
        };
        if e.ruleset.is_terminated(0, SimTime::ZERO) {
            e.terminated_at = Some(start);
        }
        e
    }

    /// Keep a CSV decision log: `time_ns,rule_id,action,pair_ids,outcome`.
    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn take_log(&mut self) -> Option<Vec<String>> {
        self.log.take()
    }

    fn note(&mut self, now: SimTime, rule: u32, what: &str, pairs: &[PairId], outcome: &str) {
        if let Some(log) = self.log.as_mut() {
            let ids: Vec<String> = pairs.iter().map(|p| p.to_string()).collect();
            log.push(format!(
                "{},{},{},{},{}",
                now.as_ns(),
                rule,
                what,
                ids.join(" "),
                outcome
            ));
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn ruleset(&self) -> &RuleSet {
        &self.ruleset
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated_at.is_some()
    }

    pub fn terminated_at(&self) -> Option<SimTime> {
        self.terminated_at
    }

    pub fn timed_out(&self) -> bool {
        self.timed_out
    }

    /// Terminated and nothing left to join (a timeout ends it regardless).
    pub fn is_finished(&self) -> bool {
        self.is_terminated() && (self.timed_out || self.open_tomography == 0)
    }

    pub fn measurements(&self) -> u64 {
        self.measurements
    }

    pub fn joined(&self) -> u64 {
        self.joined
    }

    pub fn accumulator(&self) -> &CorrelationAccumulator {
        &self.accumulator
    }

    pub fn audit(&self) -> EngineAudit {
        self.audit
    }

    /// Resources currently assigned to a rule, oldest first.
    pub fn resources(&self, rule_id: usize) -> &[PairId] {
        &self.rules[rule_id].resources
    }

    pub fn locked(&self, rule_id: usize) -> &[bool] {
        &self.rules[rule_id].locked
    }

    pub fn action_index(&self, rule_id: usize) -> u64 {
        self.rules[rule_id].action_index
    }

    pub fn on_resource_heralded<B: QubitBackend>(
        &mut self,
        pair: PairId,
        backend: &mut B,
        now: SimTime,
        out: &mut Vec<EngineMessage>,
    ) {
        self.audit.heralded += 1;
        if self.is_terminated() || self.rules.is_empty() {
            backend.release(pair);
            self.audit.released += 1;
            return;
        }
        self.rules[0].push(pair);
        self.dispatch(backend, now, out);
    }

    pub fn on_message<B: QubitBackend>(
        &mut self,
        msg: &EngineMessage,
        backend: &mut B,
        now: SimTime,
        out: &mut Vec<EngineMessage>,
    ) {
        if msg.header.ruleset_id != self.ruleset.id {
            return;
        }
        match self.pending.remove(&msg.header) {
            Some(local) => self.resolve(msg.header, local, msg.body, backend, now),
            None if !self.is_terminated() => {
                self.inbox.insert(msg.header, msg.body);
            }
            None => {}
        }
        self.dispatch(backend, now, out);
    }

    pub fn on_timeout_check<B: QubitBackend>(&mut self, backend: &mut B, now: SimTime) {
        self.check_termination(backend, now);
    }

    /// Fire rules top-down until none can fire.
    pub fn dispatch<B: QubitBackend>(
        &mut self,
        backend: &mut B,
        now: SimTime,
        out: &mut Vec<EngineMessage>,
    ) {
        if self.check_termination(backend, now) {
            return;
        }
        loop {
            let mut fired = false;
            for k in 0..self.rules.len() {
                while self.can_fire(k, now) {
                    self.fire(k, backend, now, out);
                    fired = true;
                    if self.check_termination(backend, now) {
                        return;
                    }
                }
            }
            if !fired {
                break;
            }
        }
    }

    fn can_fire(&self, k: usize, now: SimTime) -> bool {
        let ctx = ClauseContext {
            locked: &self.rules[k].locked,
            measurements: self.measurements,
            elapsed: now.saturating_sub(self.start),
        };
        let rule = &self.ruleset.rules[k];
        // a condition-free rule would fire forever
        !rule.condition.is_empty() && rule.condition.iter().all(|c| evaluate_clause(c, &ctx))
    }

    fn header(&self, k: usize) -> MessageHeader {
        MessageHeader {
            ruleset_id: self.ruleset.id,
            rule_id: k as u32,
            action_index: self.rules[k].action_index,
        }
    }

    fn take_oldest_unlocked(&self, k: usize, n: usize) -> Vec<usize> {
        let st = &self.rules[k];
        st.locked
            .iter()
            .enumerate()
            .filter(|(_, l)| !**l)
            .map(|(i, _)| i)
            .take(n)
            .collect()
    }

    fn fire<B: QubitBackend>(
        &mut self,
        k: usize,
        backend: &mut B,
        now: SimTime,
        out: &mut Vec<EngineMessage>,
    ) {
        let action = self.ruleset.rules[k].action;
        let header = self.header(k);
        self.rules[k].action_index += 1;
        let positions = self.take_oldest_unlocked(k, action.arity());
        assert_eq!(
            positions.len(),
            action.arity(),
            "rule {k} fired without resources"
        );
        let pairs: Vec<PairId> = positions
            .iter()
            .map(|&i| self.rules[k].resources[i])
            .collect();
        let local = match action {
            Action::TomographyMeasure => {
                let pair = pairs[0];
                self.rules[k].remove_pair(pair);
                let basis = backend.random_basis();
                let outcome = backend.measure(pair, basis, now, ReadoutKind::Tomography);
                backend.release(pair);
                self.audit.measured += 1;
                self.measurements += 1;
                self.open_tomography += 1;
                self.note(
                    now,
                    k as u32,
                    "measure",
                    &pairs,
                    &format!("{basis}{:+}", outcome.sign()),
                );
                Pending::Tomography { basis, outcome }
            }
            Action::Purify(spec) => {
                self.rules[k].locked[positions[0]] = true;
                for &p in &pairs[1..] {
                    self.rules[k].remove_pair(p);
                }
                let mut parity = 0u8;
                let mut bit = 0;
                for op in spec.ops() {
                    match op {
                        CircuitOp::Cnot { control, target } => {
                            backend.cnot(pairs[control], pairs[target], now)
                        }
                        CircuitOp::Measure { pair, basis } => {
                            let o =
                                backend.measure(pairs[pair], basis, now, ReadoutKind::Purification);
                            if o == Outcome::Minus {
                                parity |= 1 << bit;
                            }
                            bit += 1;
                            backend.release(pairs[pair]);
                            self.audit.consumed += 1;
                        }
                    }
                }
                self.note(now, k as u32, "purify", &pairs, &format!("{parity:b}"));
                Pending::Purify {
                    kept: pairs[0],
                    parity,
                }
            }
        };
        out.push(EngineMessage {
            src: self.node,
            dst: self.ruleset.partner,
            header,
            body: match local {
                Pending::Tomography { basis, outcome } => {
                    MessageBody::Tomography { basis, outcome }
                }
                Pending::Purify { parity, .. } => MessageBody::Purification { parity },
            },
        });
        match self.inbox.remove(&header) {
            Some(remote) => self.resolve(header, local, remote, backend, now),
            None => {
                self.pending.insert(header, local);
            }
        }
    }

    fn resolve<B: QubitBackend>(
        &mut self,
        header: MessageHeader,
        local: Pending,
        remote: MessageBody,
        backend: &mut B,
        now: SimTime,
    ) {
        match (local, remote) {
            (
                Pending::Tomography { basis, outcome },
                MessageBody::Tomography {
                    basis: rb,
                    outcome: ro,
                },
            ) => {
                let (a, b) = if self.node < self.ruleset.partner {
                    ((basis, outcome), (rb, ro))
                } else {
                    ((rb, ro), (basis, outcome))
                };
                self.accumulator.record(a, b);
                self.joined += 1;
                self.open_tomography -= 1;
            }
            (Pending::Purify { kept, parity }, MessageBody::Purification { parity: remote }) => {
                if self.is_terminated() {
                    return;
                }
                let k = header.rule_id as usize;
                let present = self.rules[k].remove_pair(kept);
                debug_assert!(present, "kept pair {kept} missing from rule {k}");
                if parity == remote {
                    self.note(now, k as u32, "promote", &[kept], "keep");
                    self.rules[k + 1].push(kept);
                } else {
                    self.note(now, k as u32, "discard", &[kept], "mismatch");
                    backend.release(kept);
                    self.audit.discarded += 1;
                }
            }
            (l, r) => panic!("message kind mismatch for {header:?}: {l:?} vs {r:?}"),
        }
    }

    /// Ends the RuleSet once any termination clause fails; releases everything.
    pub fn check_termination<B: QubitBackend>(&mut self, backend: &mut B, now: SimTime) -> bool {
        if self.is_terminated() {
            return true;
        }
        let elapsed = now.saturating_sub(self.start);
        if !self.ruleset.is_terminated(self.measurements, elapsed) {
            return false;
        }
        self.timed_out = self.ruleset.timeout().is_some_and(|t| elapsed >= t)
            && self
                .ruleset
                .measurement_target()
                .is_none_or(|n| self.measurements < n);
        self.terminated_at = Some(now);
        for st in &mut self.rules {
            for &p in &st.resources {
                backend.release(p);
                self.audit.released += 1;
            }
            st.resources.clear();
            st.locked.clear();
        }
        self.pending
            .retain(|_, p| matches!(p, Pending::Tomography { .. }));
        self.inbox
            .retain(|_, b| matches!(b, MessageBody::Tomography { .. }));
        true
    }
}
