//! RuleSets: the per-connection instruction objects each node executes.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::purification::{round_spec, CircuitSpec, ErrorTarget, Scheme};
use crate::sim_core::{NodeId, SimTime};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleSetId(pub u128);

impl fmt::Display for RuleSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

pub fn generate_ruleset_id(time: SimTime, address: NodeId, nonce: u64) -> RuleSetId {
    let mut h = Sha256::new();
    h.update(b"qlink-ruleset-id/v1");
    h.update(time.as_ns().to_le_bytes());
    h.update(address.to_le_bytes());
    h.update(nonce.to_le_bytes());
    let d = h.finalize();
    let mut b = [0u8; 16];
    b.copy_from_slice(&d[..16]);
    RuleSetId(u128::from_le_bytes(b))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Clause {
    /// At least this many unlocked resources assigned to the rule.
    EnoughResource(u32),
    /// Fewer than `target` measurements completed so far.
    MeasurementCount(u64),
    /// Time since the RuleSet started is below this bound.
    Timeout(SimTime),
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::EnoughResource(n) => write!(f, "EnoughResource({n})"),
            Clause::MeasurementCount(n) => write!(f, "MeasurementCount({n})"),
            Clause::Timeout(t) => write!(f, "Timeout({t})"),
        }
    }
}

/// What a clause may look at. Nothing here is mutable.
#[derive(Copy, Clone, Debug)]
pub struct ClauseContext<'a> {
    /// Lock flags of the rule's resources in allocation order.
    pub locked: &'a [bool],
    pub measurements: u64,
    pub elapsed: SimTime,
}

pub fn evaluate_clause(clause: &Clause, ctx: &ClauseContext<'_>) -> bool {
    match *clause {
        Clause::EnoughResource(need) => {
            if need == 0 {
                return true;
            }
            let mut free = 0u32;
            for &l in ctx.locked {
                if !l {
                    free += 1;
                    if free >= need {
                        return true;
                    }
                }
            }
            false
        }
        Clause::MeasurementCount(target) => ctx.measurements < target,
        Clause::Timeout(limit) => ctx.elapsed < limit,
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// Measure one pair in a uniformly random basis and report to the partner.
    TomographyMeasure,
    /// One round of the given purification circuit.
    Purify(CircuitSpec),
}

impl Action {
    pub fn arity(&self) -> usize {
        match self {
            Action::TomographyMeasure => 1,
            Action::Purify(spec) => spec.arity,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::TomographyMeasure => f.write_str("TomographyMeasure"),
            Action::Purify(spec) => write!(f, "Purify {}", spec.describe()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: u32,
    pub condition: Vec<Clause>,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub id: RuleSetId,
    pub owner: NodeId,
    pub partner: NodeId,
    pub rules: Vec<Rule>,
    /// The RuleSet ends as soon as any of these evaluates false.
    pub termination: Vec<Clause>,
}

impl RuleSet {
    /// The RuleSet as seen from the partner.
    pub fn mirrored(&self) -> RuleSet {
        RuleSet {
            owner: self.partner,
            partner: self.owner,
            ..self.clone()
        }
    }

    pub fn measurement_target(&self) -> Option<u64> {
        self.termination.iter().find_map(|c| match c {
            Clause::MeasurementCount(n) => Some(*n),
            _ => None,
        })
    }

    pub fn timeout(&self) -> Option<SimTime> {
        self.termination.iter().find_map(|c| match c {
            Clause::Timeout(t) => Some(*t),
            _ => None,
        })
    }

    pub fn is_terminated(&self, measurements: u64, elapsed: SimTime) -> bool {
        let ctx = ClauseContext {
            locked: &[],
            measurements,
            elapsed,
        };
        self.termination.iter().any(|c| !evaluate_clause(c, &ctx))
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "RuleSet {} owner={} partner={}",
            self.id, self.owner, self.partner
        )?;
        for r in &self.rules {
            let clauses: Vec<String> = r.condition.iter().map(|c| c.to_string()).collect();
            writeln!(
                f,
                "  rule {}: [{}] -> {} (arity {})",
                r.rule_id,
                clauses.join(", "),
                r.action,
                r.action.arity()
            )?;
        }
        let term: Vec<String> = self.termination.iter().map(|c| c.to_string()).collect();
        write!(f, "  terminate unless [{}]", term.join(", "))
    }
}

pub const RECURRENT_TIMEOUT: SimTime = SimTime::from_secs(120);

fn tomography_rule(rule_id: u32, n: u64) -> Rule {
    Rule {
        rule_id,
        condition: vec![Clause::MeasurementCount(n), Clause::EnoughResource(1)],
        action: Action::TomographyMeasure,
    }
}

/// One tomography rule; the termination counter equals `n`.
pub fn build_tomography_ruleset(
    id: RuleSetId,
    n_measurements: u64,
    owner: NodeId,
    partner: NodeId,
    timeout: Option<SimTime>,
) -> (RuleSet, RuleSet) {
    let mut termination = vec![Clause::MeasurementCount(n_measurements)];
    termination.extend(timeout.map(Clause::Timeout));
    let rs = RuleSet {
        id,
        owner,
        partner,
        rules: vec![tomography_rule(0, n_measurements)],
        termination,
    };
    let m = rs.mirrored();
    (rs, m)
}

/// `rounds` purification rules (alternating targets) followed by tomography.
/// Rounds at index `switch_at` and later drop to single selection.
pub fn build_recurrent_purification_ruleset(
    id: RuleSetId,
    scheme: Scheme,
    rounds: usize,
    n_measurements: u64,
    owner: NodeId,
    partner: NodeId,
    switch_at: Option<usize>,
) -> (RuleSet, RuleSet) {
    if let Some(s) = switch_at {
        assert!(s < rounds.max(1), "switch_at {s} beyond {rounds} rounds");
    }
    let mut rules = Vec::with_capacity(rounds + 1);
    for k in 0..rounds {
        let used = match switch_at {
            Some(s) if k >= s => scheme.single_selection(),
            _ => scheme,
        };
        let spec = round_spec(used, k);
        rules.push(Rule {
            rule_id: k as u32,
            condition: vec![Clause::EnoughResource(spec.arity as u32)],
            action: Action::Purify(spec),
        });
    }
    rules.push(tomography_rule(rounds as u32, n_measurements));
    let rs = RuleSet {
        id,
        owner,
        partner,
        rules,
        termination: vec![
            Clause::MeasurementCount(n_measurements),
            Clause::Timeout(RECURRENT_TIMEOUT),
        ],
    };
    let m = rs.mirrored();
    (rs, m)
}

const MAGIC: &[u8; 4] = b"QLRS";
const VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic")]
    BadMagic,
    #[error("unknown version {0}")]
    UnknownVersion(u8),
    #[error("truncated input")]
    Truncated,
    #[error("bad {what} tag {tag}")]
    BadTag { what: &'static str, tag: u8 },
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

fn put_clause(out: &mut Vec<u8>, c: &Clause) {
    match *c {
        Clause::EnoughResource(n) => {
            out.push(0);
            out.extend(n.to_le_bytes());
        }
        Clause::MeasurementCount(n) => {
            out.push(1);
            out.extend(n.to_le_bytes());
        }
        Clause::Timeout(t) => {
            out.push(2);
            out.extend(t.as_ns().to_le_bytes());
        }
    }
}

fn put_clauses(out: &mut Vec<u8>, cs: &[Clause]) {
    out.extend((cs.len() as u32).to_le_bytes());
    for c in cs {
        put_clause(out, c);
    }
}

pub fn serialize_ruleset(rs: &RuleSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.push(VERSION);
    out.extend(rs.id.0.to_le_bytes());
    out.extend(rs.owner.to_le_bytes());
    out.extend(rs.partner.to_le_bytes());
    out.extend((rs.rules.len() as u32).to_le_bytes());
    for r in &rs.rules {
        out.extend(r.rule_id.to_le_bytes());
        put_clauses(&mut out, &r.condition);
        match r.action {
            Action::TomographyMeasure => out.push(0),
            Action::Purify(spec) => {
                out.push(1);
                out.push(Scheme::ALL.iter().position(|s| *s == spec.scheme).unwrap() as u8);
                out.push(match spec.primary_target {
                    ErrorTarget::XFirst => 0,
                    ErrorTarget::ZFirst => 1,
                });
            }
        }
    }
    put_clauses(&mut out, &rs.termination);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128, DecodeError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn clauses(&mut self) -> Result<Vec<Clause>, DecodeError> {
        let n = self.u32()? as usize;
        let mut v = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            v.push(match self.u8()? {
                0 => Clause::EnoughResource(self.u32()?),
                1 => Clause::MeasurementCount(self.u64()?),
                2 => Clause::Timeout(SimTime::from_ns(self.u64()?)),
                tag => {
                    return Err(DecodeError::BadTag {
                        what: "clause",
                        tag,
                    })
                }
            });
        }
        Ok(v)
    }
}

pub fn deserialize_ruleset(bytes: &[u8]) -> Result<RuleSet, DecodeError> {
    let mut r = Reader { buf: bytes };
    if r.take(4).map_err(|_| DecodeError::Truncated)? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let v = r.u8()?;
    if v != VERSION {
        return Err(DecodeError::UnknownVersion(v));
    }
    let id = RuleSetId(r.u128()?);
    let owner = r.u16()?;
    let partner = r.u16()?;
    let n = r.u32()? as usize;
    let mut rules = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let rule_id = r.u32()?;
        let condition = r.clauses()?;
        let action = match r.u8()? {
            0 => Action::TomographyMeasure,
            1 => {
                let s = r.u8()?;
                let scheme = *Scheme::ALL.get(s as usize).ok_or(DecodeError::BadTag {
                    what: "scheme",
                    tag: s,
                })?;
                let target = match r.u8()? {
                    0 => ErrorTarget::XFirst,
                    1 => ErrorTarget::ZFirst,
                    tag => {
                        return Err(DecodeError::BadTag {
                            what: "target",
                            tag,
                        })
                    }
                };
                Action::Purify(CircuitSpec::new(scheme, target))
            }
            tag => {
                return Err(DecodeError::BadTag {
                    what: "action",
                    tag,
                })
            }
        };
        rules.push(Rule {
            rule_id,
            condition,
            action,
        });
    }
    let termination = r.clauses()?;
    if !r.buf.is_empty() {
        return Err(DecodeError::TrailingBytes(r.buf.len()));
    }
    Ok(RuleSet {
        id,
        owner,
        partner,
        rules,
        termination,
    })
}
