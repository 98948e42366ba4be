//! Event histories and the two linearisability checks: the lin-relation
//! search and the Herlihy-Wing style search over sequential orders.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memstate::Value;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Invoke,
    Response,
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Event {
    pub op: String,
    pub proc: String,
    pub kind: Kind,
    pub values: Vec<Value>,
}

impl Event {
    pub fn invoke(op: &str, proc: &str, values: Vec<Value>) -> Event {
        Event {
            op: op.into(),
            proc: proc.into(),
            kind: Kind::Invoke,
            values,
        }
    }

    pub fn response(op: &str, proc: &str, values: Vec<Value>) -> Event {
        Event {
            op: op.into(),
            proc: proc.into(),
            kind: Kind::Response,
            values,
        }
    }

    fn matches(&self, resp: &Event) -> bool {
        self.kind == Kind::Invoke
            && resp.kind == Kind::Response
            && self.op == resp.op
            && self.proc == resp.proc
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            Kind::Invoke => "I",
            Kind::Response => "R",
        };
        write!(f, "{}_{}^{}", self.op, self.proc, k)?;
        if !self.values.is_empty() {
            f.write_str("(")?;
            for (i, v) in self.values.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{v}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct History {
    pub events: Vec<Event>,
}

impl History {
    pub fn new(events: Vec<Event>) -> History {
        History { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn procs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.events {
            if !out.contains(&e.proc) {
                out.push(e.proc.clone());
            }
        }
        out
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<")?;
        for (i, e) in self.events.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str(">")
    }
}

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("malformed history JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("event {index}: unknown kind {kind:?}")]
    UnknownKind { index: usize, kind: String },
    #[error("event {index}: unsupported value {value}")]
    BadValue { index: usize, value: String },
    #[error("index {index} out of range for history of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("history is not legal")]
    Illegal,
    #[error("oracle: {0}")]
    Oracle(String),
}

/// `mp_H(i, j)`: `i` and `j` are an invocation and its matching response.
pub fn matching_pair(h: &History, i: usize, j: usize) -> Result<bool, HistoryError> {
    check_index(h, i)?;
    check_index(h, j)?;
    Ok(mp(h, i, j))
}

fn check_index(h: &History, i: usize) -> Result<(), HistoryError> {
    if i < h.len() {
        Ok(())
    } else {
        Err(HistoryError::IndexOutOfRange {
            index: i,
            len: h.len(),
        })
    }
}

pub(crate) fn mp(h: &History, i: usize, j: usize) -> bool {
    let ev = &h.events;
    if i >= j || j >= ev.len() || !ev[i].matches(&ev[j]) {
        return false;
    }
    !ev[i + 1..j].iter().any(|e| e.proc == ev[i].proc)
}

/// Index of the matching response of invocation `i`, if any.
pub fn response_of(h: &History, i: usize) -> Option<usize> {
    let ev = &h.events;
    if ev.get(i)?.kind != Kind::Invoke {
        return None;
    }
    let j = (i + 1..ev.len()).find(|&j| ev[j].proc == ev[i].proc)?;
    mp(h, i, j).then_some(j)
}

pub fn pending(h: &History, i: usize) -> Result<bool, HistoryError> {
    check_index(h, i)?;
    Ok(is_pending(h, i))
}

fn is_pending(h: &History, i: usize) -> bool {
    h.events[i].kind == Kind::Invoke && response_of(h, i).is_none()
}

/// Every response has an earlier matching invocation. An invocation is
/// always either pending or matched, so it imposes no constraint.
pub fn legal(h: &History) -> bool {
    (0..h.len()).all(|i| h.events[i].kind == Kind::Invoke || (0..i).any(|j| mp(h, j, i)))
}

/// Removes every pending invocation.
pub fn complete(h: &History) -> History {
    History::new(
        (0..h.len())
            .filter(|&i| !is_pending(h, i))
            .map(|i| h.events[i].clone())
            .collect(),
    )
}

pub fn project(h: &History, proc: &str) -> History {
    History::new(
        h.events
            .iter()
            .filter(|e| e.proc == proc)
            .cloned()
            .collect(),
    )
}

pub fn equivalent(a: &History, b: &History) -> bool {
    let mut procs = a.procs();
    for p in b.procs() {
        if !procs.contains(&p) {
            procs.push(p);
        }
    }
    procs.iter().all(|p| project(a, p) == project(b, p))
}

/// Real-time order on operations, as pairs of invocation indices.
pub fn precedes(h: &History) -> Result<Vec<(usize, usize)>, HistoryError> {
    if !legal(h) {
        return Err(HistoryError::Illegal);
    }
    let invokes: Vec<usize> = (0..h.len())
        .filter(|&i| h.events[i].kind == Kind::Invoke)
        .collect();
    let mut out = Vec::new();
    for &a in &invokes {
        if let Some(ra) = response_of(h, a) {
            for &b in &invokes {
                if ra < b {
                    out.push((a, b));
                }
            }
        }
    }
    Ok(out)
}

pub fn is_sequential(h: &History) -> bool {
    let ev = &h.events;
    let mut i = 0;
    while i < ev.len() {
        if ev[i].kind != Kind::Invoke {
            return false;
        }
        if i + 1 == ev.len() {
            return true;
        }
        if !mp(h, i, i + 1) {
            return false;
        }
        i += 2;
    }
    true
}

/// A partial map from indices of one history to indices of another.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct MatchFn(pub BTreeMap<usize, usize>);

impl MatchFn {
    pub fn from_pairs(pairs: &[(usize, usize)]) -> MatchFn {
        MatchFn(pairs.iter().copied().collect())
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.0.get(&i).copied()
    }
}

pub fn linrel(hc: &History, f: &MatchFn, hs: &History) -> bool {
    // surjective onto dom HS, and into it
    if f.0.iter().any(|(&i, &a)| i >= hc.len() || a >= hs.len()) {
        return false;
    }
    let range: HashSet<usize> = f.0.values().copied().collect();
    if range.len() != hs.len() {
        return false;
    }
    let pairs: Vec<(usize, usize)> = (0..hc.len())
        .filter_map(|i| response_of(hc, i).map(|j| (i, j)))
        .collect();
    for &(i, j) in &pairs {
        let (Some(fi), Some(fj)) = (f.get(i), f.get(j)) else {
            return false;
        };
        if fj != fi + 1 {
            return false;
        }
    }
    if f.0.iter().any(|(&i, &a)| hc.events[i] != hs.events[a]) {
        return false;
    }
    for &(_, j) in &pairs {
        for &(k, _) in &pairs {
            if j < k && f.get(j).unwrap() >= f.get(k).unwrap() {
                return false;
            }
        }
    }
    true
}

/// Pending invocations of `h`, the candidates for appended responses.
fn extendable(h: &History) -> Vec<usize> {
    (0..h.len()).filter(|&i| is_pending(h, i)).collect()
}

fn in_valdom(values: &[Value], valdom: &[Value]) -> bool {
    values
        .iter()
        .all(|v| *v == Value::Empty || valdom.contains(v))
}

/// Searches for an extension `HE` of `hc` and a matching function `f` with
/// `linrel(HE, f, hs)`. Appended responses carry values from `valdom` or Empty.
pub fn linearisable_linrel(
    hc: &History,
    hs: &History,
    valdom: &[Value],
) -> Option<(History, MatchFn)> {
    if !legal(hc) {
        return None;
    }
    let pend = extendable(hc);
    // An appended response lies in a matching pair, so it must equal some
    // response of `hs`; those are the only useful candidates.
    let mut options: Vec<Vec<Option<Event>>> = Vec::new();
    for &i in &pend {
        let inv = &hc.events[i];
        let mut opts: Vec<Option<Event>> = vec![None];
        for e in &hs.events {
            if inv.matches(e) && in_valdom(&e.values, valdom) && !opts.contains(&Some(e.clone())) {
                opts.push(Some(e.clone()));
            }
        }
        options.push(opts);
    }
    let mut choice = vec![0usize; pend.len()];
    loop {
        let mut he = hc.clone();
        for (k, &c) in choice.iter().enumerate() {
            if let Some(e) = &options[k][c] {
                he.events.push(e.clone());
            }
        }
        if legal(&he) {
            if let Some(f) = find_matchfn(&he, hs) {
                return Some((he, f));
            }
        }
        // next choice vector, last position fastest
        let mut k = pend.len();
        loop {
            if k == 0 {
                return None;
            }
            k -= 1;
            choice[k] += 1;
            if choice[k] < options[k].len() {
                break;
            }
            choice[k] = 0;
        }
    }
}

/// Backtracking search for `f` with `linrel(he, f, hs)`.
pub fn find_matchfn(he: &History, hs: &History) -> Option<MatchFn> {
    let pairs: Vec<(usize, usize)> = (0..he.len())
        .filter_map(|i| response_of(he, i).map(|j| (i, j)))
        .collect();
    let pend: Vec<usize> = (0..he.len()).filter(|&i| is_pending(he, i)).collect();
    if 2 * pairs.len() + pend.len() < hs.len() {
        return None;
    }
    let mut f = MatchFn::default();
    if assign_pairs(he, hs, &pairs, 0, &mut f, &pend) {
        Some(f)
    } else {
        None
    }
}

fn assign_pairs(
    he: &History,
    hs: &History,
    pairs: &[(usize, usize)],
    k: usize,
    f: &mut MatchFn,
    pend: &[usize],
) -> bool {
    if k == pairs.len() {
        return assign_pending(he, hs, pend, 0, f);
    }
    let (i, j) = pairs[k];
    for a in 0..hs.len().saturating_sub(1) {
        if hs.events[a] != he.events[i] || hs.events[a + 1] != he.events[j] {
            continue;
        }
        // order preservation against the pairs already placed
        let ok = pairs[..k].iter().all(|&(i2, j2)| {
            let (fi2, fj2) = (f.get(i2).unwrap(), f.get(j2).unwrap());
            (!(j2 < i) || fj2 < a) && (!(j < i2) || a + 1 < fi2)
        });
        if !ok {
            continue;
        }
        f.0.insert(i, a);
        f.0.insert(j, a + 1);
        if assign_pairs(he, hs, pairs, k + 1, f, pend) {
            return true;
        }
        f.0.remove(&i);
        f.0.remove(&j);
    }
    false
}

fn assign_pending(he: &History, hs: &History, pend: &[usize], k: usize, f: &mut MatchFn) -> bool {
    if k == pend.len() {
        let covered: HashSet<usize> = f.0.values().copied().collect();
        return covered.len() == hs.len();
    }
    let i = pend[k];
    // leave out of dom f
    if assign_pending(he, hs, pend, k + 1, f) {
        return true;
    }
    for a in 0..hs.len() {
        if hs.events[a] == he.events[i] {
            f.0.insert(i, a);
            if assign_pending(he, hs, pend, k + 1, f) {
                return true;
            }
            f.0.remove(&i);
        }
    }
    false
}

/// A sequential specification, given by an initial state and a step
/// relation from (state, operation, arguments) to (state, results).
pub trait SequentialOracle {
    type State: Clone + Eq + Hash;
    fn initial(&self) -> Self::State;
    fn step(
        &self,
        state: &Self::State,
        op: &str,
        args: &[Value],
    ) -> Result<Vec<(Self::State, Vec<Value>)>, HistoryError>;
}

/// Operations used by the sequential-order search.
#[derive(Clone, Debug)]
struct Operation {
    invoke: usize,
    response: Option<usize>,
    event: Event,
    result: Option<Vec<Value>>,
}

/// Herlihy-Wing check: some extension's completion is equivalent to a
/// sequential history accepted by `oracle` that respects real-time order.
/// Returns the lexicographically first witness.
pub fn linearisable_hw<O: SequentialOracle>(
    hc: &History,
    oracle: &O,
    valdom: &[Value],
) -> Option<History> {
    let mut out = Vec::new();
    hw_search(hc, oracle, valdom, true, &mut out).ok()?;
    out.into_iter().next()
}

/// Every witness, in lexicographic search order, without duplicates.
pub fn linearisable_hw_all<O: SequentialOracle>(
    hc: &History,
    oracle: &O,
    valdom: &[Value],
) -> Vec<History> {
    let mut out = Vec::new();
    let _ = hw_search(hc, oracle, valdom, false, &mut out);
    let mut seen = HashSet::new();
    out.retain(|h| seen.insert(h.clone()));
    out
}

fn hw_search<O: SequentialOracle>(
    hc: &History,
    oracle: &O,
    valdom: &[Value],
    first_only: bool,
    out: &mut Vec<History>,
) -> Result<(), HistoryError> {
    if !legal(hc) {
        return Err(HistoryError::Illegal);
    }
    let mut matched = Vec::new();
    let mut pend = Vec::new();
    for i in 0..hc.len() {
        if hc.events[i].kind != Kind::Invoke {
            continue;
        }
        match response_of(hc, i) {
            Some(j) => matched.push(Operation {
                invoke: i,
                response: Some(j),
                event: hc.events[i].clone(),
                result: Some(hc.events[j].values.clone()),
            }),
            None => pend.push(Operation {
                invoke: i,
                response: None,
                event: hc.events[i].clone(),
                result: None,
            }),
        }
    }
    // Extensions: which pending invocations receive a response. Subsets
    // are visited in increasing bitmask order.
    for mask in 0u64..(1u64 << pend.len()) {
        let mut ops = matched.clone();
        for (k, op) in pend.iter().enumerate() {
            if mask & (1 << k) != 0 {
                ops.push(op.clone());
            }
        }
        ops.sort_by_key(|o| o.invoke);
        let n = ops.len();
        let mut preds = vec![0u64; n];
        for a in 0..n {
            for b in 0..n {
                if let Some(ra) = ops[a].response {
                    if ra < ops[b].invoke {
                        preds[b] |= 1 << a;
                    }
                }
            }
        }
        let mut search = OrderSearch {
            ops: &ops,
            preds: &preds,
            oracle,
            valdom,
            dead: HashSet::new(),
            seq: Vec::new(),
            first_only,
            out,
        };
        let init = oracle.initial();
        if search.dfs(0, &init)? && first_only {
            return Ok(());
        }
    }
    Ok(())
}

struct OrderSearch<'a, O: SequentialOracle> {
    ops: &'a [Operation],
    preds: &'a [u64],
    oracle: &'a O,
    valdom: &'a [Value],
    dead: HashSet<(u64, O::State)>,
    seq: Vec<Event>,
    first_only: bool,
    out: &'a mut Vec<History>,
}

impl<O: SequentialOracle> OrderSearch<'_, O> {
    /// Returns true when a witness was found below this node.
    fn dfs(&mut self, placed: u64, state: &O::State) -> Result<bool, HistoryError> {
        let n = self.ops.len();
        if placed.count_ones() as usize == n {
            self.out.push(History::new(self.seq.clone()));
            return Ok(true);
        }
        if self.dead.contains(&(placed, state.clone())) {
            return Ok(false);
        }
        let mut found = false;
        for k in 0..n {
            if placed & (1 << k) != 0 || self.preds[k] & !placed != 0 {
                continue;
            }
            let op = &self.ops[k];
            let steps = self.oracle.step(state, &op.event.op, &op.event.values)?;
            for (next, res) in steps {
                let ok = match &op.result {
                    Some(r) => *r == res,
                    None => in_valdom(&res, self.valdom),
                };
                if !ok {
                    continue;
                }
                self.seq.push(op.event.clone());
                self.seq
                    .push(Event::response(&op.event.op, &op.event.proc, res.clone()));
                let sub = self.dfs(placed | (1 << k), &next)?;
                self.seq.truncate(self.seq.len() - 2);
                if sub {
                    found = true;
                    if self.first_only {
                        return Ok(true);
                    }
                }
            }
        }
        if !found {
            self.dead.insert((placed, state.clone()));
        }
        Ok(found)
    }
}

#[derive(Serialize, Deserialize)]
struct HistoryJson {
    events: Vec<EventJson>,
}

#[derive(Serialize, Deserialize)]
struct EventJson {
    op: String,
    proc: String,
    kind: String,
    #[serde(default)]
    values: Vec<serde_json::Value>,
}

pub fn value_from_json(v: &serde_json::Value) -> Option<Value> {
    match v {
        serde_json::Value::Number(n) => n.as_i64().map(Value::Int),
        serde_json::Value::String(s) if s == "Empty" => Some(Value::Empty),
        serde_json::Value::String(s) if s == "Null" => Some(Value::Null),
        serde_json::Value::Null => Some(Value::Null),
        _ => None,
    }
}

pub fn value_to_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Int(i) => serde_json::Value::from(*i),
        Value::Empty => serde_json::Value::from("Empty"),
        Value::Null => serde_json::Value::from("Null"),
        other => serde_json::Value::from(other.to_string()),
    }
}

pub fn from_json(text: &str) -> Result<History, HistoryError> {
    let raw: HistoryJson = serde_json::from_str(text)?;
    let mut events = Vec::with_capacity(raw.events.len());
    for (index, e) in raw.events.into_iter().enumerate() {
        let kind = match e.kind.as_str() {
            "invoke" => Kind::Invoke,
            "response" => Kind::Response,
            other => {
                return Err(HistoryError::UnknownKind {
                    index,
                    kind: other.to_owned(),
                })
            }
        };
        let values = e
            .values
            .iter()
            .map(|v| {
                value_from_json(v).ok_or_else(|| HistoryError::BadValue {
                    index,
                    value: v.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        events.push(Event {
            op: e.op,
            proc: e.proc,
            kind,
            values,
        });
    }
    Ok(History::new(events))
}

pub fn to_json_value(h: &History) -> serde_json::Value {
    let raw = HistoryJson {
        events: h
            .events
            .iter()
            .map(|e| EventJson {
                op: e.op.clone(),
                proc: e.proc.clone(),
                kind: match e.kind {
                    Kind::Invoke => "invoke".into(),
                    Kind::Response => "response".into(),
                },
                values: e.values.iter().map(value_to_json).collect(),
            })
            .collect(),
    };
    serde_json::to_value(raw).expect("history serialises")
}

pub fn to_json(h: &History) -> String {
    to_json_value(h).to_string()
}
