//! Intervals, streams and a memoising evaluator for interval predicates.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::memstate::{
    accessed_env, eval_env, stack_addrs, Env, Expr, Location, MemState, ParamId, ProcId, Value,
};

/// A contiguous set of times. The empty interval has a single representation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Interval {
    Empty,
    Range(i64, i64),
}

impl Interval {
    pub fn new(lo: i64, hi: i64) -> Interval {
        if lo > hi {
            Interval::Empty
        } else {
            Interval::Range(lo, hi)
        }
    }

    pub fn point(t: i64) -> Interval {
        Interval::Range(t, t)
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Interval::Empty)
    }

    pub fn glb(&self) -> Option<i64> {
        match self {
            Interval::Empty => None,
            Interval::Range(lo, _) => Some(*lo),
        }
    }

    pub fn lub(&self) -> Option<i64> {
        match self {
            Interval::Empty => None,
            Interval::Range(_, hi) => Some(*hi),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Interval::Empty => 0,
            Interval::Range(lo, hi) => (hi - lo + 1) as usize,
        }
    }

    pub fn contains(&self, t: i64) -> bool {
        matches!(self, Interval::Range(lo, hi) if *lo <= t && t <= *hi)
    }

    pub fn is_subset(&self, other: &Interval) -> bool {
        match (self, other) {
            (Interval::Empty, _) => true,
            (_, Interval::Empty) => false,
            (Interval::Range(a, b), Interval::Range(c, d)) => c <= a && b <= d,
        }
    }

    /// `self ∝ next`: every time of `self` precedes every time of `next`
    /// and their union is an interval.
    pub fn adjoins(&self, next: &Interval) -> bool {
        match (self, next) {
            (Interval::Range(_, hi), Interval::Range(lo, _)) => hi + 1 == *lo,
            _ => true,
        }
    }

    pub fn times(&self) -> impl Iterator<Item = i64> {
        let (lo, hi) = match self {
            Interval::Empty => (1, 0),
            Interval::Range(lo, hi) => (*lo, *hi),
        };
        lo..=hi
    }

    /// Every subinterval, the empty one first.
    pub fn subintervals(&self) -> Vec<Interval> {
        let mut out = vec![Interval::Empty];
        if let Interval::Range(lo, hi) = *self {
            for a in lo..=hi {
                for b in a..=hi {
                    out.push(Interval::Range(a, b));
                }
            }
        }
        out
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interval::Empty => f.write_str("{}"),
            Interval::Range(lo, hi) => write!(f, "[{lo},{hi}]"),
        }
    }
}

/// A finite stream of states over the window `[0, T]`. Time 0 holds the
/// pre-state; executions occupy `[1, T]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Stream {
    pub states: Vec<MemState>,
}

impl Stream {
    pub fn new(states: Vec<MemState>) -> Stream {
        assert!(!states.is_empty(), "a stream needs at least a pre-state");
        Stream { states }
    }

    pub fn horizon(&self) -> i64 {
        self.states.len() as i64 - 1
    }

    pub fn window(&self) -> Interval {
        Interval::new(0, self.horizon())
    }

    pub fn exec(&self) -> Interval {
        Interval::new(1, self.horizon())
    }

    pub fn state(&self, t: i64) -> &MemState {
        &self.states[t as usize]
    }
}

/// One line per time step: the state's values and the write permissions.
pub fn trace(s: &Stream) -> String {
    let mut out = String::new();
    for (t, st) in s.states.iter().enumerate() {
        let uni = st.universe();
        let mut writers = Vec::new();
        for loc in uni.locations() {
            for p in uni.procs() {
                if st.has_write(loc, p) {
                    writers.push(format!("{loc}:{}", uni.proc_name(p)));
                }
            }
        }
        out.push_str(&format!(
            "{t:>3}: {}  W[{}]\n",
            st.render(),
            writers.join(" ")
        ));
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntervalError {
    #[error("interval {0} lies outside the stream window")]
    OutOfWindow(Interval),
}

static NEXT_PARAM: AtomicU32 = AtomicU32::new(1);

/// A parameter id not used anywhere else in the process.
pub fn fresh_param() -> ParamId {
    NEXT_PARAM.fetch_add(1, Ordering::Relaxed)
}

/// A set of locations, possibly depending on the current state.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum LocItem {
    Loc(Location),
    /// The location at the address the expression denotes.
    AddrOf(Expr),
    /// Every location read when evaluating the expression.
    Accessed(Expr),
    /// Key and nxt cells of the nodes reachable from the given top pointer.
    StackAddrs(Location),
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct LocSet(pub Vec<LocItem>);

impl LocSet {
    pub fn of(locs: impl IntoIterator<Item = Location>) -> LocSet {
        LocSet(locs.into_iter().map(LocItem::Loc).collect())
    }

    pub fn item(item: LocItem) -> LocSet {
        LocSet(vec![item])
    }

    pub fn union(mut self, other: LocSet) -> LocSet {
        self.0.extend(other.0);
        self
    }

    /// Locations denoted in state `s`, or `None` if some item is ill-defined.
    pub fn eval(&self, s: &MemState, env: &dyn Env) -> Option<BTreeSet<Location>> {
        let mut out = BTreeSet::new();
        for item in &self.0 {
            match item {
                LocItem::Loc(l) => {
                    out.insert(*l);
                }
                LocItem::AddrOf(e) => {
                    let v = eval_env(e, s, env).ok()?;
                    out.insert(Location::Addr(v.as_addr()?));
                }
                LocItem::Accessed(e) => out.extend(accessed_env(e, s, env).ok()?),
                LocItem::StackAddrs(top) => {
                    out.extend(stack_addrs(s, *top)?.into_iter().map(Location::Addr))
                }
            }
        }
        Some(out)
    }

    fn params(&self, out: &mut Vec<ParamId>) {
        for item in &self.0 {
            match item {
                LocItem::AddrOf(e) | LocItem::Accessed(e) => e.params(out),
                _ => {}
            }
        }
    }
}

pub type CustomFn = Arc<dyn Fn(&MemState, &dyn Env) -> bool + Send + Sync>;

/// Predicates on a single state, with permissions.
#[derive(Clone)]
pub enum StatePred {
    True,
    False,
    /// A boolean expression; ill-defined evaluation counts as false.
    Expr(Expr),
    Not(Box<StatePred>),
    And(Vec<StatePred>),
    Or(Vec<StatePred>),
    Implies(Box<StatePred>, Box<StatePred>),
    /// `p` may write some location of the set.
    Write {
        locs: LocSet,
        proc: ProcId,
    },
    /// `p` may write no location of the set, except possibly `except`.
    NoWrite {
        locs: LocSet,
        except: Option<LocItem>,
        proc: ProcId,
    },
    /// `p` may write every location of `loc`.
    HasWrite {
        loc: LocItem,
        proc: ProcId,
    },
    /// Some process may write `loc`.
    AnyWrite {
        loc: LocItem,
    },
    /// Every process of `procs` is denied every location of the set.
    Denied {
        locs: LocSet,
        procs: Vec<ProcId>,
    },
    /// No process outside `procs` may write any location of the set.
    NoInterference {
        locs: LocSet,
        procs: Vec<ProcId>,
    },
    /// `p` may read every location accessed by the expression.
    ReadAll {
        expr: Expr,
        proc: ProcId,
    },
    /// For each location: if no process of `procs` writes it, all of them read it.
    AmbientRead {
        locs: LocSet,
        procs: Vec<ProcId>,
    },
    Custom {
        name: String,
        f: CustomFn,
    },
}

impl fmt::Debug for StatePred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatePred::True => f.write_str("true"),
            StatePred::False => f.write_str("false"),
            StatePred::Expr(e) => write!(f, "{e:?}"),
            StatePred::Not(c) => write!(f, "!({c:?})"),
            StatePred::And(cs) => write!(f, "and{cs:?}"),
            StatePred::Or(cs) => write!(f, "or{cs:?}"),
            StatePred::Implies(a, b) => write!(f, "({a:?} => {b:?})"),
            StatePred::Write { locs, proc } => write!(f, "W({locs:?},{proc:?})"),
            StatePred::NoWrite { locs, except, proc } => {
                write!(f, "noW({locs:?}\\{except:?},{proc:?})")
            }
            StatePred::HasWrite { loc, proc } => write!(f, "W({loc:?},{proc:?})"),
            StatePred::AnyWrite { loc } => write!(f, "anyW({loc:?})"),
            StatePred::Denied { locs, procs } => write!(f, "D({locs:?},{procs:?})"),
            StatePred::NoInterference { locs, procs } => write!(f, "noI({locs:?},{procs:?})"),
            StatePred::ReadAll { expr, proc } => write!(f, "readAll({expr:?},{proc:?})"),
            StatePred::AmbientRead { locs, procs } => write!(f, "ambientR({locs:?},{procs:?})"),
            StatePred::Custom { name, .. } => f.write_str(name),
        }
    }
}

impl StatePred {
    pub fn expr(e: Expr) -> StatePred {
        StatePred::Expr(e)
    }

    pub fn custom(
        name: &str,
        f: impl Fn(&MemState, &dyn Env) -> bool + Send + Sync + 'static,
    ) -> StatePred {
        StatePred::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn holds(&self, s: &MemState, env: &dyn Env) -> bool {
        match self {
            StatePred::True => true,
            StatePred::False => false,
            StatePred::Expr(e) => matches!(eval_env(e, s, env), Ok(Value::Bool(true))),
            StatePred::Not(c) => !c.holds(s, env),
            StatePred::And(cs) => cs.iter().all(|c| c.holds(s, env)),
            StatePred::Or(cs) => cs.iter().any(|c| c.holds(s, env)),
            StatePred::Implies(a, b) => !a.holds(s, env) || b.holds(s, env),
            StatePred::Write { locs, proc } => match locs.eval(s, env) {
                Some(set) => set.iter().any(|l| s.has_write(*l, *proc)),
                None => false,
            },
            StatePred::NoWrite { locs, except, proc } => {
                let Some(set) = locs.eval(s, env) else {
                    return false;
                };
                let skip = match except {
                    Some(item) => match LocSet(vec![item.clone()]).eval(s, env) {
                        Some(x) => x,
                        None => return false,
                    },
                    None => BTreeSet::new(),
                };
                set.iter()
                    .filter(|l| !skip.contains(l))
                    .all(|l| !s.has_write(*l, *proc))
            }
            StatePred::HasWrite { loc, proc } => match LocSet(vec![loc.clone()]).eval(s, env) {
                Some(set) => !set.is_empty() && set.iter().all(|l| s.has_write(*l, *proc)),
                None => false,
            },
            StatePred::AnyWrite { loc } => match LocSet(vec![loc.clone()]).eval(s, env) {
                Some(set) => set
                    .iter()
                    .any(|l| s.universe().procs().any(|p| s.has_write(*l, p))),
                None => false,
            },
            StatePred::Denied { locs, procs } => match locs.eval(s, env) {
                Some(set) => set
                    .iter()
                    .all(|l| procs.iter().all(|q| s.is_denied(*l, *q))),
                None => false,
            },
            StatePred::NoInterference { locs, procs } => match locs.eval(s, env) {
                Some(set) => set.iter().all(|l| !s.interferes(*l, procs)),
                None => false,
            },
            StatePred::ReadAll { expr, proc } => s.read_all_locs(expr, *proc, env),
            StatePred::AmbientRead { locs, procs } => match locs.eval(s, env) {
                Some(set) => set.iter().all(|l| {
                    procs.iter().any(|p| s.has_write(*l, *p))
                        || procs.iter().all(|p| s.has_read(*l, *p))
                }),
                None => false,
            },
            StatePred::Custom { f, .. } => f(s, env),
        }
    }

    fn params(&self, out: &mut Vec<ParamId>) {
        match self {
            StatePred::True | StatePred::False | StatePred::Custom { .. } => {}
            StatePred::Expr(e) | StatePred::ReadAll { expr: e, .. } => e.params(out),
            StatePred::Not(c) => c.params(out),
            StatePred::And(cs) | StatePred::Or(cs) => cs.iter().for_each(|c| c.params(out)),
            StatePred::Implies(a, b) => {
                a.params(out);
                b.params(out);
            }
            StatePred::Write { locs, .. }
            | StatePred::Denied { locs, .. }
            | StatePred::NoInterference { locs, .. }
            | StatePred::AmbientRead { locs, .. } => locs.params(out),
            StatePred::NoWrite { locs, except, .. } => {
                locs.params(out);
                if let Some(item) = except {
                    LocSet(vec![item.clone()]).params(out);
                }
            }
            StatePred::HasWrite { loc, .. } | StatePred::AnyWrite { loc } => {
                LocSet(vec![loc.clone()]).params(out)
            }
        }
    }
}

/// Where an existential quantifier draws its witnesses from.
#[derive(Clone, Debug)]
pub enum Domain {
    Values(Vec<Value>),
    /// The values the expression takes at times in the stream window.
    ExprValues(Expr),
}

#[derive(Clone, Debug)]
pub enum PredKind {
    True,
    False,
    Empty,
    NonEmpty,
    /// Finite interval; every interval handled here is finite.
    Fin,
    /// Infinite interval; never holds on a finite window.
    Inf,
    Not(Pred),
    And(Vec<Pred>),
    Or(Vec<Pred>),
    Implies(Pred, Pred),
    Chop(Pred, Pred),
    Box(Pred),
    Diamond(Pred),
    Prev(Pred),
    Omega(Pred),
    /// `c` holds at every time of the interval.
    BoxDot(StatePred),
    /// `c` holds at some time of the interval.
    DiamondDot(StatePred),
    /// `c` holds at the first time of a non-empty interval.
    Ola(StatePred),
    /// `c` holds at the last time of a non-empty interval.
    Ora(StatePred),
    /// The interval is a single time at which `c` holds.
    Ceil(StatePred),
    StableLoc(LocItem),
    StableSet(LocSet),
    Exists {
        param: ParamId,
        domain: Domain,
        body: Pred,
    },
    /// A boolean expression over bound parameters only.
    Cond(Expr),
}

#[derive(Debug)]
pub struct PredNode {
    pub kind: PredKind,
    free: Vec<ParamId>,
}

/// An interval predicate: a shared, immutable tree.
#[derive(Clone, Debug)]
pub struct Pred(Arc<PredNode>);

impl Pred {
    fn mk(kind: PredKind) -> Pred {
        let mut free = Vec::new();
        let push = |out: &mut Vec<ParamId>, p: &Pred| {
            for x in &p.0.free {
                if !out.contains(x) {
                    out.push(*x);
                }
            }
        };
        match &kind {
            PredKind::True
            | PredKind::False
            | PredKind::Empty
            | PredKind::NonEmpty
            | PredKind::Fin
            | PredKind::Inf => {}
            PredKind::Not(g)
            | PredKind::Box(g)
            | PredKind::Diamond(g)
            | PredKind::Prev(g)
            | PredKind::Omega(g) => push(&mut free, g),
            PredKind::And(gs) | PredKind::Or(gs) => gs.iter().for_each(|g| push(&mut free, g)),
            PredKind::Implies(a, b) | PredKind::Chop(a, b) => {
                push(&mut free, a);
                push(&mut free, b);
            }
            PredKind::BoxDot(c)
            | PredKind::DiamondDot(c)
            | PredKind::Ola(c)
            | PredKind::Ora(c)
            | PredKind::Ceil(c) => c.params(&mut free),
            PredKind::StableLoc(item) => LocSet(vec![item.clone()]).params(&mut free),
            PredKind::StableSet(locs) => locs.params(&mut free),
            PredKind::Exists {
                param,
                domain,
                body,
            } => {
                push(&mut free, body);
                free.retain(|x| x != param);
                if let Domain::ExprValues(e) = domain {
                    e.params(&mut free);
                }
            }
            PredKind::Cond(e) => e.params(&mut free),
        }
        Pred(Arc::new(PredNode { kind, free }))
    }

    pub fn kind(&self) -> &PredKind {
        &self.0.kind
    }

    pub fn tt() -> Pred {
        Pred::mk(PredKind::True)
    }
    pub fn ff() -> Pred {
        Pred::mk(PredKind::False)
    }
    pub fn empty() -> Pred {
        Pred::mk(PredKind::Empty)
    }
    pub fn nonempty() -> Pred {
        Pred::mk(PredKind::NonEmpty)
    }
    pub fn fin() -> Pred {
        Pred::mk(PredKind::Fin)
    }
    pub fn inf() -> Pred {
        Pred::mk(PredKind::Inf)
    }
    pub fn not(g: Pred) -> Pred {
        Pred::mk(PredKind::Not(g))
    }
    pub fn and(gs: Vec<Pred>) -> Pred {
        match gs.len() {
            0 => Pred::tt(),
            1 => gs.into_iter().next().unwrap(),
            _ => Pred::mk(PredKind::And(gs)),
        }
    }
    pub fn or(gs: Vec<Pred>) -> Pred {
        match gs.len() {
            0 => Pred::ff(),
            1 => gs.into_iter().next().unwrap(),
            _ => Pred::mk(PredKind::Or(gs)),
        }
    }
    pub fn implies(a: Pred, b: Pred) -> Pred {
        Pred::mk(PredKind::Implies(a, b))
    }
    pub fn chop(a: Pred, b: Pred) -> Pred {
        Pred::mk(PredKind::Chop(a, b))
    }
    /// Chop of a non-empty list, associating to the right.
    pub fn chops(gs: Vec<Pred>) -> Pred {
        let mut it = gs.into_iter().rev();
        let mut acc = it.next().expect("chops of an empty list");
        for g in it {
            acc = Pred::chop(g, acc);
        }
        acc
    }
    pub fn always(g: Pred) -> Pred {
        Pred::mk(PredKind::Box(g))
    }
    pub fn sometime(g: Pred) -> Pred {
        Pred::mk(PredKind::Diamond(g))
    }
    pub fn prev(g: Pred) -> Pred {
        Pred::mk(PredKind::Prev(g))
    }
    pub fn omega(g: Pred) -> Pred {
        Pred::mk(PredKind::Omega(g))
    }
    pub fn boxdot(c: StatePred) -> Pred {
        Pred::mk(PredKind::BoxDot(c))
    }
    pub fn diadot(c: StatePred) -> Pred {
        Pred::mk(PredKind::DiamondDot(c))
    }
    pub fn ola(c: StatePred) -> Pred {
        Pred::mk(PredKind::Ola(c))
    }
    pub fn ora(c: StatePred) -> Pred {
        Pred::mk(PredKind::Ora(c))
    }
    pub fn ceil(c: StatePred) -> Pred {
        Pred::mk(PredKind::Ceil(c))
    }
    pub fn stable(loc: Location) -> Pred {
        Pred::mk(PredKind::StableLoc(LocItem::Loc(loc)))
    }
    pub fn stable_item(item: LocItem) -> Pred {
        Pred::mk(PredKind::StableLoc(item))
    }
    pub fn stable_set(locs: LocSet) -> Pred {
        Pred::mk(PredKind::StableSet(locs))
    }
    pub fn exists(param: ParamId, domain: Domain, body: Pred) -> Pred {
        Pred::mk(PredKind::Exists {
            param,
            domain,
            body,
        })
    }
    pub fn cond(e: Expr) -> Pred {
        Pred::mk(PredKind::Cond(e))
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }
}

/// `ABA.e`: `e` takes some value, then a different one, then the first again.
pub fn aba_pred(e: Expr) -> Pred {
    let k1 = fresh_param();
    let k2 = fresh_param();
    let at = |k: ParamId| Pred::diadot(StatePred::expr(Expr::eq(e.clone(), Expr::Param(k))));
    Pred::exists(
        k1,
        Domain::ExprValues(e.clone()),
        Pred::exists(
            k2,
            Domain::ExprValues(e.clone()),
            Pred::and(vec![
                Pred::cond(Expr::ne(Expr::Param(k1), Expr::Param(k2))),
                Pred::chops(vec![at(k1), at(k2), at(k1)]),
            ]),
        ),
    )
}

type MemoKey = (usize, u32, Interval);

/// Evaluates predicates over one stream, sharing results between calls.
pub struct Evaluator<'a> {
    stream: &'a Stream,
    memo: FxHashMap<MemoKey, bool>,
    /// Memo keys use node addresses, so every memoised node is kept alive.
    alive: FxHashMap<usize, Pred>,
    envs: Vec<Vec<(ParamId, Value)>>,
    env_ids: FxHashMap<Vec<(ParamId, Value)>, u32>,
    domains: FxHashMap<(usize, u32), Arc<Vec<Value>>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(stream: &'a Stream) -> Evaluator<'a> {
        let mut env_ids = FxHashMap::default();
        env_ids.insert(Vec::new(), 0);
        Evaluator {
            stream,
            memo: FxHashMap::default(),
            alive: FxHashMap::default(),
            envs: vec![Vec::new()],
            env_ids,
            domains: FxHashMap::default(),
        }
    }

    pub fn stream(&self) -> &Stream {
        self.stream
    }

    pub fn holds(&mut self, g: &Pred, iv: Interval) -> Result<bool, IntervalError> {
        if !iv.is_subset(&self.stream.window()) {
            return Err(IntervalError::OutOfWindow(iv));
        }
        Ok(self.eval(g, 0, iv))
    }

    fn bind(&mut self, env: u32, p: ParamId, v: Value) -> u32 {
        let mut e = self.envs[env as usize].clone();
        e.retain(|(q, _)| *q != p);
        e.push((p, v));
        e.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(&id) = self.env_ids.get(&e) {
            return id;
        }
        let id = self.envs.len() as u32;
        self.envs.push(e.clone());
        self.env_ids.insert(e, id);
        id
    }

    fn state_holds(&self, c: &StatePred, env: u32, t: i64) -> bool {
        c.holds(self.stream.state(t), &self.envs[env as usize])
    }

    fn eval(&mut self, g: &Pred, env: u32, iv: Interval) -> bool {
        let env = if g.0.free.is_empty() { 0 } else { env };
        match &g.0.kind {
            PredKind::True | PredKind::Fin => return true,
            PredKind::False | PredKind::Inf => return false,
            PredKind::Empty => return iv.is_empty(),
            PredKind::NonEmpty => return !iv.is_empty(),
            PredKind::Ola(c) => {
                return match iv.glb() {
                    Some(t) => self.state_holds(c, env, t),
                    None => false,
                }
            }
            PredKind::Ora(c) => {
                return match iv.lub() {
                    Some(t) => self.state_holds(c, env, t),
                    None => false,
                }
            }
            PredKind::Ceil(c) => {
                return iv.len() == 1 && self.state_holds(c, env, iv.glb().unwrap());
            }
            PredKind::Cond(e) => {
                return matches!(
                    eval_env(e, self.stream.state(0), &self.envs[env as usize]),
                    Ok(Value::Bool(true))
                )
            }
            _ => {}
        }
        let key = (g.id(), env, iv);
        if let Some(&b) = self.memo.get(&key) {
            return b;
        }
        let r = self.eval_inner(g, env, iv);
        self.alive.entry(key.0).or_insert_with(|| g.clone());
        self.memo.insert(key, r);
        r
    }

    fn eval_inner(&mut self, g: &Pred, env: u32, iv: Interval) -> bool {
        match &g.0.kind {
            PredKind::Not(a) => !self.eval(a, env, iv),
            PredKind::And(gs) => gs.iter().all(|a| self.eval(a, env, iv)),
            PredKind::Or(gs) => gs.iter().any(|a| self.eval(a, env, iv)),
            PredKind::Implies(a, b) => !self.eval(a, env, iv) || self.eval(b, env, iv),
            PredKind::Chop(a, b) => match iv {
                Interval::Empty => self.eval(a, env, iv) && self.eval(b, env, iv),
                Interval::Range(lo, hi) => (lo - 1..=hi).any(|m| {
                    self.eval(a, env, Interval::new(lo, m))
                        && self.eval(b, env, Interval::new(m + 1, hi))
                }),
            },
            // Recursive forms keep every subinterval result in the memo.
            PredKind::Box(a) => match iv {
                Interval::Empty => self.eval(a, env, iv),
                Interval::Range(lo, hi) => {
                    self.eval(a, env, iv)
                        && self.eval(g, env, Interval::new(lo + 1, hi))
                        && self.eval(g, env, Interval::new(lo, hi - 1))
                }
            },
            PredKind::Diamond(a) => match iv {
                Interval::Empty => self.eval(a, env, iv),
                Interval::Range(lo, hi) => {
                    self.eval(a, env, iv)
                        || self.eval(g, env, Interval::new(lo + 1, hi))
                        || self.eval(g, env, Interval::new(lo, hi - 1))
                }
            },
            PredKind::Prev(a) => {
                if self.eval(a, env, Interval::Empty) {
                    return true;
                }
                let start = 0;
                match iv.glb() {
                    Some(lo) => (start..lo).any(|x| self.eval(a, env, Interval::new(x, lo - 1))),
                    None => {
                        let hi = self.stream.horizon();
                        Interval::new(start, hi)
                            .subintervals()
                            .into_iter()
                            .any(|d| self.eval(a, env, d))
                    }
                }
            }
            PredKind::Omega(a) => {
                // Finitely many adjoining pieces each satisfying `a`. Empty
                // pieces add nothing to a finite partition, so only non-empty
                // first pieces are tried.
                match iv {
                    Interval::Empty => true,
                    Interval::Range(lo, hi) => (lo..=hi).any(|m| {
                        self.eval(a, env, Interval::new(lo, m))
                            && self.eval(g, env, Interval::new(m + 1, hi))
                    }),
                }
            }
            PredKind::BoxDot(c) => iv.times().all(|t| self.state_holds(c, env, t)),
            PredKind::DiamondDot(c) => iv.times().any(|t| self.state_holds(c, env, t)),
            PredKind::StableLoc(item) => {
                let locs = LocSet(vec![item.clone()]);
                self.stable(&locs, env, iv)
            }
            PredKind::StableSet(locs) => self.stable(locs, env, iv),
            PredKind::Exists {
                param,
                domain,
                body,
            } => {
                let values = self.domain_values(g, domain, env);
                values.iter().any(|v| {
                    let e2 = self.bind(env, *param, v.clone());
                    self.eval(body, e2, iv)
                })
            }
            _ => unreachable!("leaf predicates are handled in eval"),
        }
    }

    fn stable(&self, locs: &LocSet, env: u32, iv: Interval) -> bool {
        let envv = &self.envs[env as usize];
        iv.times().filter(|&t| t > 0).all(|t| {
            let (cur, before) = (self.stream.state(t), self.stream.state(t - 1));
            match locs.eval(cur, envv) {
                Some(set) => set.iter().all(|l| match (cur.get(*l), before.get(*l)) {
                    (Ok(a), Ok(b)) => a == b,
                    _ => false,
                }),
                None => false,
            }
        })
    }

    fn domain_values(&mut self, g: &Pred, domain: &Domain, env: u32) -> Arc<Vec<Value>> {
        match domain {
            Domain::Values(vs) => Arc::new(vs.clone()),
            Domain::ExprValues(e) => {
                let key = (g.id(), env);
                if let Some(v) = self.domains.get(&key) {
                    return v.clone();
                }
                let envv = &self.envs[env as usize];
                let mut seen = BTreeSet::new();
                for st in &self.stream.states {
                    if let Ok(v) = eval_env(e, st, envv) {
                        seen.insert(v);
                    }
                }
                let v = Arc::new(seen.into_iter().collect::<Vec<_>>());
                self.domains.insert(key, v.clone());
                v
            }
        }
    }
}

/// `g` holds over `iv` in `s`.
pub fn holds(g: &Pred, iv: Interval, s: &Stream) -> Result<bool, IntervalError> {
    Evaluator::new(s).holds(g, iv)
}

/// First (stream index, interval) where `g1` holds and `g2` does not, over
/// every subinterval of every stream window.
pub fn entails_sampled(g1: &Pred, g2: &Pred, streams: &[Stream]) -> Option<(usize, Interval)> {
    for (k, s) in streams.iter().enumerate() {
        let mut ev = Evaluator::new(s);
        for iv in s.window().subintervals() {
            if ev.eval(g1, 0, iv) && !ev.eval(g2, 0, iv) {
                return Some((k, iv));
            }
        }
    }
    None
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Classification {
    pub splits: bool,
    pub joins: bool,
    pub widens: bool,
}

/// Sampled check of whether `g` splits, joins and widens over `streams`.
pub fn classify_splits_joins_widens(g: &Pred, streams: &[Stream]) -> Classification {
    let splits = entails_sampled(g, &Pred::always(g.clone()), streams).is_none();
    let joins =
        entails_sampled(&Pred::chop(g.clone(), Pred::omega(g.clone())), g, streams).is_none();
    let widens = entails_sampled(&Pred::sometime(g.clone()), g, streams).is_none();
    Classification {
        splits,
        joins,
        widens,
    }
}
