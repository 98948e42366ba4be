//! Operational stream generation for commands, and bounded refinement checks
//! built on it.
//!
//! A process executes its command as a sequence of primitive actions. An
//! assignment reads its operands at one instant and writes its target at a
//! later one; a guard reads at one instant. The instants between actions are
//! stutters, and every stutter is attributed to exactly one primitive or idle
//! command so that permissions, labels and enforced blocks can be assigned.
//! All processes move together at each step; permissions decide which joint
//! moves are allowed.

use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_rational::Rational64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet, FxHasher};
use serde::Serialize;
use thiserror::Error;

use crate::commands::{beh, pc_var, Cmd, Enforce};
use crate::histories::{Event, History};
use crate::intervals::{trace, Evaluator, Interval, IntervalError, Pred, StatePred, Stream};
use crate::memstate::{accessed, eval, BinOp, Expr, Location, MemState, ProcId, Sym, Value};

pub const DEFAULT_CAP: usize = 1_000_000;

/// The search cap, overridable through `LINCHECK_CAP`.
pub fn default_cap() -> usize {
    std::env::var("LINCHECK_CAP")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_CAP)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Exhaustive,
    Random { seed: u64, samples: usize },
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    /// Largest time step of a generated stream.
    pub horizon: usize,
    /// Iterations of each process's outermost loop; `None` leaves it free.
    pub outer_iters: Option<u32>,
    pub mode: Mode,
    /// Extend finished streams with idle steps up to the horizon.
    pub pad: bool,
    /// Bound on search nodes (exhaustive) or walk attempts (random).
    pub cap: usize,
}

impl GenConfig {
    pub fn exhaustive(horizon: usize) -> GenConfig {
        GenConfig {
            horizon,
            outer_iters: None,
            mode: Mode::Exhaustive,
            pad: false,
            cap: default_cap(),
        }
    }

    pub fn random(horizon: usize, seed: u64, samples: usize) -> GenConfig {
        GenConfig {
            mode: Mode::Random { seed, samples },
            ..GenConfig::exhaustive(horizon)
        }
    }

    pub fn with_outer(mut self, n: u32) -> GenConfig {
        self.outer_iters = Some(n);
        self
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("horizon {0} is too small; at least 2 steps are needed")]
    HorizonTooSmall(usize),
    #[error("enumeration exceeded the cap of {0} search nodes")]
    Capped(usize),
    #[error("unsupported command structure: {0}")]
    Unsupported(String),
    #[error("initial state violates the Init condition {0}")]
    InitViolated(String),
    #[error("malformed stream: {0}")]
    Format(String),
    #[error(transparent)]
    Interval(#[from] IntervalError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenStats {
    pub nodes: usize,
    pub streams: usize,
    pub walks: usize,
}

#[derive(Clone, Debug)]
enum Scope {
    Procs(Vec<ProcId>),
    Owned(ProcId),
}

#[derive(Clone, Debug)]
enum Frame {
    Run(Arc<Cmd>),
    Loop {
        body: Arc<Cmd>,
        left: Option<u32>,
        id: u32,
    },
    Close,
}

#[derive(Clone, Debug, PartialEq)]
enum CtxEntry {
    Label(Sym),
    Block(u32),
}

#[derive(Clone, Debug)]
struct OpenBlock {
    id: u32,
    enf: Arc<Enforce>,
    start: Option<i64>,
}

#[derive(Clone, Debug)]
enum Leaf {
    Guard(Expr),
    AssignVar(Sym, Expr),
    AssignAddr(Expr, Expr),
}

#[derive(Clone, Debug)]
enum Phase {
    Ready(Leaf),
    Pending(Location, Value),
    Idle,
    Done,
}

/// What the last instant of the previous primitive was, if that primitive's
/// phase may still absorb stutters.
#[derive(Clone, Debug, PartialEq)]
enum Carry {
    None,
    Write(Location),
    Guard,
}

#[derive(Clone, Debug)]
struct Proc {
    cont: Vec<Frame>,
    ctx: Vec<CtxEntry>,
    blocks: Vec<OpenBlock>,
    phase: Phase,
    carry: Carry,
    carry_ctx: Vec<CtxEntry>,
    next_id: u32,
}

#[derive(Clone, Debug)]
enum Act {
    Read(Leaf),
    Write(Location, Value),
    /// A stutter, possibly holding write permission on a location.
    Stutter(Option<Location>),
}

#[derive(Clone, Debug)]
struct LocalMove {
    act: Act,
    label: Option<Sym>,
    /// Blocks the instant belongs to.
    active: Vec<OpenBlock>,
    /// Blocks starting at this instant.
    starting: Vec<OpenBlock>,
    /// Blocks whose last instant is this one.
    closing: Vec<OpenBlock>,
    /// Blocks whose last instant was the previous one.
    closed_earlier: Vec<OpenBlock>,
    next: Proc,
}

struct Norm {
    proc: Proc,
    closed: Vec<OpenBlock>,
}

type Guide<'a> = &'a dyn Fn(usize, &MemState) -> bool;

struct Machine<'a> {
    procs: Vec<ProcId>,
    roots: Vec<Arc<Cmd>>,
    scope: Vec<Scope>,
    pc_slot: Vec<Option<usize>>,
    outer: Option<u32>,
    init: MemState,
    /// Allow steps in which every process stutters, and only emit streams of
    /// exactly `horizon` steps.
    exact: bool,
    guide: Option<Guide<'a>>,
}

/// Top-level shape of a program: shared contexts, Init conditions and the
/// per-process branches.
pub struct Shape {
    pub shared: Vec<Location>,
    pub inits: Vec<Expr>,
    pub branches: Vec<(ProcId, Arc<Cmd>)>,
}

/// Splits `Context`/`Init` wrappers off a program and finds its branches.
/// A program without `Par` runs as a single branch of `procs[0]`.
pub fn shape(cmd: &Cmd, procs: &[ProcId]) -> Result<Shape, ExecError> {
    let mut shared = Vec::new();
    let mut inits = Vec::new();
    let mut cur = cmd;
    loop {
        match cur {
            Cmd::Context(ys, c) => {
                shared.extend(ys.iter().copied());
                cur = c;
            }
            Cmd::Init(e, c) => {
                inits.push(e.clone());
                cur = c;
            }
            Cmd::Par(bs) => {
                return Ok(Shape {
                    shared,
                    inits,
                    branches: bs.clone(),
                })
            }
            _ => {
                let Some(&p) = procs.first() else {
                    return Err(ExecError::Unsupported(
                        "no process to run the command".into(),
                    ));
                };
                if procs.len() > 1 {
                    return Err(ExecError::Unsupported(
                        "a sequential command can run on one process only".into(),
                    ));
                }
                return Ok(Shape {
                    shared,
                    inits,
                    branches: vec![(p, Arc::new(cur.clone()))],
                });
            }
        }
    }
}

fn collect_locals(c: &Cmd, out: &mut Vec<Location>, labels: &mut bool) -> Result<(), ExecError> {
    match c {
        Cmd::Chaos | Cmd::Idle | Cmd::Guard(_) | Cmd::AssignVar(..) | Cmd::AssignAddr(..) => Ok(()),
        Cmd::Seq(a, b) => {
            collect_locals(a, out, labels)?;
            collect_locals(b, out, labels)
        }
        Cmd::Choice(cs) => cs.iter().try_for_each(|c| collect_locals(c, out, labels)),
        Cmd::Omega(b) | Cmd::Enf(_, b) | Cmd::Rely(_, b) => collect_locals(b, out, labels),
        Cmd::Label(_, b) => {
            *labels = true;
            collect_locals(b, out, labels)
        }
        Cmd::Context(ys, b) => {
            out.extend(ys.iter().copied());
            collect_locals(b, out, labels)
        }
        Cmd::Init(..) => Err(ExecError::Unsupported("Init below the top level".into())),
        Cmd::Par(_) => Err(ExecError::Unsupported("nested parallel composition".into())),
    }
}

fn innermost_label(ctx: &[CtxEntry]) -> Option<Sym> {
    ctx.iter().rev().find_map(|e| match e {
        CtxEntry::Label(l) => Some(*l),
        CtxEntry::Block(_) => None,
    })
}

fn block_ids(ctx: &[CtxEntry]) -> impl Iterator<Item = u32> + '_ {
    ctx.iter().filter_map(|e| match e {
        CtxEntry::Block(id) => Some(*id),
        CtxEntry::Label(_) => None,
    })
}

impl Proc {
    fn new(root: Arc<Cmd>) -> Proc {
        Proc {
            cont: vec![Frame::Run(root)],
            ctx: Vec::new(),
            blocks: Vec::new(),
            phase: Phase::Done,
            carry: Carry::None,
            carry_ctx: Vec::new(),
            next_id: 0,
        }
    }

    fn blocks_in(&self, ctx: &[CtxEntry]) -> Vec<OpenBlock> {
        block_ids(ctx)
            .filter_map(|id| self.blocks.iter().find(|b| b.id == id).cloned())
            .collect()
    }

    /// Marks the unstarted blocks of `ctx` as starting at `t`.
    fn start_blocks(&mut self, ctx: &[CtxEntry], t: i64) -> Vec<OpenBlock> {
        let ids: Vec<u32> = block_ids(ctx).collect();
        let mut started = Vec::new();
        for b in self.blocks.iter_mut() {
            if ids.contains(&b.id) && b.start.is_none() {
                b.start = Some(t);
                started.push(b.clone());
            }
        }
        started
    }

    fn has_unstarted(&self, ctx: &[CtxEntry]) -> bool {
        block_ids(ctx).any(|id| self.blocks.iter().any(|b| b.id == id && b.start.is_none()))
    }
}

fn appended(var: Sym, events: &[Expr]) -> Expr {
    events.iter().fold(Expr::Var(var), |acc, e| {
        Expr::bin(BinOp::Snoc, acc, e.clone())
    })
}

impl<'a> Machine<'a> {
    fn new(
        cmd: &Cmd,
        procs: &[ProcId],
        z: &BTreeSet<Location>,
        init: &MemState,
        outer: Option<u32>,
    ) -> Result<Machine<'a>, ExecError> {
        let sh = shape(cmd, procs)?;
        let uni = init.universe().clone();
        let running: Vec<ProcId> = sh.branches.iter().map(|(p, _)| *p).collect();
        let mut scope = vec![Scope::Procs(running.clone()); uni.len()];
        let mut pc_slot = Vec::new();
        for (p, c) in &sh.branches {
            let mut locals = Vec::new();
            let mut labels = false;
            collect_locals(c, &mut locals, &mut labels)?;
            for l in locals {
                let slot = uni
                    .slot(l)
                    .ok_or_else(|| ExecError::Unsupported(format!("unknown location {l}")))?;
                scope[slot] = Scope::Procs(vec![*p]);
            }
            let pc = uni.slot(pc_var(&uni, *p));
            if labels && pc.is_none() {
                return Err(ExecError::Unsupported(format!(
                    "labels used but {} is not a location",
                    pc_var(&uni, *p)
                )));
            }
            if let Some(slot) = pc {
                scope[slot] = Scope::Owned(*p);
            }
            pc_slot.push(pc);
        }
        let _ = z;
        for e in &sh.inits {
            if eval(e, init).ok() != Some(Value::Bool(true)) {
                return Err(ExecError::InitViolated(format!("{e:?}")));
            }
        }
        let mut m = Machine {
            procs: running,
            roots: sh.branches.iter().map(|(_, c)| c.clone()).collect(),
            scope,
            pc_slot,
            outer,
            init: init.clone(),
            exact: false,
            guide: None,
        };
        let s0 = m.init.clone();
        m.init = m
            .idle_state(&s0)
            .ok_or_else(|| ExecError::Unsupported("initial permissions".into()))?;
        Ok(m)
    }

    fn fresh_procs(&self) -> Result<Vec<Vec<Proc>>, ExecError> {
        // Every combination of initial normalisations.
        let mut combos: Vec<Vec<Proc>> = vec![Vec::new()];
        for root in &self.roots {
            let ns = self.normalize(Proc::new(root.clone()))?;
            let mut next = Vec::new();
            for c in &combos {
                for n in &ns {
                    if !n.closed.is_empty() {
                        continue;
                    }
                    let mut c2 = c.clone();
                    c2.push(n.proc.clone());
                    next.push(c2);
                }
            }
            combos = next;
        }
        Ok(combos)
    }

    fn normalize(&self, p: Proc) -> Result<Vec<Norm>, ExecError> {
        let mut out = Vec::new();
        self.norm_rec(p, Vec::new(), Vec::new(), &mut out)?;
        Ok(out)
    }

    fn norm_rec(
        &self,
        mut p: Proc,
        mut closed: Vec<OpenBlock>,
        visited: Vec<u32>,
        out: &mut Vec<Norm>,
    ) -> Result<(), ExecError> {
        loop {
            let Some(frame) = p.cont.pop() else {
                p.phase = Phase::Done;
                out.push(Norm { proc: p, closed });
                return Ok(());
            };
            match frame {
                Frame::Close => {
                    if let Some(CtxEntry::Block(id)) = p.ctx.pop() {
                        let i = p
                            .blocks
                            .iter()
                            .position(|b| b.id == id)
                            .expect("open block");
                        let b = p.blocks.remove(i);
                        // A recording block needs at least one instant.
                        if b.start.is_none() && matches!(*b.enf, Enforce::Record(_)) {
                            return Ok(());
                        }
                        closed.push(b);
                    }
                }
                Frame::Loop { body, left, id } => match left {
                    Some(0) => {}
                    Some(n) => {
                        p.cont.push(Frame::Loop {
                            body: body.clone(),
                            left: Some(n - 1),
                            id,
                        });
                        p.cont.push(Frame::Run(body));
                    }
                    None => {
                        // Another iteration must consume at least one instant.
                        if !visited.contains(&id) {
                            let mut q = p.clone();
                            q.cont.push(Frame::Loop {
                                body: body.clone(),
                                left: None,
                                id,
                            });
                            q.cont.push(Frame::Run(body));
                            let mut v2 = visited.clone();
                            v2.push(id);
                            self.norm_rec(q, closed.clone(), v2, out)?;
                        }
                    }
                },
                Frame::Run(c) => match &*c {
                    Cmd::Chaos | Cmd::Idle => {
                        p.phase = Phase::Idle;
                        out.push(Norm { proc: p, closed });
                        return Ok(());
                    }
                    Cmd::Guard(b) => {
                        p.phase = Phase::Ready(Leaf::Guard(b.clone()));
                        out.push(Norm { proc: p, closed });
                        return Ok(());
                    }
                    Cmd::AssignVar(v, e) => {
                        p.phase = Phase::Ready(Leaf::AssignVar(*v, e.clone()));
                        out.push(Norm { proc: p, closed });
                        return Ok(());
                    }
                    Cmd::AssignAddr(ae, e) => {
                        p.phase = Phase::Ready(Leaf::AssignAddr(ae.clone(), e.clone()));
                        out.push(Norm { proc: p, closed });
                        return Ok(());
                    }
                    Cmd::Seq(a, b) => {
                        p.cont.push(Frame::Run(b.clone()));
                        p.cont.push(Frame::Run(a.clone()));
                    }
                    Cmd::Choice(cs) => {
                        let Some((last, rest)) = cs.split_last() else {
                            return Ok(());
                        };
                        for c in rest {
                            let mut q = p.clone();
                            q.cont.push(Frame::Run(c.clone()));
                            self.norm_rec(q, closed.clone(), visited.clone(), out)?;
                        }
                        p.cont.push(Frame::Run(last.clone()));
                    }
                    Cmd::Omega(body) => {
                        let nested = p.cont.iter().any(|f| matches!(f, Frame::Loop { .. }));
                        let id = p.next_id;
                        p.next_id += 1;
                        p.cont.push(Frame::Loop {
                            body: body.clone(),
                            left: if nested { None } else { self.outer },
                            id,
                        });
                    }
                    Cmd::Context(_, b) | Cmd::Rely(_, b) => p.cont.push(Frame::Run(b.clone())),
                    Cmd::Label(l, b) => {
                        p.ctx.push(CtxEntry::Label(*l));
                        p.cont.push(Frame::Close);
                        p.cont.push(Frame::Run(b.clone()));
                    }
                    Cmd::Enf(d, b) => {
                        let id = p.next_id;
                        p.next_id += 1;
                        p.blocks.push(OpenBlock {
                            id,
                            enf: Arc::new(d.clone()),
                            start: None,
                        });
                        p.ctx.push(CtxEntry::Block(id));
                        p.cont.push(Frame::Close);
                        p.cont.push(Frame::Run(b.clone()));
                    }
                    Cmd::Init(..) => {
                        return Err(ExecError::Unsupported("Init below the top level".into()))
                    }
                    Cmd::Par(_) => {
                        return Err(ExecError::Unsupported("nested parallel composition".into()))
                    }
                },
            }
        }
    }

    /// The process has nothing left to do, possibly after leaving an idle.
    fn finishable(&self, p: &Proc) -> bool {
        match p.phase {
            Phase::Done => true,
            Phase::Idle => match self.leave_idle(p) {
                Ok(ns) => ns.iter().any(|n| {
                    matches!(n.proc.phase, Phase::Done)
                        && n.closed.iter().all(|b| {
                            matches!(
                                *b.enf,
                                Enforce::OnlyAccessedBy { .. }
                                    | Enforce::IntFree { .. }
                                    | Enforce::NoWriteSome { .. }
                            )
                        })
                }),
                Err(_) => false,
            },
            _ => false,
        }
    }

    /// Positions reachable by leaving an idle phase, passing through any
    /// number of zero-length idles up to a fixed depth.
    fn leave_idle(&self, p: &Proc) -> Result<Vec<Norm>, ExecError> {
        const MAX_CHAIN: usize = 8;
        let mut out = Vec::new();
        let mut q = p.clone();
        q.phase = Phase::Done;
        q.carry = Carry::None;
        q.carry_ctx.clear();
        let mut frontier = vec![Norm {
            proc: q,
            closed: Vec::new(),
        }];
        for _ in 0..MAX_CHAIN {
            let mut next = Vec::new();
            for f in frontier {
                for mut n in self.normalize(f.proc)? {
                    let mut closed = f.closed.clone();
                    closed.append(&mut n.closed);
                    let idle = matches!(n.proc.phase, Phase::Idle);
                    if idle {
                        let mut again = n.proc.clone();
                        again.phase = Phase::Done;
                        next.push(Norm {
                            proc: again,
                            closed: closed.clone(),
                        });
                    }
                    out.push(Norm {
                        proc: n.proc,
                        closed,
                    });
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(out)
    }

    fn after_final(
        &self,
        p: Proc,
        carry: Carry,
        leaf_ctx: &[CtxEntry],
    ) -> Result<Vec<Norm>, ExecError> {
        let mut ns = self.normalize(p)?;
        for n in ns.iter_mut() {
            if n.closed.is_empty() && carry != Carry::None {
                n.proc.carry = carry.clone();
                n.proc.carry_ctx = leaf_ctx.to_vec();
            } else {
                n.proc.carry = Carry::None;
                n.proc.carry_ctx.clear();
            }
        }
        Ok(ns)
    }

    fn moves(&self, p: &Proc, t: i64) -> Result<Vec<LocalMove>, ExecError> {
        let mut out = Vec::new();
        match &p.phase {
            Phase::Done => {}
            Phase::Idle => {
                out.push(self.stay_idle(p, t, Vec::new()));
                for n in self.leave_idle(p)? {
                    match n.proc.phase {
                        Phase::Done => {}
                        Phase::Idle => out.push(self.stay_idle(&n.proc, t, n.closed)),
                        Phase::Ready(_) => {
                            self.ready_moves(&n.proc, t, n.closed, false, &mut out)?
                        }
                        Phase::Pending(..) => unreachable!("normalisation stops before a read"),
                    }
                }
            }
            Phase::Pending(loc, value) => {
                let mut q = p.clone();
                q.phase = Phase::Done;
                let active = q.blocks_in(&p.ctx);
                for n in self.after_final(q, Carry::Write(*loc), &p.ctx)? {
                    out.push(LocalMove {
                        act: Act::Write(*loc, value.clone()),
                        label: innermost_label(&p.ctx),
                        active: active.clone(),
                        starting: Vec::new(),
                        closing: n.closed,
                        closed_earlier: Vec::new(),
                        next: n.proc,
                    });
                }
                out.push(LocalMove {
                    act: Act::Stutter(None),
                    label: innermost_label(&p.ctx),
                    active,
                    starting: Vec::new(),
                    closing: Vec::new(),
                    closed_earlier: Vec::new(),
                    next: p.clone(),
                });
            }
            Phase::Ready(_) => self.ready_moves(p, t, Vec::new(), true, &mut out)?,
        }
        Ok(out)
    }

    fn stay_idle(&self, p: &Proc, t: i64, closed_earlier: Vec<OpenBlock>) -> LocalMove {
        let mut q = p.clone();
        let starting = q.start_blocks(&p.ctx, t);
        let active = q.blocks_in(&p.ctx);
        LocalMove {
            act: Act::Stutter(None),
            label: innermost_label(&p.ctx),
            active,
            starting,
            closing: Vec::new(),
            closed_earlier,
            next: q,
        }
    }

    fn ready_moves(
        &self,
        p: &Proc,
        t: i64,
        closed_earlier: Vec<OpenBlock>,
        may_stutter: bool,
        out: &mut Vec<LocalMove>,
    ) -> Result<(), ExecError> {
        let Phase::Ready(leaf) = &p.phase else {
            unreachable!()
        };
        let label = innermost_label(&p.ctx);
        let mut q = p.clone();
        q.carry = Carry::None;
        q.carry_ctx.clear();
        let starting = q.start_blocks(&p.ctx, t);
        let active = q.blocks_in(&p.ctx);
        match leaf {
            Leaf::Guard(_) => {
                let mut r = q.clone();
                r.phase = Phase::Done;
                for n in self.after_final(r, Carry::Guard, &p.ctx)? {
                    out.push(LocalMove {
                        act: Act::Read(leaf.clone()),
                        label,
                        active: active.clone(),
                        starting: starting.clone(),
                        closing: n.closed,
                        closed_earlier: closed_earlier.clone(),
                        next: n.proc,
                    });
                }
            }
            Leaf::AssignVar(..) | Leaf::AssignAddr(..) => out.push(LocalMove {
                act: Act::Read(leaf.clone()),
                label,
                active: active.clone(),
                starting: starting.clone(),
                closing: Vec::new(),
                closed_earlier: closed_earlier.clone(),
                next: q.clone(),
            }),
        }
        if !may_stutter {
            return Ok(());
        }
        if p.carry != Carry::None && p.has_unstarted(&p.ctx) {
            // Extend the previous primitive rather than open a block early.
            let hold = match &p.carry {
                Carry::Write(l) => Some(*l),
                _ => None,
            };
            out.push(LocalMove {
                act: Act::Stutter(hold),
                label: innermost_label(&p.carry_ctx),
                active: p.blocks_in(&p.carry_ctx),
                starting: Vec::new(),
                closing: Vec::new(),
                closed_earlier,
                next: p.clone(),
            });
        } else {
            // Stutter before the read, as part of the evaluation.
            out.push(LocalMove {
                act: Act::Stutter(None),
                label,
                active,
                starting,
                closing: Vec::new(),
                closed_earlier,
                next: q,
            });
        }
        Ok(())
    }

    /// State at a step where nobody acts.
    fn idle_state(&self, prev: &MemState) -> Option<MemState> {
        let mut s = prev.clone();
        s.clear_perms();
        self.assign_perms(&mut s, &[], &[], &[], &[], &[])?;
        Some(s)
    }

    #[allow(clippy::too_many_arguments)]
    fn assign_perms(
        &self,
        s: &mut MemState,
        writers: &[(Location, ProcId)],
        readers: &[(Location, ProcId)],
        claims: &[(Location, ProcId)],
        intfree: &[(BTreeSet<Location>, ProcId)],
        nowrite: &[(BTreeSet<Location>, ProcId)],
    ) -> Option<()> {
        let uni = s.universe().clone();
        let one = Rational64::from_integer(1);
        let half = Rational64::new(1, 2);
        for slot in 0..uni.len() {
            let loc = uni.location(slot);
            let mut writer = None;
            for (l, p) in writers {
                if *l == loc {
                    if writer.is_some_and(|w| w != *p) {
                        return None;
                    }
                    writer = Some(*p);
                }
            }
            let mut claim = None;
            for (l, p) in claims {
                if *l == loc {
                    if claim.is_some_and(|c| c != *p) {
                        return None;
                    }
                    claim = Some(*p);
                }
            }
            let in_scope = |p: ProcId| match &self.scope[slot] {
                Scope::Procs(ps) => ps.contains(&p),
                Scope::Owned(q) => *q == p,
            };
            if let Some(w) = writer {
                if !in_scope(w)
                    || readers.iter().any(|(l, _)| *l == loc)
                    || claim.is_some_and(|c| c != w)
                    || intfree.iter().any(|(set, q)| *q != w && set.contains(&loc))
                    || nowrite.iter().any(|(set, q)| *q == w && set.contains(&loc))
                {
                    return None;
                }
                s.set_perm_slot(slot, w, one);
                continue;
            }
            if let Some(c) = claim {
                if readers.iter().any(|(l, r)| *l == loc && *r != c) {
                    return None;
                }
                s.set_perm_slot(slot, c, half);
                continue;
            }
            match &self.scope[slot] {
                Scope::Owned(q) => s.set_perm_slot(slot, *q, one),
                Scope::Procs(ps) => {
                    if readers.iter().any(|(l, r)| *l == loc && !ps.contains(r)) {
                        return None;
                    }
                    let share = Rational64::new(1, ps.len() as i64 + 1);
                    for p in ps {
                        s.set_perm_slot(slot, *p, share);
                    }
                }
            }
        }
        Some(())
    }

    /// Builds the state at time `t` for a joint move, or `None` if the move
    /// is not allowed.
    fn step(
        &self,
        states: &[MemState],
        procs: &[Proc],
        moves: &[Option<&LocalMove>],
        t: i64,
    ) -> Result<Option<(MemState, Vec<Proc>)>, ExecError> {
        let prev = &states[t as usize - 1];
        let mut s = prev.clone();
        s.clear_perms();
        let mut writers: Vec<(Location, ProcId)> = Vec::new();
        for (i, m) in moves.iter().enumerate() {
            let Some(m) = m else { continue };
            let p = self.procs[i];
            match &m.act {
                Act::Write(loc, v) => {
                    if s.set(*loc, v.clone()).is_err() {
                        return Ok(None);
                    }
                    writers.push((*loc, p));
                }
                Act::Stutter(Some(loc)) => writers.push((*loc, p)),
                _ => {}
            }
        }
        // History records read the previous state.
        let mut recorded: Vec<Location> = Vec::new();
        for (i, m) in moves.iter().enumerate() {
            let Some(m) = m else { continue };
            let p = self.procs[i];
            for b in &m.closed_earlier {
                if let Enforce::Record(r) = &*b.enf {
                    if !r.end.is_empty() {
                        return Err(ExecError::Unsupported(
                            "a recording block must end with a primitive action".into(),
                        ));
                    }
                }
            }
            let starts = m.starting.iter().filter_map(|b| match &*b.enf {
                Enforce::Record(r) if !r.start.is_empty() => Some((r.var, &r.start)),
                _ => None,
            });
            let ends = m.closing.iter().filter_map(|b| match &*b.enf {
                Enforce::Record(r) if !r.end.is_empty() => Some((r.var, &r.end)),
                _ => None,
            });
            for (var, evs) in starts.chain(ends).collect::<Vec<_>>() {
                let loc = Location::Var(var);
                if recorded.contains(&loc) {
                    return Ok(None);
                }
                let Ok(v) = eval(&appended(var, evs), prev) else {
                    return Ok(None);
                };
                if s.set(loc, v).is_err() {
                    return Ok(None);
                }
                recorded.push(loc);
                writers.push((loc, p));
            }
        }
        for (i, m) in moves.iter().enumerate() {
            let (Some(m), Some(slot)) = (m, self.pc_slot[i]) else {
                continue;
            };
            if let Some(l) = m.label {
                s.set_slot(slot, Value::Label(l));
            }
        }
        let mut readers: Vec<(Location, ProcId)> = Vec::new();
        let mut pending: Vec<Option<(Location, Value)>> = vec![None; moves.len()];
        for (i, m) in moves.iter().enumerate() {
            let Some(m) = m else { continue };
            let p = self.procs[i];
            let Act::Read(leaf) = &m.act else { continue };
            let exprs: Vec<&Expr> = match leaf {
                Leaf::Guard(c) => {
                    if eval(c, &s).ok() != Some(Value::Bool(true)) {
                        return Ok(None);
                    }
                    vec![c]
                }
                Leaf::AssignVar(v, e) => {
                    let Ok(k) = eval(e, &s) else { return Ok(None) };
                    pending[i] = Some((Location::Var(*v), k));
                    vec![e]
                }
                Leaf::AssignAddr(ae, e) => {
                    let (Ok(a), Ok(k)) = (eval(ae, &s), eval(e, &s)) else {
                        return Ok(None);
                    };
                    let Some(a) = a.as_addr() else {
                        return Ok(None);
                    };
                    let loc = Location::Addr(a);
                    if s.get(loc).is_err() {
                        return Ok(None);
                    }
                    pending[i] = Some((loc, k));
                    vec![ae, e]
                }
            };
            for e in exprs {
                let Ok(locs) = accessed(e, &s) else {
                    return Ok(None);
                };
                readers.extend(locs.into_iter().map(|l| (l, p)));
            }
        }
        let mut claims = Vec::new();
        let mut intfree = Vec::new();
        let mut nowrite = Vec::new();
        for (i, m) in moves.iter().enumerate() {
            let Some(m) = m else { continue };
            let p = self.procs[i];
            for b in m.active.iter().chain(m.closing.iter()) {
                match &*b.enf {
                    Enforce::OnlyAccessedBy { locs, proc } => {
                        let Some(set) = locs.eval(&s, &()) else {
                            return Ok(None);
                        };
                        claims.extend(set.into_iter().map(|l| (l, *proc)));
                    }
                    Enforce::IntFree { locs, proc } => {
                        let Some(set) = locs.eval(&s, &()) else {
                            return Ok(None);
                        };
                        intfree.push((set, *proc));
                    }
                    Enforce::NoWriteSome { locs, proc } => {
                        let Some(set) = locs.eval(&s, &()) else {
                            return Ok(None);
                        };
                        nowrite.push((set, *proc));
                    }
                    Enforce::Record(_) | Enforce::Pred(_) => {}
                }
            }
            let _ = p;
        }
        if self
            .assign_perms(&mut s, &writers, &readers, &claims, &intfree, &nowrite)
            .is_none()
        {
            return Ok(None);
        }
        if let Some(g) = self.guide {
            if !g(t as usize, &s) {
                return Ok(None);
            }
        }
        // Generic enforced predicates are checked once their block is over.
        let mut post: Vec<(Pred, Interval)> = Vec::new();
        for m in moves.iter().flatten() {
            for b in &m.closing {
                if let Enforce::Pred(g) = &*b.enf {
                    post.push((g.clone(), Interval::new(b.start.unwrap_or(t), t)));
                }
            }
            for b in &m.closed_earlier {
                if let Enforce::Pred(g) = &*b.enf {
                    let iv = match b.start {
                        Some(st) => Interval::new(st, t - 1),
                        None => Interval::Empty,
                    };
                    post.push((g.clone(), iv));
                }
            }
        }
        if !post.is_empty() {
            let mut all = states[..t as usize].to_vec();
            all.push(s.clone());
            let stream = Stream::new(all);
            let mut ev = Evaluator::new(&stream);
            for (g, iv) in post {
                if !ev.holds(&g, iv)? {
                    return Ok(None);
                }
            }
        }
        let mut next = Vec::with_capacity(procs.len());
        for (i, m) in moves.iter().enumerate() {
            match m {
                Some(m) => {
                    let mut q = m.next.clone();
                    if let Some((loc, v)) = pending[i].take() {
                        q.phase = Phase::Pending(loc, v);
                    }
                    next.push(q);
                }
                None => next.push(procs[i].clone()),
            }
        }
        Ok(Some((s, next)))
    }

    /// Every allowed joint move from the current position.
    fn successors(
        &self,
        states: &[MemState],
        procs: &[Proc],
    ) -> Result<Vec<(MemState, Vec<Proc>, u64)>, ExecError> {
        let t = states.len() as i64;
        let mut local = Vec::with_capacity(procs.len());
        for p in procs {
            local.push(self.moves(p, t)?);
        }
        let mut out = Vec::new();
        let mut choice = vec![0usize; procs.len()];
        loop {
            let moves: Vec<Option<&LocalMove>> = local
                .iter()
                .zip(&choice)
                .map(|(ms, &c)| ms.get(c))
                .collect();
            // Bit i is set when process i performs a read or a write.
            let acting = moves
                .iter()
                .enumerate()
                .filter(|(_, m)| m.is_some_and(|m| !matches!(m.act, Act::Stutter(_))))
                .fold(0u64, |acc, (i, _)| acc | 1 << i);
            let has_move = moves.iter().any(|m| m.is_some());
            if has_move && (acting != 0 || self.exact) {
                if let Some((s, next)) = self.step(states, procs, &moves, t)? {
                    out.push((s, next, acting));
                }
            }
            // Odometer over local choices; processes without moves stay put.
            let mut k = procs.len();
            loop {
                if k == 0 {
                    return Ok(out);
                }
                k -= 1;
                if local[k].is_empty() {
                    continue;
                }
                choice[k] += 1;
                if choice[k] < local[k].len() {
                    break;
                }
                choice[k] = 0;
            }
        }
    }

    fn all_finishable(&self, procs: &[Proc]) -> bool {
        procs.iter().all(|p| self.finishable(p))
    }

    fn padded(&self, states: &[MemState], horizon: usize) -> Option<Vec<MemState>> {
        let mut all = states.to_vec();
        while all.len() <= horizon {
            let s = self.idle_state(all.last().unwrap())?;
            if let Some(g) = self.guide {
                if !g(all.len(), &s) {
                    return None;
                }
            }
            all.push(s);
        }
        Some(all)
    }
}

struct Emitter<'f> {
    seen: FxHashSet<u64>,
    visit: &'f mut dyn FnMut(&Stream) -> bool,
    stats: GenStats,
    stop: bool,
}

impl Emitter<'_> {
    fn emit(&mut self, states: Vec<MemState>) {
        let mut h = FxHasher::default();
        states.hash(&mut h);
        if self.seen.insert(h.finish()) {
            self.stats.streams += 1;
            if !(self.visit)(&Stream::new(states)) {
                self.stop = true;
            }
        }
    }
}

fn dfs(
    m: &Machine,
    cfg: &GenConfig,
    states: &mut Vec<MemState>,
    procs: Vec<Proc>,
    em: &mut Emitter,
) -> Result<(), ExecError> {
    if em.stop {
        return Ok(());
    }
    em.stats.nodes += 1;
    if em.stats.nodes > cfg.cap {
        return Err(ExecError::Capped(cfg.cap));
    }
    let t = states.len() - 1;
    if (!m.exact && m.all_finishable(&procs)) || (m.exact && t == cfg.horizon) {
        let out = if cfg.pad || m.exact {
            m.padded(states, cfg.horizon)
        } else {
            Some(states.clone())
        };
        if let Some(out) = out {
            em.emit(out);
        }
    }
    if t == cfg.horizon {
        return Ok(());
    }
    for (s, next, _) in m.successors(states, &procs)? {
        states.push(s);
        dfs(m, cfg, states, next, em)?;
        states.pop();
        if em.stop {
            break;
        }
    }
    Ok(())
}

fn random_walks(
    m: &Machine,
    cfg: &GenConfig,
    seed: u64,
    samples: usize,
    em: &mut Emitter,
) -> Result<(), ExecError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = m.fresh_procs()?;
    if starts.is_empty() {
        return Ok(());
    }
    let mut done = 0;
    while done < samples && !em.stop {
        em.stats.walks += 1;
        if em.stats.walks > cfg.cap.max(samples) * 4 {
            break;
        }
        let mut states = vec![m.init.clone()];
        let mut procs = starts[rng.gen_range(0..starts.len())].clone();
        // Each walk runs the processes at different random speeds.
        let speed: Vec<f64> = (0..procs.len()).map(|_| rng.gen_range(0.2..0.95)).collect();
        loop {
            let t = states.len() - 1;
            if (!m.exact && m.all_finishable(&procs)) || (m.exact && t == cfg.horizon) {
                let out = if cfg.pad || m.exact {
                    m.padded(&states, cfg.horizon)
                } else {
                    Some(states.clone())
                };
                if let Some(out) = out {
                    done += 1;
                    em.emit(out);
                }
                break;
            }
            if t == cfg.horizon {
                break;
            }
            let succ = m.successors(&states, &procs)?;
            em.stats.nodes += succ.len();
            if succ.is_empty() {
                break;
            }
            let weights: Vec<f64> = succ
                .iter()
                .map(|(_, _, acting)| {
                    speed
                        .iter()
                        .enumerate()
                        .map(|(i, v)| if acting & (1 << i) != 0 { *v } else { 1.0 - v })
                        .product()
                })
                .collect();
            let Ok(dist) = WeightedIndex::new(&weights) else {
                break;
            };
            let idx = dist.sample(&mut rng);
            let (s, next, _) = succ.into_iter().nth(idx).unwrap();
            states.push(s);
            procs = next;
        }
    }
    Ok(())
}

fn run(
    m: &Machine,
    cfg: &GenConfig,
    visit: &mut dyn FnMut(&Stream) -> bool,
) -> Result<GenStats, ExecError> {
    if cfg.horizon < if m.exact { 1 } else { 2 } {
        return Err(ExecError::HorizonTooSmall(cfg.horizon));
    }
    let mut em = Emitter {
        seen: FxHashSet::default(),
        visit,
        stats: GenStats::default(),
        stop: false,
    };
    match cfg.mode {
        Mode::Exhaustive => {
            for procs in m.fresh_procs()? {
                let mut states = vec![m.init.clone()];
                dfs(m, cfg, &mut states, procs, &mut em)?;
                if em.stop {
                    break;
                }
            }
        }
        Mode::Random { seed, samples } => random_walks(m, cfg, seed, samples, &mut em)?,
    }
    Ok(em.stats)
}

/// Calls `visit` on every distinct generated stream of `cmd` until it
/// returns false. `procs` names the process of a command without `Par`.
pub fn for_each_stream(
    cmd: &Cmd,
    procs: &[ProcId],
    init: &MemState,
    cfg: &GenConfig,
    visit: &mut dyn FnMut(&Stream) -> bool,
) -> Result<GenStats, ExecError> {
    let m = Machine::new(cmd, procs, &BTreeSet::new(), init, cfg.outer_iters)?;
    run(&m, cfg, visit)
}

/// Streams of `cmd` of exactly `cfg.horizon` steps whose every state
/// satisfies `guide`. Steps in which nobody acts are allowed, and processes
/// need not have finished at the horizon.
pub fn for_each_guided_stream(
    cmd: &Cmd,
    procs: &[ProcId],
    init: &MemState,
    cfg: &GenConfig,
    guide: Guide,
    visit: &mut dyn FnMut(&Stream) -> bool,
) -> Result<GenStats, ExecError> {
    let mut m = Machine::new(cmd, procs, &BTreeSet::new(), init, cfg.outer_iters)?;
    m.exact = true;
    m.guide = Some(guide);
    if !guide(0, &m.init) {
        return Ok(GenStats::default());
    }
    run(&m, cfg, visit)
}

pub fn enumerate_streams(
    cmd: &Cmd,
    procs: &[ProcId],
    init: &MemState,
    cfg: &GenConfig,
) -> Result<Vec<Stream>, ExecError> {
    let mut out = Vec::new();
    for_each_stream(cmd, procs, init, cfg, &mut |s| {
        out.push(s.clone());
        true
    })?;
    Ok(out)
}

/// Processes of a program: its `Par` branches, or `procs` for a sequential one.
pub fn program_procs(cmd: &Cmd, procs: &[ProcId]) -> Vec<ProcId> {
    match shape(cmd, procs) {
        Ok(sh) => sh.branches.iter().map(|(p, _)| *p).collect(),
        Err(_) => procs.to_vec(),
    }
}

/// `beh(P, Z, cmd)` holds over `iv` in `s`.
pub fn satisfies(
    cmd: &Cmd,
    procs: &[ProcId],
    z: &BTreeSet<Location>,
    s: &Stream,
    iv: Interval,
) -> Result<bool, IntervalError> {
    let uni = s.state(0).universe().clone();
    let b = beh(&uni, procs, z, cmd);
    Evaluator::new(s).holds(&b.pred, iv)
}

/// HC1 on a stream: a location nobody may write keeps its value.
pub fn hc1_holds(s: &Stream) -> bool {
    for t in 1..s.states.len() {
        let (cur, prev) = (&s.states[t], &s.states[t - 1]);
        let uni = cur.universe();
        for slot in 0..uni.len() {
            if cur.values_equal_at(prev, slot) {
                continue;
            }
            if !uni
                .procs()
                .any(|p| cur.perm_slot(slot, p) == Rational64::from_integer(1))
            {
                return false;
            }
        }
    }
    true
}

/// The final value of a history variable.
pub fn extract_history(s: &Stream, var: Location) -> Result<History, ExecError> {
    let last = s.state(s.horizon());
    match last.get(var) {
        Ok(Value::Seq(items)) => {
            let mut events = Vec::new();
            for v in items {
                match v {
                    Value::Event(e) => events.push(Event::clone(e)),
                    other => return Err(ExecError::Format(format!("{other} is not an event"))),
                }
            }
            Ok(History::new(events))
        }
        Ok(other) => Err(ExecError::Format(format!(
            "{var} holds {other}, not a sequence"
        ))),
        Err(e) => Err(ExecError::Format(e.to_string())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    HoldsOnAll,
    Counterexample,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub witness_trace: Vec<String>,
    pub witness_interval: Option<[i64; 2]>,
    pub streams_checked: usize,
    #[serde(skip)]
    pub witness: Option<Stream>,
}

impl Verdict {
    pub fn holds(streams_checked: usize) -> Verdict {
        Verdict {
            outcome: Outcome::HoldsOnAll,
            witness_trace: Vec::new(),
            witness_interval: None,
            streams_checked,
            witness: None,
        }
    }

    pub fn counterexample(s: &Stream, iv: Interval, streams_checked: usize) -> Verdict {
        Verdict {
            outcome: Outcome::Counterexample,
            witness_trace: trace(s).lines().map(str::to_owned).collect(),
            witness_interval: match iv {
                Interval::Empty => None,
                Interval::Range(lo, hi) => Some([lo, hi]),
            },
            streams_checked,
            witness: Some(s.clone()),
        }
    }

    pub fn is_holds(&self) -> bool {
        self.outcome == Outcome::HoldsOnAll
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serialises")
    }
}

/// Which subintervals of each stream a refinement check examines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Intervals {
    /// The empty interval and every subinterval of the execution window.
    All,
    /// The empty interval and every interval starting at time 1.
    Prefixes,
}

fn intervals_of(s: &Stream, which: Intervals) -> Vec<Interval> {
    let t = s.horizon();
    match which {
        Intervals::All => s.exec().subintervals(),
        Intervals::Prefixes => std::iter::once(Interval::Empty)
            .chain((1..=t).map(|b| Interval::new(1, b)))
            .collect(),
    }
}

/// Bounded behaviour refinement: on every generated stream of `conc` and
/// every examined interval where `beh(P, Z, conc)` holds, `beh(P, Y, abs)`
/// must hold too.
#[allow(clippy::too_many_arguments)]
pub fn check_behaviour_refinement(
    abs: &Cmd,
    conc: &Cmd,
    procs: &[ProcId],
    y: &BTreeSet<Location>,
    z: &BTreeSet<Location>,
    init: &MemState,
    cfg: &GenConfig,
    which: Intervals,
) -> Result<Verdict, ExecError> {
    let uni = init.universe().clone();
    let running = program_procs(conc, procs);
    let bc = beh(&uni, &running, z, conc).pred;
    let ba = beh(&uni, &program_procs(abs, procs), y, abs).pred;
    let mut checked = 0;
    let mut bad: Option<Verdict> = None;
    let mut err: Option<IntervalError> = None;
    for_each_stream(conc, procs, init, cfg, &mut |s| {
        checked += 1;
        let mut ev = Evaluator::new(s);
        for iv in intervals_of(s, which) {
            let r = ev.holds(&bc, iv).and_then(|c| Ok(c && !ev.holds(&ba, iv)?));
            match r {
                Ok(true) => {
                    bad = Some(Verdict::counterexample(s, iv, checked));
                    return false;
                }
                Ok(false) => {}
                Err(e) => {
                    err = Some(e);
                    return false;
                }
            }
        }
        true
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    Ok(bad.unwrap_or_else(|| Verdict::holds(checked)))
}

/// An abstract location with its candidate values. When `writers` is set the
/// search also chooses which process, if any, holds write permission on it.
#[derive(Clone, Debug)]
pub struct AbsSlot {
    pub loc: Location,
    pub values: Vec<Value>,
    pub writers: bool,
}

/// The finite abstract state space searched for simulation witnesses.
#[derive(Clone, Debug, Default)]
pub struct AbstractSpace {
    pub slots: Vec<AbsSlot>,
}

pub type SimFn = Arc<dyn Fn(&MemState) -> bool + Send + Sync>;

/// One conjunct of a simulation predicate over a fused state. It is tested
/// as soon as every location in `deps` has been assigned.
#[derive(Clone)]
pub struct SimConjunct {
    pub name: String,
    pub deps: Vec<Location>,
    pub holds: SimFn,
}

#[derive(Clone, Default)]
pub struct Sim {
    pub conjuncts: Vec<SimConjunct>,
}

impl Sim {
    pub fn holds(&self, s: &MemState) -> bool {
        self.conjuncts.iter().all(|c| (c.holds)(s))
    }

    pub fn state_pred(&self) -> StatePred {
        let me = self.clone();
        StatePred::custom("sim", move |s, _| me.holds(s))
    }
}

/// Backtracking search for abstract values and permissions that make `sim`
/// hold together with the concrete part of `conc`. Counts visited nodes into
/// `budget`.
pub fn find_abstract(
    sim: &Sim,
    space: &AbstractSpace,
    conc: &MemState,
    cap: usize,
    budget: &mut usize,
) -> Result<Option<MemState>, ExecError> {
    let mut s = conc.clone();
    let procs: Vec<ProcId> = s.universe().procs().collect();
    let mut assigned: Vec<Location> = Vec::new();
    if abs_rec(sim, space, &procs, &mut s, &mut assigned, 0, cap, budget)? {
        Ok(Some(s))
    } else {
        Ok(None)
    }
}

#[allow(clippy::too_many_arguments)]
fn abs_rec(
    sim: &Sim,
    space: &AbstractSpace,
    procs: &[ProcId],
    s: &mut MemState,
    assigned: &mut Vec<Location>,
    i: usize,
    cap: usize,
    budget: &mut usize,
) -> Result<bool, ExecError> {
    if i == space.slots.len() {
        return Ok(true);
    }
    let slot = &space.slots[i];
    assigned.push(slot.loc);
    let ready: Vec<&SimConjunct> = sim
        .conjuncts
        .iter()
        .filter(|c| c.deps.contains(&slot.loc) && c.deps.iter().all(|d| assigned.contains(d)))
        .collect();
    let writer_opts: Vec<Option<ProcId>> = if slot.writers {
        std::iter::once(None)
            .chain(procs.iter().copied().map(Some))
            .collect()
    } else {
        vec![None]
    };
    for v in &slot.values {
        for w in &writer_opts {
            *budget += 1;
            if *budget > cap {
                return Err(ExecError::Capped(cap));
            }
            if s.set(slot.loc, v.clone()).is_err() {
                continue;
            }
            for p in procs {
                let perm = if Some(*p) == *w { 1 } else { 0 };
                let _ = s.set_perm(slot.loc, *p, Rational64::from_integer(perm));
            }
            if ready.iter().all(|c| (c.holds)(s))
                && abs_rec(sim, space, procs, s, assigned, i + 1, cap, budget)?
            {
                return Ok(true);
            }
        }
    }
    assigned.pop();
    Ok(false)
}

/// Verdicts of the link check: without a split, or for the two halves of the
/// split (`w` throughout and `not w` throughout).
#[derive(Clone, Debug)]
pub struct LinkVerdicts {
    pub with_w: Verdict,
    pub without_w: Verdict,
}

/// Checks `g link_Y sim` on each stream where `g` holds over the execution
/// window, in the split form: for every subinterval on which `w` (or `not w`)
/// holds throughout and `sim` is satisfiable just before it, `sim` is
/// satisfiable at every instant. The abstract stream in the definition is
/// unconstrained between instants, so satisfiability per instant is exactly
/// the existence of a linking abstract stream.
pub fn check_link(
    g: &Pred,
    streams: &mut dyn FnMut(&mut dyn FnMut(&Stream) -> bool) -> Result<GenStats, ExecError>,
    sim: &Sim,
    space: &AbstractSpace,
    w: &StatePred,
    cap: usize,
) -> Result<LinkVerdicts, ExecError> {
    let mut cache: FxHashMap<u64, bool> = FxHashMap::default();
    let mut checked = 0;
    let mut bad: [Option<Verdict>; 2] = [None, None];
    let mut err: Option<ExecError> = None;
    streams(&mut |s| {
        let mut ev = Evaluator::new(s);
        match ev.holds(g, s.exec()) {
            Ok(true) => {}
            Ok(false) => return true,
            Err(e) => {
                err = Some(e.into());
                return false;
            }
        }
        checked += 1;
        let mut sat = Vec::with_capacity(s.states.len());
        for st in &s.states {
            let mut h = FxHasher::default();
            st.hash(&mut h);
            let key = h.finish();
            let ok = match cache.get(&key) {
                Some(b) => *b,
                None => {
                    let mut budget = 0;
                    match find_abstract(sim, space, st, cap, &mut budget) {
                        Ok(r) => {
                            cache.insert(key, r.is_some());
                            r.is_some()
                        }
                        Err(e) => {
                            err = Some(e);
                            return false;
                        }
                    }
                }
            };
            sat.push(ok);
        }
        let wt: Vec<bool> = s.states.iter().map(|st| w.holds(st, &())).collect();
        for (k, want) in [true, false].into_iter().enumerate() {
            if bad[k].is_some() {
                continue;
            }
            for iv in s.exec().subintervals() {
                let Interval::Range(lo, hi) = iv else {
                    continue;
                };
                let (lo, hi) = (lo as usize, hi as usize);
                if !(lo..=hi).all(|t| wt[t] == want) || !sat[lo - 1] {
                    continue;
                }
                if !(lo..=hi).all(|t| sat[t]) {
                    bad[k] = Some(Verdict::counterexample(s, iv, checked));
                    break;
                }
            }
        }
        true
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let [a, b] = bad;
    Ok(LinkVerdicts {
        with_w: a.unwrap_or_else(|| Verdict::holds(checked)),
        without_w: b.unwrap_or_else(|| Verdict::holds(checked)),
    })
}

/// Inputs of a bounded data-refinement check. Both programs and their
/// initial states live in one universe that holds the abstract and the
/// concrete locations.
pub struct DataRefinement<'a> {
    pub abs: &'a Cmd,
    pub conc: &'a Cmd,
    pub procs: &'a [ProcId],
    pub abs_init: &'a MemState,
    pub conc_init: &'a MemState,
    pub sim: &'a Sim,
    pub space: &'a AbstractSpace,
    /// Split predicate for the link check.
    pub split: StatePred,
    pub conc_cfg: GenConfig,
    /// Settings for the abstract-stream search; its horizon is ignored.
    pub abs_cfg: GenConfig,
    /// Abstract streams tried per concrete stream.
    pub abs_streams: usize,
    pub which: Intervals,
}

#[derive(Clone, Debug)]
pub struct DataVerdict {
    pub refinit: Verdict,
    pub link: LinkVerdicts,
    pub ref2: Verdict,
}

impl DataVerdict {
    pub fn is_holds(&self) -> bool {
        self.refinit.is_holds()
            && self.link.with_w.is_holds()
            && self.link.without_w.is_holds()
            && self.ref2.is_holds()
    }
}

fn all_abstract(
    space: &AbstractSpace,
    base: &MemState,
    i: usize,
    cap: usize,
    budget: &mut usize,
    visit: &mut dyn FnMut(&MemState) -> bool,
) -> Result<bool, ExecError> {
    if i == space.slots.len() {
        return Ok(visit(base));
    }
    let slot = &space.slots[i];
    let procs: Vec<ProcId> = base.universe().procs().collect();
    let writer_opts: Vec<Option<ProcId>> = if slot.writers {
        std::iter::once(None)
            .chain(procs.iter().copied().map(Some))
            .collect()
    } else {
        vec![None]
    };
    let mut s = base.clone();
    for v in &slot.values {
        for w in &writer_opts {
            *budget += 1;
            if *budget > cap {
                return Err(ExecError::Capped(cap));
            }
            if s.set(slot.loc, v.clone()).is_err() {
                continue;
            }
            for p in &procs {
                let perm = if Some(*p) == *w { 1 } else { 0 };
                let _ = s.set_perm(slot.loc, *p, Rational64::from_integer(perm));
            }
            if !all_abstract(space, &s, i + 1, cap, budget, visit)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Whether some abstract stream matches `iv` of the concrete stream `sc`.
/// The abstract program starts at `lo - 1` from any state related to the
/// concrete one there that satisfies its initialisation.
fn match_from_prestate(
    d: &DataRefinement,
    ba: &Pred,
    sc: &Stream,
    iv: Interval,
    fuse: &dyn Fn(usize, &MemState) -> MemState,
) -> Result<bool, ExecError> {
    let mut cfg = d.abs_cfg.clone();
    let (Some(lo), Some(hi)) = (iv.glb(), iv.lub()) else {
        cfg.horizon = sc.horizon() as usize;
        let mut found = false;
        for_each_guided_stream(d.abs, d.procs, d.abs_init, &cfg, &|_, _| true, &mut |sa| {
            found = matches!(Evaluator::new(sa).holds(ba, iv), Ok(true));
            !found
        })?;
        return Ok(found);
    };
    let lo = lo.max(1) as usize;
    let pre = lo - 1;
    cfg.horizon = hi as usize - pre;
    let shifted = Interval::new(iv.glb().unwrap() - pre as i64, hi - pre as i64);
    let mut budget = 0;
    let mut found = false;
    let mut err = None;
    all_abstract(
        d.space,
        &sc.states[pre],
        0,
        d.conc_cfg.cap,
        &mut budget,
        &mut |a| {
            if !d.sim.holds(a) {
                return true;
            }
            let guide = |t: usize, x: &MemState| d.sim.holds(&fuse(pre + t, x));
            let mut tried = 0;
            let r = for_each_guided_stream(d.abs, d.procs, a, &cfg, &guide, &mut |sa| {
                tried += 1;
                found = matches!(Evaluator::new(sa).holds(ba, shifted), Ok(true));
                !found && tried < d.abs_streams
            });
            match r {
                Ok(_) | Err(ExecError::InitViolated(_)) => !found,
                Err(e) => {
                    err = Some(e);
                    false
                }
            }
        },
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(found),
    }
}

/// Bounded data refinement: the initialisation condition, the link
/// obligation in split form, and the behaviour obligation under the
/// simulation. The behaviour obligation is existential in the abstract
/// stream: for each concrete stream, abstract streams that keep `sim` true at
/// every step are generated from the abstract program, and every examined
/// interval where the concrete behaviour holds must be matched by one of them.
pub fn check_data_refinement(d: &DataRefinement) -> Result<DataVerdict, ExecError> {
    let uni = d.conc_init.universe().clone();
    let abs_shape = shape(d.abs, d.procs)?;
    let conc_shape = shape(d.conc, d.procs)?;
    let cap = d.conc_cfg.cap;

    // Initialisation: abstract states related to the concrete initial state
    // must satisfy the abstract Init.
    let cinit_ok = conc_shape
        .inits
        .iter()
        .all(|e| eval(e, d.conc_init).ok() == Some(Value::Bool(true)));
    let mut refinit = Verdict::holds(1);
    if cinit_ok {
        let mut budget = 0;
        let mut failed: Option<MemState> = None;
        all_abstract(d.space, d.conc_init, 0, cap, &mut budget, &mut |s| {
            if d.sim.holds(s)
                && !abs_shape
                    .inits
                    .iter()
                    .all(|e| eval(e, s).ok() == Some(Value::Bool(true)))
            {
                failed = Some(s.clone());
                return false;
            }
            true
        })?;
        if let Some(s) = failed {
            refinit = Verdict::counterexample(&Stream::new(vec![s]), Interval::point(0), 1);
        }
    }

    let conc_procs = program_procs(d.conc, d.procs);
    let abs_procs = program_procs(d.abs, d.procs);
    let bc = beh(&uni, &conc_procs, &BTreeSet::new(), d.conc).pred;
    let ba = beh(&uni, &abs_procs, &BTreeSet::new(), d.abs).pred;

    let link = check_link(
        &bc,
        &mut |visit| for_each_stream(d.conc, d.procs, d.conc_init, &d.conc_cfg, visit),
        d.sim,
        d.space,
        &d.split,
        cap,
    )?;

    let abs_locs: Vec<Location> = d.space.slots.iter().map(|s| s.loc).collect();
    let mut checked = 0;
    let mut bad: Option<Verdict> = None;
    let mut err: Option<ExecError> = None;
    for_each_stream(d.conc, d.procs, d.conc_init, &d.conc_cfg, &mut |sc| {
        checked += 1;
        let mut cev = Evaluator::new(sc);
        let mut wanted = Vec::new();
        for iv in intervals_of(sc, d.which) {
            match cev.holds(&bc, iv) {
                Ok(true) => wanted.push(iv),
                Ok(false) => {}
                Err(e) => {
                    err = Some(e.into());
                    return false;
                }
            }
        }
        if wanted.is_empty() {
            return true;
        }
        let fuse = |t: usize, a: &MemState| -> MemState {
            let mut f = sc.states[t].clone();
            for l in &abs_locs {
                if let Ok(v) = a.get(*l) {
                    let _ = f.set(*l, v.clone());
                }
                for p in a.universe().procs() {
                    let _ = f.set_perm(*l, p, a.perm(*l, p).unwrap_or_default());
                }
            }
            f
        };
        let mut cfg = d.abs_cfg.clone();
        cfg.horizon = sc.horizon() as usize;
        // First look for abstract streams related at every instant, which
        // serve all intervals at once. An interval left over is retried from
        // every abstract state related to the concrete state just before it,
        // running the abstract program over the interval only.
        let mut remaining = wanted;
        let guide = |t: usize, a: &MemState| d.sim.holds(&fuse(t, a));
        let mut tried = 0;
        let r = for_each_guided_stream(d.abs, d.procs, d.abs_init, &cfg, &guide, &mut |sa| {
            tried += 1;
            let mut aev = Evaluator::new(sa);
            remaining.retain(|iv| !matches!(aev.holds(&ba, *iv), Ok(true)));
            !remaining.is_empty() && tried < d.abs_streams
        });
        if let Err(e) = r {
            err = Some(e);
            return false;
        }
        let mut unmatched = None;
        for iv in remaining {
            match match_from_prestate(d, &ba, sc, iv, &fuse) {
                Ok(true) => {}
                Ok(false) => {
                    unmatched = Some(iv);
                    break;
                }
                Err(e) => {
                    err = Some(e);
                    return false;
                }
            }
        }
        if let Some(iv) = unmatched {
            bad = Some(Verdict::counterexample(sc, iv, checked));
            return false;
        }
        true
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(DataVerdict {
        refinit,
        link,
        ref2: bad.unwrap_or_else(|| Verdict::holds(checked)),
    })
}
