//! Commands and their interval-predicate behaviours.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::intervals::{fresh_param, Domain, LocItem, LocSet, Pred, StatePred};
use crate::memstate::{BinOp, Expr, Location, ProcId, Sym, Universe, Value, NXT};

/// Condition attached to a command by `Enf`.
#[derive(Clone, Debug)]
pub enum Enforce {
    /// Every other process is denied the locations throughout.
    OnlyAccessedBy { locs: LocSet, proc: ProcId },
    /// No other process writes the locations throughout.
    IntFree { locs: LocSet, proc: ProcId },
    /// `proc` itself never writes the locations.
    NoWriteSome { locs: LocSet, proc: ProcId },
    /// History recording into a sequence variable.
    Record(Record),
    /// Any other interval predicate. The executor checks these after the fact.
    Pred(Pred),
}

/// Appends `start` events to `var` at the first instant of the block and
/// `end` events at its last instant. An empty list records nothing.
#[derive(Clone, Debug)]
pub struct Record {
    pub var: Sym,
    pub proc: ProcId,
    pub start: Vec<Expr>,
    pub end: Vec<Expr>,
}

impl Enforce {
    pub fn to_pred(&self, uni: &Universe) -> Pred {
        match self {
            Enforce::OnlyAccessedBy { locs, proc } => only_accessed_by(uni, locs.clone(), *proc),
            Enforce::IntFree { locs, proc } => int_free(locs.clone(), *proc),
            Enforce::NoWriteSome { locs, proc } => Pred::not(write_some_loc(locs.clone(), *proc)),
            Enforce::Record(r) => {
                let mut parts = Vec::new();
                if !r.start.is_empty() {
                    parts.push(start_record(r.proc, r.var, &r.start));
                }
                if !r.end.is_empty() {
                    parts.push(end_record(r.proc, r.var, &r.end));
                }
                Pred::and(parts)
            }
            Enforce::Pred(g) => g.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Cmd {
    Chaos,
    Idle,
    Guard(Expr),
    AssignVar(Sym, Expr),
    /// Assignment to the address denoted by the first expression.
    AssignAddr(Expr, Expr),
    Seq(Arc<Cmd>, Arc<Cmd>),
    /// Nondeterministic choice; the empty choice blocks.
    Choice(Vec<Arc<Cmd>>),
    Omega(Arc<Cmd>),
    Par(Vec<(ProcId, Arc<Cmd>)>),
    Context(Vec<Location>, Arc<Cmd>),
    Label(Sym, Arc<Cmd>),
    Init(Expr, Arc<Cmd>),
    Enf(Enforce, Arc<Cmd>),
    Rely(Pred, Arc<Cmd>),
}

impl Cmd {
    pub fn guard(c: Expr) -> Cmd {
        Cmd::Guard(c)
    }

    pub fn assign(v: &str, e: Expr) -> Cmd {
        Cmd::AssignVar(Sym::new(v), e)
    }

    pub fn assign_addr(ae: Expr, e: Expr) -> Cmd {
        Cmd::AssignAddr(ae, e)
    }

    pub fn seq(a: Cmd, b: Cmd) -> Cmd {
        Cmd::Seq(Arc::new(a), Arc::new(b))
    }

    /// Right-nested sequence; the empty sequence is `Idle`.
    pub fn seqs(cs: Vec<Cmd>) -> Cmd {
        let mut it = cs.into_iter().rev();
        let Some(mut acc) = it.next() else {
            return Cmd::Idle;
        };
        for c in it {
            acc = Cmd::seq(c, acc);
        }
        acc
    }

    pub fn choice(cs: Vec<Cmd>) -> Cmd {
        Cmd::Choice(cs.into_iter().map(Arc::new).collect())
    }

    pub fn omega(c: Cmd) -> Cmd {
        Cmd::Omega(Arc::new(c))
    }

    pub fn par(cs: Vec<(ProcId, Cmd)>) -> Cmd {
        Cmd::Par(cs.into_iter().map(|(p, c)| (p, Arc::new(c))).collect())
    }

    pub fn context(locs: Vec<Location>, c: Cmd) -> Cmd {
        Cmd::Context(locs, Arc::new(c))
    }

    pub fn label(l: &str, c: Cmd) -> Cmd {
        Cmd::Label(Sym::new(l), Arc::new(c))
    }

    pub fn init(c: Expr, body: Cmd) -> Cmd {
        Cmd::Init(c, Arc::new(body))
    }

    pub fn enf(d: Enforce, c: Cmd) -> Cmd {
        Cmd::Enf(d, Arc::new(c))
    }

    pub fn rely(r: Pred, c: Cmd) -> Cmd {
        Cmd::Rely(r, Arc::new(c))
    }
}

impl fmt::Display for Cmd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cmd::Chaos => f.write_str("Chaos"),
            Cmd::Idle => f.write_str("Idle"),
            Cmd::Guard(c) => write!(f, "[{c:?}]"),
            Cmd::AssignVar(v, e) => write!(f, "{v} := {e:?}"),
            Cmd::AssignAddr(a, e) => write!(f, "*{a:?} := {e:?}"),
            Cmd::Seq(a, b) => write!(f, "({a} ; {b})"),
            Cmd::Choice(cs) => {
                f.write_str("(")?;
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" |~| ")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
            Cmd::Omega(c) => write!(f, "({c})^w"),
            Cmd::Par(cs) => {
                f.write_str("(")?;
                for (i, (p, c)) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" || ")?;
                    }
                    write!(f, "{}: {c}", p.0)?;
                }
                f.write_str(")")
            }
            Cmd::Context(locs, c) => write!(f, "Context {locs:?} . {c}"),
            Cmd::Label(l, c) => write!(f, "{l}: {c}"),
            Cmd::Init(e, c) => write!(f, "Init {e:?} . {c}"),
            Cmd::Enf(d, c) => write!(f, "Enf {d:?} . {c}"),
            Cmd::Rely(r, c) => write!(f, "Rely {r:?} . {c}"),
        }
    }
}

/// Name of the program-counter variable of a process.
pub fn pc_var(uni: &Universe, p: ProcId) -> Location {
    Location::var(&format!("pc_{}", uni.proc_name(p)))
}

fn others(uni: &Universe, procs: &[ProcId]) -> Vec<ProcId> {
    uni.procs().filter(|q| !procs.contains(q)).collect()
}

/// `p` writes none of `z`.
pub fn idle_pred(p: ProcId, z: &BTreeSet<Location>) -> Pred {
    if z.is_empty() {
        return Pred::tt();
    }
    Pred::boxdot(StatePred::NoWrite {
        locs: LocSet::of(z.iter().copied()),
        except: None,
        proc: p,
    })
}

/// `e` evaluates to `k` at some instant at which `p` can read it, while `p`
/// writes nothing in `z`.
pub fn eval_pred(p: ProcId, z: &BTreeSet<Location>, e: Expr, k: Expr) -> Pred {
    Pred::and(vec![
        Pred::diadot(StatePred::And(vec![
            StatePred::expr(Expr::eq(e.clone(), k)),
            StatePred::ReadAll { expr: e, proc: p },
        ])),
        idle_pred(p, z),
    ])
}

/// `p` holds write permission on `va` and `va` holds `k` throughout a
/// non-empty interval, writing nothing else in `z`.
pub fn update_pred(p: ProcId, z: &BTreeSet<Location>, va: LocItem, value: Expr, k: Expr) -> Pred {
    let mut parts = Vec::new();
    if !z.is_empty() {
        parts.push(Pred::boxdot(StatePred::NoWrite {
            locs: LocSet::of(z.iter().copied()),
            except: Some(va.clone()),
            proc: p,
        }));
    }
    parts.push(Pred::nonempty());
    parts.push(Pred::boxdot(StatePred::And(vec![
        StatePred::expr(Expr::eq(value, k)),
        StatePred::HasWrite { loc: va, proc: p },
    ])));
    Pred::and(parts)
}

/// Some location of `locs` is written by `p` at some instant.
pub fn write_some_loc(locs: LocSet, p: ProcId) -> Pred {
    Pred::diadot(StatePred::Write { locs, proc: p })
}

/// No process other than `p` writes a location of `locs`.
pub fn int_free(locs: LocSet, p: ProcId) -> Pred {
    Pred::boxdot(StatePred::NoInterference {
        locs,
        procs: vec![p],
    })
}

/// Every process other than `p` is denied every location of `locs`.
pub fn only_accessed_by(uni: &Universe, locs: LocSet, p: ProcId) -> Pred {
    Pred::boxdot(StatePred::Denied {
        locs,
        procs: others(uni, &[p]),
    })
}

/// Outsiders are denied the locations; when no member writes one, every
/// member may read it.
pub fn local(uni: &Universe, locs: LocSet, procs: &[ProcId]) -> Pred {
    Pred::and(vec![
        Pred::boxdot(StatePred::Denied {
            locs: locs.clone(),
            procs: others(uni, procs),
        }),
        Pred::boxdot(StatePred::AmbientRead {
            locs,
            procs: procs.to_vec(),
        }),
    ])
}

fn appended(var: Sym, events: &[Expr]) -> Expr {
    events.iter().fold(Expr::Var(var), |acc, e| {
        Expr::bin(BinOp::Snoc, acc, e.clone())
    })
}

/// The events are appended to `var` by `p` at the first instant.
pub fn start_record(p: ProcId, var: Sym, events: &[Expr]) -> Pred {
    let k = fresh_param();
    Pred::exists(
        k,
        Domain::ExprValues(Expr::Var(var)),
        Pred::and(vec![
            Pred::prev(Pred::ora(StatePred::expr(Expr::eq(
                appended(var, events),
                Expr::Param(k),
            )))),
            Pred::ola(StatePred::And(vec![
                StatePred::expr(Expr::eq(Expr::Var(var), Expr::Param(k))),
                StatePred::HasWrite {
                    loc: LocItem::Loc(Location::Var(var)),
                    proc: p,
                },
            ])),
        ]),
    )
}

/// The events are appended to `var` by `p` at the last instant.
pub fn end_record(p: ProcId, var: Sym, events: &[Expr]) -> Pred {
    let k = fresh_param();
    Pred::exists(
        k,
        Domain::ExprValues(Expr::Var(var)),
        Pred::chop(
            Pred::ora(StatePred::expr(Expr::eq(
                appended(var, events),
                Expr::Param(k),
            ))),
            Pred::ceil(StatePred::And(vec![
                StatePred::expr(Expr::eq(Expr::Var(var), Expr::Param(k))),
                StatePred::HasWrite {
                    loc: LocItem::Loc(Location::Var(var)),
                    proc: p,
                },
            ])),
        ),
    )
}

/// `CAS(ae, alpha, beta)` when it succeeds.
pub fn cas_ok(p: ProcId, ae: Expr, alpha: Expr, beta: Expr) -> Cmd {
    Cmd::enf(
        Enforce::OnlyAccessedBy {
            locs: LocSet::item(LocItem::Accessed(Expr::deref(ae.clone()))),
            proc: p,
        },
        Cmd::seq(
            Cmd::guard(Expr::eq(Expr::deref(ae.clone()), alpha)),
            Cmd::assign_addr(ae, beta),
        ),
    )
}

/// `CAS(ae, alpha, beta)` when it fails.
pub fn cas_fail(ae: Expr, alpha: Expr) -> Cmd {
    Cmd::guard(Expr::ne(Expr::deref(ae), alpha))
}

/// Allocate a free node from `pool` into `v`, removing its two cells from
/// the free set held in `faddr`.
pub fn new_node(p: ProcId, v: &str, faddr: &str, pool: &[u64]) -> Cmd {
    let fv = Expr::var(faddr);
    let branches = pool
        .iter()
        .map(|&fnode| {
            let node = Expr::Const(Value::Addr(fnode));
            let next = Expr::Const(Value::Addr(fnode + NXT.offset));
            Cmd::seqs(vec![
                Cmd::guard(Expr::and(
                    Expr::bin(BinOp::Member, node.clone(), fv.clone()),
                    Expr::bin(BinOp::Member, next, fv.clone()),
                )),
                Cmd::assign(v, node.clone()),
                Cmd::assign(faddr, Expr::bin(BinOp::RemoveNode, fv.clone(), node)),
            ])
        })
        .collect();
    Cmd::enf(
        Enforce::OnlyAccessedBy {
            locs: LocSet::of([Location::var(faddr)]),
            proc: p,
        },
        Cmd::choice(branches),
    )
}

/// Result of translating a command: its behaviour and any static warnings.
pub struct Beh {
    pub pred: Pred,
    pub warnings: Vec<String>,
}

/// Behaviour of `c` executed by `procs` with write frame `z`.
pub fn beh(uni: &Universe, procs: &[ProcId], z: &BTreeSet<Location>, c: &Cmd) -> Beh {
    let mut warnings = Vec::new();
    let pred = Translator {
        uni,
        warnings: &mut warnings,
    }
    .go(procs, z, c);
    Beh { pred, warnings }
}

struct Translator<'a> {
    uni: &'a Universe,
    warnings: &'a mut Vec<String>,
}

impl Translator<'_> {
    fn single(&mut self, procs: &[ProcId], what: &str) -> Option<ProcId> {
        if procs.len() == 1 {
            Some(procs[0])
        } else {
            self.warnings.push(format!(
                "{what} used by {} processes; treated as false",
                procs.len()
            ));
            None
        }
    }

    fn go(&mut self, procs: &[ProcId], z: &BTreeSet<Location>, c: &Cmd) -> Pred {
        match c {
            Cmd::Chaos => Pred::tt(),
            Cmd::Idle => Pred::and(procs.iter().map(|p| idle_pred(*p, z)).collect()),
            Cmd::Guard(b) => match self.single(procs, "guard") {
                Some(p) => eval_pred(p, z, b.clone(), Expr::Const(Value::Bool(true))),
                None => Pred::ff(),
            },
            Cmd::AssignVar(v, e) => {
                let Some(p) = self.single(procs, "assignment") else {
                    return Pred::ff();
                };
                let k = fresh_param();
                let target = Expr::Var(*v);
                Pred::exists(
                    k,
                    Domain::ExprValues(target.clone()),
                    Pred::chop(
                        eval_pred(p, z, e.clone(), Expr::Param(k)),
                        update_pred(
                            p,
                            z,
                            LocItem::Loc(Location::Var(*v)),
                            target,
                            Expr::Param(k),
                        ),
                    ),
                )
            }
            Cmd::AssignAddr(ae, e) => {
                let Some(p) = self.single(procs, "assignment") else {
                    return Pred::ff();
                };
                let (a, k) = (fresh_param(), fresh_param());
                let body = Pred::chop(
                    Pred::and(vec![
                        eval_pred(p, z, ae.clone(), Expr::Param(a)),
                        eval_pred(p, z, e.clone(), Expr::Param(k)),
                    ]),
                    update_pred(
                        p,
                        z,
                        LocItem::AddrOf(Expr::Param(a)),
                        Expr::deref(Expr::Param(a)),
                        Expr::Param(k),
                    ),
                );
                Pred::exists(
                    a,
                    Domain::ExprValues(ae.clone()),
                    Pred::exists(k, Domain::ExprValues(e.clone()), body),
                )
            }
            Cmd::Seq(a, b) => Pred::chop(self.go(procs, z, a), self.go(procs, z, b)),
            Cmd::Choice(cs) => Pred::or(cs.iter().map(|c| self.go(procs, z, c)).collect()),
            Cmd::Omega(body) => Pred::omega(self.go(procs, z, body)),
            Cmd::Par(cs) => self.par(z, cs),
            Cmd::Context(ys, body) => {
                if ys.iter().any(|y| z.contains(y)) {
                    self.warnings
                        .push(format!("context {ys:?} redeclares a location in scope"));
                    return Pred::ff();
                }
                let mut z2 = z.clone();
                z2.extend(ys.iter().copied());
                // Outsiders are denied the new locations. The ambient-read half
                // of Local is a policy of the generator, not part of beh.
                let deny = Pred::boxdot(StatePred::Denied {
                    locs: LocSet::of(ys.iter().copied()),
                    procs: others(self.uni, procs),
                });
                Pred::and(vec![deny, self.go(procs, &z2, body)])
            }
            Cmd::Label(l, body) => {
                let mut parts: Vec<Pred> = procs
                    .iter()
                    .map(|p| {
                        let pc = match pc_var(self.uni, *p) {
                            Location::Var(s) => Expr::Var(s),
                            Location::Addr(_) => unreachable!(),
                        };
                        Pred::boxdot(StatePred::expr(Expr::eq(pc, Expr::Const(Value::Label(*l)))))
                    })
                    .collect();
                parts.push(self.go(procs, z, body));
                Pred::and(parts)
            }
            Cmd::Init(b, body) => Pred::and(vec![
                Pred::prev(Pred::ora(StatePred::expr(b.clone()))),
                self.go(procs, z, body),
            ]),
            Cmd::Enf(d, body) => Pred::and(vec![d.to_pred(self.uni), self.go(procs, z, body)]),
            Cmd::Rely(r, body) => Pred::implies(r.clone(), self.go(procs, z, body)),
        }
    }

    fn par(&mut self, z: &BTreeSet<Location>, cs: &[(ProcId, Arc<Cmd>)]) -> Pred {
        match cs.len() {
            0 => Pred::tt(),
            1 => self.go(&[cs[0].0], z, &cs[0].1),
            n => {
                // Two-set partitions with the first branch always on the left.
                let mut alts = Vec::new();
                for mask in 0..(1u32 << (n - 1)) {
                    let mut left = vec![cs[0].clone()];
                    let mut right = Vec::new();
                    for (i, b) in cs.iter().enumerate().skip(1) {
                        if mask & (1 << (i - 1)) == 0 {
                            left.push(b.clone());
                        } else {
                            right.push(b.clone());
                        }
                    }
                    if right.is_empty() {
                        continue;
                    }
                    alts.push(Pred::and(vec![self.part(z, &left), self.part(z, &right)]));
                }
                Pred::or(alts)
            }
        }
    }

    fn part(&mut self, z: &BTreeSet<Location>, cs: &[(ProcId, Arc<Cmd>)]) -> Pred {
        let procs: Vec<ProcId> = cs.iter().map(|(p, _)| *p).collect();
        let idle = Pred::and(procs.iter().map(|p| idle_pred(*p, z)).collect());
        Pred::chop(self.par(z, cs), idle)
    }
}
