//! The stack case study: the sequential oracle, the abstract and concrete
//! stack programs, the list-to-sequence abstraction and simTS.
//!
//! All programs share one universe so that abstract and concrete states can
//! be fused. Addresses 0 and 1 form the null page, `Top` lives at address 2
//! and node `i` of the free pool occupies addresses `4 + 2i` (key) and
//! `5 + 2i` (nxt).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_rational::Rational64;
use thiserror::Error;

use crate::commands::{cas_fail, cas_ok, new_node, Cmd, Enforce, Record};
use crate::executor::{
    extract_history, for_each_stream, AbsSlot, AbstractSpace, ExecError, GenConfig, Mode, Sim,
    SimConjunct,
};
use crate::histories::{
    is_sequential, linearisable_hw, linearisable_linrel, to_json, History, HistoryError, Kind,
    SequentialOracle,
};
use crate::intervals::{LocItem, LocSet, StatePred, Stream};
use crate::memstate::{
    BinOp, Expr, Location, MemState, ProcId, Sym, UnOp, Universe, Value, KEY, NXT,
};

pub const TOP: u64 = 2;
pub const FIRST_NODE: u64 = 4;
const PROC_NAMES: [&str; 4] = ["p", "q", "r", "s"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StackError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("heap shape: {0}")]
    Heap(String),
    #[error("unknown program {0:?}")]
    UnknownProgram(String),
}

/// Push prepends; pop returns `Empty` on the empty stack and the head otherwise.
#[derive(Clone, Copy, Debug, Default)]
pub struct StackOracle;

impl SequentialOracle for StackOracle {
    type State = Vec<Value>;

    fn initial(&self) -> Vec<Value> {
        Vec::new()
    }

    fn step(
        &self,
        s: &Vec<Value>,
        op: &str,
        args: &[Value],
    ) -> Result<Vec<(Vec<Value>, Vec<Value>)>, HistoryError> {
        match (op, args) {
            ("push", [x]) => {
                let mut next = Vec::with_capacity(s.len() + 1);
                next.push(x.clone());
                next.extend(s.iter().cloned());
                Ok(vec![(next, vec![])])
            }
            ("pop", []) => match s.split_first() {
                None => Ok(vec![(Vec::new(), vec![Value::Empty])]),
                Some((head, tail)) => Ok(vec![(tail.to_vec(), vec![head.clone()])]),
            },
            _ => Err(HistoryError::Oracle(format!(
                "unknown stack operation {op}/{}",
                args.len()
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Program {
    /// Canonical specification with exclusive access to S.
    AS,
    /// Canonical specification weakened to interference freedom.
    BS,
    /// Coarse-grained abstraction of the Treiber stack.
    LS,
    /// Treiber stack.
    TS,
    /// BS with a sequential history HA.
    HAS,
    /// LS with a concurrent history HL.
    HLS,
    /// TS with a concurrent history HL.
    HTS,
    /// HLS whose pop tests emptiness outside its interference-free block.
    HLSW,
}

impl Program {
    pub const ALL: [Program; 8] = [
        Program::AS,
        Program::BS,
        Program::LS,
        Program::TS,
        Program::HAS,
        Program::HLS,
        Program::HTS,
        Program::HLSW,
    ];

    /// Sequence variable the program records its history in.
    pub fn history_var(self) -> Option<&'static str> {
        match self {
            Program::HAS => Some("HA"),
            Program::HLS | Program::HTS | Program::HLSW => Some("HL"),
            _ => None,
        }
    }

    /// Locations of the outermost context.
    pub fn shared(self) -> Vec<Location> {
        match self {
            Program::AS | Program::BS | Program::HAS => vec![Location::var("S")],
            _ => vec![Location::Addr(TOP), Location::var("FAddr")],
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Program {
    type Err = StackError;

    fn from_str(s: &str) -> Result<Program, StackError> {
        Program::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| StackError::UnknownProgram(s.into()))
    }
}

#[derive(Clone, Debug)]
pub struct StackConfig {
    pub procs: usize,
    pub valdom: Vec<i64>,
    pub heap_slots: usize,
    pub ops_per_proc: u32,
}

impl Default for StackConfig {
    fn default() -> StackConfig {
        StackConfig {
            procs: 2,
            valdom: vec![1, 2],
            heap_slots: 2,
            ops_per_proc: 1,
        }
    }
}

impl StackConfig {
    pub fn new(procs: usize, valdom: Vec<i64>, ops_per_proc: u32) -> StackConfig {
        StackConfig {
            procs,
            valdom,
            heap_slots: procs * ops_per_proc as usize,
            ops_per_proc,
        }
    }

    pub fn validate(&self) -> Result<(), StackError> {
        if self.procs == 0 || self.procs > PROC_NAMES.len() {
            return Err(StackError::Config(format!(
                "between 1 and {} processes are supported, got {}",
                PROC_NAMES.len(),
                self.procs
            )));
        }
        if self.valdom.is_empty() {
            return Err(StackError::Config("the value domain is empty".into()));
        }
        if self.ops_per_proc == 0 {
            return Err(StackError::Config(
                "at least one operation per process is needed".into(),
            ));
        }
        let pushes = self.procs * self.ops_per_proc as usize;
        if self.heap_slots < pushes {
            return Err(StackError::Config(format!(
                "{} heap slots cannot hold {pushes} pushes",
                self.heap_slots
            )));
        }
        Ok(())
    }

    pub fn proc_ids(&self) -> Vec<ProcId> {
        (0..self.procs as u8).map(ProcId).collect()
    }

    pub fn values(&self) -> Vec<Value> {
        self.valdom.iter().map(|&v| Value::Int(v)).collect()
    }

    pub fn pool(&self) -> Vec<u64> {
        (0..self.heap_slots as u64)
            .map(|i| FIRST_NODE + 2 * i)
            .collect()
    }

    pub fn universe(&self) -> Arc<Universe> {
        let mut vars: Vec<String> = ["S", "HA", "HL", "FAddr"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for name in &PROC_NAMES[..self.procs] {
            for local in ["t", "n", "tn", "rv", "arv", "pc"] {
                vars.push(format!("{local}_{name}"));
            }
        }
        let procs: Vec<String> = PROC_NAMES[..self.procs]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Universe::new(&vars, FIRST_NODE + 2 * self.heap_slots as u64, &procs)
    }

    /// The initial state shared by all programs: empty stacks and
    /// histories, every node free, zero permissions.
    pub fn init_state(&self) -> MemState {
        let mut s = MemState::new(self.universe(), Value::Null);
        let empty = Value::Seq(Vec::new());
        for v in ["S", "HA", "HL"] {
            s.set(Location::var(v), empty.clone()).expect("declared");
        }
        let free: BTreeSet<u64> = self.pool().iter().flat_map(|&a| [a, a + 1]).collect();
        s.set(Location::var("FAddr"), Value::Set(free))
            .expect("declared");
        s.set(Location::Addr(TOP), Value::Pair(None, 0))
            .expect("declared");
        s
    }

    /// Generator settings with the outer loop bounded by `ops_per_proc`.
    pub fn gen_config(&self, horizon: usize, mode: Mode) -> GenConfig {
        GenConfig {
            mode,
            ..GenConfig::exhaustive(horizon).with_outer(self.ops_per_proc)
        }
    }
}

fn top() -> Expr {
    Expr::Const(Value::Addr(TOP))
}

fn star_top() -> Expr {
    Expr::deref(top())
}

fn local(name: &str, p: &str) -> String {
    format!("{name}_{p}")
}

fn lv(name: &str, p: &str) -> Expr {
    Expr::var(&local(name, p))
}

fn labelled(l: &str, c: Cmd) -> Cmd {
    Cmd::label(l, c)
}

fn add1(e: Expr) -> Expr {
    Expr::bin(BinOp::Add, e, Expr::int(1))
}

fn event(op: &str, p: &str, kind: Kind, args: Vec<Expr>) -> Expr {
    Expr::MkEvent {
        op: op.into(),
        proc: p.into(),
        kind,
        args,
    }
}

fn record(var: &str, p: ProcId, start: Vec<Expr>, end: Vec<Expr>) -> Enforce {
    Enforce::Record(Record {
        var: Sym::new(var),
        proc: p,
        start,
        end,
    })
}

fn sym_addrs() -> LocSet {
    LocSet::item(LocItem::StackAddrs(Location::Addr(TOP)))
}

fn stack_and_top() -> LocSet {
    sym_addrs().union(LocSet::of([Location::Addr(TOP)]))
}

struct Builder<'a> {
    cfg: &'a StackConfig,
    uni: Arc<Universe>,
}

impl Builder<'_> {
    fn name(&self, p: ProcId) -> &str {
        self.uni.proc_name(p)
    }

    fn push_choice(&self, f: impl Fn(i64) -> Cmd) -> Cmd {
        Cmd::choice(self.cfg.valdom.iter().map(|&x| f(x)).collect())
    }

    // Sequential stack operations over S.

    fn s_push(&self, x: i64) -> Cmd {
        Cmd::assign("S", Expr::bin(BinOp::Cons, Expr::int(x), Expr::var("S")))
    }

    fn s_empty(&self, p: &str) -> Cmd {
        Cmd::seq(
            Cmd::guard(Expr::eq(
                Expr::var("S"),
                Expr::Const(Value::Seq(Vec::new())),
            )),
            Cmd::assign(&local("arv", p), Expr::Const(Value::Empty)),
        )
    }

    fn s_do_pop(&self, p: &str) -> Cmd {
        Cmd::seqs(vec![
            Cmd::guard(Expr::ne(
                Expr::var("S"),
                Expr::Const(Value::Seq(Vec::new())),
            )),
            Cmd::assign(&local("arv", p), Expr::un(UnOp::Head, Expr::var("S"))),
            Cmd::assign("S", Expr::un(UnOp::Tail, Expr::var("S"))),
        ])
    }

    fn exclusive(&self, p: ProcId, c: Cmd) -> Cmd {
        Cmd::enf(
            Enforce::OnlyAccessedBy {
                locs: LocSet::of([Location::var("S")]),
                proc: p,
            },
            c,
        )
    }

    fn int_free_s(&self, p: ProcId, c: Cmd) -> Cmd {
        Cmd::enf(
            Enforce::IntFree {
                locs: LocSet::of([Location::var("S")]),
                proc: p,
            },
            c,
        )
    }

    fn abstract_program(&self, prog: Program) -> Cmd {
        let branches = self
            .cfg
            .proc_ids()
            .into_iter()
            .map(|p| {
                let n = self.name(p).to_string();
                let push = |x: i64| match prog {
                    Program::AS => self.exclusive(p, self.s_push(x)),
                    Program::BS => self.int_free_s(p, self.s_push(x)),
                    _ => Cmd::enf(
                        record(
                            "HA",
                            p,
                            vec![],
                            vec![
                                event("push", &n, Kind::Invoke, vec![Expr::int(x)]),
                                event("push", &n, Kind::Response, vec![]),
                            ],
                        ),
                        self.int_free_s(p, self.s_push(x)),
                    ),
                };
                let empty = self.exclusive(p, self.s_empty(&n));
                let do_pop = match prog {
                    Program::AS => self.exclusive(p, self.s_do_pop(&n)),
                    _ => self.int_free_s(p, self.s_do_pop(&n)),
                };
                let pop = if prog == Program::HAS {
                    let rec = |ret: Expr| {
                        record(
                            "HA",
                            p,
                            vec![],
                            vec![
                                event("pop", &n, Kind::Invoke, vec![]),
                                event("pop", &n, Kind::Response, vec![ret]),
                            ],
                        )
                    };
                    Cmd::choice(vec![
                        Cmd::enf(rec(Expr::Const(Value::Empty)), empty),
                        Cmd::enf(rec(lv("arv", &n)), do_pop),
                    ])
                } else {
                    Cmd::choice(vec![empty, do_pop])
                };
                let pp = Cmd::seqs(vec![
                    Cmd::Idle,
                    Cmd::choice(vec![self.push_choice(push), pop]),
                    Cmd::Idle,
                ]);
                let body = Cmd::context(vec![Location::var(&local("arv", &n))], Cmd::omega(pp));
                (p, body)
            })
            .collect();
        Cmd::context(
            vec![Location::var("S")],
            Cmd::init(
                Expr::eq(Expr::var("S"), Expr::Const(Value::Seq(Vec::new()))),
                Cmd::par(branches),
            ),
        )
    }

    fn t_init(&self) -> Expr {
        Expr::and(
            Expr::eq(star_top(), Expr::Const(Value::Pair(None, 0))),
            Expr::not(Expr::bin(BinOp::Member, top(), Expr::var("FAddr"))),
        )
    }

    fn concrete_program(&self, branches: Vec<(ProcId, Cmd)>, locals: &[&str]) -> Cmd {
        let branches = branches
            .into_iter()
            .map(|(p, c)| {
                let n = self.name(p);
                let locs = locals.iter().map(|l| Location::var(&local(l, n))).collect();
                (p, Cmd::context(locs, Cmd::omega(c)))
            })
            .collect();
        Cmd::context(
            vec![Location::Addr(TOP), Location::var("FAddr")],
            Cmd::init(self.t_init(), Cmd::par(branches)),
        )
    }

    // Coarse-grained operations.

    fn env_st(&self, p: ProcId) -> Cmd {
        Cmd::enf(
            Enforce::NoWriteSome {
                locs: stack_and_top(),
                proc: p,
            },
            Cmd::Chaos,
        )
    }

    fn l_setup(&self, p: ProcId, x: i64) -> Cmd {
        let n = self.name(p);
        Cmd::seq(
            new_node(p, &local("n", n), "FAddr", &self.cfg.pool()),
            Cmd::assign_addr(Expr::field_addr(lv("n", n), KEY), Expr::int(x)),
        )
    }

    fn l_do_push(&self, p: ProcId) -> Cmd {
        let n = self.name(p);
        let node = lv("n", n);
        Cmd::enf(
            Enforce::IntFree {
                locs: stack_and_top()
                    .union(LocSet::item(LocItem::AddrOf(Expr::field_addr(
                        node.clone(),
                        KEY,
                    ))))
                    .union(LocSet::item(LocItem::AddrOf(Expr::field_addr(
                        node.clone(),
                        NXT,
                    )))),
                proc: p,
            },
            Cmd::seq(
                Cmd::assign_addr(Expr::field_addr(node.clone(), NXT), Expr::ptr(star_top())),
                Cmd::assign_addr(top(), Expr::pair(node, add1(Expr::ctr(star_top())))),
            ),
        )
    }

    fn l_push(&self, p: ProcId, x: i64) -> Cmd {
        Cmd::seqs(vec![self.l_setup(p, x), self.env_st(p), self.l_do_push(p)])
    }

    fn l_empty(&self, p: ProcId) -> Cmd {
        Cmd::seq(
            Cmd::guard(Expr::eq(Expr::ptr(star_top()), Expr::null())),
            Cmd::assign(&local("rv", self.name(p)), Expr::Const(Value::Empty)),
        )
    }

    fn l_pop_body(&self, p: ProcId) -> Cmd {
        let node = Expr::ptr(star_top());
        Cmd::seq(
            Cmd::assign(&local("rv", self.name(p)), Expr::field(node.clone(), KEY)),
            Cmd::assign_addr(
                top(),
                Expr::pair(Expr::field(node, NXT), add1(Expr::ctr(star_top()))),
            ),
        )
    }

    fn l_do_pop(&self, p: ProcId) -> Cmd {
        Cmd::enf(
            Enforce::IntFree {
                locs: stack_and_top(),
                proc: p,
            },
            Cmd::seq(
                Cmd::guard(Expr::ne(Expr::ptr(star_top()), Expr::null())),
                self.l_pop_body(p),
            ),
        )
    }

    /// The pop that tests emptiness before its interference-free block.
    fn w_do_pop(&self, p: ProcId) -> Cmd {
        Cmd::seq(
            Cmd::guard(Expr::ne(Expr::ptr(star_top()), Expr::null())),
            Cmd::enf(
                Enforce::IntFree {
                    locs: LocSet::of([Location::Addr(TOP)]),
                    proc: p,
                },
                self.l_pop_body(p),
            ),
        )
    }

    fn l_record(&self, p: ProcId, op: &str, inv: Vec<Expr>, res: Vec<Expr>) -> Enforce {
        let n = self.name(p);
        record(
            "HL",
            p,
            vec![event(op, n, Kind::Invoke, inv)],
            vec![event(op, n, Kind::Response, res)],
        )
    }

    fn coarse(&self, prog: Program) -> Cmd {
        let branches = self
            .cfg
            .proc_ids()
            .into_iter()
            .map(|p| {
                let n = self.name(p).to_string();
                let recorded = prog != Program::LS;
                let push = |x: i64| {
                    let c = self.l_push(p, x);
                    if recorded {
                        Cmd::enf(self.l_record(p, "push", vec![Expr::int(x)], vec![]), c)
                    } else {
                        c
                    }
                };
                let do_pop = if prog == Program::HLSW {
                    self.w_do_pop(p)
                } else {
                    self.l_do_pop(p)
                };
                let (empty, do_pop) = if recorded {
                    (
                        Cmd::enf(
                            self.l_record(p, "pop", vec![], vec![Expr::Const(Value::Empty)]),
                            self.l_empty(p),
                        ),
                        Cmd::enf(self.l_record(p, "pop", vec![], vec![lv("rv", &n)]), do_pop),
                    )
                } else {
                    (self.l_empty(p), do_pop)
                };
                let pop = Cmd::seq(self.env_st(p), Cmd::choice(vec![empty, do_pop]));
                let pp = Cmd::seqs(vec![
                    Cmd::Idle,
                    Cmd::choice(vec![self.push_choice(push), pop]),
                    Cmd::Idle,
                ]);
                (p, pp)
            })
            .collect();
        self.concrete_program(branches, &["n", "rv"])
    }

    // Fine-grained Treiber operations.

    fn ts_read_top(&self, n: &str, l: &str) -> Cmd {
        labelled(l, Cmd::assign(&local("t", n), star_top()))
    }

    fn try_push(&self, p: ProcId, ok: bool) -> Cmd {
        let n = self.name(p);
        let t = lv("t", n);
        let cas = if ok {
            labelled(
                "ht5",
                cas_ok(
                    p,
                    top(),
                    t.clone(),
                    Expr::pair(lv("n", n), add1(Expr::ctr(t.clone()))),
                ),
            )
        } else {
            labelled("hf5", cas_fail(top(), t.clone()))
        };
        Cmd::seqs(vec![
            self.ts_read_top(n, "h3"),
            labelled(
                "h4",
                Cmd::assign_addr(Expr::field_addr(lv("n", n), NXT), Expr::ptr(t)),
            ),
            cas,
        ])
    }

    fn ts_push(&self, p: ProcId, x: i64) -> Cmd {
        let n = self.name(p);
        Cmd::seqs(vec![
            labelled("h1", new_node(p, &local("n", n), "FAddr", &self.cfg.pool())),
            labelled(
                "h2",
                Cmd::assign_addr(Expr::field_addr(lv("n", n), KEY), Expr::int(x)),
            ),
            Cmd::omega(self.try_push(p, false)),
            self.try_push(p, true),
        ])
    }

    fn to_cas(&self, p: ProcId) -> Cmd {
        let n = self.name(p);
        let node = Expr::ptr(lv("t", n));
        Cmd::seqs(vec![
            self.ts_read_top(n, "l1"),
            labelled("lf2", Cmd::guard(Expr::ne(node.clone(), Expr::null()))),
            labelled(
                "l5",
                Cmd::assign(&local("tn", n), Expr::field(node.clone(), NXT)),
            ),
            labelled("l6", Cmd::assign(&local("rv", n), Expr::field(node, KEY))),
        ])
    }

    fn try_pop(&self, p: ProcId) -> Cmd {
        let t = lv("t", self.name(p));
        Cmd::seq(self.to_cas(p), labelled("lf7", cas_fail(top(), t)))
    }

    fn ts_empty(&self, p: ProcId) -> Cmd {
        let n = self.name(p);
        Cmd::seqs(vec![
            self.ts_read_top(n, "l1"),
            labelled(
                "lt2",
                Cmd::guard(Expr::eq(Expr::ptr(lv("t", n)), Expr::null())),
            ),
            labelled(
                "l5",
                Cmd::assign(&local("rv", n), Expr::Const(Value::Empty)),
            ),
        ])
    }

    fn ts_do_pop(&self, p: ProcId) -> Cmd {
        let n = self.name(p);
        let t = lv("t", n);
        Cmd::seq(
            self.to_cas(p),
            labelled(
                "lt7",
                cas_ok(
                    p,
                    top(),
                    t.clone(),
                    Expr::pair(lv("tn", n), add1(Expr::ctr(t))),
                ),
            ),
        )
    }

    fn treiber(&self, prog: Program) -> Cmd {
        let branches = self
            .cfg
            .proc_ids()
            .into_iter()
            .map(|p| {
                let n = self.name(p).to_string();
                let push = |x: i64| {
                    let c = self.ts_push(p, x);
                    if prog == Program::HTS {
                        Cmd::enf(self.l_record(p, "push", vec![Expr::int(x)], vec![]), c)
                    } else {
                        c
                    }
                };
                let pop = if prog == Program::HTS {
                    let rec = |ret: Expr, c: Cmd| {
                        Cmd::enf(
                            record(
                                "HL",
                                p,
                                vec![],
                                vec![event("pop", &n, Kind::Response, vec![ret])],
                            ),
                            c,
                        )
                    };
                    Cmd::enf(
                        record(
                            "HL",
                            p,
                            vec![event("pop", &n, Kind::Invoke, vec![])],
                            vec![],
                        ),
                        Cmd::seq(
                            Cmd::omega(self.try_pop(p)),
                            Cmd::choice(vec![
                                rec(Expr::Const(Value::Empty), self.ts_empty(p)),
                                rec(lv("rv", &n), self.ts_do_pop(p)),
                            ]),
                        ),
                    )
                } else {
                    Cmd::seq(
                        Cmd::omega(self.try_pop(p)),
                        Cmd::choice(vec![self.ts_empty(p), self.ts_do_pop(p)]),
                    )
                };
                let pp = Cmd::seq(
                    labelled("pidle", Cmd::Idle),
                    Cmd::choice(vec![self.push_choice(push), pop]),
                );
                (p, pp)
            })
            .collect();
        self.concrete_program(branches, &["t", "n", "tn", "rv"])
    }
}

/// The command tree of a stack program over `cfg`'s finite domains.
pub fn build_program(prog: Program, cfg: &StackConfig) -> Result<Cmd, StackError> {
    cfg.validate()?;
    let b = Builder {
        cfg,
        uni: cfg.universe(),
    };
    Ok(match prog {
        Program::AS | Program::BS | Program::HAS => b.abstract_program(prog),
        Program::LS | Program::HLS | Program::HLSW => b.coarse(prog),
        Program::TS | Program::HTS => b.treiber(prog),
    })
}

/// Addresses of the Top-rooted list as the sequence iter_0, iter_1, ...
pub fn stack_nodes(s: &MemState) -> Result<Vec<u64>, StackError> {
    let mut cur = match s.get(Location::Addr(TOP)) {
        Ok(Value::Pair(p, _)) => *p,
        Ok(other) => return Err(StackError::Heap(format!("Top holds {other}, not a pair"))),
        Err(e) => return Err(StackError::Heap(e.to_string())),
    };
    let mut nodes = Vec::new();
    while let Some(a) = cur {
        if a < FIRST_NODE || nodes.contains(&a) {
            return Err(StackError::Heap(format!("bad or repeated node @{a}")));
        }
        nodes.push(a);
        cur = match s.get(Location::Addr(a + NXT.offset)) {
            Ok(Value::Addr(n)) => Some(*n),
            Ok(Value::Null) => None,
            Ok(other) => return Err(StackError::Heap(format!("@{} holds {other}", a + 1))),
            Err(_) => return Err(StackError::Heap(format!("dangling link to @{a}"))),
        };
    }
    Ok(nodes)
}

/// The key sequence of the list hanging off Top.
pub fn stack_abstraction(s: &MemState) -> Result<Vec<Value>, StackError> {
    stack_nodes(s)?
        .into_iter()
        .map(|a| {
            s.get(Location::Addr(a + KEY.offset))
                .cloned()
                .map_err(|e| StackError::Heap(e.to_string()))
        })
        .collect()
}

fn seq_of(s: &MemState, var: &str) -> Option<History> {
    match s.get(Location::var(var)).ok()? {
        Value::Seq(items) => items
            .iter()
            .map(|v| match v {
                Value::Event(e) => Some(e.as_ref().clone()),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(History::new),
        _ => None,
    }
}

/// simTS over a fused state holding both the abstract (S, HA) and the
/// concrete (heap, Top, HL) locations.
pub fn sim_ts(s: &MemState, valdom: &[Value]) -> bool {
    sim_stack(s) && sim_perms(s) && sim_lin(s, valdom)
}

fn sim_stack(s: &MemState) -> bool {
    match (s.get(Location::var("S")), stack_abstraction(s)) {
        (Ok(Value::Seq(items)), Ok(stack)) => *items == stack,
        _ => false,
    }
}

fn sim_perms(s: &MemState) -> bool {
    s.universe()
        .procs()
        .all(|p| s.has_write(Location::var("S"), p) == s.has_write(Location::Addr(TOP), p))
}

fn sim_lin(s: &MemState, valdom: &[Value]) -> bool {
    match (seq_of(s, "HL"), seq_of(s, "HA")) {
        (Some(hl), Some(ha)) => linearisable_linrel(&hl, &ha, valdom).is_some(),
        _ => false,
    }
}

/// simTS split into conjuncts for the abstract-state search.
pub fn sim_ts_conjuncts(valdom: &[Value]) -> Sim {
    let valdom = valdom.to_vec();
    let s = Location::var("S");
    Sim {
        conjuncts: vec![
            SimConjunct {
                name: "S = Stack".into(),
                deps: vec![s],
                holds: Arc::new(sim_stack),
            },
            SimConjunct {
                name: "W.S = W.Top".into(),
                deps: vec![s],
                holds: Arc::new(sim_perms),
            },
            SimConjunct {
                name: "linearisable(HL, HA)".into(),
                deps: vec![Location::var("HA")],
                holds: Arc::new(move |st| sim_lin(st, &valdom)),
            },
        ],
    }
}

/// Sequential stack histories with at most `ops_per_proc` operations per
/// process, each a valid replay of the oracle.
pub fn sequential_histories(cfg: &StackConfig) -> Vec<History> {
    fn rec(
        cfg: &StackConfig,
        uni: &Universe,
        stack: Vec<Value>,
        counts: &mut Vec<u32>,
        cur: &mut Vec<Value>,
        out: &mut Vec<History>,
    ) {
        out.push(History::new(
            cur.iter()
                .map(|v| match v {
                    Value::Event(e) => e.as_ref().clone(),
                    _ => unreachable!(),
                })
                .collect(),
        ));
        for (i, p) in cfg.proc_ids().into_iter().enumerate() {
            if counts[i] == cfg.ops_per_proc {
                continue;
            }
            counts[i] += 1;
            let name = uni.proc_name(p);
            let mut ops: Vec<(&str, Vec<Value>)> = cfg
                .values()
                .into_iter()
                .map(|v| ("push", vec![v]))
                .collect();
            ops.push(("pop", vec![]));
            for (op, args) in ops {
                for (next, res) in StackOracle.step(&stack, op, &args).expect("stack op") {
                    let inv = crate::histories::Event::invoke(op, name, args.clone());
                    let resp = crate::histories::Event::response(op, name, res);
                    cur.push(Value::Event(Box::new(inv)));
                    cur.push(Value::Event(Box::new(resp)));
                    rec(cfg, uni, next, counts, cur, out);
                    cur.truncate(cur.len() - 2);
                }
            }
            counts[i] -= 1;
        }
    }
    let uni = cfg.universe();
    let mut out = Vec::new();
    rec(
        cfg,
        &uni,
        Vec::new(),
        &mut vec![0; cfg.procs],
        &mut Vec::new(),
        &mut out,
    );
    debug_assert!(out.iter().all(is_sequential));
    out
}

/// Abstract state space for simTS: stacks of at most the total number of
/// pushes, with a chosen writer, and valid sequential histories.
pub fn sim_ts_space(cfg: &StackConfig) -> AbstractSpace {
    let max = cfg.procs * cfg.ops_per_proc as usize;
    let mut stacks: Vec<Vec<Value>> = vec![Vec::new()];
    let mut frontier = stacks.clone();
    for _ in 0..max {
        let mut next = Vec::new();
        for s in &frontier {
            for v in cfg.values() {
                let mut t = vec![v];
                t.extend(s.iter().cloned());
                next.push(t);
            }
        }
        stacks.extend(next.iter().cloned());
        frontier = next;
    }
    let histories = sequential_histories(cfg)
        .into_iter()
        .map(|h| {
            Value::Seq(
                h.events
                    .into_iter()
                    .map(|e| Value::Event(Box::new(e)))
                    .collect(),
            )
        })
        .collect();
    AbstractSpace {
        slots: vec![
            AbsSlot {
                loc: Location::var("S"),
                values: stacks.into_iter().map(Value::Seq).collect(),
                writers: true,
            },
            AbsSlot {
                loc: Location::var("HA"),
                values: histories,
                writers: false,
            },
        ],
    }
}

/// `exists p . W.Top.p`, the split used for the link obligation.
pub fn top_written() -> StatePred {
    StatePred::custom("exists p . W.Top.p", |s, _| {
        s.universe()
            .procs()
            .any(|p| s.has_write(Location::Addr(TOP), p))
    })
}

/// No process holds write permission on a location of the current SAddr.
pub fn saddr_unwritten(s: &MemState) -> bool {
    let Ok(nodes) = stack_nodes(s) else {
        return false;
    };
    let one = Rational64::from_integer(1);
    nodes.iter().flat_map(|&a| [a, a + 1]).all(|a| {
        s.universe().procs().all(|p| {
            s.perm(Location::Addr(a), p)
                .map(|q| q != one)
                .unwrap_or(true)
        })
    })
}

/// SAddr and FAddr are disjoint.
pub fn saddr_faddr_disjoint(s: &MemState) -> bool {
    let (Ok(nodes), Ok(Value::Set(free))) = (stack_nodes(s), s.get(Location::var("FAddr"))) else {
        return false;
    };
    nodes
        .iter()
        .all(|a| !free.contains(a) && !free.contains(&(a + 1)))
}

/// Histories extracted from the generated streams of a stack program.
#[derive(Clone, Debug, Default)]
pub struct Simulation {
    pub streams: usize,
    /// Distinct histories keyed by their JSON text, so iteration is canonical.
    pub histories: BTreeMap<String, History>,
    /// Histories the stack oracle rejects, in the same order.
    pub non_linearisable: Vec<History>,
}

/// Runs `prog` under `gen`, calling `visit` on every stream, and checks
/// each extracted history against the stack oracle.
pub fn simulate(
    prog: Program,
    cfg: &StackConfig,
    gen: &GenConfig,
    visit: &mut dyn FnMut(&Stream),
) -> Result<Simulation, SimulateError> {
    let cmd = build_program(prog, cfg)?;
    let var = prog.history_var();
    let mut out = Simulation::default();
    let mut err = None;
    let stats = for_each_stream(&cmd, &[], &cfg.init_state(), gen, &mut |s| {
        visit(s);
        if let Some(v) = var {
            match extract_history(s, Location::var(v)) {
                Ok(h) => {
                    out.histories.insert(to_json(&h), h);
                }
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
    out.streams = stats.streams;
    let valdom = cfg.values();
    out.non_linearisable = out
        .histories
        .values()
        .filter(|h| linearisable_hw(h, &StackOracle, &valdom).is_none())
        .cloned()
        .collect();
    Ok(out)
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}
