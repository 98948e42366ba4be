//! Memory states: values, locations, permissions and expression evaluation.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use num_rational::Rational64;
use thiserror::Error;

use crate::histories::Event;

/// An interned variable or label name.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sym(u32);

struct Interner {
    names: Vec<&'static str>,
    ids: HashMap<&'static str, u32>,
}

fn interner() -> &'static RwLock<Interner> {
    static I: OnceLock<RwLock<Interner>> = OnceLock::new();
    I.get_or_init(|| {
        RwLock::new(Interner {
            names: Vec::new(),
            ids: HashMap::new(),
        })
    })
}

impl Sym {
    pub fn new(name: &str) -> Sym {
        if let Some(&id) = interner().read().unwrap().ids.get(name) {
            return Sym(id);
        }
        let mut w = interner().write().unwrap();
        if let Some(&id) = w.ids.get(name) {
            return Sym(id);
        }
        let leaked: &'static str = Box::leak(name.to_owned().into_boxed_str());
        let id = w.names.len() as u32;
        w.names.push(leaked);
        w.ids.insert(leaked, id);
        Sym(id)
    }

    pub fn name(self) -> &'static str {
        interner().read().unwrap().names[self.0 as usize]
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Process identifier: an index into [`Universe::procs`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ProcId(pub u8);

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Value {
    Int(i64),
    Addr(u64),
    Null,
    Empty,
    Bool(bool),
    /// A (ptr, ctr) pair; `None` is a null pointer.
    Pair(Option<u64>, i64),
    Label(Sym),
    Seq(Vec<Value>),
    Set(BTreeSet<u64>),
    Event(Box<Event>),
}

impl Value {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// Address denoted by a pointer value. Null denotes address 0.
    pub fn as_addr(&self) -> Option<u64> {
        match self {
            Value::Addr(a) => Some(*a),
            Value::Null => Some(0),
            _ => None,
        }
    }

    pub fn ptr_value(p: Option<u64>) -> Value {
        match p {
            Some(a) => Value::Addr(a),
            None => Value::Null,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Addr(a) => write!(f, "@{a}"),
            Value::Null => f.write_str("null"),
            Value::Empty => f.write_str("Empty"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Pair(p, c) => match p {
                Some(a) => write!(f, "(@{a},{c})"),
                None => write!(f, "(null,{c})"),
            },
            Value::Label(l) => write!(f, "{l}"),
            Value::Seq(items) => {
                f.write_str("<")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(">")
            }
            Value::Set(s) => {
                f.write_str("{")?;
                for (i, a) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str("}")
            }
            Value::Event(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Location {
    Var(Sym),
    Addr(u64),
}

impl Location {
    pub fn var(name: &str) -> Location {
        Location::Var(Sym::new(name))
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Var(s) => write!(f, "{s}"),
            Location::Addr(a) => write!(f, "@{a}"),
        }
    }
}

/// The finite set of locations and processes a state ranges over.
#[derive(Debug)]
pub struct Universe {
    vars: Vec<Sym>,
    var_slot: HashMap<Sym, usize>,
    addr_count: u64,
    procs: Vec<String>,
}

impl Universe {
    pub fn new<S: AsRef<str>>(vars: &[S], addr_count: u64, procs: &[S]) -> Arc<Universe> {
        let vars: Vec<Sym> = vars.iter().map(|v| Sym::new(v.as_ref())).collect();
        let var_slot = vars.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Arc::new(Universe {
            vars,
            var_slot,
            addr_count,
            procs: procs.iter().map(|p| p.as_ref().to_owned()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.vars.len() + self.addr_count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot(&self, loc: Location) -> Option<usize> {
        match loc {
            Location::Var(s) => self.var_slot.get(&s).copied(),
            Location::Addr(a) if a < self.addr_count => Some(self.vars.len() + a as usize),
            Location::Addr(_) => None,
        }
    }

    pub fn location(&self, slot: usize) -> Location {
        if slot < self.vars.len() {
            Location::Var(self.vars[slot])
        } else {
            Location::Addr((slot - self.vars.len()) as u64)
        }
    }

    pub fn locations(&self) -> impl Iterator<Item = Location> + '_ {
        (0..self.len()).map(|i| self.location(i))
    }

    pub fn addr_count(&self) -> u64 {
        self.addr_count
    }

    pub fn nprocs(&self) -> usize {
        self.procs.len()
    }

    pub fn procs(&self) -> impl Iterator<Item = ProcId> {
        (0..self.procs.len() as u8).map(ProcId)
    }

    pub fn proc_name(&self, p: ProcId) -> &str {
        &self.procs[p.0 as usize]
    }

    pub fn proc_by_name(&self, name: &str) -> Option<ProcId> {
        self.procs
            .iter()
            .position(|n| n == name)
            .map(|i| ProcId(i as u8))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("location {0} is outside the universe")]
    UnknownLocation(Location),
    #[error("unbound parameter #{0}")]
    UnboundParam(u32),
    #[error("type error: {0}")]
    Type(String),
}

/// Permission classes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PermClass {
    Write,
    Read,
    Denied,
}

pub fn perm_class(v: Rational64) -> PermClass {
    if v == Rational64::from_integer(1) {
        PermClass::Write
    } else if v > Rational64::from_integer(0) && v < Rational64::from_integer(1) {
        PermClass::Read
    } else {
        PermClass::Denied
    }
}

/// A memory state: a value for every location and a permission for every
/// (location, process) pair.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MemState {
    uni: Arc<Universe>,
    vals: Vec<Value>,
    perms: Vec<Rational64>,
}

impl fmt::Debug for MemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl std::hash::Hash for Universe {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.vars.hash(state);
        self.addr_count.hash(state);
    }
}

impl PartialEq for Universe {
    fn eq(&self, other: &Self) -> bool {
        self.vars == other.vars && self.addr_count == other.addr_count && self.procs == other.procs
    }
}

impl Eq for Universe {}

impl MemState {
    /// Every location holds `fill`; every permission is 0.
    pub fn new(uni: Arc<Universe>, fill: Value) -> MemState {
        let n = uni.len();
        let np = uni.nprocs();
        MemState {
            vals: vec![fill; n],
            perms: vec![Rational64::from_integer(0); n * np],
            uni,
        }
    }

    pub fn universe(&self) -> &Arc<Universe> {
        &self.uni
    }

    fn slot(&self, loc: Location) -> Result<usize, EvalError> {
        self.uni.slot(loc).ok_or(EvalError::UnknownLocation(loc))
    }

    pub fn get(&self, loc: Location) -> Result<&Value, EvalError> {
        Ok(&self.vals[self.slot(loc)?])
    }

    pub fn set(&mut self, loc: Location, v: Value) -> Result<(), EvalError> {
        let i = self.slot(loc)?;
        self.vals[i] = v;
        Ok(())
    }

    pub fn get_slot(&self, slot: usize) -> &Value {
        &self.vals[slot]
    }

    pub fn set_slot(&mut self, slot: usize, v: Value) {
        self.vals[slot] = v;
    }

    pub fn perm(&self, loc: Location, p: ProcId) -> Result<Rational64, EvalError> {
        let i = self.slot(loc)?;
        Ok(self.perm_slot(i, p))
    }

    pub fn perm_slot(&self, slot: usize, p: ProcId) -> Rational64 {
        self.perms[slot * self.uni.nprocs() + p.0 as usize]
    }

    pub fn set_perm(&mut self, loc: Location, p: ProcId, v: Rational64) -> Result<(), EvalError> {
        let i = self.slot(loc)?;
        self.set_perm_slot(i, p, v);
        Ok(())
    }

    pub fn set_perm_slot(&mut self, slot: usize, p: ProcId, v: Rational64) {
        let np = self.uni.nprocs();
        self.perms[slot * np + p.0 as usize] = v;
    }

    pub fn clear_perms(&mut self) {
        for p in self.perms.iter_mut() {
            *p = Rational64::from_integer(0);
        }
    }

    pub fn class(&self, loc: Location, p: ProcId) -> PermClass {
        match self.perm(loc, p) {
            Ok(v) => perm_class(v),
            Err(_) => PermClass::Denied,
        }
    }

    pub fn has_write(&self, loc: Location, p: ProcId) -> bool {
        self.class(loc, p) == PermClass::Write
    }

    pub fn has_read(&self, loc: Location, p: ProcId) -> bool {
        self.class(loc, p) == PermClass::Read
    }

    pub fn is_denied(&self, loc: Location, p: ProcId) -> bool {
        self.class(loc, p) == PermClass::Denied
    }

    /// Some process outside `procs` may write `va`.
    pub fn interferes(&self, va: Location, procs: &[ProcId]) -> bool {
        self.uni
            .procs()
            .filter(|q| !procs.contains(q))
            .any(|q| self.has_write(va, q))
    }

    /// `p` has read permission on every location accessed by `e`.
    pub fn read_all_locs(&self, e: &Expr, p: ProcId, env: &dyn Env) -> bool {
        match accessed_env(e, self, env) {
            Ok(locs) => locs.iter().all(|l| self.has_read(*l, p)),
            Err(_) => false,
        }
    }

    /// Write permission is exclusive: a writer denies everyone else, and
    /// the permissions on each location sum to at most one.
    pub fn hc2_check(&self) -> bool {
        let np = self.uni.nprocs();
        for slot in 0..self.uni.len() {
            let mut sum = Rational64::from_integer(0);
            let mut writer = false;
            for p in 0..np {
                let v = self.perms[slot * np + p];
                if v < Rational64::from_integer(0) {
                    return false;
                }
                sum += v;
                if perm_class(v) == PermClass::Write {
                    writer = true;
                }
            }
            if sum > Rational64::from_integer(1) {
                return false;
            }
            if writer {
                let denied = (0..np)
                    .filter(|&p| perm_class(self.perms[slot * np + p]) == PermClass::Denied)
                    .count();
                if denied != np - 1 {
                    return false;
                }
            }
        }
        true
    }

    /// One line listing all variables and the non-null heap cells.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.vals.iter().enumerate() {
            if matches!(v, Value::Null) && i >= self.uni.vars.len() {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&format!("{}={}", self.uni.location(i), v));
        }
        out
    }

    pub fn values_equal_at(&self, other: &MemState, slot: usize) -> bool {
        self.vals[slot] == other.vals[slot]
    }
}

/// Field of a heap node, stored at a fixed offset from the node address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Field {
    pub name: &'static str,
    pub offset: u64,
}

pub const KEY: Field = Field {
    name: "key",
    offset: 0,
};
pub const NXT: Field = Field {
    name: "nxt",
    offset: 1,
};

pub type ParamId = u32;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum UnOp {
    Not,
    Neg,
    /// Pointer component of a pair.
    Ptr,
    /// Counter component of a pair.
    Ctr,
    /// First element of a sequence.
    Head,
    /// Sequence without its first element.
    Tail,
    /// Smallest element of a set of addresses.
    SetMin,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum BinOp {
    Add,
    Sub,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
    Implies,
    /// Build a (ptr, ctr) pair.
    MkPair,
    /// Prepend an element to a sequence.
    Cons,
    /// Append an element to a sequence.
    Snoc,
    /// Remove an address and its successor from a set.
    RemoveNode,
    /// Address is a member of a set.
    Member,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Expr {
    Const(Value),
    Var(Sym),
    Param(ParamId),
    /// Value stored at the address denoted by the operand.
    Deref(Box<Expr>),
    /// Address of a field of the node at the operand address.
    FieldAddr(Box<Expr>, Field),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// Build a history event whose values are the operand values.
    MkEvent {
        op: String,
        proc: String,
        kind: crate::histories::Kind,
        args: Vec<Expr>,
    },
}

impl Expr {
    pub fn int(i: i64) -> Expr {
        Expr::Const(Value::Int(i))
    }
    pub fn var(name: &str) -> Expr {
        Expr::Var(Sym::new(name))
    }
    pub fn null() -> Expr {
        Expr::Const(Value::Null)
    }
    pub fn deref(e: Expr) -> Expr {
        Expr::Deref(Box::new(e))
    }
    /// `e·f`, the address of field `f`.
    pub fn field_addr(e: Expr, f: Field) -> Expr {
        Expr::FieldAddr(Box::new(e), f)
    }
    /// `e→f`, the value of field `f`.
    pub fn field(e: Expr, f: Field) -> Expr {
        Expr::deref(Expr::field_addr(e, f))
    }
    pub fn un(op: UnOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }
    pub fn eq(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Eq, a, b)
    }
    pub fn ne(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::Ne, a, b)
    }
    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::And, a, b)
    }
    pub fn not(a: Expr) -> Expr {
        Expr::un(UnOp::Not, a)
    }
    pub fn ptr(a: Expr) -> Expr {
        Expr::un(UnOp::Ptr, a)
    }
    pub fn ctr(a: Expr) -> Expr {
        Expr::un(UnOp::Ctr, a)
    }
    pub fn pair(a: Expr, b: Expr) -> Expr {
        Expr::bin(BinOp::MkPair, a, b)
    }

    /// Parameters occurring in the expression.
    pub fn params(&self, out: &mut Vec<ParamId>) {
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Param(p) => {
                if !out.contains(p) {
                    out.push(*p)
                }
            }
            Expr::Deref(e) | Expr::FieldAddr(e, _) | Expr::Unary(_, e) => e.params(out),
            Expr::Binary(_, a, b) => {
                a.params(out);
                b.params(out);
            }
            Expr::MkEvent { args, .. } => args.iter().for_each(|a| a.params(out)),
        }
    }
}

/// Parameter bindings used while evaluating expressions.
pub trait Env {
    fn lookup(&self, p: ParamId) -> Option<&Value>;
}

impl Env for () {
    fn lookup(&self, _: ParamId) -> Option<&Value> {
        None
    }
}

impl Env for [(ParamId, Value)] {
    fn lookup(&self, p: ParamId) -> Option<&Value> {
        self.iter().rev().find(|(q, _)| *q == p).map(|(_, v)| v)
    }
}

impl Env for Vec<(ParamId, Value)> {
    fn lookup(&self, p: ParamId) -> Option<&Value> {
        self.as_slice().lookup(p)
    }
}

fn type_err<T>(msg: impl Into<String>) -> Result<T, EvalError> {
    Err(EvalError::Type(msg.into()))
}

pub fn eval(e: &Expr, s: &MemState) -> Result<Value, EvalError> {
    eval_env(e, s, &())
}

pub fn eval_env(e: &Expr, s: &MemState, env: &dyn Env) -> Result<Value, EvalError> {
    match e {
        Expr::Const(v) => Ok(v.clone()),
        Expr::Var(x) => s.get(Location::Var(*x)).cloned(),
        Expr::Param(p) => env.lookup(*p).cloned().ok_or(EvalError::UnboundParam(*p)),
        Expr::Deref(ae) => {
            let a = eval_env(ae, s, env)?;
            match a.as_addr() {
                Some(a) => s.get(Location::Addr(a)).cloned(),
                None => type_err(format!("dereference of non-address {a}")),
            }
        }
        Expr::FieldAddr(ae, f) => {
            let a = eval_env(ae, s, env)?;
            match a.as_addr() {
                Some(a) => Ok(Value::Addr(a + f.offset)),
                None => type_err(format!("field {} of non-address {a}", f.name)),
            }
        }
        Expr::Unary(op, a) => {
            let v = eval_env(a, s, env)?;
            eval_unary(*op, v)
        }
        Expr::Binary(op, a, b) => {
            // Connectives short-circuit so guards like `x != null && x->f` are defined.
            match op {
                BinOp::And => {
                    let va = eval_env(a, s, env)?;
                    match va {
                        Value::Bool(false) => return Ok(Value::Bool(false)),
                        Value::Bool(true) => {}
                        _ => return type_err("non-boolean operand of and"),
                    }
                    let vb = eval_env(b, s, env)?;
                    return match vb {
                        Value::Bool(x) => Ok(Value::Bool(x)),
                        _ => type_err("non-boolean operand of and"),
                    };
                }
                BinOp::Or | BinOp::Implies => {
                    let va = eval_env(a, s, env)?;
                    let short = *op == BinOp::Or;
                    match va {
                        Value::Bool(x) if x == short => return Ok(Value::Bool(true)),
                        Value::Bool(_) => {}
                        _ => return type_err("non-boolean operand of or"),
                    }
                    let vb = eval_env(b, s, env)?;
                    return match vb {
                        Value::Bool(x) => Ok(Value::Bool(x)),
                        _ => type_err("non-boolean operand of or"),
                    };
                }
                _ => {}
            }
            let va = eval_env(a, s, env)?;
            let vb = eval_env(b, s, env)?;
            eval_binary(*op, va, vb)
        }
        Expr::MkEvent {
            op,
            proc,
            kind,
            args,
        } => {
            let values = args
                .iter()
                .map(|a| eval_env(a, s, env))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Value::Event(Box::new(Event {
                op: op.clone(),
                proc: proc.clone(),
                kind: *kind,
                values,
            })))
        }
    }
}

fn eval_unary(op: UnOp, v: Value) -> Result<Value, EvalError> {
    match (op, v) {
        (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
        (UnOp::Neg, Value::Int(i)) => Ok(Value::Int(-i)),
        (UnOp::Ptr, Value::Pair(p, _)) => Ok(Value::ptr_value(p)),
        (UnOp::Ctr, Value::Pair(_, c)) => Ok(Value::Int(c)),
        (UnOp::Head, Value::Seq(items)) => match items.first() {
            Some(v) => Ok(v.clone()),
            None => type_err("head of empty sequence"),
        },
        (UnOp::Tail, Value::Seq(items)) => {
            if items.is_empty() {
                type_err("tail of empty sequence")
            } else {
                Ok(Value::Seq(items[1..].to_vec()))
            }
        }
        (UnOp::SetMin, Value::Set(s)) => match s.iter().next() {
            Some(a) => Ok(Value::Addr(*a)),
            None => type_err("minimum of empty set"),
        },
        (op, v) => type_err(format!("{op:?} applied to {v}")),
    }
}

fn eval_binary(op: BinOp, a: Value, b: Value) -> Result<Value, EvalError> {
    use Value::*;
    match op {
        BinOp::Eq => Ok(Bool(a == b)),
        BinOp::Ne => Ok(Bool(a != b)),
        BinOp::Add | BinOp::Sub | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let (x, y) = match (&a, &b) {
                (Int(x), Int(y)) => (*x, *y),
                _ => return type_err(format!("{op:?} on {a} and {b}")),
            };
            Ok(match op {
                BinOp::Add => Int(x.wrapping_add(y)),
                BinOp::Sub => Int(x.wrapping_sub(y)),
                BinOp::Lt => Bool(x < y),
                BinOp::Le => Bool(x <= y),
                BinOp::Gt => Bool(x > y),
                _ => Bool(x >= y),
            })
        }
        BinOp::And | BinOp::Or | BinOp::Implies => match (a, b) {
            (Bool(x), Bool(y)) => Ok(Bool(match op {
                BinOp::And => x && y,
                BinOp::Or => x || y,
                _ => !x || y,
            })),
            (a, b) => type_err(format!("{op:?} on {a} and {b}")),
        },
        BinOp::MkPair => {
            let p = match a {
                Addr(x) => Some(x),
                Null => None,
                other => return type_err(format!("pair pointer {other}")),
            };
            match b {
                Int(c) => Ok(Pair(p, c)),
                other => type_err(format!("pair counter {other}")),
            }
        }
        BinOp::Cons => match b {
            Seq(mut items) => {
                items.insert(0, a);
                Ok(Seq(items))
            }
            other => type_err(format!("cons onto {other}")),
        },
        BinOp::Snoc => match a {
            Seq(mut items) => {
                items.push(b);
                Ok(Seq(items))
            }
            other => type_err(format!("append to {other}")),
        },
        BinOp::RemoveNode => match (a, b) {
            (Set(mut s), Addr(n)) => {
                s.remove(&n);
                s.remove(&(n + 1));
                Ok(Set(s))
            }
            (a, b) => type_err(format!("remove {b} from {a}")),
        },
        BinOp::Member => match (a, b) {
            (Addr(n), Set(s)) => Ok(Bool(s.contains(&n))),
            (Null, Set(s)) => Ok(Bool(s.contains(&0))),
            (a, b) => type_err(format!("{a} member of {b}")),
        },
    }
}

/// Locations read when evaluating `e`.
pub fn accessed(e: &Expr, s: &MemState) -> Result<BTreeSet<Location>, EvalError> {
    accessed_env(e, s, &())
}

pub fn accessed_env(
    e: &Expr,
    s: &MemState,
    env: &dyn Env,
) -> Result<BTreeSet<Location>, EvalError> {
    let mut out = BTreeSet::new();
    collect_accessed(e, s, env, &mut out)?;
    Ok(out)
}

fn collect_accessed(
    e: &Expr,
    s: &MemState,
    env: &dyn Env,
    out: &mut BTreeSet<Location>,
) -> Result<(), EvalError> {
    match e {
        Expr::Const(_) => Ok(()),
        Expr::Param(p) => env
            .lookup(*p)
            .map(|_| ())
            .ok_or(EvalError::UnboundParam(*p)),
        Expr::Var(x) => {
            let loc = Location::Var(*x);
            s.get(loc)?;
            out.insert(loc);
            Ok(())
        }
        Expr::Deref(ae) => {
            collect_accessed(ae, s, env, out)?;
            let a = eval_env(ae, s, env)?;
            match a.as_addr() {
                Some(a) => {
                    let loc = Location::Addr(a);
                    s.get(loc)?;
                    out.insert(loc);
                    Ok(())
                }
                None => type_err(format!("dereference of non-address {a}")),
            }
        }
        Expr::FieldAddr(ae, _) | Expr::Unary(_, ae) => collect_accessed(ae, s, env, out),
        Expr::Binary(op, a, b) => {
            collect_accessed(a, s, env, out)?;
            // Short-circuited operands are not read.
            if matches!(op, BinOp::And | BinOp::Or | BinOp::Implies) {
                let va = eval_env(a, s, env)?;
                let skip = match (op, va) {
                    (BinOp::And, Value::Bool(false)) => true,
                    (BinOp::Or, Value::Bool(true)) => true,
                    (BinOp::Implies, Value::Bool(false)) => true,
                    _ => false,
                };
                if skip {
                    return Ok(());
                }
            }
            collect_accessed(b, s, env, out)
        }
        Expr::MkEvent { args, .. } => {
            for a in args {
                collect_accessed(a, s, env, out)?;
            }
            Ok(())
        }
    }
}

/// Addresses of the key and nxt cells of nodes reachable from the pointer
/// stored at `top`, or `None` if the chain is cyclic or leaves the heap.
pub fn stack_addrs(s: &MemState, top: Location) -> Option<BTreeSet<u64>> {
    let mut out = BTreeSet::new();
    let mut cur = match s.get(top).ok()? {
        Value::Pair(p, _) => *p,
        Value::Addr(a) => Some(*a),
        Value::Null => None,
        _ => return None,
    };
    while let Some(a) = cur {
        if a == 0 || !out.insert(a) {
            return None;
        }
        out.insert(a + 1);
        cur = match s.get(Location::Addr(a + 1)).ok()? {
            Value::Addr(n) => Some(*n),
            Value::Null => None,
            _ => return None,
        };
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni() -> Arc<Universe> {
        Universe::new(&["Top", "x", "b"], 16, &["p", "q"])
    }

    #[test]
    fn interning_is_stable() {
        assert_eq!(Sym::new("abc"), Sym::new("abc"));
        assert_ne!(Sym::new("abc"), Sym::new("abd"));
        assert_eq!(Sym::new("abc").name(), "abc");
    }

    #[test]
    fn field_value_and_address() {
        let mut s = MemState::new(uni(), Value::Null);
        s.set(Location::Addr(10), Value::Int(7)).unwrap();
        s.set(Location::Addr(11), Value::Addr(12)).unwrap();
        s.set(Location::var("x"), Value::Addr(10)).unwrap();
        let key = Expr::field(Expr::var("x"), KEY);
        let nxt_addr = Expr::field_addr(Expr::var("x"), NXT);
        assert_eq!(eval(&key, &s), Ok(Value::Int(7)));
        assert_eq!(eval(&nxt_addr, &s), Ok(Value::Addr(11)));
        let acc = accessed(&Expr::field(Expr::var("x"), NXT), &s).unwrap();
        assert_eq!(
            acc.into_iter().collect::<Vec<_>>(),
            vec![Location::var("x"), Location::Addr(11)]
        );
    }

    #[test]
    fn accessed_of_deref_top() {
        let mut s = MemState::new(uni(), Value::Null);
        s.set(Location::var("Top"), Value::Pair(Some(4), 0))
            .unwrap();
        // ptr.Top reads only Top; the pair is a value, not an address.
        let e = Expr::ptr(Expr::var("Top"));
        assert_eq!(eval(&e, &s), Ok(Value::Addr(4)));
        assert_eq!(accessed(&e, &s).unwrap().len(), 1);
    }

    #[test]
    fn ill_typed_expressions_error() {
        let s = MemState::new(uni(), Value::Int(3));
        assert!(eval(&Expr::deref(Expr::var("x")), &s).is_err());
        assert!(eval(&Expr::ptr(Expr::var("x")), &s).is_err());
        assert!(eval(&Expr::var("nosuch"), &s).is_err());
        assert!(eval(&Expr::Param(9), &s).is_err());
    }

    #[test]
    fn perm_classes() {
        assert_eq!(perm_class(Rational64::from_integer(1)), PermClass::Write);
        assert_eq!(perm_class(Rational64::new(1, 3)), PermClass::Read);
        assert_eq!(perm_class(Rational64::from_integer(0)), PermClass::Denied);
    }

    #[test]
    fn hc2_detects_shared_write() {
        let mut s = MemState::new(uni(), Value::Null);
        let x = Location::var("x");
        s.set_perm(x, ProcId(0), Rational64::from_integer(1))
            .unwrap();
        assert!(s.hc2_check());
        s.set_perm(x, ProcId(1), Rational64::new(1, 2)).unwrap();
        assert!(!s.hc2_check());
        s.set_perm(x, ProcId(0), Rational64::new(1, 2)).unwrap();
        assert!(s.hc2_check());
        assert!(s.has_read(x, ProcId(0)));
    }

    #[test]
    fn interference_and_read_all() {
        let mut s = MemState::new(uni(), Value::Null);
        let x = Location::var("x");
        s.set_perm(x, ProcId(1), Rational64::from_integer(1))
            .unwrap();
        assert!(s.interferes(x, &[ProcId(0)]));
        assert!(!s.interferes(x, &[ProcId(1)]));
        assert!(!s.read_all_locs(&Expr::var("x"), ProcId(0), &()));
        s.set_perm(x, ProcId(1), Rational64::new(1, 2)).unwrap();
        s.set_perm(x, ProcId(0), Rational64::new(1, 2)).unwrap();
        assert!(s.read_all_locs(&Expr::var("x"), ProcId(0), &()));
    }

    #[test]
    fn stack_addrs_follows_chain() {
        let mut s = MemState::new(uni(), Value::Null);
        let top = Location::var("Top");
        s.set(top, Value::Pair(Some(4), 0)).unwrap();
        s.set(Location::Addr(5), Value::Addr(8)).unwrap();
        let got = stack_addrs(&s, top).unwrap();
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec![4, 5, 8, 9]);
        s.set(Location::Addr(9), Value::Addr(4)).unwrap();
        assert!(stack_addrs(&s, top).is_none());
    }

    #[test]
    fn sequence_and_set_ops() {
        let s = MemState::new(uni(), Value::Null);
        let seq = Expr::Const(Value::Seq(vec![Value::Int(1), Value::Int(2)]));
        assert_eq!(
            eval(&Expr::un(UnOp::Head, seq.clone()), &s),
            Ok(Value::Int(1))
        );
        assert_eq!(
            eval(&Expr::bin(BinOp::Cons, Expr::int(5), seq), &s),
            Ok(Value::Seq(vec![
                Value::Int(5),
                Value::Int(1),
                Value::Int(2)
            ]))
        );
        let set = Expr::Const(Value::Set([4, 5, 6, 7].into_iter().collect()));
        assert_eq!(
            eval(
                &Expr::bin(BinOp::RemoveNode, set, Expr::Const(Value::Addr(4))),
                &s
            ),
            Ok(Value::Set([6, 7].into_iter().collect()))
        );
    }
}
