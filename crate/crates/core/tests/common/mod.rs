//! Generators shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use num_rational::Rational64;
use rand::seq::SliceRandom;
use rand::Rng;

use lincheck::histories::{Event, History};
use lincheck::intervals::{Interval, Pred, StatePred, Stream};
use lincheck::memstate::{Expr, Location, MemState, ProcId, Universe, Value};

pub const LOCS: [&str; 3] = ["a", "b", "c"];
pub const P: ProcId = ProcId(0);
pub const Q: ProcId = ProcId(1);

pub fn universe() -> Arc<Universe> {
    Universe::new(&LOCS, 0, &["p", "q"])
}

/// A random stream over `a`, `b`, `c` with values in {0, 1, 2}, at most
/// `max_len` states, and healthy permissions: each location has at most one
/// writer, and otherwise each process reads it or is denied.
pub fn random_stream<R: Rng>(rng: &mut R, max_len: usize) -> Stream {
    let uni = universe();
    let len = rng.gen_range(1..=max_len);
    let half = Rational64::new(1, 2);
    let states = (0..len)
        .map(|_| {
            let mut s = MemState::new(uni.clone(), Value::Int(0));
            for name in LOCS {
                let loc = Location::var(name);
                s.set(loc, Value::Int(rng.gen_range(0..3))).unwrap();
                let perms = match rng.gen_range(0..5) {
                    0 => [1, 0].map(Rational64::from_integer),
                    1 => [0, 1].map(Rational64::from_integer),
                    2 => [half, half],
                    3 => [half, Rational64::from_integer(0)],
                    _ => [Rational64::from_integer(0), half],
                };
                s.set_perm(loc, P, perms[0]).unwrap();
                s.set_perm(loc, Q, perms[1]).unwrap();
            }
            s
        })
        .collect();
    Stream::new(states)
}

/// A random subinterval of the window, empty about one time in eight.
pub fn random_interval<R: Rng>(rng: &mut R, s: &Stream) -> Interval {
    let h = s.horizon();
    if rng.gen_ratio(1, 8) {
        return Interval::Empty;
    }
    let lo = rng.gen_range(0..=h);
    let hi = rng.gen_range(lo..=h);
    Interval::new(lo, hi)
}

pub fn loc_is(name: &str, k: i64) -> StatePred {
    StatePred::expr(Expr::eq(Expr::var(name), Expr::int(k)))
}

pub fn random_state_pred<R: Rng>(rng: &mut R) -> StatePred {
    let name = *LOCS.choose(rng).unwrap();
    let k = rng.gen_range(0..3);
    match rng.gen_range(0..4) {
        0 => StatePred::Not(Box::new(loc_is(name, k))),
        1 => StatePred::And(vec![
            loc_is(name, k),
            loc_is(LOCS.choose(rng).unwrap(), rng.gen_range(0..3)),
        ]),
        _ => loc_is(name, k),
    }
}

/// A random interval predicate of small depth over the three locations.
pub fn random_pred<R: Rng>(rng: &mut R, depth: u32) -> Pred {
    let leaf = depth == 0 || rng.gen_ratio(1, 2);
    if leaf {
        return match rng.gen_range(0..9) {
            0 => Pred::boxdot(random_state_pred(rng)),
            1 => Pred::diadot(random_state_pred(rng)),
            2 => Pred::ola(random_state_pred(rng)),
            3 => Pred::ora(random_state_pred(rng)),
            4 => Pred::ceil(random_state_pred(rng)),
            5 => Pred::stable(Location::var(LOCS.choose(rng).unwrap())),
            6 => Pred::empty(),
            7 => Pred::nonempty(),
            _ => Pred::tt(),
        };
    }
    let a = random_pred(rng, depth - 1);
    match rng.gen_range(0..5) {
        0 => Pred::not(a),
        1 => Pred::and(vec![a, random_pred(rng, depth - 1)]),
        2 => Pred::or(vec![a, random_pred(rng, depth - 1)]),
        3 => Pred::chop(a, random_pred(rng, depth - 1)),
        _ => Pred::sometime(a),
    }
}

/// Operations of the sequential stack over `vals`: a push of each value and
/// a pop, with the responses a pop may return.
fn stack_ops(vals: &[i64]) -> Vec<(&'static str, Vec<Value>, Vec<Vec<Value>>)> {
    let mut ops: Vec<_> = vals
        .iter()
        .map(|&v| ("push", vec![Value::Int(v)], vec![vec![]]))
        .collect();
    let mut results: Vec<Vec<Value>> = vals.iter().map(|&v| vec![Value::Int(v)]).collect();
    results.push(vec![Value::Empty]);
    ops.push(("pop", vec![], results));
    ops
}

/// Per-process event sequences: up to `max_ops` operations, each an
/// invocation followed by its response, the last possibly pending.
fn process_runs(proc: &str, max_ops: usize, vals: &[i64]) -> Vec<Vec<Event>> {
    fn rec(
        proc: &str,
        left: usize,
        ops: &[(&'static str, Vec<Value>, Vec<Vec<Value>>)],
        cur: &mut Vec<Event>,
        out: &mut Vec<Vec<Event>>,
    ) {
        out.push(cur.clone());
        if left == 0 {
            return;
        }
        for (op, args, results) in ops {
            cur.push(Event::invoke(op, proc, args.clone()));
            out.push(cur.clone());
            for r in results {
                cur.push(Event::response(op, proc, r.clone()));
                rec(proc, left - 1, ops, cur, out);
                cur.pop();
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(proc, max_ops, &stack_ops(vals), &mut Vec::new(), &mut out);
    out
}

fn interleave(
    runs: &[Vec<Event>],
    pos: &mut Vec<usize>,
    cur: &mut Vec<Event>,
    out: &mut Vec<History>,
) {
    let mut moved = false;
    for i in 0..runs.len() {
        if pos[i] < runs[i].len() {
            moved = true;
            cur.push(runs[i][pos[i]].clone());
            pos[i] += 1;
            interleave(runs, pos, cur, out);
            pos[i] -= 1;
            cur.pop();
        }
    }
    if !moved {
        out.push(History::new(cur.clone()));
    }
}

/// Every stack history over `procs` in which each process runs at most
/// `max_ops` operations one after another, with arguments and results
/// drawn from `vals` and Empty.
pub fn stack_histories(
    procs: &[&str],
    max_ops: usize,
    vals: &[i64],
    visit: &mut dyn FnMut(&History),
) {
    let per: Vec<Vec<Vec<Event>>> = procs
        .iter()
        .map(|p| process_runs(p, max_ops, vals))
        .collect();
    let mut idx = vec![0; procs.len()];
    loop {
        let runs: Vec<Vec<Event>> = idx.iter().zip(&per).map(|(&i, r)| r[i].clone()).collect();
        let mut out = Vec::new();
        interleave(&runs, &mut vec![0; runs.len()], &mut Vec::new(), &mut out);
        for h in &out {
            visit(h);
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < per[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
