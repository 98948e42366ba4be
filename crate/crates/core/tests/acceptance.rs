//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p lincheck --test acceptance`. Limits are pinned in
//! the constants below. The process fails if a criterion fails that is not
//! listed in `KNOWN_FAILURES`, or if a listed one passes.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lincheck::commands::{beh, eval_pred, idle_pred};
use lincheck::executor::{
    check_behaviour_refinement, check_data_refinement, extract_history, for_each_stream,
    program_procs, DataRefinement, ExecError, GenConfig, Intervals, Mode,
};
use lincheck::histories::{
    complete, legal, linearisable_hw, linearisable_hw_all, linearisable_linrel, Event, History,
    Kind,
};
use lincheck::intervals::{aba_pred, Evaluator, Interval, Pred, StatePred, Stream};
use lincheck::memstate::{Expr, Location, MemState, Universe, Value};
use lincheck::stacks::{
    build_program, sequential_histories, sim_ts_conjuncts, sim_ts_space, top_written, Program,
    StackConfig, StackOracle, TOP,
};

use common::{
    random_interval, random_pred, random_state_pred, random_stream, stack_histories, P, Q,
};

/// Criteria expected to fail, with the reason printed next to them.
const KNOWN_FAILURES: &[(u8, &str)] = &[(
    8,
    "ref2 at 2 processes: two concurrent empty pops fit in 4 instants, \
     the abstract BEmpty blocks exclude each other and need 6",
)];

const C1_LIMIT: Duration = Duration::from_secs(1);
const C2_LIMIT: Duration = Duration::from_secs(120);
const C3_SAMPLES: usize = 1000;
const C3_WINDOW: usize = 8;
const C3_LIMIT: Duration = Duration::from_secs(60);
const C5_LIMIT: Duration = Duration::from_secs(180);
const C6_LIMIT: Duration = Duration::from_secs(60);
const C7_SAMPLES: usize = 10_000;
const C7_HORIZON: usize = 24;
const C7_LIMIT: Duration = Duration::from_secs(300);
const C8_LIMIT: Duration = Duration::from_secs(300);
const C9_SAMPLES: usize = 2000;
const C9_HORIZON: usize = 32;
const C9_LIMIT: Duration = Duration::from_secs(60);
const TINY_HORIZON: usize = 12;
const TINY_RANDOM_HORIZON: usize = 24;
const TINY_SAMPLES: usize = 300;
const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String, took: Duration, limit: Duration) -> Outcome {
    let within = took <= limit;
    Outcome {
        pass: pass && within,
        detail: format!("{detail}; {took:.2?} (limit {limit:?})"),
    }
}

/// Permission healthiness over every stream seen by the run.
#[derive(Default)]
struct Health {
    streams: usize,
    states: usize,
    hc2_bad: usize,
    hc1_bad: usize,
}

impl Health {
    fn observe(&mut self, s: &Stream) {
        self.streams += 1;
        self.states += s.states.len();
        self.hc2_bad += s.states.iter().filter(|st| !st.hc2_check()).count();
        if !unwritten_locations_stable(s) {
            self.hc1_bad += 1;
        }
    }
}

/// HC1 from its definition: over any interval in which no process may write
/// `va`, `va` is stable. Stability and the absence of writers are both
/// pointwise, so single instants suffice.
fn unwritten_locations_stable(s: &Stream) -> bool {
    (1..s.states.len()).all(|t| {
        let (cur, before) = (&s.states[t], &s.states[t - 1]);
        cur.universe().locations().all(|loc| {
            cur.universe().procs().any(|p| cur.has_write(loc, p))
                || cur.get(loc).ok() == before.get(loc).ok()
        })
    })
}

fn ev(op: &str, p: &str, kind: Kind, vals: &[Value]) -> Event {
    match kind {
        Kind::Invoke => Event::invoke(op, p, vals.to_vec()),
        Kind::Response => Event::response(op, p, vals.to_vec()),
    }
}

use Kind::{Invoke as I, Response as R};

fn x() -> Value {
    Value::Int(1)
}

fn y() -> Value {
    Value::Int(2)
}

fn hist(events: &[(&str, &str, Kind, &[Value])]) -> History {
    History::new(
        events
            .iter()
            .map(|(op, p, k, v)| ev(op, p, *k, v))
            .collect(),
    )
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let valdom = [x(), y()];
    let h23 = hist(&[
        ("push", "p", I, &[x()]),
        ("push", "q", I, &[y()]),
        ("pop", "r", I, &[]),
        ("push", "q", R, &[]),
        ("push", "p", R, &[]),
        ("pop", "r", R, &[Value::Empty]),
    ]);
    let hs49 = hist(&[
        ("pop", "r", I, &[]),
        ("pop", "r", R, &[Value::Empty]),
        ("push", "q", I, &[y()]),
        ("push", "q", R, &[]),
        ("push", "p", I, &[x()]),
        ("push", "p", R, &[]),
    ]);
    let hs50 = hist(&[
        ("pop", "r", I, &[]),
        ("pop", "r", R, &[Value::Empty]),
        ("push", "p", I, &[x()]),
        ("push", "p", R, &[]),
        ("push", "q", I, &[y()]),
        ("push", "q", R, &[]),
    ]);
    let all = linearisable_hw_all(&h23, &StackOracle, &valdom);
    let h23_ok = all.contains(&hs49) && all.contains(&hs50);

    // As printed, and with the two responses read as belonging to p and r.
    let h32 = hist(&[
        ("push", "p", I, &[x()]),
        ("pop", "q", I, &[]),
        ("pop", "r", I, &[]),
        ("pop", "q", R, &[x()]),
        ("push", "r", R, &[]),
        ("pop", "p", R, &[x()]),
    ]);
    let h32_read = hist(&[
        ("push", "p", I, &[x()]),
        ("pop", "q", I, &[]),
        ("pop", "r", I, &[]),
        ("pop", "q", R, &[x()]),
        ("push", "p", R, &[]),
        ("pop", "r", R, &[x()]),
    ]);
    let h32_ok = linearisable_hw(&h32, &StackOracle, &valdom).is_none()
        && linearisable_hw(&h32_read, &StackOracle, &valdom).is_none();

    let h87 = hist(&[
        ("push", "p", I, &[x()]),
        ("pop", "q", I, &[]),
        ("pop", "q", R, &[x()]),
    ]);
    let hs87 = hist(&[
        ("push", "p", I, &[x()]),
        ("push", "p", R, &[]),
        ("pop", "q", I, &[]),
        ("pop", "q", R, &[x()]),
    ]);
    let mut extended = h87.clone();
    extended.events.push(ev("push", "p", R, &[]));
    let by_linrel = linearisable_linrel(&h87, &hs87, &valdom).map(|(he, _)| he);
    let h87_ok = linearisable_hw(&h87, &StackOracle, &valdom).is_some()
        && linearisable_hw(&complete(&h87), &StackOracle, &valdom).is_none()
        && by_linrel == Some(extended);

    let took = started.elapsed();
    outcome(
        h23_ok && h32_ok && h87_ok,
        format!(
            "H23 witnesses {} incl. HS49 and HS50: {h23_ok}; H32 rejected: {h32_ok}; H87 needs push_p^R: {h87_ok}",
            all.len()
        ),
        took,
        C1_LIMIT,
    )
}

/// Invocations of each process, in order.
fn invocation_key(h: &History, procs: &[&str]) -> Vec<Vec<Event>> {
    procs
        .iter()
        .map(|p| {
            h.events
                .iter()
                .filter(|e| e.proc == *p && e.kind == Kind::Invoke)
                .cloned()
                .collect()
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let procs = ["p", "q"];
    let vals = [1, 2];
    let valdom = [x(), y()];
    let cfg = StackConfig::new(2, vals.to_vec(), 2);
    let mut by_key: BTreeMap<Vec<Vec<Event>>, Vec<History>> = BTreeMap::new();
    for hs in sequential_histories(&cfg) {
        by_key
            .entry(invocation_key(&hs, &procs))
            .or_default()
            .push(hs);
    }
    let (mut total, mut linearisable, mut disagree) = (0usize, 0usize, Vec::new());
    stack_histories(&procs, 2, &vals, &mut |hc| {
        total += 1;
        assert!(legal(hc));
        let hw = linearisable_hw(hc, &StackOracle, &valdom).is_some();
        // Equivalence fixes each process's invocations, up to a dropped
        // pending one; only those sequential histories can match.
        let key = invocation_key(hc, &procs);
        let mut keys = vec![key.clone()];
        for (i, p) in procs.iter().enumerate() {
            let pending = hc
                .events
                .iter()
                .filter(|e| e.proc == *p)
                .last()
                .is_some_and(|e| e.kind == Kind::Invoke);
            if pending {
                for k in keys.clone() {
                    let mut k = k;
                    k[i].pop();
                    keys.push(k);
                }
            }
        }
        let lr = keys
            .iter()
            .filter_map(|k| by_key.get(k))
            .flatten()
            .any(|hs| linearisable_linrel(hc, hs, &valdom).is_some());
        linearisable += usize::from(hw);
        if hw != lr && disagree.len() < 3 {
            disagree.push(hc.to_string());
        }
    });
    let took = started.elapsed();
    outcome(
        disagree.is_empty(),
        format!("{total} histories, {linearisable} linearisable, disagreements {disagree:?}"),
        took,
        C2_LIMIT,
    )
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut violations: BTreeMap<&str, usize> = BTreeMap::new();
    let z: BTreeSet<Location> = [Location::var("a"), Location::var("b")].into();
    for _ in 0..C3_SAMPLES {
        let s = random_stream(&mut rng, C3_WINDOW);
        let iv = random_interval(&mut rng, &s);
        let (g1, g2, g3) = (
            random_pred(&mut rng, 2),
            random_pred(&mut rng, 2),
            random_pred(&mut rng, 2),
        );
        let c = random_state_pred(&mut rng);
        let e = Expr::var(common::LOCS[rng.gen_range(0..3)]);
        let k = Expr::int(rng.gen_range(0..3));
        let mut evl = Evaluator::new(&s);
        let mut h = |g: &Pred| evl.holds(g, iv).unwrap();
        let mut check = |name: &'static str, ok: bool| {
            if !ok {
                *violations.entry(name).or_default() += 1;
            }
        };

        let left = Pred::chop(Pred::chop(g1.clone(), g2.clone()), g3.clone());
        let right = Pred::chop(g1.clone(), Pred::chop(g2.clone(), g3.clone()));
        check("chop associativity", h(&left) == h(&right));

        let om = Pred::omega(g1.clone());
        let unfold = Pred::or(vec![Pred::empty(), Pred::chop(g1.clone(), om.clone())]);
        check("omega unfold", h(&om) == h(&unfold));

        let (b, g, d) = (
            h(&Pred::always(g1.clone())),
            h(&g1),
            h(&Pred::sometime(g1.clone())),
        );
        check(
            "box g => g => diamond g",
            iv.is_empty() || ((!b || g) && (!g || d)),
        );

        if iv.is_empty() {
            check("boxdot vacuous on empty", h(&Pred::boxdot(c.clone())));
            check("diamonddot false on empty", !h(&Pred::diadot(c.clone())));
        }

        let idle = idle_pred(P, &z);
        let eval = eval_pred(P, &z, e.clone(), k.clone());
        check(
            "widen-1",
            !h(&Pred::chop(idle.clone(), eval.clone())) || h(&eval),
        );
        check(
            "widen-2",
            !h(&Pred::chop(eval.clone(), idle.clone())) || h(&eval),
        );

        // [c] against (Enf Fin . Idle) ; (Enf (boxdot c and not Empty and ReadAllLocs) . Idle) ; Idle.
        let guard = eval_pred(Q, &z, c_expr(&c), Expr::Const(Value::Bool(true)));
        let idle_q = idle_pred(Q, &z);
        let during = Pred::and(vec![
            Pred::boxdot(StatePred::And(vec![
                StatePred::expr(c_expr(&c)),
                StatePred::ReadAll {
                    expr: c_expr(&c),
                    proc: Q,
                },
            ])),
            Pred::nonempty(),
            idle_q.clone(),
        ]);
        let chopped = Pred::chops(vec![
            Pred::and(vec![Pred::fin(), idle_q.clone()]),
            during,
            idle_q,
        ]);
        check("guard to chop", h(&guard) == h(&chopped));
    }
    let took = started.elapsed();
    let total: usize = violations.values().sum();
    outcome(
        total == 0,
        format!("{C3_SAMPLES} samples, window <= {C3_WINDOW}, violations {violations:?}"),
        took,
        C3_LIMIT,
    )
}

/// The guard expression behind a generated state predicate.
fn c_expr(c: &StatePred) -> Expr {
    match c {
        StatePred::Expr(e) => e.clone(),
        StatePred::Not(a) => Expr::not(c_expr(a)),
        StatePred::And(cs) => cs
            .iter()
            .map(c_expr)
            .reduce(Expr::and)
            .unwrap_or(Expr::Const(Value::Bool(true))),
        _ => unreachable!("generator yields expressions only"),
    }
}

use rand::Rng;

/// Streams of `prog` at the tiny configuration.
fn tiny_streams(prog: Program, cfg: &StackConfig) -> Result<Vec<Stream>, ExecError> {
    let cmd = build_program(prog, cfg).expect("builds");
    let gen = match prog {
        Program::TS | Program::HTS | Program::HLSW => cfg.gen_config(
            TINY_RANDOM_HORIZON,
            Mode::Random {
                seed: SEED,
                samples: TINY_SAMPLES,
            },
        ),
        _ => cfg.gen_config(TINY_HORIZON, Mode::Exhaustive),
    };
    let mut out = Vec::new();
    for_each_stream(&cmd, &[], &cfg.init_state(), &gen, &mut |s| {
        out.push(s.clone());
        true
    })?;
    Ok(out)
}

fn criterion_5(health: &mut Health, tiny: &mut BTreeMap<Program, Vec<Stream>>) -> Outcome {
    let started = Instant::now();
    let cfg = StackConfig::default();
    let uni = cfg.universe();
    let mut parts = Vec::new();
    let mut pass = true;
    for prog in Program::ALL {
        let streams = match tiny_streams(prog, &cfg) {
            Ok(s) => s,
            Err(e) => {
                pass = false;
                parts.push(format!("{prog}: {e}"));
                continue;
            }
        };
        let cmd = build_program(prog, &cfg).unwrap();
        let b = beh(&uni, &program_procs(&cmd, &[]), &BTreeSet::new(), &cmd).pred;
        let bad = streams
            .iter()
            .filter(|s| !Evaluator::new(s).holds(&b, s.exec()).unwrap())
            .count();
        streams.iter().for_each(|s| health.observe(s));
        pass &= bad == 0 && !streams.is_empty();
        parts.push(format!("{prog} {}/{}", streams.len() - bad, streams.len()));
        tiny.insert(prog, streams);
    }
    let took = started.elapsed();
    outcome(
        pass,
        format!("streams satisfying beh: {}", parts.join(", ")),
        took,
        C5_LIMIT,
    )
}

fn e_stream(xs: &[i64]) -> Stream {
    let uni = Universe::new(&["e"], 0, &["p"]);
    Stream::new(
        xs.iter()
            .map(|&v| {
                let mut s = MemState::new(uni.clone(), Value::Null);
                s.set(Location::var("e"), Value::Int(v)).unwrap();
                s
            })
            .collect(),
    )
}

/// Values of `*Top` never return after changing, checked directly.
fn top_never_returns(s: &Stream) -> bool {
    let mut seen: Vec<&Value> = Vec::new();
    for st in &s.states {
        let v = st.get(Location::Addr(TOP)).unwrap();
        if seen.last() != Some(&v) {
            if seen.contains(&v) {
                return false;
            }
            seen.push(v);
        }
    }
    true
}

fn criterion_6(tiny: &BTreeMap<Program, Vec<Stream>>) -> Outcome {
    let started = Instant::now();
    let e = Expr::var("e");
    let aba = aba_pred(e);
    let hand = Evaluator::new(&e_stream(&[1, 2, 1]))
        .holds(&aba, Interval::new(0, 2))
        .unwrap();
    let no_return = !Evaluator::new(&e_stream(&[1, 2, 2]))
        .holds(&aba, Interval::new(0, 2))
        .unwrap();

    let never = Pred::always(Pred::not(aba_pred(Expr::deref(Expr::Const(Value::Addr(
        TOP,
    ))))));
    let (mut checked, mut bad, mut direct_bad) = (0, 0, 0);
    for prog in [Program::TS, Program::LS, Program::HTS, Program::HLS] {
        for s in &tiny[&prog] {
            checked += 1;
            if !Evaluator::new(s).holds(&never, s.window()).unwrap() {
                bad += 1;
            }
            if !top_never_returns(s) {
                direct_bad += 1;
            }
        }
    }
    let took = started.elapsed();
    outcome(
        hand && no_return && bad == 0 && direct_bad == 0,
        format!(
            "1->2->1 is ABA: {hand}; 1->2->2 is not: {no_return}; \
             TS/LS streams with ABA on *Top: {bad}/{checked} (direct check {direct_bad})"
        ),
        took,
        C6_LIMIT,
    )
}

/// Which operation each process ran, as "push" or "pop".
fn op_mix(h: &History) -> (String, String) {
    let first = |p: &str| {
        h.events
            .iter()
            .find(|e| e.proc == p && e.kind == Kind::Invoke)
            .map_or("none".to_string(), |e| e.op.clone())
    };
    (first("p"), first("q"))
}

fn criterion_7(health: &mut Health) -> Outcome {
    let started = Instant::now();
    let cfg = StackConfig::default();
    let valdom = cfg.values();
    let hts = build_program(Program::HTS, &cfg).unwrap();
    let init = cfg.init_state();

    let exhaustive = cfg.gen_config(C7_HORIZON, Mode::Exhaustive);
    let capped = matches!(
        for_each_stream(&hts, &[], &init, &exhaustive, &mut |_| true),
        Err(ExecError::Capped(_))
    );
    let mode = if capped {
        Mode::Random {
            seed: SEED,
            samples: C7_SAMPLES,
        }
    } else {
        Mode::Exhaustive
    };
    let gen = cfg.gen_config(C7_HORIZON, mode.clone());
    let mut histories = BTreeSet::new();
    let r = for_each_stream(&hts, &[], &init, &gen, &mut |s| {
        health.observe(s);
        histories.insert(extract_history(s, Location::var("HL")).unwrap());
        true
    });
    if let Err(e) = r {
        return outcome(
            false,
            format!("HTS generation: {e}"),
            started.elapsed(),
            C7_LIMIT,
        );
    }
    let seq = sequential_histories(&cfg);
    let mut rejected = 0;
    let mut disagree = 0;
    let mut mixes = BTreeSet::new();
    for h in &histories {
        let hw = linearisable_hw(h, &StackOracle, &valdom).is_some();
        let lr = seq
            .iter()
            .any(|hs| linearisable_linrel(h, hs, &valdom).is_some());
        rejected += usize::from(!hw);
        disagree += usize::from(hw != lr);
        mixes.insert(op_mix(h));
    }
    let all_mixes = ["push", "pop"].iter().all(|a| {
        ["push", "pop"]
            .iter()
            .all(|b| mixes.contains(&(a.to_string(), b.to_string())))
    });

    let ls = build_program(Program::LS, &cfg).unwrap();
    let ts = build_program(Program::TS, &cfg).unwrap();
    let none = BTreeSet::new();
    let refine =
        check_behaviour_refinement(&ls, &ts, &[], &none, &none, &init, &gen, Intervals::All);
    let (refine_ok, refine_msg) = match &refine {
        Ok(v) => (
            v.is_holds(),
            format!("{:?} on {} streams", v.outcome, v.streams_checked),
        ),
        Err(e) => (false, e.to_string()),
    };
    let took = started.elapsed();
    let how = match mode {
        Mode::Exhaustive => "exhaustive".to_string(),
        Mode::Random { seed, samples } => {
            format!("exhaustive capped, random {samples} samples seed {seed}")
        }
    };
    outcome(
        rejected == 0 && disagree == 0 && all_mixes && refine_ok,
        format!(
            "{how}, horizon {C7_HORIZON}: {} histories, {rejected} rejected, {disagree} oracle disagreements, \
             all four push/pop mixes: {all_mixes}; LS refined by TS: {refine_msg}",
            histories.len()
        ),
        took,
        C7_LIMIT,
    )
}

fn data_refinement(
    procs: usize,
    ops: u32,
    horizon: usize,
    mode: Mode,
) -> Result<(bool, String), ExecError> {
    let cfg = StackConfig::new(procs, vec![1, 2], ops);
    let has = build_program(Program::HAS, &cfg).unwrap();
    let hls = build_program(Program::HLS, &cfg).unwrap();
    let init = cfg.init_state();
    let sim = sim_ts_conjuncts(&cfg.values());
    let space = sim_ts_space(&cfg);
    let d = DataRefinement {
        abs: &has,
        conc: &hls,
        procs: &[],
        abs_init: &init,
        conc_init: &init,
        sim: &sim,
        space: &space,
        split: top_written(),
        conc_cfg: cfg.gen_config(horizon, mode),
        abs_cfg: cfg.gen_config(horizon, Mode::Exhaustive),
        abs_streams: 100_000,
        which: Intervals::All,
    };
    let v = check_data_refinement(&d)?;
    let show = |name: &str, v: &lincheck::executor::Verdict| match v.witness_interval {
        Some([lo, hi]) if !v.is_holds() => format!("{name} fails on [{lo}, {hi}]"),
        _ if !v.is_holds() => format!("{name} fails on the empty interval"),
        _ => format!("{name} holds"),
    };
    Ok((
        v.is_holds(),
        format!(
            "{procs}x{ops} h{horizon}: {}, {}, {}, {}",
            show("refinit", &v.refinit),
            show("link(w)", &v.link.with_w),
            show("link(not w)", &v.link.without_w),
            show("ref2", &v.ref2)
        ),
    ))
}

fn criterion_8() -> Outcome {
    let started = Instant::now();
    let runs = [
        (1, 1, TINY_HORIZON, Mode::Exhaustive),
        (1, 2, 24, Mode::Exhaustive),
        (
            2,
            1,
            24,
            Mode::Random {
                seed: SEED,
                samples: TINY_SAMPLES,
            },
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (procs, ops, horizon, mode) in runs {
        match data_refinement(procs, ops, horizon, mode) {
            Ok((ok, msg)) => {
                pass &= ok;
                parts.push(msg);
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{procs}x{ops}: {e}"));
            }
        }
    }
    outcome(pass, parts.join("; "), started.elapsed(), C8_LIMIT)
}

fn criterion_9(health: &mut Health) -> Outcome {
    let started = Instant::now();
    let cfg = StackConfig::new(2, vec![1, 2], 2);
    let valdom = cfg.values();
    let cmd = build_program(Program::HLSW, &cfg).unwrap();
    let gen: GenConfig = cfg.gen_config(
        C9_HORIZON,
        Mode::Random {
            seed: SEED,
            samples: C9_SAMPLES,
        },
    );
    let mut histories = BTreeSet::new();
    let r = for_each_stream(&cmd, &[], &cfg.init_state(), &gen, &mut |s| {
        health.observe(s);
        histories.insert(extract_history(s, Location::var("HL")).unwrap());
        true
    });
    if let Err(e) = r {
        return outcome(
            false,
            format!("HLSW generation: {e}"),
            started.elapsed(),
            C9_LIMIT,
        );
    }
    let seq = sequential_histories(&cfg);
    let rejected: Vec<&History> = histories
        .iter()
        .filter(|h| linearisable_hw(h, &StackOracle, &valdom).is_none())
        .collect();
    // The linrel route must agree that no sequential history fits.
    let confirmed = rejected.iter().all(|h| {
        !seq.iter()
            .any(|hs| linearisable_linrel(h, hs, &valdom).is_some())
    });
    let example = rejected
        .first()
        .map_or(String::new(), |h| format!(", e.g. {h}"));
    outcome(
        !rejected.is_empty() && confirmed,
        format!(
            "HLSW 2x2 h{C9_HORIZON} {C9_SAMPLES} samples: {} histories, {} rejected (confirmed by linrel: {confirmed}){example}",
            histories.len(),
            rejected.len()
        ),
        started.elapsed(),
        C9_LIMIT,
    )
}

fn main() {
    // `cargo test` passes harness flags; listing asks for no run.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // Criterion numbers on the command line select a subset.
    let only: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |n: u8| only.is_empty() || only.contains(&n);
    let mut health = Health::default();
    let mut tiny = BTreeMap::new();
    let mut results: Vec<(u8, Outcome)> = Vec::new();
    if want(1) {
        results.push((1, criterion_1()));
    }
    if want(2) {
        results.push((2, criterion_2()));
    }
    if want(3) {
        results.push((3, criterion_3()));
    }
    if want(5) || want(6) || want(4) {
        let c5 = criterion_5(&mut health, &mut tiny);
        if want(5) {
            results.push((5, c5));
        }
    }
    if want(6) {
        results.push((6, criterion_6(&tiny)));
    }
    if want(7) || want(4) {
        let c7 = criterion_7(&mut health);
        if want(7) {
            results.push((7, c7));
        }
    }
    if want(8) {
        results.push((8, criterion_8()));
    }
    if want(9) || want(4) {
        let c9 = criterion_9(&mut health);
        if want(9) {
            results.push((9, c9));
        }
    }
    if want(4) {
        results.push((
            4,
            Outcome {
                pass: health.streams > 0 && health.hc2_bad == 0 && health.hc1_bad == 0,
                detail: format!(
                    "{} streams, {} states: {} states fail hc2, {} streams fail HC1",
                    health.streams, health.states, health.hc2_bad, health.hc1_bad
                ),
            },
        ));
    }
    results.sort_by_key(|(n, _)| *n);

    let mut unexpected = Vec::new();
    for (n, o) in &results {
        let known = KNOWN_FAILURES.iter().find(|(k, _)| k == n);
        let tag = match (o.pass, known) {
            (true, None) => "PASS",
            (false, Some(_)) => "FAIL (documented)",
            (false, None) => {
                unexpected.push(*n);
                "FAIL"
            }
            (true, Some(_)) => {
                unexpected.push(*n);
                "PASS (listed as a known failure)"
            }
        };
        println!("criterion {n}: {tag}: {}", o.detail);
        if let (false, Some((_, why))) = (o.pass, known) {
            println!("    reason: {why}");
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected results for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
