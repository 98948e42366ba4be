mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lincheck::executor::{extract_history, for_each_stream, hc1_holds, Mode};
use lincheck::histories::{
    complete, equivalent, from_json, is_sequential, legal, linearisable_hw, project, to_json,
    Event, History,
};
use lincheck::intervals::{Evaluator, Interval, Pred, Stream};
use lincheck::memstate::{Location, Value};
use lincheck::stacks::{
    build_program, saddr_faddr_disjoint, Program, StackConfig, StackOracle, TOP,
};

use common::{random_interval, random_pred, random_stream};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn chop_with_empty_is_identity(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = random_stream(&mut r, 7);
        let iv = random_interval(&mut r, &s);
        let g = random_pred(&mut r, 2);
        let mut e = Evaluator::new(&s);
        let plain = e.holds(&g, iv).unwrap();
        prop_assert_eq!(e.holds(&Pred::chop(g.clone(), Pred::empty()), iv).unwrap(), plain);
        prop_assert_eq!(e.holds(&Pred::chop(Pred::empty(), g), iv).unwrap(), plain);
    }

    #[test]
    fn negation_and_de_morgan(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = random_stream(&mut r, 7);
        let iv = random_interval(&mut r, &s);
        let (a, b) = (random_pred(&mut r, 2), random_pred(&mut r, 2));
        let mut e = Evaluator::new(&s);
        let lhs = e.holds(&Pred::not(Pred::and(vec![a.clone(), b.clone()])), iv).unwrap();
        let rhs = e.holds(&Pred::or(vec![Pred::not(a), Pred::not(b)]), iv).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn sometime_is_dual_of_always(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = random_stream(&mut r, 7);
        let iv = random_interval(&mut r, &s);
        let g = random_pred(&mut r, 2);
        let mut e = Evaluator::new(&s);
        let d = e.holds(&Pred::sometime(g.clone()), iv).unwrap();
        let nb = !e.holds(&Pred::always(Pred::not(g)), iv).unwrap();
        prop_assert_eq!(d, nb);
    }

    #[test]
    fn random_streams_are_healthy(seed in any::<u64>()) {
        let s = random_stream(&mut rng(seed), 7);
        prop_assert!(s.states.iter().all(|st| st.hc2_check()));
    }

    #[test]
    fn complete_and_project_are_idempotent(seed in any::<u64>()) {
        let h = random_history(&mut rng(seed));
        let c = complete(&h);
        prop_assert_eq!(complete(&c), c.clone());
        for p in h.procs() {
            let once = project(&h, &p);
            prop_assert_eq!(project(&once, &p), once.clone());
            prop_assert!(once.events.iter().all(|e| e.proc == p));
        }
        prop_assert!(c.len() <= h.len());
    }

    #[test]
    fn json_round_trips(seed in any::<u64>()) {
        let h = random_history(&mut rng(seed));
        prop_assert_eq!(from_json(&to_json(&h)).unwrap(), h);
    }

    #[test]
    fn hw_witness_is_sequential_and_equivalent(seed in any::<u64>()) {
        let h = random_history(&mut rng(seed));
        let valdom = [Value::Int(1), Value::Int(2)];
        if let Some(w) = linearisable_hw(&h, &StackOracle, &valdom) {
            prop_assert!(is_sequential(&w));
            // The witness is equivalent to the completion of some extension,
            // so each process sees at least its completed operations.
            for p in h.procs() {
                let done = project(&complete(&h), &p);
                let mine = project(&w, &p);
                prop_assert!(mine.events.starts_with(&done.events) || equivalent(&mine, &done));
            }
        }
    }

    #[test]
    fn treiber_invariants(seed in 0u64..64) {
        let cfg = StackConfig::default();
        let ts = build_program(Program::TS, &cfg).unwrap();
        let gen = cfg.gen_config(24, Mode::Random { seed, samples: 3 });
        let mut streams: Vec<Stream> = Vec::new();
        for_each_stream(&ts, &[], &cfg.init_state(), &gen, &mut |s| {
            streams.push(s.clone());
            true
        })
        .unwrap();
        for s in &streams {
            prop_assert!(hc1_holds(s));
            prop_assert!(s.states.iter().all(|st| st.hc2_check() && saddr_faddr_disjoint(st)));
            prop_assert!(counter_never_decreases(s));
            prop_assert!(legal(&extract_history(s, Location::var("HL")).unwrap()));
        }
    }
}

/// The version counter stored with `Top` never goes down.
fn counter_never_decreases(s: &Stream) -> bool {
    let counter = |t: usize| match s.states[t].get(Location::Addr(TOP)).unwrap() {
        Value::Pair(_, c) => *c,
        _ => 0,
    };
    (1..s.states.len()).all(|t| counter(t) >= counter(t - 1))
}

/// A small legal stack history over p and q with per-process alternation.
fn random_history(r: &mut ChaCha8Rng) -> History {
    use rand::Rng;
    let mut events = Vec::new();
    let mut open: [Option<&str>; 2] = [None, None];
    let names = ["p", "q"];
    for _ in 0..r.gen_range(0..8) {
        let i = r.gen_range(0..2);
        let p = names[i];
        match open[i].take() {
            Some("push") => events.push(Event::response("push", p, vec![])),
            Some(_) => {
                let v = match r.gen_range(0..3) {
                    0 => Value::Empty,
                    k => Value::Int(k),
                };
                events.push(Event::response("pop", p, vec![v]));
            }
            None if r.gen_bool(0.5) => {
                events.push(Event::invoke(
                    "push",
                    p,
                    vec![Value::Int(r.gen_range(1..3))],
                ));
                open[i] = Some("push");
            }
            None => {
                events.push(Event::invoke("pop", p, vec![]));
                open[i] = Some("pop");
            }
        }
    }
    History::new(events)
}

#[test]
fn window_contains_every_interval() {
    let s = random_stream(&mut rng(7), 6);
    let w = s.window();
    for lo in 0..=s.horizon() {
        for hi in lo..=s.horizon() {
            assert!(Interval::new(lo, hi).is_subset(&w));
        }
    }
}
