use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use lincheck::commands::{Cmd, Enforce};
use lincheck::executor::{
    check_behaviour_refinement, check_data_refinement, DataRefinement, ExecError, Intervals, Mode,
    Verdict,
};
use lincheck::histories::{from_json, linearisable_hw, to_json_value, History};
use lincheck::intervals::{trace, Pred};
use lincheck::memstate::Value;
use lincheck::stacks::{
    build_program, sim_ts_conjuncts, sim_ts_space, simulate, top_written, Program, SimulateError,
    StackConfig, StackOracle,
};

const EXIT_HOLDS: u8 = 0;
const EXIT_NEGATIVE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_CAP: u8 = 3;

/// Abstract streams tried per concrete stream in data refinement.
const ABS_STREAMS: usize = 100_000;

#[derive(Parser)]
#[command(
    name = "lincheck",
    version,
    about = "Linearisability and refinement checks for small stack programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a JSON history against the sequential stack.
    Check(CheckArgs),
    /// Generate streams of a stack program and extract its histories.
    Simulate(SimArgs),
    /// Check behaviour or data refinement between two stack programs.
    Refine(RefineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SpecName {
    Stack,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Exhaustive,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Behaviour,
    Data,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimName {
    Simts,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    All,
    Prefixes,
}

#[derive(clap::Args)]
struct CheckArgs {
    history_file: PathBuf,
    #[arg(long, value_enum, default_value = "stack")]
    spec: SpecName,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    valdom: Vec<i64>,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 2)]
    procs: usize,
    /// Operations per process.
    #[arg(long, default_value_t = 1)]
    ops: u32,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    values: Vec<i64>,
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Walks in random mode.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct SimArgs {
    #[arg(long)]
    program: Program,
    #[arg(long, value_enum)]
    schedule: Option<Schedule>,
    #[arg(long)]
    emit_histories: Option<PathBuf>,
    #[arg(long)]
    dump_trace: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args)]
struct RefineArgs {
    /// Program name, or `Enf(False,NAME)`.
    #[arg(long = "abstract")]
    abs: String,
    #[arg(long)]
    concrete: String,
    #[arg(long, value_enum, default_value = "behaviour")]
    kind: Kind,
    #[arg(long, value_enum)]
    sim: Option<SimName>,
    #[arg(long = "mode", value_enum)]
    schedule: Option<Schedule>,
    #[arg(long, value_enum, default_value = "all")]
    intervals: Which,
    #[command(flatten)]
    common: Common,
}

/// A failure with its exit code.
struct Fail(u8, String);

impl From<ExecError> for Fail {
    fn from(e: ExecError) -> Fail {
        match e {
            ExecError::Capped(_) => Fail(EXIT_CAP, e.to_string()),
            _ => Fail(EXIT_INPUT, e.to_string()),
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> Fail {
    Fail(EXIT_INPUT, e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Check(a) => run_check(&a),
        Command::Simulate(a) => run_simulate(&a),
        Command::Refine(a) => run_refine(&a),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run_check(a: &CheckArgs) -> Result<u8, Fail> {
    let SpecName::Stack = a.spec;
    let text = fs::read_to_string(&a.history_file)
        .map_err(|e| input(format!("{}: {e}", a.history_file.display())))?;
    let h = from_json(&text).map_err(input)?;
    let valdom: Vec<Value> = a.valdom.iter().map(|&v| Value::Int(v)).collect();
    let witness = linearisable_hw(&h, &StackOracle, &valdom);
    if a.json {
        let report = json!({
            "command": "check",
            "config": { "spec": "stack", "valdom": a.valdom },
            "history": to_json_value(&h),
            "linearisable": witness.is_some(),
            "witness": witness.as_ref().map(to_json_value),
        });
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serialises")
        );
    } else {
        match &witness {
            Some(w) => println!("linearisable\nwitness: {w}"),
            None => println!("not linearisable"),
        }
    }
    Ok(if witness.is_some() {
        EXIT_HOLDS
    } else {
        EXIT_NEGATIVE
    })
}

fn stack_config(c: &Common) -> Result<StackConfig, Fail> {
    let cfg = StackConfig::new(c.procs, c.values.clone(), c.ops);
    cfg.validate().map_err(input)?;
    Ok(cfg)
}

/// Exhaustive for at most two operations in total, random otherwise.
fn mode_for(c: &Common, s: Option<Schedule>) -> Mode {
    let s = s.unwrap_or(if c.procs * c.ops as usize <= 2 {
        Schedule::Exhaustive
    } else {
        Schedule::Random
    });
    match s {
        Schedule::Exhaustive => Mode::Exhaustive,
        Schedule::Random => Mode::Random {
            seed: c.seed,
            samples: c.samples,
        },
    }
}

fn mode_json(m: &Mode) -> serde_json::Value {
    match m {
        Mode::Exhaustive => json!({ "schedule": "exhaustive" }),
        Mode::Random { seed, samples } => {
            json!({ "schedule": "random", "seed": seed, "samples": samples })
        }
    }
}

fn run_simulate(a: &SimArgs) -> Result<u8, Fail> {
    let c = &a.common;
    let cfg = stack_config(c)?;
    let mode = mode_for(c, a.schedule);
    let gcfg = cfg.gen_config(c.horizon, mode.clone());
    let started = Instant::now();

    let mut traces = BTreeSet::new();
    let sim = simulate(a.program, &cfg, &gcfg, &mut |s| {
        if a.dump_trace {
            traces.insert(trace(s));
        }
    })
    .map_err(|e| match e {
        SimulateError::Exec(e) => Fail::from(e),
        SimulateError::Stack(e) => input(e),
    })?;
    if let Some(dir) = &a.emit_histories {
        emit(dir, &sim.histories).map_err(input)?;
    }

    if a.dump_trace {
        for t in &traces {
            println!("{t}");
        }
    }
    let has_history = a.program.history_var().is_some();
    if c.json {
        let report = json!({
            "command": "simulate",
            "config": {
                "program": a.program.to_string(),
                "procs": c.procs,
                "ops": c.ops,
                "values": c.values,
                "horizon": c.horizon,
                "mode": mode_json(&mode),
            },
            "streams": sim.streams,
            "histories": sim.histories.len(),
            "non_linearisable": sim.non_linearisable.iter().map(to_json_value).collect::<Vec<_>>(),
        });
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serialises")
        );
    } else {
        println!(
            "program {} procs {} ops {} horizon {}",
            a.program, c.procs, c.ops, c.horizon
        );
        println!("streams {}", sim.streams);
        if has_history {
            println!("histories {}", sim.histories.len());
            println!("non-linearisable {}", sim.non_linearisable.len());
            for h in &sim.non_linearisable {
                println!("  {h}");
            }
        }
        eprintln!("elapsed {:.2?}", started.elapsed());
    }
    Ok(EXIT_HOLDS)
}

fn emit(dir: &Path, histories: &BTreeMap<String, History>) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for (i, text) in histories.keys().enumerate() {
        fs::write(dir.join(format!("history_{i:04}.json")), text)?;
    }
    Ok(())
}

/// A program name, optionally wrapped as `Enf(False,NAME)`.
fn program_term(s: &str, cfg: &StackConfig) -> Result<Cmd, Fail> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let lower = t.to_ascii_lowercase();
    if lower.starts_with("enf(false,") && lower.ends_with(')') {
        let inner = program_term(&t[10..t.len() - 1], cfg)?;
        return Ok(enf_false(&inner));
    }
    let p: Program = t.parse().map_err(input)?;
    build_program(p, cfg).map_err(input)
}

/// Puts `Enf False` on every process of a program. Its behaviour is then
/// false on every interval, as for `Enf False` around the whole program.
fn enf_false(c: &Cmd) -> Cmd {
    let wrap = |b: &Cmd| Cmd::enf(Enforce::Pred(Pred::ff()), b.clone());
    match c {
        Cmd::Context(ys, b) => Cmd::context(ys.clone(), enf_false(b)),
        Cmd::Init(e, b) => Cmd::init(e.clone(), enf_false(b)),
        Cmd::Par(bs) => Cmd::par(bs.iter().map(|(p, b)| (*p, wrap(b))).collect()),
        other => wrap(other),
    }
}

fn verdict_json(v: &Verdict) -> serde_json::Value {
    serde_json::to_value(v).expect("verdict serialises")
}

fn print_verdict(name: &str, v: &Verdict) {
    match v.witness_interval {
        None if v.is_holds() => println!("{name}: holds on all {} streams", v.streams_checked),
        iv => {
            let iv = iv.map_or("empty".to_string(), |[lo, hi]| format!("[{lo}, {hi}]"));
            println!(
                "{name}: counterexample on interval {iv} after {} streams",
                v.streams_checked
            );
            for line in &v.witness_trace {
                println!("  {line}");
            }
        }
    }
}

fn run_refine(a: &RefineArgs) -> Result<u8, Fail> {
    let c = &a.common;
    let cfg = stack_config(c)?;
    let abs = program_term(&a.abs, &cfg)?;
    let conc = program_term(&a.concrete, &cfg)?;
    let mode = mode_for(c, a.schedule);
    let gcfg = cfg.gen_config(c.horizon, mode.clone());
    let which = match a.intervals {
        Which::All => Intervals::All,
        Which::Prefixes => Intervals::Prefixes,
    };
    let init = cfg.init_state();
    let config = json!({
        "abstract": a.abs,
        "concrete": a.concrete,
        "procs": c.procs,
        "ops": c.ops,
        "values": c.values,
        "horizon": c.horizon,
        "mode": mode_json(&mode),
    });
    let started = Instant::now();

    let (holds, report) = match a.kind {
        Kind::Behaviour => {
            let none = BTreeSet::new();
            let v =
                check_behaviour_refinement(&abs, &conc, &[], &none, &none, &init, &gcfg, which)?;
            if !c.json {
                print_verdict("behaviour", &v);
            }
            let r = json!({ "command": "refine", "kind": "behaviour", "config": config, "verdict": verdict_json(&v) });
            (v.is_holds(), r)
        }
        Kind::Data => {
            let Some(SimName::Simts) = a.sim else {
                return Err(input("--sim is required for data refinement"));
            };
            let sim = sim_ts_conjuncts(&cfg.values());
            let space = sim_ts_space(&cfg);
            let d = DataRefinement {
                abs: &abs,
                conc: &conc,
                procs: &[],
                abs_init: &init,
                conc_init: &init,
                sim: &sim,
                space: &space,
                split: top_written(),
                conc_cfg: gcfg,
                abs_cfg: cfg.gen_config(c.horizon, Mode::Exhaustive),
                abs_streams: ABS_STREAMS,
                which,
            };
            let v = check_data_refinement(&d)?;
            if !c.json {
                print_verdict("refinit", &v.refinit);
                print_verdict("link (w)", &v.link.with_w);
                print_verdict("link (not w)", &v.link.without_w);
                print_verdict("ref2", &v.ref2);
            }
            let r = json!({
                "command": "refine",
                "kind": "data",
                "config": config,
                "refinit": verdict_json(&v.refinit),
                "link_w": verdict_json(&v.link.with_w),
                "link_not_w": verdict_json(&v.link.without_w),
                "ref2": verdict_json(&v.ref2),
            });
            (v.is_holds(), r)
        }
    };
    if c.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serialises")
        );
    } else {
        eprintln!("elapsed {:.2?}", started.elapsed());
    }
    Ok(if holds { EXIT_HOLDS } else { EXIT_NEGATIVE })
}
