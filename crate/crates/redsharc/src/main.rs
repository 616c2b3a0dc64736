//! Command-line front end: `run` executes a graph (external `--dfg` file or
//! the built-in `--app eigenfaces`) on a configured system, `validate`
//! checks a config/DFG pair. Exit codes: 0 COMPLETED, 2 DEADLOCK, 1 any
//! error. `--interactive` opens a debug console driving the controller at
//! engine suspension points.

use clap::{Args, Parser, Subcommand, ValueEnum};
use redsharc::builtins::builtin_registry;
use redsharc::control::{
    policy_fifo, policy_static, Controller, Outcome, RunMode, SchedulingPolicy,
};
use redsharc::core::{CoreId, Element, ElementType, KernelId};
use redsharc::dfg::Dfg;
use redsharc::eigenfaces;
use redsharc::kernelapi::Registry;
use redsharc::sysio::{generate_system, parse_config, SystemConfig};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "redsharc", about = "Stream/block dataflow runtime simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a dataflow graph on a configured system.
    Run(RunArgs),
    /// Validate a system config and DFG file without running.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// System configuration JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Dataflow graph JSON file (impl names resolve against the builtin
    /// kernel library: source/sink/copy and their *_hw variants).
    #[arg(long, conflicts_with = "app")]
    dfg: Option<PathBuf>,
    /// Built-in application name (currently: eigenfaces).
    #[arg(long)]
    app: Option<String>,
    /// Scheduling policy: `fifo` or `static:<map.json>`.
    #[arg(long, default_value = "fifo")]
    policy: String,
    /// Run mode.
    #[arg(long, value_enum, default_value_t = Mode::Analysis)]
    mode: Mode,
    /// Write the event trace as JSONL (Analysis mode).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Open the interactive debug console.
    #[arg(long)]
    interactive: bool,
    /// Dataset JSON file for --app eigenfaces.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Synthetic dataset seed for --app eigenfaces.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dfg: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Analysis,
    Release,
}

fn read_file(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))
}

fn parse_policy(text: &str) -> Result<Box<dyn SchedulingPolicy>, String> {
    if text == "fifo" {
        return Ok(policy_fifo());
    }
    if let Some(path) = text.strip_prefix("static:") {
        let raw = read_file(&PathBuf::from(path))?;
        let map: BTreeMap<String, CoreId> =
            serde_json::from_str(&raw).map_err(|e| format!("static policy map: {e}"))?;
        let mut placed = BTreeMap::new();
        for (k, c) in map {
            let kid: KernelId = k
                .parse()
                .map_err(|_| format!("static policy map: bad kernel id `{k}`"))?;
            placed.insert(kid, c);
        }
        return Ok(policy_static(placed));
    }
    Err(format!(
        "unknown policy `{text}` (expected `fifo` or `static:<map.json>`)"
    ))
}

fn load_graph(args: &RunArgs) -> Result<(Dfg, Registry), String> {
    match (&args.dfg, args.app.as_deref()) {
        (Some(path), None) => {
            let text = read_file(path)?;
            let g = Dfg::from_json(&text).map_err(|e| e.to_string())?;
            Ok((g, builtin_registry()))
        }
        (None, Some("eigenfaces")) => {
            let ds = match &args.dataset {
                Some(path) => {
                    eigenfaces::Dataset::from_json(&read_file(path)?).map_err(|e| e.to_string())?
                }
                None => eigenfaces::generate_synthetic_dataset(args.seed, 10, 3, 2, 16, 16),
            };
            let g = eigenfaces::build_dfg(&ds).map_err(|e| e.to_string())?;
            let reg = eigenfaces::build_registry(&ds).map_err(|e| e.to_string())?;
            Ok((g, reg))
        }
        (None, Some(other)) => Err(format!("unknown app `{other}` (available: eigenfaces)")),
        (None, None) => Err("one of --dfg or --app is required".into()),
        (Some(_), Some(_)) => Err("--dfg and --app are mutually exclusive".into()),
    }
}

fn exit_for(outcome: Outcome) -> ExitCode {
    match outcome {
        Outcome::Completed => ExitCode::SUCCESS,
        Outcome::Deadlock => ExitCode::from(2),
        Outcome::Error => ExitCode::FAILURE,
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let cfg: SystemConfig = parse_config(&read_file(&args.config)?).map_err(|e| e.to_string())?;
    let (dfg, registry) = load_graph(&args)?;
    let policy = parse_policy(&args.policy)?;
    let mode = match args.mode {
        Mode::Analysis => RunMode::Analysis,
        Mode::Release => RunMode::Release,
    };
    let sys = generate_system(&cfg);
    let mut ctl =
        Controller::new(sys, dfg, &registry, policy, mode).map_err(|e| e.to_string())?;

    if args.interactive {
        ctl.pause_all().map_err(|e| e.to_string())?;
        console(&mut ctl)?;
    } else {
        ctl.run();
    }

    let report = ctl.report();
    if let Some(path) = &args.trace {
        let mut file = std::fs::File::create(path)
            .map_err(|e| format!("creating {}: {e}", path.display()))?;
        ctl.export_trace_jsonl(&mut file).map_err(|e| e.to_string())?;
    }
    println!("outcome: {}", report.outcome);
    for d in &report.diagnostics {
        println!("diagnostic: {d}");
    }
    for ((kernel, port), elems) in &report.outputs {
        let rendered: Vec<String> = elems.iter().map(|e| format!("{:?}", e)).collect();
        println!("output kernel {kernel} port {port}: [{}]", rendered.join(", "));
    }
    Ok(exit_for(report.outcome))
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode, String> {
    let cfg = parse_config(&read_file(&args.config)?).map_err(|e| e.to_string())?;
    let dfg = Dfg::from_json(&read_file(&args.dfg)?).map_err(|e| e.to_string())?;
    let registry = builtin_registry();
    let diags = dfg.validate(|name| registry.resolve(name).is_some());
    if diags.is_empty() {
        println!(
            "valid: {} cores, {} kernels",
            cfg.cores.len(),
            dfg.len()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        for d in &diags {
            println!("diagnostic: {d}");
        }
        Ok(ExitCode::FAILURE)
    }
}

/// Interactive debug console. `resume` advances one engine pass and pauses
/// again so inspection stays at a suspension point; `continue-to-completion`
/// runs the graph to its outcome.
fn console(ctl: &mut Controller) -> Result<(), String> {
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    loop {
        print!("> ");
        out.flush().ok();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Ok(()); // EOF behaves like quit
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] => {}
            ["quit"] => return Ok(()),
            ["pause"] => match ctl.pause_all() {
                Ok(()) => println!("paused"),
                Err(e) => println!("error: {e}"),
            },
            ["resume"] => {
                if let Err(e) = ctl.resume() {
                    println!("error: {e}");
                    continue;
                }
                ctl.step();
                match ctl.outcome() {
                    Some(o) => println!("run ended: {o}"),
                    None => {
                        ctl.pause_all().ok();
                        println!("stepped one pass; paused");
                    }
                }
            }
            ["continue-to-completion"] => {
                ctl.resume().ok();
                let report = ctl.run();
                println!("run ended: {}", report.outcome);
            }
            ["status"] => {
                for l in ctl.status_lines() {
                    println!("{l}");
                }
            }
            ["peek", "stream", id] => match id.parse() {
                Ok(s) => match ctl.debug_peek_stream(s) {
                    Ok(elems) => {
                        let rendered: Vec<String> =
                            elems.iter().map(|e| format!("{:?}", e)).collect();
                        println!("stream {s}: [{}]", rendered.join(", "));
                    }
                    Err(e) => println!("error: {e}"),
                },
                Err(_) => println!("error: bad stream id `{id}`"),
            },
            ["read", "block", id, idx] => match (id.parse(), idx.parse()) {
                (Ok(b), Ok(i)) => match ctl.debug_read_block(b, i) {
                    Ok(e) => println!("block {b}[{i}] = {:?}", e),
                    Err(e) => println!("error: {e}"),
                },
                _ => println!("error: usage: read block <id> <idx>"),
            },
            ["write", "block", id, idx, value] => {
                match (id.parse(), idx.parse(), value.parse::<f64>()) {
                    (Ok(b), Ok(i), Ok(v)) => {
                        let e = match ctl.block_elem_type(b) {
                            Ok(ElementType::U32) => Element::U32(v as u32),
                            Ok(ElementType::U64) => Element::U64(v as u64),
                            Ok(ElementType::F32) => Element::F32(v as f32),
                            Ok(ElementType::DOUBLE) => Element::Double(v),
                            Err(e) => {
                                println!("error: {e}");
                                continue;
                            }
                        };
                        match ctl.debug_write_block(b, i, e) {
                            Ok(()) => println!("ok"),
                            Err(e) => println!("error: {e}"),
                        }
                    }
                    _ => println!("error: usage: write block <id> <idx> <value>"),
                }
            }
            _ => println!(
                "commands: pause | resume | status | peek stream <id> | read block <id> <idx> | write block <id> <idx> <value> | continue-to-completion | quit"
            ),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap uses exit code 2 for usage errors; the contract here is 1
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS // --help / --version
            };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
