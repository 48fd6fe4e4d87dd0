use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ciao_core::config::{Policy, SimConfig};
use ciao_core::engine::{run_matrix, RunOptions};
use ciao_core::stats::{write_reports, RunReport};
use ciao_core::trace_io::{read_trace, write_trace, TraceIoError};
use ciao_core::workloads::{gen_thrash, ClassParams, WorkloadClass};
use ciao_core::{default_config, SimStats, Trace};

/// Exit statuses. Clap itself exits with 2 on usage errors.
mod status {
    pub const TRACE: u8 = 3;
    pub const POLICY: u8 = 4;
    pub const CONFIG: u8 = 5;
    pub const RUN_FAILED: u8 = 6;
    pub const OUTPUT: u8 = 7;
    pub const GENERATOR: u8 = 8;
}

#[derive(Parser)]
#[command(
    name = "ciao-sim",
    version,
    about = "Single-SM GPU L1 memory and warp scheduling simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    Gen {
        #[command(subcommand)]
        generator: Generator,
    },
    /// Simulate a trace under one or more scheduling policies.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum Generator {
    /// Warps whose blocks collide in the same L1D sets.
    Thrash {
        #[arg(long, default_value_t = 2)]
        warps: usize,
        #[arg(long, default_value_t = 1)]
        sets: usize,
        /// Rounds over each warp's blocks.
        #[arg(long, default_value_t = 64)]
        reuse: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Cache geometry to collide against.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Workload class preset (LWS, SWS or CI).
    Class {
        #[arg(long)]
        class: String,
        #[arg(long)]
        warps: Option<usize>,
        #[arg(long)]
        footprint: Option<u64>,
        #[arg(long)]
        alu_ratio: Option<f64>,
        /// Records per warp.
        #[arg(long)]
        insts: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    trace: PathBuf,
    /// TOML file with SimConfig fields; unspecified fields keep defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated: gto,best-swl,ccws-lite,ciao-t,ciao-p,ciao-c
    #[arg(long, default_value = "gto")]
    policy: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Accepted for symmetry with `gen`; runs are deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Check L1D / shared-memory exclusivity every cycle.
    #[arg(long)]
    debug_coherence: bool,
    #[arg(long)]
    best_swl_limit: Option<usize>,
}

struct Failure {
    status: u8,
    message: String,
}

fn fail(status: u8, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

fn load_config(path: Option<&Path>) -> Result<SimConfig, Failure> {
    let Some(path) = path else {
        return Ok(default_config());
    };
    SimConfig::from_file(path).map_err(|e| fail(status::CONFIG, format!("{}: {e}", path.display())))
}

fn parse_policies(list: &str) -> Result<Vec<Policy>, Failure> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let p: Policy = name.parse().map_err(|e| fail(status::POLICY, format!("{e}")))?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(fail(status::POLICY, "no policy given"));
    }
    Ok(out)
}

fn save_trace(trace: &Trace, out: &Path) -> Result<(), Failure> {
    write_trace(trace, out).map_err(|e| fail(status::OUTPUT, format!("{}: {e}", out.display())))?;
    println!(
        "wrote {} records ({} memory, {} warps, footprint {} bytes) to {}",
        trace.len(),
        trace.memory_records(),
        trace.warp_count(),
        trace.footprint_bytes(128),
        out.display()
    );
    Ok(())
}

fn cmd_gen(generator: Generator) -> Result<(), Failure> {
    match generator {
        Generator::Thrash {
            warps,
            sets,
            reuse,
            seed,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let trace =
                gen_thrash(warps, sets, reuse, seed, &cfg).map_err(|e| fail(status::GENERATOR, e.to_string()))?;
            save_trace(&trace, &out)
        }
        Generator::Class {
            class,
            warps,
            footprint,
            alu_ratio,
            insts,
            seed,
            out,
        } => {
            let class: WorkloadClass = class
                .parse()
                .map_err(|e: ciao_core::workloads::WorkloadError| fail(status::GENERATOR, e.to_string()))?;
            let preset = class.preset();
            let params = ClassParams {
                warps: warps.unwrap_or(preset.warps),
                footprint_bytes: footprint.unwrap_or(preset.footprint_bytes),
                alu_ratio: alu_ratio.unwrap_or(preset.alu_ratio),
                insts_per_warp: insts.unwrap_or(preset.insts_per_warp),
                seed,
                ..preset
            };
            let trace = params.generate().map_err(|e| fail(status::GENERATOR, e.to_string()))?;
            save_trace(&trace, &out)
        }
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var("CIAO_SIM_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

fn print_table(runs: &[(Policy, SimStats)]) {
    let base = runs.iter().find(|(p, _)| *p == Policy::Gto).map(|(_, s)| s);
    println!(
        "{:<10} {:>10} {:>12} {:>8} {:>8} {:>8} {:>10} {:>10}",
        "policy", "cycles", "insts", "ipc", "l1d_hit", "smem_hit", "norm_ipc", "norm_hit"
    );
    for (p, s) in runs {
        let (norm_ipc, norm_hit) = match base {
            Some(b) => (
                fmt_ratio(s.ipc, b.ipc),
                fmt_ratio(s.combined_hit_rate(), b.combined_hit_rate()),
            ),
            None => ("-".into(), "-".into()),
        };
        println!(
            "{:<10} {:>10} {:>12} {:>8.4} {:>8.4} {:>8.4} {:>10} {:>10}",
            p.name(),
            s.cycles,
            s.instructions,
            s.ipc,
            s.l1d_hit_rate(),
            s.smem_hit_rate(),
            norm_ipc,
            norm_hit
        );
    }
}

fn fmt_ratio(x: f64, base: f64) -> String {
    if base == 0.0 {
        "-".into()
    } else {
        format!("{:.4}", x / base)
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let trace = read_trace(&args.trace).map_err(|e| match e {
        TraceIoError::Io(err) => fail(
            status::TRACE,
            format!("cannot read trace {}: {err}", args.trace.display()),
        ),
        other => fail(status::TRACE, format!("{}: {other}", args.trace.display())),
    })?;
    let policies = parse_policies(&args.policy)?;
    let mut cfg = load_config(args.config.as_deref())?;
    if args.best_swl_limit.is_some() {
        cfg.best_swl_limit = args.best_swl_limit;
    }
    cfg.validate()
        .map_err(|e| fail(status::CONFIG, format!("invalid config: {e}")))?;

    let opts = RunOptions {
        audit_coherence: args.debug_coherence,
        ..RunOptions::default()
    };
    let cells: Vec<_> = policies.iter().map(|&p| (&trace, cfg.clone().with_policy(p))).collect();
    let results = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| fail(status::RUN_FAILED, e.to_string()))?
            .install(|| run_matrix(&cells, &opts)),
        None => run_matrix(&cells, &opts),
    };

    let mut done = Vec::new();
    let mut failures = 0;
    for (p, r) in policies.iter().zip(results) {
        match r {
            Ok(s) => {
                if args.debug_coherence && s.coherence_violations > 0 {
                    eprintln!("{}: {} coherence violations", p.name(), s.coherence_violations);
                    failures += 1;
                }
                done.push((*p, s));
            }
            Err(e) => {
                eprintln!("{}: {e}", p.name());
                failures += 1;
            }
        }
    }

    let label = args.trace.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let reports: Vec<_> = done.iter().map(|(_, s)| RunReport { trace: label, stats: s }).collect();
    write_reports(&args.out, &reports).map_err(|e| fail(status::OUTPUT, format!("{}: {e}", args.out.display())))?;
    print_table(&done);

    if failures > 0 {
        return Err(fail(
            status::RUN_FAILED,
            format!("{failures} of {} runs failed", policies.len()),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { generator } => cmd_gen(generator),
        Command::Run(args) => cmd_run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.status)
        }
    }
}
