//! `vrtsim` — assemble and run programs on the simulator with variable
//! record monitoring, emit violation reports and statistics, and manage
//! the bundled overflow micro-corpus.
//!
//! Exit codes for `run`: 0 clean, 2 when any violation-severity report
//! was produced, 1 on machine fault or usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vrtsim_core::runner::{run_program, RunConfig, Termination};
use vrtsim_core::{assemble, corpus, ArithAction, DetectionPolicy, ProgramImage};

const STACK_TOP_ENV: &str = "VRTSIM_STACK_TOP";

#[derive(Parser)]
#[command(name = "vrtsim", version, about = "MIPS-like simulator with runtime buffer-overflow detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble and run a program with monitoring.
    Run(RunArgs),
    /// Assemble a source file into a flat binary plus symbol sidecar.
    Asm {
        /// Assembly source file.
        file: PathBuf,
        /// Output binary path; the sidecar lands next to it as `.sym`.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write the bundled 20-case overflow corpus and its manifest.
    GenCorpus {
        /// Output directory.
        dir: PathBuf,
    },
    /// Replay a generated corpus against its manifest.
    CheckCorpus {
        /// Directory holding the programs and `manifest.json`.
        dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Assembly source, or a `.bin` image with a `.sym` sidecar.
    file: PathBuf,
    /// Instruction budget.
    #[arg(long, default_value_t = 1_000_000)]
    max_steps: u64,
    /// Severity of out-of-record pointer arithmetic.
    #[arg(long, value_enum, default_value_t = PolicyArg::Violate)]
    policy: PolicyArg,
    /// Disable the monitor and detector (execution is unchanged).
    #[arg(long)]
    no_monitor: bool,
    /// Stop the machine at the first violation-severity report.
    #[arg(long)]
    halt_on_violation: bool,
    /// Write the violation report JSON here.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Print the final table, one entry per line, top-down.
    #[arg(long)]
    vrt_dump: bool,
    /// Print the execution trace (one line per instruction and event).
    #[arg(long)]
    trace: bool,
    /// Print the table mutation stream.
    #[arg(long)]
    trace_vrt: bool,
    /// Print run statistics as JSON.
    #[arg(long)]
    stats: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Warn,
    Violate,
    Ignore,
}

impl From<PolicyArg> for ArithAction {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Warn => ArithAction::Warn,
            PolicyArg::Violate => ArithAction::Violate,
            PolicyArg::Ignore => ArithAction::Ignore,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("vrtsim: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Asm { file, output } => {
            let source = std::fs::read_to_string(&file)
                .map_err(|e| format!("{}: {e}", file.display()))?;
            let image = assemble(&source).map_err(|e| e.to_string())?;
            let sym = output.with_extension("sym");
            image.write_files(&output, &sym).map_err(|e| e.to_string())?;
            eprintln!(
                "wrote {} ({} instructions) and {}",
                output.display(),
                image.words.len(),
                sym.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::GenCorpus { dir } => {
            let manifest = corpus::generate(&dir).map_err(|e| e.to_string())?;
            eprintln!("wrote {} cases and manifest.json to {}", manifest.cases.len(), dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckCorpus { dir } => {
            let report = corpus::check(&dir).map_err(|e| e.to_string())?;
            print!("{}", report.table());
            let mismatches: Vec<_> = report.mismatches().collect();
            if mismatches.is_empty() {
                println!("all {} cases matched", report.results.len());
                Ok(ExitCode::SUCCESS)
            } else {
                for m in &mismatches {
                    println!(
                        "MISMATCH {}: expected {:?}, got {:?}",
                        m.name, m.expected, m.actual
                    );
                }
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn load_image(path: &Path) -> Result<ProgramImage, String> {
    if path.extension().is_some_and(|e| e == "bin") {
        let sym = path.with_extension("sym");
        ProgramImage::read_files(path, &sym).map_err(|e| e.to_string())
    } else {
        let source =
            std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        assemble(&source).map_err(|e| e.to_string())
    }
}

fn stack_top_from_env() -> Result<Option<u32>, String> {
    match std::env::var(STACK_TOP_ENV) {
        Ok(raw) => {
            let parsed = if let Some(hex) = raw.strip_prefix("0x").or_else(|| raw.strip_prefix("0X"))
            {
                u32::from_str_radix(hex, 16)
            } else {
                raw.parse()
            };
            parsed
                .map(Some)
                .map_err(|_| format!("{STACK_TOP_ENV}={raw:?} is not a valid address"))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(format!("{STACK_TOP_ENV}: {e}")),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let image = load_image(&args.file)?;
    let mut config = RunConfig {
        max_steps: args.max_steps,
        policy: DetectionPolicy {
            arith_action: args.policy.into(),
            halt_on_violation: args.halt_on_violation,
        },
        monitoring: !args.no_monitor,
        collect_trace: args.trace,
        ..Default::default()
    };
    if let Some(top) = stack_top_from_env()? {
        config.stack_top = top;
    }

    let outcome = run_program(&image, &config).map_err(|e| e.to_string())?;

    if args.trace {
        for line in &outcome.trace {
            println!("{line}");
        }
    }
    if args.trace_vrt {
        for mutation in &outcome.mutations {
            println!("{mutation}");
        }
    }
    if args.vrt_dump {
        print!("{}", outcome.vrt.dump());
    }
    if args.stats {
        println!(
            "{}",
            serde_json::to_string_pretty(&outcome.stats).map_err(|e| e.to_string())?
        );
    }
    if let Some(path) = &args.report {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&outcome.report_json()).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
    }
    for diag in &outcome.diagnostics {
        eprintln!("diagnostic: {diag}");
    }

    let violations = outcome.has_violation();
    eprintln!(
        "status={:?} instructions={} violations={}",
        outcome.status, outcome.instr_count, outcome.summary.total
    );
    match outcome.status {
        Termination::Faulted { error } => {
            eprintln!("machine fault: {error}");
            Ok(ExitCode::from(1))
        }
        _ if violations => Ok(ExitCode::from(2)),
        _ => Ok(ExitCode::SUCCESS),
    }
}
