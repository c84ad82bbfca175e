use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hyfuzz::campaign::{self, CampaignConfig, CONFIG_KEYS};
use hyfuzz::cfg::Cfg;
use hyfuzz::fuzz::{fit_input, CrashReport, FuzzHook, FuzzTarget};
use hyfuzz::hexfmt;
use hyfuzz::minivm::{self, Program};
use hyfuzz::symexec::{self, PairOutcome, SymexecConfig};
use hyfuzz::DecodeError;

const EXIT_USAGE: u8 = 1;
const EXIT_INTEGRITY: u8 = 2;

fn config_help() -> String {
    let mut s = String::from(
        "Config file keys (flat `key = value`, `#` comments; flags override the file):\n",
    );
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<30} {d}\n"));
    }
    s.push_str("\nHYFUZZ_OUT sets the default output directory for `fuzz`.\n");
    s.push_str("Exit status: 0 success, 1 usage error, 2 target integrity error.");
    s
}

#[derive(Parser)]
#[command(name = "hyfuzz", version, about = "Hybrid fuzzer for MiniVM programs", after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Text,
    Dot,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a source file into a program container.
    Asm {
        src: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the static control-flow graph.
    Cfg {
        bin: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        export: ExportFormat,
    },
    /// Execute one input and report the outcome.
    Run {
        bin: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        trace: bool,
    },
    /// Run a fuzzing campaign.
    Fuzz {
        bin: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long, env = "HYFUZZ_OUT")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        no_symbolic: bool,
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        rng_seed: Option<u64>,
        #[arg(short = 'W', long = "window")]
        window: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(short = 'L', long = "max-pairs")]
        max_pairs: Option<usize>,
        #[arg(long, value_parser = parse_hook)]
        hook: Option<FuzzHook>,
    },
    /// Solve a single constraint pair from a witness input.
    Symex {
        bin: PathBuf,
        #[arg(long)]
        witness: PathBuf,
        #[arg(long, value_parser = parse_addr)]
        src: u32,
        #[arg(long, value_parser = parse_addr)]
        dst: u32,
    },
    /// Summarise a campaign output directory.
    Report { dir: PathBuf },
}

fn parse_hook(s: &str) -> Result<FuzzHook, String> {
    FuzzHook::parse(s).ok_or_else(|| format!("expected start:off:len:break, got `{s}`"))
}

fn parse_addr(s: &str) -> Result<u32, String> {
    hexfmt::parse(s).ok_or_else(|| format!("bad address `{s}`"))
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

fn integrity(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_INTEGRITY,
        message: message.to_string(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Loads a program container, falling back to assembly source.
fn load_program(path: &Path) -> Result<Program, Failure> {
    let bytes = read(path)?;
    match minivm::decode(&bytes) {
        Ok(p) => Ok(p),
        Err(e @ DecodeError::BadMagic) => {
            let text = String::from_utf8(bytes)
                .map_err(|_| integrity(format!("{}: {e}", path.display())))?;
            minivm::assemble(&text).map_err(|e| integrity(format!("{}: {e}", path.display())))
        }
        Err(e) => Err(integrity(format!("{}: {e}", path.display()))),
    }
}

fn load_seeds(dir: &Path) -> Result<Vec<Vec<u8>>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths.iter().map(|p| read(p)).collect()
}

fn campaign_failure(e: hyfuzz::CampaignError) -> Failure {
    match e {
        hyfuzz::CampaignError::Integrity(_) | hyfuzz::CampaignError::Vm(_) => integrity(e),
        other => usage(other),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Asm { src, output } => {
            let text =
                fs::read_to_string(&src).map_err(|e| usage(format!("{}: {e}", src.display())))?;
            let program = minivm::assemble(&text)
                .map_err(|e| integrity(format!("{}: {e}", src.display())))?;
            fs::write(&output, minivm::encode(&program))
                .map_err(|e| usage(format!("{}: {e}", output.display())))?;
            println!(
                "{} instructions, input size {}, wrote {}",
                program.instructions().len(),
                program.input_size(),
                output.display()
            );
        }
        Command::Cfg { bin, export } => {
            let program = load_program(&bin)?;
            let cfg = Cfg::build(&program);
            match export {
                ExportFormat::Text => print!("{}", cfg.to_text()),
                ExportFormat::Dot => print!("{}", cfg.to_dot()),
            }
        }
        Command::Run { bin, input, trace } => {
            let program = load_program(&bin)?;
            let bytes = fit_input(&read(&input)?, program.input_size());
            let cfg = Cfg::build(&program);
            let out = minivm::execute(&program, &bytes, None, minivm::DEFAULT_STEP_BUDGET)
                .map_err(usage)?;
            if let Some(edge) = out.edge_trace.iter().find(|e| !cfg.contains_edge(e)) {
                return Err(integrity(format!(
                    "trace edge {edge} is not in the static CFG"
                )));
            }
            if trace {
                for e in &out.edge_trace {
                    println!("{e}");
                }
            }
            println!("status: {:?}", out.status);
            println!("steps: {}", out.steps_used);
            if let Some(r) = CrashReport::from_outcome(&out) {
                println!("crash: {r}");
            }
            for &(base, len) in &out.leaks {
                println!("leak: {len} bytes at {}", hexfmt::addr(base));
            }
        }
        Command::Fuzz {
            bin,
            seeds,
            out,
            config,
            no_symbolic,
            time,
            iterations,
            batch_size,
            rng_seed,
            window,
            epsilon,
            max_pairs,
            hook,
        } => {
            let program = load_program(&bin)?;
            let mut conf = CampaignConfig::default();
            if let Some(path) = config {
                let text = fs::read_to_string(&path)
                    .map_err(|e| usage(format!("{}: {e}", path.display())))?;
                conf.apply_text(&text).map_err(usage)?;
            }
            if no_symbolic {
                conf.symbolic = false;
            }
            if let Some(t) = time {
                conf.time_budget_secs = t;
            }
            if let Some(n) = iterations {
                conf.max_iterations = (n > 0).then_some(n);
            }
            if let Some(n) = batch_size {
                conf.batch_size = n;
            }
            if let Some(s) = rng_seed {
                conf.rng_seed = s;
            }
            if let Some(w) = window {
                conf.plateau.window = w;
            }
            if let Some(e) = epsilon {
                conf.plateau.epsilon = e;
            }
            if let Some(l) = max_pairs {
                conf.max_pairs = l;
            }
            if hook.is_some() {
                conf.hook = hook;
            }
            let seeds = load_seeds(&seeds)?;
            let started = std::time::Instant::now();
            let report = campaign::run(&program, &seeds, &conf).map_err(campaign_failure)?;
            campaign::emit_report(&report, &out).map_err(campaign_failure)?;
            println!(
                "{} of {} edges after {} iterations, {} crashes, {} symbolic phases",
                report.covered_edges,
                report.reachable_edge_total,
                report.iterations,
                report.crashes.len(),
                report.symbolic_phases.len()
            );
            eprintln!(
                "elapsed {:.2}s, output in {}",
                started.elapsed().as_secs_f64(),
                out.display()
            );
        }
        Command::Symex {
            bin,
            witness,
            src,
            dst,
        } => {
            let program = load_program(&bin)?;
            let cfg = Cfg::build(&program);
            let witness = fit_input(&read(&witness)?, program.input_size());
            let conf = SymexecConfig::default();
            let target =
                FuzzTarget::new(&program, &cfg, conf.step_budget, None, &witness).map_err(usage)?;
            match symexec::run_pair(&target, &witness, src, dst, &conf) {
                PairOutcome::Sat { input, phi } => {
                    print!("{}", phi.dump());
                    let hex: Vec<String> = input.bytes.iter().map(|b| format!("{b:02x}")).collect();
                    println!("input: {}", hex.join(" "));
                    println!("validated: reached {}", hexfmt::addr(dst));
                }
                PairOutcome::ValidationFailed { phi } => {
                    print!("{}", phi.dump());
                    println!("validation failed: {} not reached", hexfmt::addr(dst));
                }
                PairOutcome::Unsat { phi } => {
                    print!("{}", phi.dump());
                    println!("unsat");
                }
                PairOutcome::Unknown { phi } => {
                    print!("{}", phi.dump());
                    println!("unknown: solver budget exhausted");
                }
                PairOutcome::Skipped(e) => println!("skipped: {e}"),
            }
        }
        Command::Report { dir } => {
            print!("{}", campaign::load_summary(&dir).map_err(usage)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
