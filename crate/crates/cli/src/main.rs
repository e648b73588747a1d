//! `agentic-relu`: run one experiment and write its report.
//!
//! Every flag can also be set through an environment variable named
//! `AGENTIC_RELU_<FLAG>` (upper case, dashes as underscores), for example
//! `AGENTIC_RELU_SEED=7`. Command-line flags win over the environment.

use std::path::PathBuf;
use std::process::ExitCode;

use agentic_relu::runner::{run, Experiment, RunConfig, WitnessFamily};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(
    name = "agentic-relu",
    version,
    about = "Exact ReLU constructions and agentic learning experiments"
)]
struct Cli {
    /// path-exp, value-exp, addr-exp, gadget-test, convert-transformer or witness.
    #[arg(value_parser = parse_experiment)]
    experiment: Experiment,
    /// Input dimension of path tasks.
    #[arg(long, env = "AGENTIC_RELU_D")]
    d: Option<usize>,
    /// Path depth.
    #[arg(long = "L", env = "AGENTIC_RELU_L")]
    depth: Option<usize>,
    /// Query budget.
    #[arg(long = "N", env = "AGENTIC_RELU_N")]
    n: Option<usize>,
    /// Weight budget for the realizable learners.
    #[arg(long, env = "AGENTIC_RELU_M")]
    m: Option<usize>,
    /// Hat half-width; defaults to 1/(12N).
    #[arg(long, env = "AGENTIC_RELU_DELTA")]
    delta: Option<f64>,
    /// Bump plateau ratio.
    #[arg(long, env = "AGENTIC_RELU_ETA")]
    eta: Option<f64>,
    /// Multiplication tolerance.
    #[arg(long, env = "AGENTIC_RELU_EPS")]
    eps: Option<f64>,
    #[arg(long, env = "AGENTIC_RELU_SEED", default_value_t = 0)]
    seed: u64,
    /// Total uniform evaluation points per task (spread over the axes).
    #[arg(long, env = "AGENTIC_RELU_GRID")]
    grid: Option<usize>,
    /// Number of sampled tasks in a sweep.
    #[arg(long, env = "AGENTIC_RELU_TASKS")]
    tasks: Option<usize>,
    /// Witness family: path or address.
    #[arg(long, env = "AGENTIC_RELU_FAMILY", value_parser = parse_family)]
    family: Option<WitnessFamily>,
    /// MLP JSON to convert.
    #[arg(long, env = "AGENTIC_RELU_INPUT")]
    input: Option<PathBuf>,
    /// Softmax inverse temperature of the converted heads.
    #[arg(long, env = "AGENTIC_RELU_LAMBDA")]
    lambda: Option<f64>,
    /// Random inputs used to measure the conversion defect.
    #[arg(long, env = "AGENTIC_RELU_SAMPLES")]
    samples: Option<usize>,
    /// Directory for reports and artifacts.
    #[arg(long, env = "AGENTIC_RELU_OUT_DIR", default_value = "reports")]
    out_dir: PathBuf,
    /// Report JSON path (default: <out-dir>/<experiment>.json).
    #[arg(long, env = "AGENTIC_RELU_JSON")]
    json: Option<PathBuf>,
    /// Report CSV path (default: <out-dir>/<experiment>.csv).
    #[arg(long, env = "AGENTIC_RELU_CSV")]
    csv: Option<PathBuf>,
    /// Converted transformer JSON path.
    #[arg(long, env = "AGENTIC_RELU_OUTPUT")]
    output: Option<PathBuf>,
    /// Record wall time in the report (makes reruns differ).
    #[arg(long, env = "AGENTIC_RELU_TIMING")]
    timing: bool,
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse()
}

fn parse_family(s: &str) -> Result<WitnessFamily, String> {
    s.parse()
}

impl From<Cli> for RunConfig {
    fn from(c: Cli) -> Self {
        RunConfig {
            experiment: c.experiment,
            d: c.d,
            depth: c.depth,
            n: c.n,
            m: c.m,
            delta: c.delta,
            eta: c.eta,
            eps: c.eps,
            seed: c.seed,
            grid: c.grid,
            tasks: c.tasks,
            family: c.family,
            input: c.input,
            lambda: c.lambda,
            samples: c.samples,
            out_dir: c.out_dir,
            json: c.json,
            csv: c.csv,
            output: c.output,
            timing: c.timing,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = RunConfig::from(cli);
    match run(&config) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            for path in &outcome.written {
                eprintln!("wrote {}", path.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
