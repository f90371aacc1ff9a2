//! `potwell` command-line entry point.
//!
//! Exit codes: 0 ok or feasible, 1 error, 3 infeasible, 4 budget exhausted.
//! Every run writes a manifest recording inputs, parameters and outputs.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use manifest::{FileHash, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

#[derive(Parser, Debug, Serialize)]
#[command(name = "potwell", version, about = "Adapted 1-forms, potential wells and Turing-machine suspensions on tori")]
pub struct Cli {
    /// Seed for any randomized sampling.
    #[arg(long, global = true, default_value_t = 20240601)]
    pub seed: u64,
    /// Where to write the run manifest (default: next to the main output, else ./potwell-manifest.json).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Command {
    /// Integrate a torus flow, a potential well or the NLW and write CSV.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Cotangent lift of a flow; checks that the zero section is invariant.
    Lift(LiftArgs),
    /// Classify a 1-form as strongly, weakly or not adapted to a flow.
    CheckAdapted(CheckArgs),
    /// Decide adapted-form existence at a degree (exit 0 feasible, 3 infeasible).
    Lp(LpArgs),
    /// Average a 1-form along the flow over unit time.
    Average(AverageArgs),
    /// Metric, embedding and extended potential realizing a flow in a well.
    Embed(EmbedArgs),
    /// Turing machines: symbolic runs, compiled maps, orbits and suspensions.
    #[command(subcommand)]
    Tm(Tm),
    /// Run the acceptance suite (exit 0 iff every criterion passes).
    VerifyAll(VerifyArgs),
    /// Re-run a manifest and compare its outputs.
    Replay(ReplayArgs),
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Simulate {
    Flow(SimFlowArgs),
    Well(SimWellArgs),
    Nlw(SimNlwArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SimFlowArgs {
    /// Flow spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub x0: Vec<f64>,
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Keep every n-th step (the last one is always kept).
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
pub enum SchemeArg {
    Verlet,
    Yoshida4,
}

#[derive(Args, Debug, Serialize)]
pub struct SimWellArgs {
    /// Potential spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Initial position q.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub x0: Vec<f64>,
    /// Initial momentum p (zero when absent).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub p0: Vec<f64>,
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, value_enum, default_value = "verlet")]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SimNlwArgs {
    /// Potential spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Grid CSV (`t,j,x,q..,p..`); its first time slice is the initial state.
    #[arg(long, conflicts_with_all = ["x0", "p0"])]
    pub init: Option<PathBuf>,
    /// Spatially constant initial position.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub p0: Vec<f64>,
    /// Grid points (power of two).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub dt: f64,
    #[arg(long, default_value_t = 100)]
    pub stride: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct LiftArgs {
    #[arg(long)]
    pub flow: PathBuf,
    /// Base points, `;`-separated; three seeded random points when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long = "T", default_value_t = 10.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct CheckArgs {
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub form: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct LpArgs {
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub degree: i64,
    /// Margin, as a decimal or `p/q`.
    #[arg(long, default_value = "1e-3")]
    pub eps: String,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Certificate destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AverageArgs {
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub form: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Margin for the adaptation check of the result.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Form file for the averaged form; printed when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub form: PathBuf,
    /// Fit a polynomial embedding instead of the flat one.
    #[arg(long)]
    pub optimize: bool,
    /// Target dimension for `--optimize`.
    #[arg(long, requires = "optimize")]
    pub m: Option<usize>,
    /// Embedding degree for `--optimize`.
    #[arg(long, requires = "optimize", default_value_t = 2)]
    pub degree: i64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// Verification horizon.
    #[arg(long = "T", default_value_t = 10.0)]
    pub t_end: f64,
    /// Verification tolerance on the trajectory deviation.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Number of seeded verification start points.
    #[arg(long, default_value_t = 3)]
    pub points: usize,
    /// Directory for metric.json, embedding.json, potential.json, samples.csv, report.json.
    #[arg(long, default_value = "embed-out")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Tm {
    /// Run the machine symbolically (exit 4 if it has not halted within the budget).
    Run(TmArgs),
    /// Emit the compiled piecewise-affine map as JSON.
    Compile(TmArgs),
    /// Iterate the compiled map with exact rationals and log the orbit as CSV.
    Orbit(TmArgs),
    /// First entry of the suspension flow into the halting set.
    Suspend(TmArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct TmArgs {
    /// Machine spec (JSON).
    #[arg(long)]
    pub machine: PathBuf,
    /// Tape such as `0*1^01*0` (`^` marks the head); blank when absent.
    #[arg(long)]
    pub tape: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Window radius n: U also requires cells -n..n to match the output.
    #[arg(long)]
    pub window: Option<usize>,
    /// Expected window contents (2n+1 digits); defaults to the symbolic output.
    #[arg(long, requires = "window")]
    pub expect: Option<String>,
    /// Encoding base (default 10k).
    #[arg(long)]
    pub base: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    /// Run only these criteria.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<usize>,
    /// JSON summary destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ReplayArgs {
    pub manifest_path: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(Simulate::Flow(_)) => "simulate flow",
            Command::Simulate(Simulate::Well(_)) => "simulate well",
            Command::Simulate(Simulate::Nlw(_)) => "simulate nlw",
            Command::Lift(_) => "lift",
            Command::CheckAdapted(_) => "check-adapted",
            Command::Lp(_) => "lp",
            Command::Average(_) => "average",
            Command::Embed(_) => "embed",
            Command::Tm(Tm::Run(_)) => "tm run",
            Command::Tm(Tm::Compile(_)) => "tm compile",
            Command::Tm(Tm::Orbit(_)) => "tm orbit",
            Command::Tm(Tm::Suspend(_)) => "tm suspend",
            Command::VerifyAll(_) => "verify-all",
            Command::Replay(_) => "replay",
        }
    }
}

/// Output of one run, with everything the manifest needs.
#[derive(Default)]
pub struct Session {
    pub stdout: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub default_manifest: Option<PathBuf>,
    quiet: bool,
}

impl Session {
    pub fn say(&mut self, text: &str) {
        if !self.quiet {
            use std::io::Write;
            // A closed pipe downstream is not an error for the run itself.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
        self.stdout.push_str(text);
        self.stdout.push('\n');
    }

    pub fn input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    /// Writes `text` to `out`, or prints it when there is no destination.
    pub fn emit(&mut self, out: Option<&Path>, text: &str) -> Result<(), Failure> {
        match out {
            Some(path) => {
                std::fs::write(path, text).map_err(|e| Failure::error(format!("{}: {e}", path.display())))?;
                self.outputs.push(path.to_path_buf());
                self.default_manifest.get_or_insert_with(|| manifest_beside(path));
            }
            None => self.say(text.trim_end()),
        }
        Ok(())
    }
}

fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn error(message: impl Into<String>) -> Self {
        Failure { code: EXIT_ERROR, message: message.into() }
    }
}

impl From<potwell::Error> for Failure {
    fn from(e: potwell::Error) -> Self {
        let code = match e {
            potwell::Error::IterationLimit(_) => EXIT_BUDGET,
            _ => EXIT_ERROR,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<potwell::turing::TuringError> for Failure {
    fn from(e: potwell::turing::TuringError) -> Self {
        potwell::Error::from(e).into()
    }
}

/// Runs one parsed command line and writes its manifest. Returns the exit code.
fn execute(cli: &Cli, argv: &[String], quiet: bool) -> i32 {
    let mut session = Session { quiet, ..Session::default() };
    let result = match &cli.command {
        Command::Replay(a) => replay(a, &mut session),
        cmd => commands::run(cmd, cli.seed, &mut session),
    };
    let code = match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    let hash_all = |paths: &[PathBuf]| -> Vec<FileHash> { paths.iter().filter_map(|p| FileHash::of(p).ok()).collect() };
    let m = RunManifest {
        subcommand: cli.command.name().to_string(),
        argv: argv.to_vec(),
        cwd: std::env::current_dir().unwrap_or_default(),
        inputs: hash_all(&session.inputs),
        parameters: serde_json::to_value(&cli.command).unwrap_or_default(),
        seed: cli.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        exit_code: code,
        outputs: hash_all(&session.outputs),
        stdout_sha256: manifest::sha256(session.stdout.as_bytes()),
    };
    let path = cli
        .manifest
        .clone()
        .or(session.default_manifest)
        .unwrap_or_else(|| PathBuf::from("potwell-manifest.json"));
    if let Err(e) = m.write(&path) {
        eprintln!("error: cannot write manifest {}: {e}", path.display());
        return if code == EXIT_OK { EXIT_ERROR } else { code };
    }
    code
}

fn replay(args: &ReplayArgs, session: &mut Session) -> Result<i32, Failure> {
    let path = session.input(&args.manifest_path);
    let recorded = RunManifest::read(&path).map_err(Failure::error)?;
    let mut cli = Cli::try_parse_from(std::iter::once("potwell".to_string()).chain(recorded.argv.iter().cloned()))
        .map_err(|e| Failure::error(format!("recorded argv does not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Failure::error("refusing to replay a replay"));
    }
    let tmp = tempfile::NamedTempFile::new().map_err(|e| Failure::error(e.to_string()))?;
    cli.manifest = Some(tmp.path().to_path_buf());
    let here = std::env::current_dir().map_err(|e| Failure::error(e.to_string()))?;
    std::env::set_current_dir(&recorded.cwd).map_err(|e| Failure::error(format!("{}: {e}", recorded.cwd.display())))?;
    let code = execute(&cli, &recorded.argv, true);
    std::env::set_current_dir(here).map_err(|e| Failure::error(e.to_string()))?;
    let fresh = RunManifest::read(tmp.path()).map_err(Failure::error)?;

    let inputs_same = fresh.inputs == recorded.inputs;
    let outputs_same = fresh.outputs == recorded.outputs;
    let stdout_same = fresh.stdout_sha256 == recorded.stdout_sha256;
    let code_same = code == recorded.exit_code;
    let mismatched: Vec<&PathBuf> = recorded
        .outputs
        .iter()
        .filter(|h| !fresh.outputs.contains(h))
        .map(|h| &h.path)
        .collect();
    let report = serde_json::json!({
        "manifest": path,
        "subcommand": recorded.subcommand,
        "inputs_unchanged": inputs_same,
        "outputs_identical": outputs_same,
        "stdout_identical": stdout_same,
        "exit_code": {"recorded": recorded.exit_code, "replayed": code},
        "mismatched_outputs": mismatched,
        "reproduced": outputs_same && stdout_same && code_same,
    });
    session.say(&serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(if outputs_same && stdout_same && code_same { EXIT_OK } else { EXIT_ERROR })
}

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(execute(&cli, &argv, false));
}
