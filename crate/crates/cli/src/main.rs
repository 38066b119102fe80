mod commands;
mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mimic_core::constraints::ThresholdOverrides;
use std::path::PathBuf;
use std::process::ExitCode;

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad input files, flags or configuration. Exit code 2.
    Input(String),
    /// Anything else, such as failing to write output. Exit code 1.
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "mimic", version, about = "Recognize manipulation actions in object-detection traces and turn them into robot command plans")]
struct Cli {
    /// TOML config with [paths], [thresholds], [modes] and [report] sections.
    #[arg(long, global = true, env = "MIMIC_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,

    /// Object ontology (TOML). Defaults to the built-in ontology.
    #[arg(long, global = true, value_name = "FILE")]
    ontology: Option<PathBuf>,

    /// Action definitions. Defaults to the built-in library.
    #[arg(long, global = true, value_name = "FILE")]
    actions: Option<PathBuf>,

    #[command(flatten)]
    thresholds: ThresholdFlags,

    #[command(flatten)]
    modes: ModeFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ThresholdFlags {
    /// Contact distance in pixels.
    #[arg(long, global = true)]
    th_d: Option<f64>,
    /// Frames a held condition must persist.
    #[arg(long, global = true)]
    th_n: Option<u32>,
    /// Centroid displacement treated as motion, pixels.
    #[arg(long, global = true)]
    sigma_pos: Option<f64>,
    /// Rotation change treated as tilting, radians.
    #[arg(long, global = true)]
    eps_rot: Option<f64>,
    /// Horizontal alignment tolerance, pixels.
    #[arg(long, global = true)]
    eps_col: Option<f64>,
    /// Frames an object may be missing before its constraints turn unknown.
    #[arg(long, global = true)]
    k_miss: Option<u32>,
    /// Compare hand and object motion as vectors instead of speeds.
    #[arg(long, global = true)]
    vector_c9: bool,
}

impl ThresholdFlags {
    fn overrides(&self) -> ThresholdOverrides {
        ThresholdOverrides {
            th_d: self.th_d,
            th_n: self.th_n,
            sigma_pos: self.sigma_pos,
            eps_rot: self.eps_rot,
            eps_col: self.eps_col,
            k_miss: self.k_miss,
            vector_c9: self.vector_c9.then_some(true),
        }
    }
}

#[derive(Args)]
struct ModeFlags {
    /// Frames used to establish the initial scene.
    #[arg(long, global = true)]
    init_window: Option<usize>,
    /// Admit objects first detected after the initial window.
    #[arg(long, global = true)]
    lenient_scene: bool,
    /// Use the built-in Pour with only the motion-match phase.
    #[arg(long, global = true)]
    strict_pour: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Recognize actions in one trace and write a timeline and command plan.
    Recognize(RecognizeArgs),
    /// Evaluate recognition over a generated corpus.
    Report(ReportArgs),
    /// Generate a labeled synthetic corpus.
    Gen(GenArgs),
    /// Check input files without running recognition.
    Validate(ValidateArgs),
    /// Print the loaded action library.
    Actions(ActionsArgs),
}

#[derive(Args)]
pub struct RecognizeArgs {
    /// Trace file (JSON lines).
    #[arg(long)]
    pub trace: PathBuf,
    /// Defaults to <trace>.timeline.jsonl next to the trace.
    #[arg(long)]
    pub out_timeline: Option<PathBuf>,
    /// Defaults to <trace>.plan.jsonl next to the trace.
    #[arg(long)]
    pub out_plan: Option<PathBuf>,
    /// Also write the per-frame constraint truth stream.
    #[arg(long, value_name = "FILE")]
    pub trace_constraints: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Corpus directory containing a manifest.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<ReportFormat>,
    /// Minimum temporal IoU for a prediction to count as a match.
    #[arg(long)]
    pub min_overlap: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scenarios per noise setting.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Template files (TOML). Defaults to the built-in templates.
    #[arg(long = "template", value_name = "FILE")]
    pub templates: Vec<PathBuf>,
    /// Centroid jitter standard deviations, pixels.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub jitter: Vec<f64>,
    /// Detection dropout probabilities.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub dropout: Vec<f64>,
    /// Hand-to-object grip offsets, pixels.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub grip_offset: Vec<f64>,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long = "trace", value_name = "FILE")]
    pub traces: Vec<PathBuf>,
    #[arg(long = "timeline", value_name = "FILE")]
    pub timelines: Vec<PathBuf>,
    #[arg(long = "plan", value_name = "FILE")]
    pub plans: Vec<PathBuf>,
    #[arg(long = "template", value_name = "FILE")]
    pub templates: Vec<PathBuf>,
}

#[derive(Args)]
pub struct ActionsArgs {
    /// Print full definitions instead of signatures.
    #[arg(long)]
    pub dump: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::resolve(config::FlagValues {
        config: cli.config.as_deref(),
        ontology: cli.ontology.as_deref(),
        actions: cli.actions.as_deref(),
        overrides: cli.thresholds.overrides(),
        strict_pour: cli.modes.strict_pour,
        lenient_scene: cli.modes.lenient_scene,
        init_window: cli.modes.init_window,
    })?;
    match cli.command {
        Command::Recognize(a) => commands::recognize(&cfg, &a),
        Command::Report(a) => commands::report(&cfg, &a),
        Command::Gen(a) => commands::gen(&cfg, &a),
        Command::Validate(a) => commands::validate(&cfg, &a),
        Command::Actions(a) => commands::actions(&cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
