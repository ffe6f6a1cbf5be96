//! `ctct` command-line front end.
//!
//! Subcommands: `render`, `train`, `eval`, `decode`, `gradcheck`, `dump-activations`.
//! Exit status: 0 success, 1 usage, 2 data error, 3 numeric error.

pub mod error;
mod gradcheck;
mod infer;
mod render;
pub mod settings;
mod train;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, ExitKind};
use settings::parse_override;

/// Environment variable selecting 32- or 64-bit arithmetic.
pub const NUMERIC_ENV: &str = "CTCT_NUMERIC";

#[derive(Parser, Debug)]
#[command(name = "ctct", version, about = "Word-image transcription with a CNN-BLSTM network trained by CTC")]
pub struct Cli {
    /// Worker threads (1 gives bit-exact reproducible runs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Arithmetic precision; overrides CTCT_NUMERIC.
    #[arg(long, global = true, value_enum)]
    pub numeric: Option<Numeric>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Numeric {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic word-image dataset.
    Render(RenderArgs),
    /// Train (or resume training) a recognizer.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset manifest.
    Eval(EvalArgs),
    /// Transcribe one image.
    Decode(DecodeArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write one PGM per channel of a convolutional layer's activations.
    DumpActivations(DumpArgs),
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// `key = value` file; relative paths inside it are relative to the file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Word list, one per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Glyph atlas directory.
    #[arg(long)]
    pub atlas: Option<PathBuf>,
    /// Directory of background texture PGMs.
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    /// Use the built-in toy vocabulary drawn with this seed and the procedural atlas.
    #[arg(long)]
    pub toy_vocab_seed: Option<u64>,
    /// Any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub set: Vec<(String, String)>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// `hybrid` or `rnn-only`.
    #[arg(long)]
    pub variant: Option<String>,
    /// Base model: `standard`, `toy` or `tiny`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub set: Vec<(String, String)>,
}

#[derive(Args, Debug)]
pub struct DecoderArgs {
    /// Prefix beam search of this width instead of greedy decoding.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub beam: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    /// Also write `id\treference\thypothesis\tdistance` rows here.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Print the per-word table after the metrics.
    #[arg(long)]
    pub table: bool,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub decoder: DecoderArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter coordinates sampled for the whole-model check.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Central-difference step.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub set: Vec<(String, String)>,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Layer name, e.g. `conv1`.
    #[arg(long)]
    pub layer: String,
    #[arg(long)]
    pub out: PathBuf,
}

impl Numeric {
    /// Flag, then environment, then f32.
    pub fn resolve(flag: Option<Numeric>) -> Result<Numeric, CliError> {
        if let Some(n) = flag {
            return Ok(n);
        }
        match std::env::var(NUMERIC_ENV) {
            Err(std::env::VarError::NotPresent) => Ok(Numeric::F32),
            Ok(v) if v.is_empty() => Ok(Numeric::F32),
            Ok(v) => Numeric::from_str(&v, true)
                .map_err(|_| CliError::usage(format!("{NUMERIC_ENV}={v}: expected f32 or f64"))),
            Err(e) => Err(CliError::usage(format!("{NUMERIC_ENV}: {e}"))),
        }
    }
}

pub(crate) fn emit(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::data(format!("cannot write output: {e}")))
}

macro_rules! outln {
    ($out:expr, $($arg:tt)*) => {
        $crate::emit($out, format_args!($($arg)*))
    };
}
pub(crate) use outln;

/// Parses `args` (including the program name) and runs the command, writing results
/// to `out`.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send)) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    outln!(out, "{}", e.render().to_string().trim_end())
                }
                _ => Err(CliError::usage(e.render().to_string().trim_end().trim_start_matches("error: "))),
            };
        }
    };
    let numeric = Numeric::resolve(cli.numeric)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Render(a) => render::run(a, out),
        Command::Train(a) => match numeric {
            Numeric::F32 => train::run::<f32>(a, out),
            Numeric::F64 => train::run::<f64>(a, out),
        },
        Command::Eval(a) => match numeric {
            Numeric::F32 => infer::eval::<f32>(a, out),
            Numeric::F64 => infer::eval::<f64>(a, out),
        },
        Command::Decode(a) => match numeric {
            Numeric::F32 => infer::decode::<f32>(a, out),
            Numeric::F64 => infer::decode::<f64>(a, out),
        },
        Command::Gradcheck(a) => gradcheck::run(a, out),
        Command::DumpActivations(a) => match numeric {
            Numeric::F32 => infer::dump_activations::<f32>(a, out),
            Numeric::F64 => infer::dump_activations::<f64>(a, out),
        },
    })
}
