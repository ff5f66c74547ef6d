//! Command-line front end: `fold`, `quantize`, `infer`, `metrics` and
//! `train-toy`.
//!
//! Every subcommand prints a short human summary, or one JSON document on
//! stdout with `--json`. Usage errors, unreadable files and malformed inputs
//! exit with status 2; failures inside the pipeline exit with status 1.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codebook::CenterMode;
use crate::model::Activation;
use crate::{Error, Result};

/// Relative output paths resolve against this directory when it is set.
pub const OUTPUT_DIR_ENV: &str = "LUTNET_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "lutnet", version, about = "Table-based quantized neural networks")]
#[command(arg_required_else_help = true, args_override_self = true)]
pub struct Cli {
    /// Print one JSON document on stdout instead of a summary.
    #[arg(long, global = true)]
    pub json: bool,
    /// JSON object of default flag values for the subcommand; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fold normalization layers into the adjacent weight layers.
    Fold(FoldArgs),
    /// Build a quantized LUT or log-domain model from a float checkpoint.
    Quantize(QuantizeArgs),
    /// Run inference on a blob of little-endian f32 inputs.
    Infer(InferArgs),
    /// Table complexity of a quantized model, or accounting from parameters.
    Metrics(MetricsArgs),
    /// Train a small network on a toy task with and without quantization.
    TrainToy(TrainArgs),
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    /// Float checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Output checkpoint directory.
    #[arg(long, default_value = "folded")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Kmeans,
    Laplacian,
    Modelfree,
    Octave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActArg {
    Linear,
    Octave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Float,
    Lut,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantEngineArg {
    Lut,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoundingArg {
    Floor,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenterArg {
    Mean,
    Median,
}

impl From<CenterArg> for CenterMode {
    fn from(c: CenterArg) -> Self {
        match c {
            CenterArg::Mean => CenterMode::Mean,
            CenterArg::Median => CenterMode::Median,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HiddenActArg {
    Relu6,
    Tanh,
}

impl From<HiddenActArg> for Activation {
    fn from(a: HiddenActArg) -> Self {
        match a {
            HiddenActArg::Relu6 => Activation::Relu6,
            HiddenActArg::Tanh => Activation::Tanh,
        }
    }
}

/// Weight and activation quantization flags shared by `quantize` and `train-toy`.
#[derive(Debug, Clone, Args)]
pub struct SchemeArgs {
    /// Weight codebook method.
    #[arg(long, value_enum, default_value = "octave")]
    pub method: MethodArg,
    /// Weight levels N_w (k-means, Laplacian, model-free).
    #[arg(long, default_value_t = 16)]
    pub nw: usize,
    /// Octave weight levels per octave N_q.
    #[arg(long, default_value_t = 8)]
    pub nq: u32,
    /// Octave weight octaves N_o.
    #[arg(long = "no", default_value_t = 4)]
    pub n_o: u32,
    /// Model-free bucket centers.
    #[arg(long, value_enum, default_value = "mean")]
    pub center: CenterArg,
    /// Activation codebook method.
    #[arg(long, value_enum, default_value = "linear")]
    pub act_method: ActArg,
    /// Uniform-linear activation levels N_a.
    #[arg(long, default_value_t = 16)]
    pub na: usize,
    /// Octave activation levels per octave.
    #[arg(long, default_value_t = 32)]
    pub aq: u32,
    /// Octave activation octaves.
    #[arg(long, default_value_t = 3)]
    pub ao: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Float checkpoint directory (folded on the fly if it has norms).
    #[arg(long)]
    pub model: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Target engine: product LUT or octave/octave log domain.
    #[arg(long, value_enum, default_value = "lut")]
    pub engine: QuantEngineArg,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    /// Fixed-point shift bits s.
    #[arg(long, default_value_t = crate::quantized::DEFAULT_S)]
    pub s: u32,
    /// Activation-input step for non-linear activations.
    #[arg(long, default_value_t = crate::quantized::DEFAULT_DX)]
    pub dx: f64,
    #[arg(long, value_enum, default_value = "nearest")]
    pub rounding: RoundingArg,
    /// Store one LUT row per octave level instead of base rows plus shifts.
    #[arg(long)]
    pub full_octave: bool,
    /// Weight subsample size for k-means.
    #[arg(long, default_value_t = crate::codebook::DEFAULT_SUBSAMPLE)]
    pub subsample: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_enum)]
    pub engine: EngineArg,
    /// Float checkpoint directory, `.lutq` or `.logq` file. The float engine
    /// on a quantized file runs real arithmetic on the quantized values.
    #[arg(long)]
    pub model: PathBuf,
    /// Little-endian f32 blob holding whole input vectors.
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub topk: usize,
    /// Worker threads for the batch (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Log engine only: add smallest-magnitude products first.
    #[arg(long)]
    pub ascending: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct MetricsSource {
    /// Quantized model file (`.lutq` or `.logq`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSON accounting parameters, e.g. `{"scheme": "octave-linear", "n_q": 16, "n_o": 15, "n_a": 64}`.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub source: MetricsSource,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `moons`, `blobs` or `idx:<images>,<labels>`.
    #[arg(long, default_value = "moons")]
    pub task: String,
    #[command(flatten)]
    pub scheme: SchemeArgs,
    /// Requantization period in steps.
    #[arg(long = "S", default_value_t = 100)]
    pub period: usize,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "32,32")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "tanh")]
    pub act: HiddenActArg,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    /// Leading unquantized epochs of the quantized run.
    #[arg(long, default_value_t = 30)]
    pub float_epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Samples for the synthetic tasks.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    /// Classes for `blobs`.
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.3)]
    pub val_fraction: f64,
    /// Output directory.
    #[arg(long, default_value = "train-toy")]
    pub out: PathBuf,
}

/// Resolve a relative output path against [`OUTPUT_DIR_ENV`].
pub fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if p.is_relative() && !dir.is_empty() => PathBuf::from(dir).join(p),
        _ => p.to_path_buf(),
    }
}

/// Exit status for a pipeline error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. }
        | Error::Format { .. }
        | Error::LengthMismatch { .. }
        | Error::NonFinite { .. }
        | Error::Json(_)
        | Error::InvalidParam(_)
        | Error::Shape { .. } => 2,
        _ => 1,
    }
}

/// Splice the `--config` file's flags in right after the subcommand name so
/// that flags given on the command line override them.
fn apply_config(argv: Vec<OsString>, cli: &Cli) -> Result<Option<Vec<OsString>>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("config must be a JSON object: {e}")))?;
    let name = match cli.command {
        Command::Fold(_) => "fold",
        Command::Quantize(_) => "quantize",
        Command::Infer(_) => "infer",
        Command::Metrics(_) => "metrics",
        Command::TrainToy(_) => "train-toy",
    };
    let mut extra = Vec::new();
    for (k, v) in obj {
        let flag = OsString::from(format!("--{k}"));
        match v {
            serde_json::Value::Bool(true) => extra.push(flag),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::String(s) => extra.extend([flag, s.into()]),
            serde_json::Value::Number(n) => extra.extend([flag, n.to_string().into()]),
            serde_json::Value::Array(a) => {
                let parts: Vec<String> = a
                    .iter()
                    .map(|x| match x {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                extra.extend([flag, parts.join(",").into()]);
            }
            serde_json::Value::Object(_) => {
                return Err(Error::format(path, format!("config key '{k}' must not be an object")));
            }
        }
    }
    let Some(pos) = argv.iter().position(|a| a == name) else { return Ok(None) };
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(Some(out))
}

/// Parse `args` (including the program name), run and return the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let parse = |argv: &[OsString], stdout: &mut dyn Write, stderr: &mut dyn Write| match Cli::try_parse_from(argv) {
        Ok(c) => Ok(c),
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            Err(code)
        }
    };
    let mut cli = match parse(&argv, stdout, stderr) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match apply_config(argv, &cli) {
        Ok(Some(merged)) => match parse(&merged, stdout, stderr) {
            Ok(c) => cli = c,
            Err(code) => return code,
        },
        Ok(None) => {}
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 2;
        }
    }
    match commands::dispatch(&cli) {
        Ok(out) => {
            let text = if cli.json {
                serde_json::to_string_pretty(&out.json).unwrap_or_default()
            } else {
                out.summary
            };
            let _ = writeln!(stdout, "{text}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
