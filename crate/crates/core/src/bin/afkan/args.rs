use std::ops::RangeInclusive;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use afkan::basis::{FunctionType, GridSpec, RadialFamily};
use afkan::data::DatasetKind;
use afkan::layers::{ReductionMode, Variant};
use afkan::normalization::NormKind;
use afkan::{Activation, ModelSpec};

#[derive(Debug, Parser)]
#[command(
    name = "afkan",
    version,
    about = "Train and inspect AF-KAN and baseline networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration over seeded runs and report the aggregate.
    Train(TrainArgs),
    /// Print per-tensor, per-layer and total parameter counts.
    Params(ParamsArgs),
    /// Compare analytic gradients with central differences across all variants.
    Gradcheck(GradcheckArgs),
    /// Export sampled basis curves as CSV.
    PlotBasis(PlotArgs),
    /// Train several variants under one protocol and print a merged table.
    Compare(CompareArgs),
    /// Evaluate a saved checkpoint on a test split.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "afkan", value_parser = parse_tag::<Variant>)]
    pub variant: Variant,
    /// Reduction mode; AF-KAN only.
    #[arg(long, value_parser = parse_tag::<ReductionMode>)]
    pub mode: Option<ReductionMode>,
    /// Layer widths, input first.
    #[arg(long, value_delimiter = ',', default_value = "784,64,10")]
    pub widths: Vec<usize>,
    /// Grid size G (default 3, or 5 for basis_kan).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Spline order k (default 3).
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, default_value = "silu", value_parser = parse_tag::<Activation>)]
    pub act: Activation,
    #[arg(long, default_value = "quad1", value_parser = parse_tag::<FunctionType>)]
    pub ftype: FunctionType,
    /// Pre-linear normalization.
    #[arg(long, default_value = "layer", value_parser = parse_tag::<NormKind>)]
    pub pln: NormKind,
    /// L2 plus min-max scaling of basis outputs.
    #[arg(long, value_enum, default_value = "on")]
    pub l2mm: OnOff,
    /// Radial family for basis_kan.
    #[arg(long, default_value = "grbf", value_parser = parse_tag::<RadialFamily>)]
    pub radial: RadialFamily,
    /// Radial centers per input for basis_kan.
    #[arg(long, default_value_t = 8)]
    pub centers: usize,
}

impl ModelArgs {
    pub fn spec(&self) -> Result<ModelSpec, String> {
        if self.mode.is_some() && self.variant != Variant::Afkan {
            return Err(format!(
                "--mode only applies to --variant afkan, not {}",
                self.variant
            ));
        }
        let mut s = ModelSpec::new(self.variant, self.widths.clone());
        if let Some(mode) = self.mode {
            s.mode = mode;
        }
        s.grid = GridSpec {
            grid: self.grid.unwrap_or(s.grid.grid),
            order: self.order.unwrap_or(s.grid.order),
        };
        s.act = self.act;
        s.ftype = self.ftype;
        s.pln = self.pln;
        s.l2mm = self.l2mm == OnOff::On;
        s.radial = self.radial;
        s.num_centers = self.centers;
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, default_value = "mnist", value_parser = parse_tag::<DatasetKind>)]
    pub dataset: DatasetKind,
    /// Parent of the `<dataset>/` IDX directory (falls back to $AFKAN_DATA_DIR, then ./data).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Seed of the first run; run r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Per-epoch learning-rate decay factor.
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Directory for the default metrics log and checkpoint paths.
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Line-delimited JSON metrics log (default: <out-dir>/<label>.jsonl).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Checkpoint of the last run's final model (default: <out-dir>/<label>.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Print `key=value` lines instead of the table.
    #[arg(long)]
    pub kv: bool,
    /// Also print forward-pass FLOP estimates for this batch size.
    #[arg(long)]
    pub flops: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Independent draws per configuration; the worst one is reported.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Print every configuration, not just failures and the summary.
    #[arg(long)]
    pub verbose: bool,
    /// Scale activation derivatives in the backward pass (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisKind {
    #[value(name = "relu_kan")]
    ReluKan,
    Afkan,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum, default_value = "afkan")]
    pub basis: BasisKind,
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value = "silu", value_parser = parse_tag::<Activation>)]
    pub act: Activation,
    #[arg(long, default_value = "quad1", value_parser = parse_tag::<FunctionType>)]
    pub ftype: FunctionType,
    /// Number of x samples on [-0.6, 1.6].
    #[arg(long, default_value_t = 221)]
    pub resolution: usize,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Entries like `mlp`, `relukan`, `afkan:spatial_attn`, `basis_kan:rswaf`.
    #[arg(long, value_delimiter = ',', default_value = "mlp,afkan:global_attn,relukan")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "784,64,10")]
    pub widths: Vec<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Sweep AF-KAN grid sizes, e.g. `1..5` (replaces --variants with a heatmap).
    #[arg(long, value_parser = parse_range)]
    pub grid_sweep: Option<RangeInclusive<usize>>,
    /// Sweep AF-KAN spline orders, e.g. `1..4`.
    #[arg(long, value_parser = parse_range)]
    pub order_sweep: Option<RangeInclusive<usize>>,
    /// Line-delimited JSON log of every epoch and aggregate.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

fn parse_tag<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

/// `a..b` or `a..=b`, both inclusive, or a single value.
pub fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => {
            let v = num(s)?;
            (v, v)
        }
    };
    if lo == 0 || lo > hi {
        return Err(format!("range `{s}` must be ascending and start at 1 or more"));
    }
    Ok(lo..=hi)
}

/// `variant[:detail]`, where the detail is a reduction mode for AF-KAN or a radial family.
pub fn parse_member(entry: &str, widths: &[usize]) -> Result<ModelSpec, String> {
    let (head, detail) = match entry.split_once(':') {
        Some((h, d)) => (h, Some(d)),
        None => (entry, None),
    };
    let variant: Variant = parse_tag(head)?;
    let mut spec = ModelSpec::new(variant, widths.to_vec());
    match (variant, detail) {
        (_, None) => {}
        (Variant::Afkan, Some(d)) => spec.mode = parse_tag(d)?,
        (Variant::BasisKan, Some(d)) => spec.radial = parse_tag(d)?,
        (v, Some(d)) => return Err(format!("`{v}` takes no `:{d}` qualifier")),
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}
