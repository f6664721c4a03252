use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "mahnn",
    version,
    about = "Attention-channel Bi-LSTM/ConvNet sentence classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on a labeled TSV file and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled TSV file.
    Eval(EvalArgs),
    /// k-fold cross-validation on one labeled TSV file.
    Cv(CvArgs),
    /// Compare analytic and finite-difference gradients on the toy model.
    Gradcheck(GradcheckArgs),
    /// Export per-token attention weights of a checkpoint.
    Attn(AttnArgs),
    /// Convert raw corpora into `label<TAB>text` files.
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }
}

/// Hyper-parameter sources shared by `train` and `cv`; flags override the
/// config file, which overrides the defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON file of hyper-parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Number of attention channels.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Disable the semantic attention.
    #[arg(long)]
    pub rv: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated label names, in class order.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training examples.
    #[arg(long)]
    pub data: PathBuf,
    /// Development examples for early stopping; a slice of the training
    /// data is held out when absent.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Test examples scored with the best checkpoint.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of folds.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Check the variant without semantic attention.
    #[arg(long)]
    pub rv: bool,
    /// Keep the embedding table fixed.
    #[arg(long)]
    pub freeze_embedding: bool,
    /// Inject a wrong tanh derivative; the check must then fail.
    #[arg(long)]
    pub corrupt_tanh_grad: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttnArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One sentence per line, optionally prefixed by `label<TAB>`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Export at most this many sentences.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["class_file", "label_first"])))]
pub struct ConvertArgs {
    /// One sentence per line; repeat once per class, in class order.
    #[arg(long = "class-file")]
    pub class_file: Vec<PathBuf>,
    /// `label text` lines.
    #[arg(long)]
    pub label_first: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
