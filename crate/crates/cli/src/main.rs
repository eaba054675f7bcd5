//! `highlighter`: localize, transfer, edit, segment and score highlights on
//! triangle meshes.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod backend;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::BackendKind;

/// A problem with the invocation rather than with the run.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "highlighter", version, about = "Text-driven region highlighting on triangle meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a highlight field for a prompt on a mesh.
    Highlight(HighlightArgs),
    /// Evaluate a trained field on another meshing of the same object.
    Transfer(TransferArgs),
    /// Extrude, stretch, delete or select a highlighted region.
    Edit(EditArgs),
    /// Combine per-class highlights into one labeling by graph cut.
    Segment(SegmentArgs),
    /// Prompt-retrieval precision over a manifest of finished highlights.
    Evaluate(EvaluateArgs),
    /// Score candidate cameras and report the best primary view.
    SelectView(PromptArgs),
}

/// Options shared by `highlight` and `select-view`. Flags override the
/// config file.
#[derive(Args, Clone, Debug)]
pub struct PromptArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Object name inserted into the prompt template.
    #[arg(long)]
    pub object: Option<String>,
    /// Region name inserted into the prompt template.
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub backend_url: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Seeds field initialization, view sampling and augmentation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the configured primary view instead of selecting one.
    #[arg(long)]
    pub no_select_view: bool,
    #[arg(long)]
    pub field_width: Option<usize>,
    #[arg(long)]
    pub field_depth: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct HighlightArgs {
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// none, direct, no_blend, no_augs or positional_encoding.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub views_per_step: Option<usize>,
    /// Steps between checkpoints and preview images; 0 disables.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from the checkpoint in the output directory if present.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Field archive written by `highlight`.
    #[arg(long)]
    pub field: PathBuf,
    /// Target mesh.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Normalize the target by its own bounding box even when the archive
    /// records the source transform.
    #[arg(long)]
    pub renormalize: bool,
    #[arg(long, default_value = "transfer-out")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum EditKindArg {
    Extrude,
    Stretch,
    Delete,
    Select,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Highlight result JSON whose mask selects the region; omitted means
    /// an empty mask.
    #[arg(long)]
    pub probabilities: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: EditKindArg,
    /// Extrusion distance or stretch length, in mesh units.
    #[arg(long, default_value_t = 0.05)]
    pub magnitude: f64,
    /// Stretch direction as `x,y,z`.
    #[arg(long, value_delimiter = ',', num_args = 3, allow_negative_numbers = true)]
    pub direction: Option<Vec<f64>>,
    #[arg(long, default_value = "edit-out")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Class names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub classes: Vec<String>,
    /// One highlight result JSON per class, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "fields")]
    pub probabilities: Vec<PathBuf>,
    /// One field archive per class, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fields: Vec<PathBuf>,
    /// Smoothness weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value = "segment-out")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// TOML dataset manifest.
    #[arg(long, required_unless_present = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Score the built-in synthetic dataset with the mask-IoU scorer.
    #[arg(long, conflicts_with = "manifest")]
    pub synthetic: bool,
    #[arg(long)]
    pub backend_url: Option<String>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub supersample: Option<usize>,
    #[arg(long, default_value = "evaluate-out")]
    pub output: PathBuf,
    /// Seeds the hash backend.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Highlight(a) => commands::highlight(a),
        Command::Transfer(a) => commands::transfer(a),
        Command::Edit(a) => commands::edit(a),
        Command::Segment(a) => commands::segment(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::SelectView(a) => commands::select_view(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
