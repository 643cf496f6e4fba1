use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use redlens_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use redlens_core::data::{make_batches, Dataset, DatasetHandle, Split};
use redlens_core::exec::Execution;
use redlens_core::impulse::{impulse_response, Capture, ImpulseStimulus};
use redlens_core::metrics::{ncc_matrix, NccMode};
use redlens_core::model::{build_lenet5, scale_network};
use redlens_core::perturb::{run_sweep, PixelScope, ShuffleMode, SweepConfig};
use redlens_core::report::{
    compare_reports, comparison_text, impulse_section, write_bundle, Manifest, NetworkSummary,
    ShuffleSection, SimilarityReport,
};
use redlens_core::train::{history_csv, train_dataset, TrainConfig};

#[derive(Parser)]
#[command(name = "redlens", version, about = "Redundancy analysis for LeNet-style CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on MNIST and write a checkpoint.
    Train(TrainArgs),
    /// Shuffle one input channel of a convolutional layer at a time and
    /// record accuracy and cosine similarity over the test set.
    Shuffle(ShuffleArgs),
    /// Feed a unit impulse through a network and correlate the response maps.
    Impulse(ImpulseArgs),
    /// Compare two report bundles of the same kind.
    Compare(CompareArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the four MNIST IDX files (optionally .gz).
    #[arg(long, default_value = "data/mnist")]
    data: PathBuf,
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    test_limit: Option<usize>,
}

impl DataArgs {
    fn handle(&self, batch_size: usize, shuffle_seed: u64, need_train: bool) -> Result<DatasetHandle> {
        let mut h = DatasetHandle::in_dir(&self.data);
        if let Some(p) = &self.train_images {
            h.train_images = p.clone();
        }
        if let Some(p) = &self.train_labels {
            h.train_labels = p.clone();
        }
        if let Some(p) = &self.test_images {
            h.test_images = p.clone();
        }
        if let Some(p) = &self.test_labels {
            h.test_labels = p.clone();
        }
        h.batch_size = batch_size;
        h.shuffle_seed = shuffle_seed;
        h.train_limit = self.train_limit;
        h.test_limit = self.test_limit;
        for p in h.paths().into_iter().skip(if need_train { 0 } else { 2 }) {
            if !p.exists() {
                bail!("dataset file not found: {}", p.display());
            }
        }
        Ok(h)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "lenet5")]
    arch: String,
    /// Width multiplier applied to every hidden layer.
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the per-epoch training order; defaults to `--seed`.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Epochs without test-accuracy improvement before stopping
    /// [default: 3, capped at --epochs].
    #[arg(long)]
    patience: Option<usize>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.arch != "lenet5" {
        bail!("unknown architecture '{}' (expected lenet5)", a.arch);
    }
    let spec = if a.scale == 1 {
        build_lenet5()
    } else {
        scale_network(&build_lenet5(), a.scale)?
    };
    let shuffle_seed = a.shuffle_seed.unwrap_or(a.seed);
    let handle = a.data.handle(a.batch_size, shuffle_seed, true)?;
    let data = Dataset::load(&handle)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience.unwrap_or(3.min(a.epochs.max(1))),
        seed: a.seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train_dataset(&spec, &data, shuffle_seed, &cfg, |r| {
        eprintln!(
            "epoch {:>2}  loss {:.4}  test acc {:.4}  ({:.0}s)",
            r.epoch,
            r.train_loss,
            r.test_accuracy,
            start.elapsed().as_secs_f64()
        );
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_checkpoint(&outcome.checkpoint, &a.out)?;
    let hist = a.out.with_extension("history.csv");
    std::fs::write(&hist, history_csv(&outcome.history))
        .with_context(|| format!("writing {}", hist.display()))?;
    println!(
        "{}: best epoch {} of {}, test accuracy {:.4}, wrote {}",
        spec.name,
        outcome.checkpoint.meta.best_epoch,
        outcome.checkpoint.meta.epochs_run,
        outcome.checkpoint.meta.test_accuracy,
        a.out.display()
    );
    Ok(())
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Channel,
    Pixel,
}

#[derive(Args)]
struct ShuffleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// 1-based convolutional layer whose input is shuffled.
    #[arg(long, default_value_t = 2)]
    layer: usize,
    /// Comma-separated channel indices, `all`, or empty for a baseline-only run.
    #[arg(long, default_value = "all")]
    channels: String,
    /// Comma-separated permutation seeds.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Use one spatial permutation for the whole batch in pixel mode.
    #[arg(long)]
    shared_pixel_permutation: bool,
    /// Replace every permutation by the identity.
    #[arg(long)]
    identity_permutation: bool,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CaptureArg {
    Pre,
    Post,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum NccModeArg {
    MaxLag,
    ZeroLag,
}

#[derive(Args)]
struct ImpulseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// NCC level above which a pair of maps counts as redundant.
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "pre")]
    capture: CaptureArg,
    #[arg(long, value_enum, default_value = "max-lag")]
    ncc_mode: NccModeArg,
    /// Impulse row; defaults to the centre.
    #[arg(long)]
    row: Option<usize>,
    /// Impulse column; defaults to the centre.
    #[arg(long)]
    col: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f32,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// First report bundle (directory or report.json).
    a: PathBuf,
    /// Second report bundle.
    b: PathBuf,
    /// Also write the comparison as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn load(path: &PathBuf) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("checkpoint not found: {}", path.display());
    }
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} '{s}': {e}")))
        .collect()
}

fn cmd_shuffle(a: &ShuffleArgs) -> Result<()> {
    let ckpt = load(&a.checkpoint)?;
    let net = &ckpt.network;
    let pos = net.spec.conv_position(a.layer)?;
    let in_channels = net.spec.shapes()?[pos].input.0;
    let channels: Vec<usize> = if a.channels.trim() == "all" {
        (0..in_channels).collect()
    } else {
        parse_list(&a.channels, "channel")?
    };
    let seeds: Vec<u64> = parse_list(&a.seeds, "seed")?;
    let mode = match a.mode {
        ModeArg::Channel => ShuffleMode::Channel,
        ModeArg::Pixel => ShuffleMode::Pixel,
    };
    let pixel_scope = if a.shared_pixel_permutation {
        PixelScope::Shared
    } else {
        PixelScope::PerSample
    };
    let handle = a.data.handle(a.batch_size, 0, false)?;
    let batches = make_batches(&handle, Split::Test)?;
    let cfg = SweepConfig {
        layer: a.layer,
        channels: channels.clone(),
        mode,
        pixel_scope,
        seeds: if seeds.is_empty() { vec![0] } else { seeds.clone() },
        identity: a.identity_permutation,
        execution: exec(a.sequential),
    };
    let outcome = run_sweep(net, &batches, &cfg)?;
    let section = ShuffleSection::from_sweep(
        a.layer,
        mode,
        pixel_scope,
        a.identity_permutation,
        a.batch_size,
        &cfg.seeds,
        &channels,
        &outcome,
    );
    let manifest = Manifest::new(
        "shuffle",
        &a.checkpoint.display().to_string(),
        cfg.seeds.clone(),
        serde_json::json!({
            "layer": a.layer,
            "mode": mode,
            "channels": channels,
            "pixel_scope": pixel_scope,
            "identity_permutation": a.identity_permutation,
            "batch_size": a.batch_size,
            "test_images": handle.test_images.display().to_string(),
            "test_labels": handle.test_labels.display().to_string(),
            "test_limit": a.data.test_limit,
        }),
    );
    let report = SimilarityReport::shuffle(NetworkSummary::from_checkpoint(&ckpt)?, section, manifest);
    write_bundle(&report, None, &a.out)?;
    let s = report.shuffle.as_ref().expect("shuffle section");
    println!(
        "{} layer {} {} shuffle: baseline {:.4}, mean drop {:.4}, mean CS {:.4} ({} channels x {} seeds) -> {}",
        report.network.name,
        s.layer,
        s.mode,
        s.baseline_accuracy,
        s.mean_accuracy_drop,
        s.mean_cs,
        channels.len(),
        cfg.seeds.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_impulse(a: &ImpulseArgs) -> Result<()> {
    let ckpt = load(&a.checkpoint)?;
    let net = &ckpt.network;
    let centre = ImpulseStimulus::centered(&net.spec.input);
    let stimulus = ImpulseStimulus {
        row: a.row.unwrap_or(centre.row),
        col: a.col.unwrap_or(centre.col),
        amplitude: a.amplitude,
    };
    let capture = match a.capture {
        CaptureArg::Pre => Capture::PreActivation,
        CaptureArg::Post => Capture::PostActivation,
    };
    let mode = match a.ncc_mode {
        NccModeArg::MaxLag => NccMode::MaxOverLags,
        NccModeArg::ZeroLag => NccMode::ZeroLag,
    };
    let responses = impulse_response(net, &stimulus, capture)?;
    let matrices = responses
        .layers
        .iter()
        .map(|l| ncc_matrix(&l.maps, mode, exec(a.sequential)))
        .collect::<redlens_core::Result<Vec<_>>>()?;
    let section = impulse_section(&responses, mode, a.threshold, &matrices)?;
    let manifest = Manifest::new(
        "impulse",
        &a.checkpoint.display().to_string(),
        vec![],
        serde_json::json!({
            "stimulus": stimulus,
            "capture": capture,
            "ncc_mode": mode,
            "threshold": a.threshold,
        }),
    );
    let report = SimilarityReport::impulse(NetworkSummary::from_checkpoint(&ckpt)?, section, manifest);
    write_bundle(&report, Some(&responses), &a.out)?;
    for l in &report.impulse.as_ref().expect("impulse section").layers {
        println!(
            "{} layer {}: {} maps, {} of {} pairs above {} ({:.4}) -> {}",
            report.network.name,
            l.layer,
            l.maps,
            l.redundancy.pairs_above,
            l.redundancy.total_pairs,
            a.threshold,
            l.redundancy.fraction,
            a.out.display()
        );
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let ra = SimilarityReport::load(&a.a).with_context(|| format!("reading {}", a.a.display()))?;
    let rb = SimilarityReport::load(&a.b).with_context(|| format!("reading {}", a.b.display()))?;
    let c = compare_reports(&ra, &rb)?;
    print!("{}", comparison_text(&c));
    if let Some(out) = &a.out {
        let mut text = serde_json::to_string_pretty(&c)?;
        text.push('\n');
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Shuffle(a) => cmd_shuffle(a),
        Command::Impulse(a) => cmd_impulse(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn main() -> ExitCode {
    match dispatch(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
