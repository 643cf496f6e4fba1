//! Machine-readable experiment reports.
//!
//! A bundle directory holds `report.json` (a [`SimilarityReport`]),
//! `manifest.json` and a set of CSV tables:
//!
//! * shuffle: `accuracy.csv` (one row per channel plus a `baseline` row),
//!   `shuffle_rows.csv` (one row per seed and channel) and `cs_per_output.csv`.
//! * impulse: `ncc_layer{L}.csv`, `redundancy.csv` and
//!   `responses/layer{L}_map{k}.csv`.
//!
//! Nothing time- or host-dependent is written, so a repeated command with
//! the same configuration produces byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::impulse::{Capture, ImpulseResponseSet, ImpulseStimulus};
use crate::metrics::{NccMatrix, NccMode, Redundancy};
use crate::model::LayerSpec;
use crate::perturb::{PixelScope, ShuffleMode, SweepOutcome, SweepRow};

pub const SCHEMA_VERSION: &str = "redlens-report-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Shuffle,
    Impulse,
}

impl std::fmt::Display for ReportKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReportKind::Shuffle => "shuffle",
            ReportKind::Impulse => "impulse",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub name: String,
    pub conv_channels: Vec<usize>,
    pub param_count: usize,
    pub checkpoint_test_accuracy: f64,
}

impl NetworkSummary {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec = ckpt.spec();
        Ok(NetworkSummary {
            name: spec.name.clone(),
            conv_channels: spec
                .layers
                .iter()
                .filter_map(|l| match l {
                    LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                    LayerSpec::Dense { .. } => None,
                })
                .collect(),
            param_count: spec.param_counts()?.iter().sum(),
            checkpoint_test_accuracy: ckpt.meta.test_accuracy,
        })
    }
}

/// Everything needed to rerun the command that produced a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub checkpoint: String,
    pub seeds: Vec<u64>,
    /// Permutations for batch `b`, seed `s` and channel `k` come from the
    /// counter stream `(s, b, k)`.
    pub seed_stream: String,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, checkpoint: &str, seeds: Vec<u64>, config: serde_json::Value) -> Self {
        Manifest {
            tool: "redlens".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            checkpoint: checkpoint.into(),
            seeds,
            seed_stream: "splitmix64(seed, batch, channel) -> chacha8 fisher-yates".into(),
            config,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: usize,
    /// Accuracy averaged over seeds.
    pub mean_accuracy: f64,
    pub accuracy_drop: f64,
    pub mean_cs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleSection {
    pub layer: usize,
    pub mode: ShuffleMode,
    pub pixel_scope: PixelScope,
    pub identity_permutation: bool,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub baseline_accuracy: f64,
    pub channels: Vec<ChannelSummary>,
    pub rows: Vec<SweepRow>,
    /// Mean over all `(seed, channel)` rows of `baseline - accuracy`.
    pub mean_accuracy_drop: f64,
    /// Mean over all rows of the per-row mean CS.
    pub mean_cs: f64,
}

impl ShuffleSection {
    pub fn from_sweep(
        layer: usize,
        mode: ShuffleMode,
        pixel_scope: PixelScope,
        identity_permutation: bool,
        batch_size: usize,
        seeds: &[u64],
        channels: &[usize],
        outcome: &SweepOutcome,
    ) -> Self {
        let base = outcome.baseline_accuracy;
        let summaries = channels
            .iter()
            .map(|&ch| {
                let rows: Vec<&SweepRow> = outcome.rows.iter().filter(|r| r.channel == ch).collect();
                let n = rows.len().max(1) as f64;
                let mean_accuracy = rows.iter().map(|r| r.accuracy).sum::<f64>() / n;
                ChannelSummary {
                    channel: ch,
                    mean_accuracy,
                    accuracy_drop: base - mean_accuracy,
                    mean_cs: rows.iter().map(|r| r.mean_cs).sum::<f64>() / n,
                }
            })
            .collect();
        let n = outcome.rows.len();
        let (mean_accuracy_drop, mean_cs) = if n == 0 {
            (0.0, 1.0)
        } else {
            (
                outcome.rows.iter().map(|r| base - r.accuracy).sum::<f64>() / n as f64,
                outcome.rows.iter().map(|r| r.mean_cs).sum::<f64>() / n as f64,
            )
        };
        ShuffleSection {
            layer,
            mode,
            pixel_scope,
            identity_permutation,
            batch_size,
            seeds: seeds.to_vec(),
            samples: outcome.samples,
            baseline_accuracy: base,
            channels: summaries,
            rows: outcome.rows.clone(),
            mean_accuracy_drop,
            mean_cs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulseLayerReport {
    pub layer: usize,
    pub maps: usize,
    pub map_height: usize,
    pub map_width: usize,
    pub ncc: Vec<Vec<f64>>,
    pub redundancy: Redundancy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulseSection {
    pub stimulus: ImpulseStimulus,
    pub capture: Capture,
    pub ncc_mode: NccMode,
    pub threshold: f64,
    pub layers: Vec<ImpulseLayerReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub schema: String,
    pub kind: ReportKind,
    pub network: NetworkSummary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shuffle: Option<ShuffleSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub impulse: Option<ImpulseSection>,
    pub manifest: Manifest,
}

impl SimilarityReport {
    pub fn shuffle(network: NetworkSummary, section: ShuffleSection, manifest: Manifest) -> Self {
        SimilarityReport {
            schema: SCHEMA_VERSION.into(),
            kind: ReportKind::Shuffle,
            network,
            shuffle: Some(section),
            impulse: None,
            manifest,
        }
    }

    pub fn impulse(network: NetworkSummary, section: ImpulseSection, manifest: Manifest) -> Self {
        SimilarityReport {
            schema: SCHEMA_VERSION.into(),
            kind: ReportKind::Impulse,
            network,
            shuffle: None,
            impulse: Some(section),
            manifest,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: SimilarityReport = serde_json::from_str(text)?;
        if r.schema != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported report schema '{}' (expected {SCHEMA_VERSION})",
                r.schema
            )));
        }
        let consistent = match r.kind {
            ReportKind::Shuffle => r.shuffle.is_some() && r.impulse.is_none(),
            ReportKind::Impulse => r.impulse.is_some() && r.shuffle.is_none(),
        };
        if !consistent {
            return Err(Error::InvalidArgument(format!(
                "report of kind {} has the wrong sections",
                r.kind
            )));
        }
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() {
            path.join("report.json")
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        Self::from_json(&text)
    }
}

/// Build the impulse section from a response set: one NCC matrix and
/// redundancy count per layer.
pub fn impulse_section(
    responses: &ImpulseResponseSet,
    ncc_mode: NccMode,
    threshold: f64,
    matrices: &[NccMatrix],
) -> Result<ImpulseSection> {
    if matrices.len() != responses.layers.len() {
        return Err(Error::shape("one NCC matrix per response layer is required"));
    }
    let layers = responses
        .layers
        .iter()
        .zip(matrices)
        .map(|(l, m)| {
            let (h, w) = l.maps.first().map_or((0, 0), |m| (m.height, m.width));
            Ok(ImpulseLayerReport {
                layer: l.layer,
                maps: l.maps.len(),
                map_height: h,
                map_width: w,
                ncc: m.rows(),
                redundancy: crate::metrics::redundancy_count(m, threshold)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImpulseSection {
        stimulus: responses.stimulus,
        capture: responses.capture,
        ncc_mode,
        threshold,
        layers,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

/// `channel,mean_accuracy,accuracy_drop,mean_cs` preceded by identifying
/// columns; the first data row is the unperturbed baseline.
pub fn accuracy_csv(report: &SimilarityReport, s: &ShuffleSection) -> String {
    let seeds = s.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let mut out = String::from("network,layer,mode,seeds,channel,mean_accuracy,accuracy_drop,mean_cs\n");
    let _ = writeln!(
        out,
        "{},{},{},{seeds},baseline,{},0,1",
        report.network.name, s.layer, s.mode, s.baseline_accuracy
    );
    for c in &s.channels {
        let _ = writeln!(
            out,
            "{},{},{},{seeds},{},{},{},{}",
            report.network.name, s.layer, s.mode, c.channel, c.mean_accuracy, c.accuracy_drop, c.mean_cs
        );
    }
    out
}

pub fn shuffle_rows_csv(report: &SimilarityReport, s: &ShuffleSection) -> String {
    let mut out = String::from("network,layer,mode,seed,channel,correct,accuracy,mean_cs,mean_sample_cs\n");
    for r in &s.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            report.network.name, s.layer, s.mode, r.seed, r.channel, r.correct, r.accuracy, r.mean_cs, r.mean_sample_cs
        );
    }
    out
}

pub fn cs_per_output_csv(report: &SimilarityReport, s: &ShuffleSection) -> String {
    let mut out = String::from("network,layer,mode,seed,channel,output_channel,cs\n");
    for r in &s.rows {
        for (o, v) in r.cs_per_output.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{o},{v}",
                report.network.name, s.layer, s.mode, r.seed, r.channel
            );
        }
    }
    out
}

pub fn redundancy_csv(report: &SimilarityReport, s: &ImpulseSection) -> String {
    let mut out = String::from("network,layer,threshold,pairs_above,total_pairs,fraction\n");
    for l in &s.layers {
        let r = &l.redundancy;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            report.network.name, l.layer, r.threshold, r.pairs_above, r.total_pairs, r.fraction
        );
    }
    out
}

/// Write `report.json`, `manifest.json` and the CSV tables into `dir`.
/// `responses` supplies the per-map grids of an impulse report.
pub fn write_bundle(
    report: &SimilarityReport,
    responses: Option<&ImpulseResponseSet>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(dir, "report.json", &report.to_json()?)?;
    let mut manifest = serde_json::to_string_pretty(&report.manifest)?;
    manifest.push('\n');
    write_file(dir, "manifest.json", &manifest)?;
    if let Some(s) = &report.shuffle {
        write_file(dir, "accuracy.csv", &accuracy_csv(report, s))?;
        write_file(dir, "shuffle_rows.csv", &shuffle_rows_csv(report, s))?;
        write_file(dir, "cs_per_output.csv", &cs_per_output_csv(report, s))?;
    }
    if let Some(s) = &report.impulse {
        write_file(dir, "redundancy.csv", &redundancy_csv(report, s))?;
        for l in &s.layers {
            let m = NccMatrix::from_rows(&l.ncc)?;
            write_file(dir, &format!("ncc_layer{}.csv", l.layer), &m.to_csv())?;
        }
        if let Some(set) = responses {
            for l in &set.layers {
                for (k, map) in l.maps.iter().enumerate() {
                    write_file(
                        dir,
                        &format!("responses/layer{}_map{k}.csv", l.layer),
                        &map.to_csv(),
                    )?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
}

/// One quantity compared between two reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub difference: f64,
    pub higher_is_better: bool,
    pub winner: Winner,
    pub statement: String,
}

impl Verdict {
    fn new(metric: &str, a: f64, b: f64, higher_is_better: bool, quality: &str, names: (&str, &str)) -> Self {
        let winner = if a == b {
            Winner::Tie
        } else if (b > a) == higher_is_better {
            Winner::B
        } else {
            Winner::A
        };
        let statement = match winner {
            Winner::Tie => format!("tie on {metric}"),
            Winner::A => format!("{} {quality}", names.0),
            Winner::B => format!("{} {quality}", names.1),
        };
        Verdict {
            metric: metric.into(),
            a,
            b,
            difference: b - a,
            higher_is_better,
            winner,
            statement,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub kind: ReportKind,
    pub network_a: String,
    pub network_b: String,
    pub verdicts: Vec<Verdict>,
}

impl Comparison {
    pub fn verdict(&self, metric: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.metric == metric)
    }
}

/// Compare two reports of the same kind. Shuffle reports must share layer
/// and mode; impulse reports must cover the same layers.
pub fn compare_reports(a: &SimilarityReport, b: &SimilarityReport) -> Result<Comparison> {
    if a.kind != b.kind {
        return Err(Error::ExperimentMismatch(format!(
            "cannot compare a {} report with a {} report",
            a.kind, b.kind
        )));
    }
    let names = (a.network.name.as_str(), b.network.name.as_str());
    let verdicts = match (a.kind, &a.shuffle, &b.shuffle, &a.impulse, &b.impulse) {
        (ReportKind::Shuffle, Some(sa), Some(sb), _, _) => {
            if sa.layer != sb.layer || sa.mode != sb.mode {
                return Err(Error::ExperimentMismatch(format!(
                    "shuffle reports differ in setup: layer {} {} vs layer {} {}",
                    sa.layer, sa.mode, sb.layer, sb.mode
                )));
            }
            vec![
                Verdict::new("baseline_accuracy", sa.baseline_accuracy, sb.baseline_accuracy, true, "more accurate", names),
                Verdict::new("mean_accuracy_drop", sa.mean_accuracy_drop, sb.mean_accuracy_drop, false, "more robust", names),
                Verdict::new("mean_cs", sa.mean_cs, sb.mean_cs, true, "more similar under perturbation", names),
            ]
        }
        (ReportKind::Impulse, _, _, Some(ia), Some(ib)) => {
            let la: Vec<usize> = ia.layers.iter().map(|l| l.layer).collect();
            let lb: Vec<usize> = ib.layers.iter().map(|l| l.layer).collect();
            if la != lb || ia.threshold != ib.threshold {
                return Err(Error::ExperimentMismatch(
                    "impulse reports differ in layers or threshold".into(),
                ));
            }
            ia.layers
                .iter()
                .zip(&ib.layers)
                .map(|(x, y)| {
                    Verdict::new(
                        &format!("redundancy_fraction_layer{}", x.layer),
                        x.redundancy.fraction,
                        y.redundancy.fraction,
                        true,
                        "more redundant",
                        names,
                    )
                })
                .collect()
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "report of kind {} is missing its section",
                a.kind
            )))
        }
    };
    Ok(Comparison {
        kind: a.kind,
        network_a: a.network.name.clone(),
        network_b: b.network.name.clone(),
        verdicts,
    })
}

/// Human-readable table of a comparison.
pub fn comparison_text(c: &Comparison) -> String {
    let mut out = format!("{} comparison: A = {}, B = {}\n", c.kind, c.network_a, c.network_b);
    for v in &c.verdicts {
        let _ = writeln!(
            out,
            "  {:<28} A {:>10.6}  B {:>10.6}  B-A {:>+10.6}  => {}",
            v.metric, v.a, v.b, v.difference, v.statement
        );
    }
    out
}
