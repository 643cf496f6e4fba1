//! Channel shuffling and pixel shuffling of a convolution's input, and the
//! perturbed forward passes built on them.
//!
//! Both perturbations touch exactly one channel `k` of the tensor entering
//! convolutional layer `i` (1-based), i.e. the pooled, rectified output of
//! layer `i - 1`, or the image itself for `i = 1`.

use serde::{Deserialize, Serialize};

use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::layers::{conv2d_with, ConvConfig, KernelBank};
use crate::metrics::{channelwise_cs_tensors, ChannelCs};
use crate::model::{argmax_rows, ActivationRecord, LayerSpec, Network};
use crate::rng::{is_permutation, seeded_permutation, stream_seed};
use crate::tensor::{Dims4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    /// Permute channel `k`'s per-sample planes across the batch.
    Channel,
    /// Permute the spatial positions of channel `k` within each sample.
    Pixel,
}

impl std::fmt::Display for ShuffleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShuffleMode::Channel => "channel",
            ShuffleMode::Pixel => "pixel",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelScope {
    /// An independent spatial permutation for every sample.
    #[default]
    PerSample,
    /// One spatial permutation shared by the whole batch.
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationSource {
    Seeded(u64),
    /// Every permutation is the identity; used to check that a perturbed
    /// pass with no actual change reproduces the clean pass.
    Identity,
}

impl PermutationSource {
    fn permutation(self, n: usize, counters: &[u64]) -> Vec<usize> {
        match self {
            PermutationSource::Seeded(seed) => seeded_permutation(n, stream_seed(seed, counters)),
            PermutationSource::Identity => (0..n).collect(),
        }
    }
}

pub fn channel_shuffle(t: &Tensor4, k: usize, seed: u64) -> Result<Tensor4> {
    check_channel(t, k)?;
    channel_shuffle_with(t, k, &seeded_permutation(t.dims().n, seed))
}

/// Sample `b` of the output takes channel `k` from sample `perm[b]` of the input.
pub fn channel_shuffle_with(t: &Tensor4, k: usize, perm: &[usize]) -> Result<Tensor4> {
    check_channel(t, k)?;
    if perm.len() != t.dims().n || !is_permutation(perm) {
        return Err(Error::InvalidArgument(format!(
            "channel shuffle needs a permutation of the {} samples",
            t.dims().n
        )));
    }
    let mut out = t.clone();
    for (b, &src) in perm.iter().enumerate() {
        out.plane_mut(b, k).copy_from_slice(t.plane(src, k));
    }
    Ok(out)
}

pub fn pixel_shuffle(t: &Tensor4, k: usize, seed: u64, scope: PixelScope) -> Result<Tensor4> {
    check_channel(t, k)?;
    let d = t.dims();
    let perms: Vec<Vec<usize>> = match scope {
        PixelScope::PerSample => (0..d.n)
            .map(|n| seeded_permutation(d.plane_len(), stream_seed(seed, &[n as u64])))
            .collect(),
        PixelScope::Shared => vec![seeded_permutation(d.plane_len(), seed); d.n],
    };
    pixel_shuffle_with(t, k, &perms)
}

/// Position `p` of channel `k` in sample `b` takes the value at `perms[b][p]`.
pub fn pixel_shuffle_with(t: &Tensor4, k: usize, perms: &[Vec<usize>]) -> Result<Tensor4> {
    check_channel(t, k)?;
    let d = t.dims();
    if perms.len() != d.n
        || perms
            .iter()
            .any(|p| p.len() != d.plane_len() || !is_permutation(p))
    {
        return Err(Error::InvalidArgument(format!(
            "pixel shuffle needs {} permutations of {} positions",
            d.n,
            d.plane_len()
        )));
    }
    let mut out = t.clone();
    for (b, perm) in perms.iter().enumerate() {
        let src = t.plane(b, k);
        for (dst, &p) in out.plane_mut(b, k).iter_mut().zip(perm) {
            *dst = src[p];
        }
    }
    Ok(out)
}

fn check_channel(t: &Tensor4, k: usize) -> Result<()> {
    if k >= t.dims().c {
        return Err(Error::ChannelOutOfRange {
            channel: k,
            channels: t.dims().c,
        });
    }
    Ok(())
}

/// Which channel of which layer input to shuffle, and how.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    /// 1-based index of the convolutional layer whose input is perturbed.
    pub layer: usize,
    pub channel: usize,
    pub mode: ShuffleMode,
    pub pixel_scope: PixelScope,
    pub source: PermutationSource,
}

impl PerturbationPlan {
    pub fn new(layer: usize, channel: usize, mode: ShuffleMode, seed: u64) -> Self {
        PerturbationPlan {
            layer,
            channel,
            mode,
            pixel_scope: PixelScope::default(),
            source: PermutationSource::Seeded(seed),
        }
    }

    /// Position in the network's layer list and the number of input channels.
    pub fn resolve(&self, net: &Network) -> Result<(usize, usize)> {
        let pos = net
            .spec
            .conv_position(self.layer)
            .map_err(|e| Error::InvalidPlan(e.to_string()))?;
        let shapes = net.spec.shapes()?;
        let channels = shapes[pos].input.0;
        if self.channel >= channels {
            return Err(Error::InvalidPlan(format!(
                "channel {} out of range: layer {} has {channels} input channels",
                self.channel, self.layer
            )));
        }
        Ok((pos, channels))
    }

    /// New values for channel `k` of `input`, as `n` consecutive planes.
    fn shuffled_channel(&self, input: &Tensor4) -> Vec<f32> {
        let d = input.dims();
        let k = self.channel;
        let mut out = Vec::with_capacity(d.n * d.plane_len());
        match self.mode {
            ShuffleMode::Channel => {
                let perm = self.source.permutation(d.n, &[]);
                for &src in &perm {
                    out.extend_from_slice(input.plane(src, k));
                }
            }
            ShuffleMode::Pixel => {
                let shared = self.source.permutation(d.plane_len(), &[]);
                for b in 0..d.n {
                    let perm = match self.pixel_scope {
                        PixelScope::Shared => shared.clone(),
                        PixelScope::PerSample => self.source.permutation(d.plane_len(), &[b as u64]),
                    };
                    let src = input.plane(b, k);
                    out.extend(perm.iter().map(|&p| src[p]));
                }
            }
        }
        out
    }

    /// Apply the plan to the tensor entering the target layer.
    pub fn apply(&self, input: &Tensor4) -> Result<Tensor4> {
        check_channel(input, self.channel)?;
        let values = self.shuffled_channel(input);
        let mut out = input.clone();
        let plane = input.dims().plane_len();
        for b in 0..input.dims().n {
            out.plane_mut(b, self.channel)
                .copy_from_slice(&values[b * plane..(b + 1) * plane]);
        }
        Ok(out)
    }

    /// The same plan with the seed derived for one batch of a sweep.
    pub fn for_batch(&self, batch_index: usize) -> Self {
        let source = match self.source {
            PermutationSource::Seeded(seed) => PermutationSource::Seeded(stream_seed(
                seed,
                &[batch_index as u64, self.channel as u64],
            )),
            PermutationSource::Identity => PermutationSource::Identity,
        };
        PerturbationPlan { source, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedPass {
    pub clean: ActivationRecord,
    pub perturbed: ActivationRecord,
    pub clean_predictions: Vec<usize>,
    pub predictions: Vec<usize>,
}

/// Clean pass, then a second pass in which the input of the planned layer is
/// replaced by its shuffled version. Layers before the target are shared.
pub fn forward_with_perturbation(
    net: &Network,
    batch: &LabeledBatch,
    plan: &PerturbationPlan,
    exec: Execution,
) -> Result<PerturbedPass> {
    let (pos, _) = plan.resolve(net)?;
    let clean = net.forward_with(exec, &batch.images)?;
    let shuffled = plan.apply(clean.layer_input(pos))?;
    let tail = net.forward_from(exec, pos, &shuffled)?;
    let mut layers = clean.layers[..pos].to_vec();
    layers.extend(tail);
    let perturbed = ActivationRecord {
        input: if pos == 0 {
            shuffled
        } else {
            clean.input.clone()
        },
        layers,
    };
    let clean_predictions = argmax_rows(clean.logits());
    let predictions = argmax_rows(perturbed.logits());
    Ok(PerturbedPass {
        clean,
        perturbed,
        clean_predictions,
        predictions,
    })
}

/// A sweep of single-channel perturbations over a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub layer: usize,
    pub channels: Vec<usize>,
    pub mode: ShuffleMode,
    pub pixel_scope: PixelScope,
    pub seeds: Vec<u64>,
    /// Replace every permutation by the identity.
    pub identity: bool,
    pub execution: Execution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub channel: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Per output channel of the target layer: batch-flattened CS averaged over batches.
    pub cs_per_output: Vec<f64>,
    /// Mean of `cs_per_output`.
    pub mean_cs: f64,
    /// Per-sample CS averaged over samples and output channels.
    pub mean_sample_cs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub samples: usize,
    pub batches: usize,
    pub baseline_correct: usize,
    pub baseline_accuracy: f64,
    /// One row per `(seed, channel)`, seeds outer, channels in the requested order.
    pub rows: Vec<SweepRow>,
}

struct JobResult {
    correct: usize,
    cs: ChannelCs,
}

/// Run every `(seed, channel)` perturbation over `batches`.
///
/// Only channel `k` differs between the clean and shuffled inputs, so the
/// perturbed pre-activation is formed as the clean pre-activation plus the
/// convolution of the channel-`k` difference with that channel's kernels.
/// The batch-`b` permutation for `(seed, k)` is drawn from the seed stream
/// `(seed, b, k)`.
pub fn run_sweep(net: &Network, batches: &[LabeledBatch], cfg: &SweepConfig) -> Result<SweepOutcome> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("a sweep needs at least one seed".into()));
    }
    let probe = PerturbationPlan::new(cfg.layer, 0, cfg.mode, 0);
    let (pos, channels) = probe.resolve(net)?;
    if let Some(&bad) = cfg.channels.iter().find(|&&c| c >= channels) {
        return Err(Error::InvalidPlan(format!(
            "channel {bad} out of range: layer {} has {channels} input channels",
            cfg.layer
        )));
    }
    let bank = net.conv_bank(cfg.layer)?;
    let padding = match net.spec.layers[pos] {
        LayerSpec::Conv { padding, .. } => padding,
        LayerSpec::Dense { .. } => unreachable!("conv_position returns conv layers"),
    };
    let conv_cfg = ConvConfig::with_padding(padding);
    let slices: Vec<KernelBank> = (0..channels).map(|c| bank.input_channel_slice(c)).collect();
    let jobs: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.channels.iter().map(move |&c| (s, c)))
        .collect();

    let outputs = bank.out_channels;
    let mut correct = vec![0usize; jobs.len()];
    let mut cs_sum = vec![vec![0.0f64; outputs]; jobs.len()];
    let mut sample_cs_sum = vec![0.0f64; jobs.len()];
    let mut baseline_correct = 0usize;
    let mut samples = 0usize;

    for (bi, batch) in batches.iter().enumerate() {
        let clean = net.forward_with(cfg.execution, &batch.images)?;
        let clean_pred = argmax_rows(clean.logits());
        baseline_correct += clean_pred.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
        samples += batch.len();
        let input = clean.layer_input(pos);
        let target = &clean.layers[pos];
        let d = input.dims();

        let results = cfg.execution.map(&jobs, |&(seed, ch)| -> Result<JobResult> {
            let plan = PerturbationPlan {
                layer: cfg.layer,
                channel: ch,
                mode: cfg.mode,
                pixel_scope: cfg.pixel_scope,
                source: if cfg.identity {
                    PermutationSource::Identity
                } else {
                    PermutationSource::Seeded(seed)
                },
            }
            .for_batch(bi);
            let shuffled = plan.shuffled_channel(input);
            let mut delta = Vec::with_capacity(shuffled.len());
            for b in 0..d.n {
                let orig = input.plane(b, ch);
                let new = &shuffled[b * d.plane_len()..(b + 1) * d.plane_len()];
                delta.extend(new.iter().zip(orig).map(|(n, o)| n - o));
            }
            let delta = Tensor4::from_vec(Dims4::new(d.n, 1, d.h, d.w), delta)?;
            let change = conv2d_with(Execution::Sequential, &delta, &slices[ch], &conv_cfg)?;
            let mut pre = target.pre.clone();
            pre.data_mut()
                .iter_mut()
                .zip(change.data())
                .for_each(|(p, c)| *p += c);
            let act = net.layer_finish(pos, pre)?;
            let cs = channelwise_cs_tensors(target.output(), act.output())?;
            let logits = net.logits_from(Execution::Sequential, pos + 1, act.output())?;
            let correct = argmax_rows(&logits)
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
            Ok(JobResult { correct, cs })
        });

        for (j, r) in results.into_iter().enumerate() {
            let r = r?;
            correct[j] += r.correct;
            cs_sum[j]
                .iter_mut()
                .zip(&r.cs.per_channel)
                .for_each(|(a, v)| *a += v);
            let sample_mean = r.cs.per_channel_sample_mean.iter().sum::<f64>()
                / r.cs.per_channel_sample_mean.len().max(1) as f64;
            sample_cs_sum[j] += sample_mean * batch.len() as f64;
        }
    }

    if samples == 0 {
        return Err(Error::InvalidArgument("sweep over an empty test set".into()));
    }
    let nb = batches.len() as f64;
    let rows = jobs
        .iter()
        .enumerate()
        .map(|(j, &(seed, channel))| {
            let cs_per_output: Vec<f64> = cs_sum[j].iter().map(|v| v / nb).collect();
            let mean_cs = cs_per_output.iter().sum::<f64>() / cs_per_output.len().max(1) as f64;
            SweepRow {
                seed,
                channel,
                correct: correct[j],
                accuracy: correct[j] as f64 / samples as f64,
                cs_per_output,
                mean_cs,
                mean_sample_cs: sample_cs_sum[j] / samples as f64,
            }
        })
        .collect();
    Ok(SweepOutcome {
        samples,
        batches: batches.len(),
        baseline_correct,
        baseline_accuracy: baseline_correct as f64 / samples as f64,
        rows,
    })
}
