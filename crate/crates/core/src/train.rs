//! Mini-batch SGD training with early stopping, and accuracy evaluation.

use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::data::{Dataset, DatasetHandle, LabeledBatch};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::layers::{
    conv2d_backward_with, dense_backward_batch, maxpool2x2_backward, relu_backward,
    softmax_cross_entropy_batch, ConvConfig,
};
use crate::model::{argmax_rows, ActivationRecord, LayerParams, LayerSpec, Network, NetworkSpec};
use crate::rng::stream_seed;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a new best test accuracy.
    pub patience: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 256,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        // max_epochs == 0 is accepted and returns the initialization.
        if self.max_epochs > 0 && self.patience > self.max_epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Per-layer `(weight, bias)` gradients, in layer order.
pub type Gradients = Vec<(Vec<f32>, Vec<f32>)>;

/// Backpropagate `grad_logits` through a recorded forward pass.
pub fn backward(
    net: &Network,
    exec: Execution,
    record: &ActivationRecord,
    grad_logits: Tensor4,
) -> Result<Gradients> {
    let mut grads: Gradients = vec![(Vec::new(), Vec::new()); net.params.len()];
    let mut g = grad_logits;
    for pos in (0..net.params.len()).rev() {
        let act = &record.layers[pos];
        if let Some((_, idx)) = &act.pooled {
            g = maxpool2x2_backward(idx, &g)?;
        }
        let activated = match net.spec.layers[pos] {
            LayerSpec::Conv { .. } => true,
            LayerSpec::Dense { activation, .. } => activation,
        };
        if activated {
            g = relu_backward(&act.pre, &g)?;
        }
        let x = record.layer_input(pos);
        match (&net.params[pos], &net.spec.layers[pos]) {
            (LayerParams::Conv(k), LayerSpec::Conv { padding, .. }) => {
                let cg = conv2d_backward_with(
                    exec,
                    x,
                    k,
                    &ConvConfig::with_padding(*padding),
                    &g,
                    pos > 0,
                )?;
                grads[pos] = (cg.weights, cg.bias);
                if let Some(gi) = cg.input {
                    g = gi;
                }
            }
            (LayerParams::Dense(d), _) => {
                let dg = dense_backward_batch(x, d, &g)?;
                grads[pos] = (dg.weights, dg.bias);
                g = dg.input;
            }
            _ => return Err(Error::shape(format!("layer {pos}: params do not match spec"))),
        }
    }
    Ok(grads)
}

/// Mean cross-entropy over `batch` and its parameter gradients.
pub fn loss_and_gradients(
    net: &Network,
    exec: Execution,
    batch: &LabeledBatch,
) -> Result<(f64, Gradients)> {
    let record = net.forward_with(exec, &batch.images)?;
    let (loss, grad) = softmax_cross_entropy_batch(record.logits(), &batch.labels)?;
    let grads = backward(net, exec, &record, grad)?;
    Ok((loss, grads))
}

fn sgd_step(net: &mut Network, grads: &Gradients, lr: f32) {
    for (p, (gw, gb)) in net.params.iter_mut().zip(grads) {
        let (w, b) = p.buffers_mut();
        w.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
        b.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
    }
}

pub fn evaluate(net: &Network, batches: &[LabeledBatch]) -> Result<f64> {
    evaluate_with(Execution::default(), net, batches)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate_with(exec: Execution, net: &Network, batches: &[LabeledBatch]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for b in batches {
        let predicted = net.predict(exec, &b.images)?;
        correct += predicted.iter().zip(&b.labels).filter(|(p, l)| p == l).count();
        total += b.len();
    }
    if total == 0 {
        return Err(Error::InvalidArgument("cannot evaluate on zero samples".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Predictions for a batch, ties broken toward the lowest class.
pub fn predict_logits(logits: &Tensor4) -> Vec<usize> {
    argmax_rows(logits)
}

/// Load `handle` and train; see [`train_dataset`].
pub fn train(spec: &NetworkSpec, handle: &DatasetHandle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let data = Dataset::load(handle)?;
    train_dataset(spec, &data, handle.shuffle_seed, cfg, |_| {})
}

/// Train from a seeded initialization until test accuracy has not improved
/// for `cfg.patience` epochs or `cfg.max_epochs` is reached. Epoch `e` visits
/// the training set in an order drawn from `(shuffle_seed, e)`. The returned
/// checkpoint holds the weights of the best epoch.
pub fn train_dataset(
    spec: &NetworkSpec,
    data: &Dataset,
    shuffle_seed: u64,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let exec = cfg.execution;
    let mut net = Network::init(spec, cfg.seed)?;
    let test_batches = data.test.batches(cfg.batch_size, None)?;
    let lr = cfg.learning_rate as f32;

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let order_seed = stream_seed(shuffle_seed, &[epoch as u64]);
        for (bi, batch) in data.train.iter_batches(cfg.batch_size, Some(order_seed))?.enumerate() {
            let (loss, grads) = loss_and_gradients(&net, exec, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            sgd_step(&mut net, &grads, lr);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let test_accuracy = evaluate_with(exec, &net, &test_batches)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            test_accuracy,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().map_or(true, |(acc, _, _)| test_accuracy > *acc) {
            best = Some((test_accuracy, epoch, net.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    let (test_accuracy, best_epoch, network) = match best {
        Some(b) => b,
        None => (evaluate_with(exec, &net, &test_batches)?, 0, net),
    };
    let meta = TrainingMeta {
        epochs_run: history.len(),
        best_epoch,
        test_accuracy,
        seed: cfg.seed,
        shuffle_seed,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        ..TrainingMeta::untrained(spec, cfg.seed)?
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint { network, meta },
        history,
    })
}

/// `epoch,train_loss,test_accuracy` table.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,test_accuracy\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.test_accuracy));
    }
    out
}
