//! Dataset loading, deterministic splits, the training loop, and
//! evaluation into metric reports.

use std::collections::BTreeMap;

use dpnse_core::augment::{augment, image_to_chw, Image};
use dpnse_core::metrics::{ConfusionMatrix, MetricsReport};
use dpnse_core::net::Model;
use dpnse_core::optim::OptimState;
use dpnse_core::rng::{stream_rng, STREAM_EPOCH, STREAM_SPLIT};
use dpnse_core::tensor::{Graph, Tensor};
use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{DatasetManifest, CLASS_NAMES};
use crate::pnm::read_image;

/// Images and labels loaded from a manifest, in manifest order.
pub struct LoadedDataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

pub fn load_dataset(manifest: &DatasetManifest) -> Result<LoadedDataset> {
    let mut images = Vec::with_capacity(manifest.len());
    let mut labels = Vec::with_capacity(manifest.len());
    for entry in manifest.entries() {
        images.push(read_image(&manifest.image_path(entry))?);
        labels.push(entry.label);
    }
    Ok(LoadedDataset { images, labels })
}

/// Train/holdout index split: a seeded shuffle of `0..n`, with the first
/// `round(n * (1 - holdout_fraction))` indices training.
#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

pub fn split_dataset(n: usize, holdout_fraction: f64, seed: u64) -> SplitIndices {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut stream_rng(seed, STREAM_SPLIT));
    let train_len = ((n as f64) * (1.0 - holdout_fraction)).round() as usize;
    let train_len = train_len.clamp(if n > 0 { 1 } else { 0 }, n);
    let holdout = indices.split_off(train_len);
    SplitIndices { train: indices, holdout }
}

/// Stacks per-image `[c,h,w]` tensors into one `[len(idx),c,h,w]` batch.
pub fn stack_batch(tensors: &[Tensor], idx: &[usize]) -> Tensor {
    let first = &tensors[idx[0]];
    let (c, h, w) = (first.dim(0), first.dim(1), first.dim(2));
    let mut data = Vec::with_capacity(idx.len() * c * h * w);
    for &i in idx {
        data.extend_from_slice(tensors[i].data());
    }
    Tensor::new(vec![idx.len(), c, h, w], data).expect("per-image shapes agree")
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-epoch training log plus final state.
pub struct TrainOutcome {
    /// CSV with `epoch,loss,acc` header and one row per completed epoch.
    pub csv: String,
    pub final_train_acc: f64,
    pub epochs_run: usize,
    pub early_stopped: bool,
}

/// Trains a fresh model on `train_idx`, deterministically in the config
/// seed. Returns the model and the training log.
pub fn train_model(
    run: &RunConfig,
    data: &LoadedDataset,
    train_idx: &[usize],
) -> Result<(Model, TrainOutcome)> {
    let seed = run.train.seed;
    let mut model = Model::new(run.model.clone(), seed)?;
    let mut optim = OptimState::new(run.train.learning_rate, run.train.momentum)?;

    // Raw image tensors; augmented variants are drawn per epoch.
    let raw: Vec<Tensor> = data.images.iter().map(image_to_chw).collect();

    let mut csv = String::from("epoch,loss,acc\n");
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut final_acc = 0.0;
    let mut epochs_run = 0;
    let mut early_stopped = false;

    for epoch in 0..run.train.epochs {
        order.shuffle(&mut stream_rng(seed, STREAM_EPOCH + epoch as u64));

        let epoch_tensors: Vec<Tensor>;
        let tensors: &[Tensor] = if run.train.augment {
            epoch_tensors = data
                .images
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    let counter = ((epoch as u64) << 32) | i as u64;
                    augment(img, &run.augment, counter).map(|a| image_to_chw(&a))
                })
                .collect::<dpnse_core::Result<_>>()?;
            &epoch_tensors
        } else {
            &raw
        };

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(run.train.batch_size) {
            let batch = stack_batch(tensors, chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let mut g = Graph::new();
            let (logits, binding) = model.forward_train(&mut g, &batch)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let loss_value = g.data(loss)[0];
            if !loss_value.is_finite() {
                return Err(CliError::Numeric(format!(
                    "loss became non-finite at epoch {epoch}; try lowering train.learning_rate"
                )));
            }
            for (row, &lbl) in g.data(logits).chunks_exact(run.model.num_classes).zip(&labels) {
                if argmax(row) == lbl {
                    correct += 1;
                }
            }
            g.backward(loss)?;
            let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (name, id) in &binding {
                let grad = g.grad(*id).ok_or_else(|| {
                    CliError::Config(format!("parameter {name} received no gradient"))
                })?;
                grads.insert(name.clone(), grad.to_vec());
            }
            optim.step(model.params_mut().iter_mut(), &grads)?;
            loss_sum += loss_value * chunk.len() as f64;
        }

        let n = order.len() as f64;
        let epoch_loss = loss_sum / n;
        let epoch_acc = correct as f64 / n;
        csv.push_str(&format!("{epoch},{epoch_loss:.6},{epoch_acc:.6}\n"));
        final_acc = epoch_acc;
        epochs_run = epoch + 1;
        if let Some(threshold) = run.train.early_stop_acc {
            if epoch_acc >= threshold {
                early_stopped = true;
                break;
            }
        }
    }

    Ok((model, TrainOutcome { csv, final_train_acc: final_acc, epochs_run, early_stopped }))
}

/// Predicted class per selected index, batched through inference mode.
pub fn predict_labels(
    model: &Model,
    data: &LoadedDataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let tensors: Vec<Tensor> = idx.iter().map(|&i| image_to_chw(&data.images[i])).collect();
    let all: Vec<usize> = (0..tensors.len()).collect();
    let classes = model.config().num_classes;
    let mut preds = Vec::with_capacity(idx.len());
    for chunk in all.chunks(batch_size.max(1)) {
        let batch = stack_batch(&tensors, chunk);
        let probs = model.predict(&batch)?;
        for row in probs.data().chunks_exact(classes) {
            preds.push(argmax(row));
        }
    }
    Ok(preds)
}

/// Confusion matrix and metric report over the selected indices, with
/// COVID-19 (class 0) as the designated positive class.
pub fn evaluate(
    model: &Model,
    data: &LoadedDataset,
    idx: &[usize],
    batch_size: usize,
) -> Result<MetricsReport> {
    if model.config().num_classes != CLASS_NAMES.len() {
        return Err(CliError::Config(format!(
            "model has {} classes but the dataset defines {}",
            model.config().num_classes,
            CLASS_NAMES.len()
        )));
    }
    let preds = predict_labels(model, data, idx, batch_size)?;
    let truth: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    let cm = ConfusionMatrix::from_labels(&truth, &preds, CLASS_NAMES.len())?
        .with_class_names(CLASS_NAMES.iter().map(|s| s.to_string()).collect())?;
    MetricsReport::from_confusion(cm, 0).map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_partitions() {
        let a = split_dataset(100, 0.2, 9);
        let b = split_dataset(100, 0.2, 9);
        assert_eq!(a.train, b.train);
        assert_eq!(a.holdout, b.holdout);
        assert_eq!(a.train.len(), 80);
        assert_eq!(a.holdout.len(), 20);
        let mut all: Vec<usize> = a.train.iter().chain(&a.holdout).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let c = split_dataset(100, 0.2, 10);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_always_keeps_a_training_sample() {
        let s = split_dataset(3, 0.9, 1);
        assert!(!s.train.is_empty());
    }
}
