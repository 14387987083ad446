//! Subcommand implementations. Every command is a pure function of its
//! arguments, the config file, the input files, and the seed.

use std::fs;
use std::path::{Path, PathBuf};

use dpnse_core::augment::{augment, image_to_chw, resize_narrow_side, Image};
use dpnse_core::lime::{
    apply_mask, explain_from_perturbations, kernel_weight, render_overlay, sample_masks,
    segment_grid, Explanation, Perturbation,
};
use dpnse_core::metrics::MetricsReport;
use dpnse_core::net::Model;
use dpnse_core::tensor::Tensor;

use crate::config::load_config;
use crate::error::{CliError, Result};
use crate::manifest::DatasetManifest;
use crate::model_file::{load_model, save_model};
use crate::pnm::{read_image, write_pgm, write_ppm};
use crate::synth::generate_dataset;
use crate::train::{evaluate, load_dataset, split_dataset, train_model, SplitIndices};

/// `synth`: write a reproducible synthetic four-class dataset.
pub fn cmd_synth(out_dir: &Path, n_per_class: usize, seed: u64) -> Result<()> {
    let manifest = generate_dataset(out_dir, n_per_class, seed)?;
    println!(
        "wrote {} images and {}",
        4 * n_per_class,
        manifest.display()
    );
    Ok(())
}

/// Which side of the train/holdout split a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    All,
    Train,
    Holdout,
}

impl std::str::FromStr for SplitChoice {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SplitChoice::All),
            "train" => Ok(SplitChoice::Train),
            "holdout" => Ok(SplitChoice::Holdout),
            other => Err(CliError::Input(format!(
                "unknown split `{other}` (expected all, train, or holdout)"
            ))),
        }
    }
}

fn select_indices(split: SplitChoice, parts: &SplitIndices, n: usize) -> Vec<usize> {
    match split {
        SplitChoice::All => (0..n).collect(),
        SplitChoice::Train => parts.train.clone(),
        SplitChoice::Holdout => parts.holdout.clone(),
    }
}

/// `train`: fit a model on the manifest's training split, emit the per-epoch
/// CSV log, and serialize the final model.
pub fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    manifest_path: &Path,
    out_model: &Path,
    log_path: Option<&Path>,
) -> Result<()> {
    let run = load_config(config_path, seed)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let data = load_dataset(&manifest)?;
    let parts = split_dataset(data.images.len(), run.train.holdout_fraction, run.train.seed);

    let (model, outcome) = train_model(&run, &data, &parts.train)?;
    save_model(&model, out_model)?;
    match log_path {
        Some(p) => fs::write(p, &outcome.csv).map_err(CliError::io(p))?,
        None => print!("{}", outcome.csv),
    }
    println!(
        "trained {} epochs ({}), final train accuracy {:.4}; model written to {}",
        outcome.epochs_run,
        if outcome.early_stopped { "early stop" } else { "epochs exhausted" },
        outcome.final_train_acc,
        out_model.display()
    );
    Ok(())
}

fn report_json(report: &MetricsReport) -> serde_json::Value {
    let classes = report.confusion.num_classes();
    let matrix: Vec<Vec<u64>> = (0..classes)
        .map(|t| (0..classes).map(|p| report.confusion.count(t, p)).collect())
        .collect();
    serde_json::json!({
        "class_names": report.confusion.class_names(),
        "confusion": matrix,
        "per_class": report.per_class.iter().map(|c| serde_json::json!({
            "class": c.class,
            "precision": c.precision,
            "recall": c.recall,
            "f1": c.f1,
            "degenerate": c.degenerate,
        })).collect::<Vec<_>>(),
        "overall_accuracy": report.overall_accuracy,
        "positive_class": report.positive_class,
    })
}

/// `eval`: metric table on stdout, optional JSON report on disk. The split
/// is reconstructed from the config seed, so it matches the training run's.
pub fn cmd_eval(
    config_path: &Path,
    seed: Option<u64>,
    model_path: &Path,
    manifest_path: &Path,
    split: SplitChoice,
    out_json: Option<&Path>,
) -> Result<()> {
    let run = load_config(config_path, seed)?;
    let model = load_model(model_path)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let data = load_dataset(&manifest)?;
    let parts = split_dataset(data.images.len(), run.train.holdout_fraction, run.train.seed);
    let idx = select_indices(split, &parts, data.images.len());
    if idx.is_empty() {
        return Err(CliError::Input("selected split is empty".into()));
    }
    let report = evaluate(&model, &data, &idx, run.train.batch_size)?;
    print!("{}", report.text_table());
    if let Some(path) = out_json {
        let json = serde_json::to_string_pretty(&report_json(&report)).expect("report serializes");
        fs::write(path, json).map_err(CliError::io(path))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

/// Center-deterministic preprocessing: match the model's channel count,
/// resize the narrow side to the input size, crop centrally.
pub fn preprocess_for_model(img: &Image, model: &Model) -> Result<Image> {
    let cfg = model.config();
    let img = match (img.channels(), cfg.input_channels) {
        (a, b) if a == b => img.clone(),
        (_, 1) => img.to_grayscale(),
        (_, 3) => img.to_rgb(),
        (_, other) => {
            return Err(CliError::Config(format!(
                "model expects {other} channels; images carry 1 or 3"
            )))
        }
    };
    let size = cfg.input_size;
    let resized = resize_narrow_side(&img, size)?;
    let top = (resized.height() - size) / 2;
    let left = (resized.width() - size) / 2;
    let mut out = Image::zeros(size, size, resized.channels());
    for r in 0..size {
        for c in 0..size {
            for ch in 0..resized.channels() {
                out.set(r, c, ch, resized.get(top + r, left + c, ch));
            }
        }
    }
    Ok(out)
}

fn single_image_batch(img: &Image) -> Tensor {
    let chw = image_to_chw(img);
    let mut shape = vec![1];
    shape.extend_from_slice(chw.shape());
    Tensor::new(shape, chw.into_data()).expect("shape matches buffer")
}

/// Class probabilities for one image.
fn predict_one(model: &Model, img: &Image) -> Result<Vec<f64>> {
    let probs = model.predict(&single_image_batch(img))?;
    Ok(probs.data().to_vec())
}

/// Evaluates the model on every masked image, optionally across threads.
/// Masks and weights are generated up front, so the result is identical
/// regardless of evaluation order.
fn evaluate_perturbations(
    model: &Model,
    img: &Image,
    spmap: &dpnse_core::lime::SuperpixelMap,
    masks: Vec<Vec<u8>>,
    sigma: f64,
    jobs: usize,
) -> Result<Vec<Perturbation>> {
    let n = masks.len();
    let mut predictions: Vec<Vec<f64>> = vec![Vec::new(); n];
    if jobs <= 1 {
        for (mask, slot) in masks.iter().zip(predictions.iter_mut()) {
            let perturbed = apply_mask(img, spmap, mask)?;
            *slot = predict_one(model, &perturbed)?;
        }
    } else {
        let chunk = n.div_ceil(jobs);
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for (mask_chunk, pred_chunk) in masks.chunks(chunk).zip(predictions.chunks_mut(chunk)) {
                handles.push(scope.spawn(move || -> Result<()> {
                    for (mask, slot) in mask_chunk.iter().zip(pred_chunk.iter_mut()) {
                        let perturbed = apply_mask(img, spmap, mask)?;
                        *slot = predict_one(model, &perturbed)?;
                    }
                    Ok(())
                }));
            }
            for h in handles {
                h.join().expect("worker thread does not panic")?;
            }
            Ok(())
        })?;
    }
    Ok(masks
        .into_iter()
        .zip(predictions)
        .map(|(mask, prediction)| {
            let weight = kernel_weight(&mask, sigma);
            Perturbation { mask, prediction, weight }
        })
        .collect())
}

fn explanation_json(expl: &Explanation) -> serde_json::Value {
    serde_json::json!({
        "class": expl.target_class,
        "intercept": expl.intercept,
        "coefficients": expl.coefficients,
        "top_k": expl.top_k,
        "r2": expl.fit_r2,
        "degenerate": expl.degenerate,
    })
}

/// `explain`: LIME overlay (PPM) plus coefficient JSON for one image.
#[allow(clippy::too_many_arguments)]
pub fn cmd_explain(
    config_path: &Path,
    seed: Option<u64>,
    model_path: &Path,
    image_path: &Path,
    class: Option<usize>,
    out_prefix: &Path,
    jobs: usize,
) -> Result<()> {
    let run = load_config(config_path, seed)?;
    let model = load_model(model_path)?;
    let raw = read_image(image_path)?;
    let img = preprocess_for_model(&raw, &model)?;

    let probs = predict_one(&model, &img)?;
    let target = match class {
        Some(c) if c >= probs.len() => {
            return Err(CliError::Input(format!(
                "class {c} out of range [0, {})",
                probs.len()
            )))
        }
        Some(c) => c,
        None => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best
        }
    };

    let spmap = segment_grid(img.height(), img.width(), run.lime.grid)?;
    let masks = sample_masks(spmap.segments(), run.lime.n_samples, run.lime.seed);
    let perturbations =
        evaluate_perturbations(&model, &img, &spmap, masks, run.lime.sigma, jobs)?;
    let expl = explain_from_perturbations(&perturbations, target, &run.lime)?;

    let overlay = render_overlay(&img, &spmap, &expl)?;
    let ppm_path = out_prefix.with_extension("ppm");
    let json_path = out_prefix.with_extension("json");
    write_ppm(&ppm_path, &overlay)?;
    let json = serde_json::to_string_pretty(&explanation_json(&expl)).expect("explanation serializes");
    fs::write(&json_path, json).map_err(CliError::io(&json_path))?;

    println!(
        "explained class {target} (p = {:.4}); fit R^2 {:.4}{}",
        probs[target],
        expl.fit_r2,
        if expl.degenerate { " [degenerate: constant predictions]" } else { "" }
    );
    for &seg in &expl.top_k {
        println!("segment {seg:>3}: coefficient {:+.5}", expl.coefficients[seg]);
    }
    println!("overlay written to {}", ppm_path.display());
    println!("coefficients written to {}", json_path.display());
    Ok(())
}

/// `augment-preview`: draw `n` augmented variants of one image.
pub fn cmd_augment_preview(
    config_path: &Path,
    seed: Option<u64>,
    image_path: &Path,
    n: usize,
    out_dir: &Path,
    jobs: usize,
) -> Result<()> {
    let run = load_config(config_path, seed)?;
    let img = read_image(image_path)?;
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;

    let write_one = |counter: u64| -> Result<PathBuf> {
        let out = augment(&img, &run.augment, counter)?;
        let path = out_dir.join(format!("aug_{counter:04}.pgm"));
        write_pgm(&path, &out)?;
        Ok(path)
    };

    if jobs <= 1 {
        for counter in 0..n as u64 {
            write_one(counter)?;
        }
    } else {
        let counters: Vec<u64> = (0..n as u64).collect();
        let chunk = n.div_ceil(jobs);
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for counter_chunk in counters.chunks(chunk) {
                handles.push(scope.spawn(move || -> Result<()> {
                    for &counter in counter_chunk {
                        write_one(counter)?;
                    }
                    Ok(())
                }));
            }
            for h in handles {
                h.join().expect("worker thread does not panic")?;
            }
            Ok(())
        })?;
    }
    println!(
        "wrote {n} augmented images ({0}x{0}) to {1}",
        run.augment.target,
        out_dir.display()
    );
    Ok(())
}
