//! Model files: the `DPNSE01` named-tensor binary carrying the
//! architecture (as `meta.*` scalar records), every parameter
//! (`param.<name>`), and the batch-norm running statistics
//! (`bn.<name>.mean` / `.var`). A file is self-contained: loading
//! reconstructs the configuration and validates every shape against it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dpnse_core::net::{DpnSeConfig, Model, StageConfig};
use dpnse_core::serialize::{decode_tensors, encode_tensors};
use dpnse_core::tensor::{BnStats, Tensor};

use crate::error::{CliError, Result};

fn meta(name: &str, value: f64) -> (String, Tensor) {
    (format!("meta.{name}"), Tensor::scalar(value))
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let cfg = model.config();
    let mut entries: Vec<(String, Tensor)> = vec![
        meta("version", 1.0),
        meta("input_channels", cfg.input_channels as f64),
        meta("input_size", cfg.input_size as f64),
        meta("stem_channels", cfg.stem_channels as f64),
        meta("num_classes", cfg.num_classes as f64),
        meta("se_enabled", f64::from(cfg.se_enabled)),
        meta("se_reduction", cfg.se_reduction as f64),
        meta("batch_norm", f64::from(cfg.batch_norm)),
        meta("bn_eps", cfg.bn_eps),
        meta("bn_momentum", cfg.bn_momentum),
    ];
    for (i, st) in cfg.stages.iter().enumerate() {
        entries.push(meta(&format!("stage{i}.substages"), st.substages as f64));
        entries.push(meta(&format!("stage{i}.residual_width"), st.residual_width as f64));
        entries.push(meta(&format!("stage{i}.dense_increment"), st.dense_increment as f64));
        entries.push(meta(&format!("stage{i}.bottleneck_width"), st.bottleneck_width as f64));
        entries.push(meta(&format!("stage{i}.stride"), st.stride as f64));
    }
    for (name, tensor) in model.params() {
        entries.push((format!("param.{name}"), tensor.clone()));
    }
    for (name, stats) in model.bn_stats() {
        entries.push((
            format!("bn.{name}.mean"),
            Tensor::new(vec![stats.mean.len()], stats.mean.clone()).expect("stats are 1-D"),
        ));
        entries.push((
            format!("bn.{name}.var"),
            Tensor::new(vec![stats.var.len()], stats.var.clone()).expect("stats are 1-D"),
        ));
    }
    fs::write(path, encode_tensors(&entries)).map_err(CliError::io(path))
}

struct MetaReader {
    values: BTreeMap<String, f64>,
}

impl MetaReader {
    fn f64(&self, name: &str) -> Result<f64> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| CliError::Input(format!("model file is missing meta.{name}")))
    }

    fn usize(&self, name: &str) -> Result<usize> {
        let v = self.f64(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(CliError::Input(format!("meta.{name} = {v} is not a small integer")));
        }
        Ok(v as usize)
    }

    fn bool(&self, name: &str) -> Result<bool> {
        Ok(self.f64(name)? != 0.0)
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let records = decode_tensors(&bytes)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;

    let mut metas = BTreeMap::new();
    let mut params = BTreeMap::new();
    let mut bn_parts: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, tensor) in records {
        if let Some(rest) = name.strip_prefix("meta.") {
            if !tensor.is_scalar() {
                return Err(CliError::Input(format!("meta record {rest} is not scalar")));
            }
            metas.insert(rest.to_string(), tensor.data()[0]);
        } else if let Some(rest) = name.strip_prefix("param.") {
            params.insert(rest.to_string(), tensor);
        } else if let Some(rest) = name.strip_prefix("bn.") {
            bn_parts.insert(rest.to_string(), tensor.into_data());
        } else {
            return Err(CliError::Input(format!("unrecognized record `{name}` in model file")));
        }
    }

    let meta = MetaReader { values: metas };
    if meta.usize("version")? != 1 {
        return Err(CliError::Input("unsupported model file version".into()));
    }
    let mut stages = Vec::with_capacity(4);
    for i in 0..4 {
        stages.push(StageConfig {
            substages: meta.usize(&format!("stage{i}.substages"))?,
            residual_width: meta.usize(&format!("stage{i}.residual_width"))?,
            dense_increment: meta.usize(&format!("stage{i}.dense_increment"))?,
            bottleneck_width: meta.usize(&format!("stage{i}.bottleneck_width"))?,
            stride: meta.usize(&format!("stage{i}.stride"))?,
        });
    }
    let cfg = DpnSeConfig {
        input_channels: meta.usize("input_channels")?,
        input_size: meta.usize("input_size")?,
        stem_channels: meta.usize("stem_channels")?,
        stages,
        se_enabled: meta.bool("se_enabled")?,
        se_reduction: meta.usize("se_reduction")?,
        num_classes: meta.usize("num_classes")?,
        batch_norm: meta.bool("batch_norm")?,
        bn_eps: meta.f64("bn_eps")?,
        bn_momentum: meta.f64("bn_momentum")?,
    };

    let mut bn = BTreeMap::new();
    for (key, mean) in bn_parts.iter().filter(|(k, _)| k.ends_with(".mean")) {
        let base = key.trim_end_matches(".mean").to_string();
        let var = bn_parts
            .get(&format!("{base}.var"))
            .ok_or_else(|| CliError::Input(format!("model file is missing bn.{base}.var")))?;
        bn.insert(base, BnStats { mean: mean.clone(), var: var.clone() });
    }

    Model::from_parts(cfg, params, bn).map_err(Into::into)
}
