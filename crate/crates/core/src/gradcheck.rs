//! Central finite-difference verification of analytic gradients.
//!
//! The reference is always `(f(x + h) - f(x - h)) / 2h` computed through a
//! freshly rebuilt graph, so it shares no code path with `backward`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::Model;
use crate::rng::stream_rng;
use crate::tensor::{Graph, Tensor, TensorId};

/// Step used throughout the gradient suite.
pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(1, |a|, |b|)`: relative error with an absolute floor so
/// near-zero gradients compare on an absolute scale.
pub fn relative_error(a: f64, b: f64) -> f64 {
    libm::fabs(a - b) / f64::max(1.0, f64::max(libm::fabs(a), libm::fabs(b)))
}

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Coordinates compared.
    pub checked: usize,
    /// Largest relative error seen.
    pub max_error: f64,
    /// Location of the largest error, for diagnostics.
    pub worst: String,
}

impl GradReport {
    fn observe(&mut self, err: f64, location: impl FnOnce() -> String) {
        if err > self.max_error {
            self.max_error = err;
            self.worst = location();
        }
        self.checked += 1;
    }
}

/// Checks every element of every input of a scalar-valued graph builder.
///
/// `build` receives leaves (with gradients enabled) for `inputs` in order
/// and must return a scalar loss.
pub fn check_loss_fn<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.data(loss)[0])
    };

    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids)?;
    if !g.value(loss).is_scalar() {
        return Err(Error::Usage("gradcheck build must return a scalar".into()));
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| g.grad(id).map(|s| s.to_vec()).unwrap_or_default())
        .collect();

    let mut report = GradReport { checked: 0, max_error: 0.0, worst: String::new() };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let orig = t.data()[e];
            work[ti].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[ti].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[ti].get(e).copied().unwrap_or(0.0);
            report.observe(relative_error(a, fd), || format!("input {ti} element {e}"));
        }
    }
    Ok(report)
}

/// Verifies a model's parameter gradients for a cross-entropy loss on
/// `batch`/`labels`.
///
/// With `coords_per_param = None` every parameter element is checked;
/// otherwise that many coordinates are sampled per parameter tensor (seeded,
/// so runs are reproducible).
pub fn check_model_gradients(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    coords_per_param: Option<usize>,
    seed: u64,
    h: f64,
) -> Result<GradReport> {
    let analytic: BTreeMap<String, Vec<f64>> = {
        let mut m = model.clone();
        let mut g = Graph::new();
        let (logits, binding) = m.forward_train(&mut g, batch)?;
        let loss = g.cross_entropy(logits, labels)?;
        g.backward(loss)?;
        binding
            .into_iter()
            .map(|(name, id)| {
                let grad = g.grad(id).map(|s| s.to_vec()).unwrap_or_default();
                (name, grad)
            })
            .collect()
    };

    let eval = |name: &str, elem: usize, delta: f64| -> Result<f64> {
        let mut m = model.clone();
        m.param_mut(name)
            .ok_or_else(|| Error::Usage(format!("no parameter {name}")))?
            .data_mut()[elem] += delta;
        let mut g = Graph::new();
        let (logits, _) = m.forward_train(&mut g, batch)?;
        let loss = g.cross_entropy(logits, labels)?;
        Ok(g.data(loss)[0])
    };

    let mut rng = stream_rng(seed, 0x4644);
    let mut report = GradReport { checked: 0, max_error: 0.0, worst: String::new() };
    let names: Vec<String> = model.params().keys().cloned().collect();
    for name in &names {
        let numel = model.param(name).expect("listed parameter exists").numel();
        let coords: Vec<usize> = match coords_per_param {
            None => (0..numel).collect(),
            Some(k) => (0..k.min(numel)).map(|_| rng.random_range(0..numel)).collect(),
        };
        let grads = analytic
            .get(name)
            .ok_or_else(|| Error::Usage(format!("no recorded gradient for {name}")))?;
        for &e in &coords {
            let up = eval(name, e, h)?;
            let down = eval(name, e, -h)?;
            let fd = (up - down) / (2.0 * h);
            report.observe(relative_error(grads[e], fd), || format!("{name}[{e}]"));
        }
    }
    Ok(report)
}
