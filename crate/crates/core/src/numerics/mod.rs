//! Tensor arithmetic, reverse-mode differentiation, parameters, Adam, and
//! checkpoint serialization.

mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use graph::{Graph, Var};
pub use params::{AdamConfig, Gradients, ParamEntry, ParamStore};
pub use tensor::{matmul, matmul_at, matmul_bt, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter name {0:?}")]
    UnknownParam(String),
    #[error("training diverged: non-finite loss (first non-finite op: {op})")]
    NonFiniteLoss { op: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// A differentiable scalar program: given a fresh graph and the current
/// parameters, record ops and return the loss node. Pure in the parameters,
/// so it can be replayed for finite differencing.
pub trait LossProgram {
    fn build(&self, g: &mut Graph, params: &ParamStore) -> Var;
}

impl<F: Fn(&mut Graph, &ParamStore) -> Var> LossProgram for F {
    fn build(&self, g: &mut Graph, params: &ParamStore) -> Var {
        self(g, params)
    }
}

/// Run the program forward, then backward. Returns the loss value and
/// gradients for trainable parameters; frozen parameters are excluded even
/// when the program wires them into the graph.
pub fn forward_backward(
    program: &dyn LossProgram,
    params: &ParamStore,
) -> Result<(f64, Gradients), NumericsError> {
    let mut g = Graph::new();
    let loss = program.build(&mut g, params);
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    grads.retain(|name, _| params.get(name).map(|e| e.trainable).unwrap_or(false));
    Ok((value, grads))
}

/// Forward evaluation only.
pub fn forward(program: &dyn LossProgram, params: &ParamStore) -> f64 {
    let mut g = Graph::new();
    let loss = program.build(&mut g, params);
    g.value(loss).item()
}

/// Compare analytic gradients against central finite differences.
///
/// Perturbs up to `max_per_param` scalars of every trainable parameter
/// (evenly strided through the buffer) and returns
/// `max |analytic - numeric| / max(1e-8, |numeric|)`. Returns 0 when there
/// is nothing trainable to check.
pub fn gradient_check(
    program: &dyn LossProgram,
    params: &ParamStore,
    epsilon: f64,
    max_per_param: usize,
) -> Result<f64, NumericsError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, grads) = forward_backward(program, params)?;
    if grads.is_empty() {
        return Ok(0.0);
    }

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = grads.keys().cloned().collect();
    for name in names {
        let len = params.value(&name).len();
        let count = len.min(max_per_param.max(1));
        let stride = (len / count).max(1);
        for slot in 0..count {
            let i = (slot * stride).min(len - 1);
            let original = params.value(&name).data()[i];

            let mut t = probe.value(&name).clone();
            t.data_mut()[i] = original + epsilon;
            probe.set_value(&name, t);
            let plus = forward(program, &probe);

            let mut t = probe.value(&name).clone();
            t.data_mut()[i] = original - epsilon;
            probe.set_value(&name, t);
            let minus = forward(program, &probe);

            let mut t = probe.value(&name).clone();
            t.data_mut()[i] = original;
            probe.set_value(&name, t);

            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads[&name].data()[i];
            let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
