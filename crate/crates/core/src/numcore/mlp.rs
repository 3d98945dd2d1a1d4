use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, Matrix, Vec64};
use super::params::{GradVector, LayerShape, ParamLayout, ParamVector};
use crate::error::{ProfsError, Result};

/// Output norms below this are treated as direction-less.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the activation output.
    /// ReLU uses 0 at the kink.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}` (expected relu or tanh)")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Architecture of the embedding function: hidden layers use `activation`,
/// the final (head) layer is linear, optionally followed by L2 normalization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    pub normalize_output: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, embed_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            embed_dim,
            activation: Activation::Relu,
            normalize_output: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(ProfsError::Validation(
                "MLP dimensions must all be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.embed_dim);
        dims.windows(2)
            .map(|w| LayerShape {
                inputs: w[0],
                outputs: w[1],
            })
            .collect()
    }

    pub fn layout(&self, extra: usize) -> Result<ParamLayout> {
        self.validate()?;
        ParamLayout::new(self.layer_shapes(), extra)
    }

    /// Scaled-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases, and `extra_init` appended as the extra scalars.
    pub fn init<R: Rng + ?Sized>(&self, extra_init: &[f64], rng: &mut R) -> Result<ParamVector> {
        let layout = self.layout(extra_init.len())?;
        let mut params = ParamVector::zeros(layout);
        for (l, shape) in self.layer_shapes().iter().enumerate() {
            let s = (6.0 / (shape.inputs + shape.outputs) as f64).sqrt();
            for w in params.weight_mut(l) {
                *w = rng.random_range(-s..=s);
            }
        }
        params.extra_mut().copy_from_slice(extra_init);
        Ok(params)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout().layers() != self.layer_shapes().as_slice() {
            return Err(ProfsError::ShapeMismatch(
                "parameters do not match the MLP architecture".into(),
            ));
        }
        Ok(())
    }

    /// Embeds a single sample.
    pub fn embed(&self, params: &ParamVector, x: &[f64]) -> Result<Vec64> {
        let input = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let pass = self.forward(params, &input)?;
        Vec64::new(pass.output.row(0).to_vec())
    }

    /// Embeds every row of `inputs`.
    pub fn embed_batch(&self, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward(params, inputs)?.output)
    }

    /// Forward pass over a batch, keeping what the backward pass needs.
    pub fn forward(&self, params: &ParamVector, inputs: &Matrix) -> Result<ForwardPass> {
        self.check_params(params)?;
        if inputs.cols() != self.input_dim {
            return Err(ProfsError::DimensionMismatch {
                expected: self.input_dim,
                actual: inputs.cols(),
            });
        }
        let shapes = self.layer_shapes();
        let n = inputs.rows();
        let last = shapes.len() - 1;
        let mut pre = Vec::with_capacity(shapes.len());
        let mut acts = Vec::with_capacity(shapes.len() + 1);
        acts.push(inputs.clone());
        for (l, shape) in shapes.iter().enumerate() {
            let w = params.weight(l);
            let b = params.bias(l);
            let x = &acts[l];
            let mut z = Matrix::zeros(n, shape.outputs);
            for r in 0..n {
                let xr = x.row(r);
                let zr = z.row_mut(r);
                for (o, zo) in zr.iter_mut().enumerate() {
                    *zo = b[o] + dot(&w[o * shape.inputs..(o + 1) * shape.inputs], xr);
                }
            }
            let a = if l == last {
                z.clone()
            } else {
                let mut a = z.clone();
                a.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = self.activation.apply(*v));
                a
            };
            pre.push(z);
            acts.push(a);
        }
        let raw = acts.last().expect("at least one layer").clone();
        let mut norms = Vec::new();
        let output = if self.normalize_output {
            let mut out = raw.clone();
            for r in 0..n {
                let row = out.row_mut(r);
                let nr = norm(row);
                if nr < DEGENERATE_NORM {
                    return Err(ProfsError::DegenerateEmbedding);
                }
                row.iter_mut().for_each(|v| *v /= nr);
                norms.push(nr);
            }
            out
        } else {
            raw
        };
        if output.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(ProfsError::NonFinite("embedding".into()));
        }
        Ok(ForwardPass {
            pre,
            acts,
            norms,
            output,
        })
    }

    /// Reverse pass: accumulates ∂loss/∂θ into `grad` given ∂loss/∂output.
    pub fn backward(
        &self,
        params: &ParamVector,
        pass: &ForwardPass,
        grad_output: &Matrix,
        grad: &mut GradVector,
    ) -> Result<()> {
        params.check_same_shape(grad)?;
        let n = pass.output.rows();
        if grad_output.rows() != n || grad_output.cols() != self.embed_dim {
            return Err(ProfsError::DimensionMismatch {
                expected: n * self.embed_dim,
                actual: grad_output.rows() * grad_output.cols(),
            });
        }
        // ∂/∂raw of raw/‖raw‖ is (I − e eᵀ)/‖raw‖.
        let mut g = grad_output.clone();
        if self.normalize_output {
            for r in 0..n {
                let e = pass.output.row(r);
                let gr = g.row_mut(r);
                let proj = dot(e, gr);
                let nr = pass.norms[r];
                for (gv, ev) in gr.iter_mut().zip(e) {
                    *gv = (*gv - ev * proj) / nr;
                }
            }
        }
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        for l in (0..shapes.len()).rev() {
            let shape = shapes[l];
            if l != last {
                let z = &pass.pre[l];
                let a = &pass.acts[l + 1];
                for ((gv, zv), av) in g.as_mut_slice().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
                    *gv *= self.activation.derivative(*zv, *av);
                }
            }
            let x = &pass.acts[l];
            {
                let gw = grad.weight_mut(l);
                for r in 0..n {
                    let xr = x.row(r);
                    for (o, &d) in g.row(r).iter().enumerate() {
                        if d != 0.0 {
                            for (gwv, xv) in gw[o * shape.inputs..(o + 1) * shape.inputs].iter_mut().zip(xr) {
                                *gwv += d * xv;
                            }
                        }
                    }
                }
            }
            {
                let gb = grad.bias_mut(l);
                for r in 0..n {
                    for (gbv, d) in gb.iter_mut().zip(g.row(r)) {
                        *gbv += d;
                    }
                }
            }
            if l > 0 {
                let w = params.weight(l);
                let mut prev = Matrix::zeros(n, shape.inputs);
                for r in 0..n {
                    let pr = prev.row_mut(r);
                    for (o, &d) in g.row(r).iter().enumerate() {
                        if d != 0.0 {
                            for (pv, wv) in pr.iter_mut().zip(&w[o * shape.inputs..(o + 1) * shape.inputs]) {
                                *pv += d * wv;
                            }
                        }
                    }
                }
                g = prev;
            }
        }
        Ok(())
    }
}

/// Intermediate values of one batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pre: Vec<Matrix>,
    acts: Vec<Matrix>,
    norms: Vec<f64>,
    pub output: Matrix,
}

impl ForwardPass {
    /// Smallest |pre-activation| over hidden units; distance to the nearest ReLU kink.
    pub fn min_hidden_preactivation(&self) -> f64 {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Mutable gradient sinks handed to an [`Objective`].
pub struct Grads<'a> {
    pub embeddings: &'a mut Matrix,
    pub params: &'a mut GradVector,
}

/// A scalar loss over a fixed batch, as a function of the batch embeddings and
/// (optionally directly) of θ.
pub trait Objective {
    /// Loss value. When `grads` is given, adds ∂loss/∂embedding and any direct
    /// ∂loss/∂θ into the sinks.
    fn evaluate(&self, embeddings: &Matrix, params: &ParamVector, grads: Option<Grads<'_>>) -> Result<f64>;
}

/// Loss value without gradients.
pub fn objective_value(
    objective: &dyn Objective,
    spec: &MlpSpec,
    params: &ParamVector,
    inputs: &Matrix,
) -> Result<f64> {
    let pass = spec.forward(params, inputs)?;
    let v = objective.evaluate(&pass.output, params, None)?;
    if !v.is_finite() {
        return Err(ProfsError::NonFinite("loss".into()));
    }
    Ok(v)
}

/// Loss value and its exact reverse-mode gradient with respect to θ.
pub fn gradient(
    objective: &dyn Objective,
    spec: &MlpSpec,
    params: &ParamVector,
    inputs: &Matrix,
) -> Result<(f64, GradVector)> {
    let pass = spec.forward(params, inputs)?;
    gradient_from_pass(objective, spec, params, &pass)
}

/// Same as [`gradient`] but reuses an existing forward pass.
pub fn gradient_from_pass(
    objective: &dyn Objective,
    spec: &MlpSpec,
    params: &ParamVector,
    pass: &ForwardPass,
) -> Result<(f64, GradVector)> {
    let mut grad = ParamVector::zeros(params.layout().clone());
    let mut grad_emb = Matrix::zeros(pass.output.rows(), pass.output.cols());
    let value = objective.evaluate(
        &pass.output,
        params,
        Some(Grads {
            embeddings: &mut grad_emb,
            params: &mut grad,
        }),
    )?;
    if !value.is_finite() {
        return Err(ProfsError::NonFinite("loss".into()));
    }
    spec.backward(params, pass, &grad_emb, &mut grad)?;
    if !grad.is_finite() {
        return Err(ProfsError::NonFinite("gradient".into()));
    }
    Ok((value, grad))
}
