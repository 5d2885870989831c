//! Feed-forward architecture, activations, losses, and the two passes that
//! everything else builds on: the forward pass recorded as a full state set,
//! and the adjoint pass that propagates loss derivatives back through the
//! bias-stripped transposes.
//!
//! Layer convention: weights carry the bias as an extra final column, and a
//! constant 1 is appended to every activation vector that feeds a next layer.
//! The prediction (top-layer activation) carries no appended 1.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{outer, xavier_init, Matrix, Rng, Vector};

/// Loss-input clamp for the cross-entropy logarithms.
pub const BCE_CLAMP: f64 = 1e-12;

/// Layer sizes `[n_input, hidden..., n_output]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    sizes: Vec<usize>,
}

impl Architecture {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config {
                detail: format!("architecture needs >= 2 positive layer sizes, got {sizes:?}"),
            });
        }
        Ok(Architecture { sizes })
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Size of layer `l`, with `l = 0` the input layer.
    pub fn size(&self, l: usize) -> usize {
        self.sizes[l]
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Shape of the layer-`l` weight matrix (1-based): rows x cols with the
    /// bias column included in cols.
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        (self.sizes[l], self.sizes[l - 1] + 1)
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config {
                detail: format!("bad architecture {s:?}: {e}"),
            })?;
        Architecture::new(sizes)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.sizes.iter().map(|n| n.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Pointwise activation applied at every layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Sigmoid,
    Identity,
    Relu,
}

impl ActivationKind {
    pub fn apply_scalar(&self, y: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-y).exp()),
            ActivationKind::Identity => y,
            ActivationKind::Relu => y.max(0.0),
        }
    }

    /// Analytic derivative at `y`; for relu the derivative at 0 is taken as 0.
    pub fn derivative_scalar(&self, y: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => {
                let s = 1.0 / (1.0 + (-y).exp());
                s * (1.0 - s)
            }
            ActivationKind::Identity => 1.0,
            ActivationKind::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn apply(&self, y: &Vector) -> Vector {
        Vector::new(y.iter().map(|&v| self.apply_scalar(v)).collect())
    }

    pub fn derivative(&self, y: &Vector) -> Vector {
        Vector::new(y.iter().map(|&v| self.derivative_scalar(v)).collect())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "identity" => Ok(ActivationKind::Identity),
            "relu" => Ok(ActivationKind::Relu),
            _ => Err(Error::Config {
                detail: format!("unknown activation {s:?}"),
            }),
        }
    }
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Identity => "identity",
            ActivationKind::Relu => "relu",
        })
    }
}

/// Scalar loss over the prediction vector.
///
/// `Bce` is the summed binary cross-entropy over all output units (targets
/// are one-hot vectors, outputs elementwise sigmoids); `Mse` is half the
/// squared error, kept around for hand-checkable gradient fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Mse,
}

impl LossKind {
    /// Returns the scalar loss and its derivative with respect to the
    /// prediction (the adjoint seed). For `Bce` the prediction is clamped
    /// to [BCE_CLAMP, 1 - BCE_CLAMP] before the logarithms.
    pub fn loss_and_output_adjoint(
        &self,
        prediction: &Vector,
        target: &Vector,
    ) -> Result<(f64, Vector)> {
        if prediction.len() != target.len() {
            return Err(Error::Shape {
                op: "loss_and_output_adjoint",
                detail: format!("prediction {} vs target {}", prediction.len(), target.len()),
            });
        }
        match self {
            LossKind::Bce => {
                let mut j = 0.0;
                let mut adjoint = Vec::with_capacity(prediction.len());
                for (&p, &y) in prediction.iter().zip(target.iter()) {
                    debug_assert!((0.0..=1.0).contains(&y), "bce target outside [0,1]");
                    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    j -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                    adjoint.push((p - y) / (p * (1.0 - p)));
                }
                Ok((j, Vector::new(adjoint)))
            }
            LossKind::Mse => {
                let mut j = 0.0;
                let mut adjoint = Vec::with_capacity(prediction.len());
                for (&p, &y) in prediction.iter().zip(target.iter()) {
                    let d = p - y;
                    j += 0.5 * d * d;
                    adjoint.push(d);
                }
                Ok((j, Vector::new(adjoint)))
            }
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::Config {
                detail: format!("unknown loss {s:?}"),
            }),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
        })
    }
}

/// Forward state set: the input (with appended 1), and per layer the
/// pre-activation and activation vectors.
#[derive(Debug, Clone)]
pub struct FPropState {
    x: Vec<Vector>, // x[l] for l = 0..=L; bias appended except at l = L
    y: Vec<Vector>, // y[l-1] holds layer l's pre-activation, l = 1..=L
}

impl FPropState {
    pub fn depth(&self) -> usize {
        self.y.len()
    }

    /// Activation vector of layer `l` (0 = input). Carries the appended 1
    /// except at the top layer.
    pub fn x(&self, l: usize) -> &Vector {
        &self.x[l]
    }

    /// Pre-activation vector of layer `l`, `1 <= l <= depth`.
    pub fn y(&self, l: usize) -> &Vector {
        &self.y[l - 1]
    }

    /// The network output (top-layer activation, no appended 1).
    pub fn prediction(&self) -> &Vector {
        &self.x[self.x.len() - 1]
    }
}

/// Adjoint state set: per layer the loss derivative with respect to the
/// activation and the pre-activation, down to the input.
#[derive(Debug, Clone)]
pub struct FAdjointState {
    xstar: Vec<Vector>, // xstar[l] for l = 0..=L (no bias entries)
    ystar: Vec<Vector>, // ystar[l-1] holds layer l's value, l = 1..=L
}

impl FAdjointState {
    pub fn depth(&self) -> usize {
        self.ystar.len()
    }

    /// d(loss)/d(activation) at layer `l`, `0 <= l <= depth`.
    pub fn xstar(&self, l: usize) -> &Vector {
        &self.xstar[l]
    }

    /// d(loss)/d(pre-activation) at layer `l`, `1 <= l <= depth`.
    pub fn ystar(&self, l: usize) -> &Vector {
        &self.ystar[l - 1]
    }
}

/// A fully-connected feed-forward network with bias columns embedded in the
/// weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    activation: ActivationKind,
    loss: LossKind,
    weights: Vec<Matrix>,
}

impl Network {
    pub fn new(
        arch: Architecture,
        activation: ActivationKind,
        loss: LossKind,
        weights: Vec<Matrix>,
    ) -> Result<Self> {
        if weights.len() != arch.depth() {
            return Err(Error::Shape {
                op: "Network::new",
                detail: format!(
                    "{} weight matrices for depth {}",
                    weights.len(),
                    arch.depth()
                ),
            });
        }
        for (i, w) in weights.iter().enumerate() {
            let (r, c) = arch.weight_shape(i + 1);
            if (w.rows(), w.cols()) != (r, c) {
                return Err(Error::Shape {
                    op: "Network::new",
                    detail: format!(
                        "layer {} weight is {}x{}, expected {}x{}",
                        i + 1,
                        w.rows(),
                        w.cols(),
                        r,
                        c
                    ),
                });
            }
        }
        Ok(Network {
            arch,
            activation,
            loss,
            weights,
        })
    }

    /// Fresh network with Glorot-uniform weights and zero biases.
    pub fn xavier(
        arch: Architecture,
        activation: ActivationKind,
        loss: LossKind,
        rng: &mut Rng,
    ) -> Self {
        let weights = (1..=arch.depth())
            .map(|l| {
                let (r, c) = arch.weight_shape(l);
                xavier_init(r, c, rng)
            })
            .collect();
        Network {
            arch,
            activation,
            loss,
            weights,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    /// Weight matrix of layer `l`, 1-based.
    pub fn weight(&self, l: usize) -> &Matrix {
        &self.weights[l - 1]
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    /// Forward pass recording every pre-activation and activation.
    pub fn f_propagate(&self, input: &Vector) -> Result<FPropState> {
        if input.len() != self.arch.input_size() {
            return Err(Error::Shape {
                op: "f_propagate",
                detail: format!(
                    "input length {} vs input layer {}",
                    input.len(),
                    self.arch.input_size()
                ),
            });
        }
        let depth = self.arch.depth();
        let mut x = Vec::with_capacity(depth + 1);
        let mut y = Vec::with_capacity(depth);
        x.push(input.with_appended(1.0));
        for l in 1..=depth {
            let pre = self.weight(l).mat_vec(&x[l - 1])?;
            let act = self.activation.apply(&pre);
            y.push(pre);
            // the prediction feeds no further layer, so it gets no bias entry
            x.push(if l < depth { act.with_appended(1.0) } else { act });
        }
        Ok(FPropState { x, y })
    }

    /// Backward pass from the output adjoint seed, layer by layer through
    /// the bias-stripped weight transposes.
    pub fn f_adjoint(&self, fstate: &FPropState, xstar_top: &Vector) -> Result<FAdjointState> {
        let depth = self.arch.depth();
        if fstate.depth() != depth {
            return Err(Error::Shape {
                op: "f_adjoint",
                detail: format!("state depth {} vs network depth {}", fstate.depth(), depth),
            });
        }
        if xstar_top.len() != self.arch.output_size() {
            return Err(Error::Shape {
                op: "f_adjoint",
                detail: format!(
                    "seed length {} vs output layer {}",
                    xstar_top.len(),
                    self.arch.output_size()
                ),
            });
        }
        let mut xstar = vec![Vector::zeros(0); depth + 1];
        let mut ystar = vec![Vector::zeros(0); depth];
        xstar[depth] = xstar_top.clone();
        for l in (1..=depth).rev() {
            let yl = xstar[l].hadamard(&self.activation.derivative(fstate.y(l)))?;
            xstar[l - 1] = self.weight(l).mat_t_vec_nobias(&yl)?;
            ystar[l - 1] = yl;
        }
        Ok(FAdjointState { xstar, ystar })
    }

    /// Loss and adjoint seed for a prediction/target pair under this
    /// network's loss.
    pub fn loss_and_output_adjoint(
        &self,
        prediction: &Vector,
        target: &Vector,
    ) -> Result<(f64, Vector)> {
        self.loss.loss_and_output_adjoint(prediction, target)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let doc = CheckpointDoc {
            version: 1,
            arch: self.arch.sizes().to_vec(),
            activation: self.activation.to_string(),
            loss: self.loss.to_string(),
            weights: self.weights.iter().map(Matrix::to_nested_rows).collect(),
        };
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::to_writer(BufWriter::new(file), &doc).map_err(|e| Error::Checkpoint {
            detail: format!("write {}: {e}", path.display()),
        })
    }

    pub fn load_checkpoint(path: &Path) -> Result<Network> {
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let doc: CheckpointDoc =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Checkpoint {
                detail: format!("parse {}: {e}", path.display()),
            })?;
        if doc.version != 1 {
            return Err(Error::Checkpoint {
                detail: format!("unsupported version {}, expected 1", doc.version),
            });
        }
        let arch = Architecture::new(doc.arch)?;
        let activation = doc.activation.parse()?;
        let loss = doc.loss.parse()?;
        let weights = doc
            .weights
            .into_iter()
            .map(Matrix::from_rows)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Checkpoint {
                detail: format!("bad weights: {e}"),
            })?;
        Network::new(arch, activation, loss, weights).map_err(|e| Error::Checkpoint {
            detail: format!("weight shapes disagree with arch: {e}"),
        })
    }
}

/// Per-layer loss gradients: the layer-`l` gradient is the outer product of
/// the layer's pre-activation adjoint with the previous activation vector
/// (bias entry included), matching the layer's weight shape.
pub fn weight_gradients(fstate: &FPropState, adj: &FAdjointState) -> Vec<Matrix> {
    (1..=fstate.depth())
        .map(|l| outer(adj.ystar(l), fstate.x(l - 1)))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    arch: Vec<usize>,
    activation: String,
    loss: String,
    weights: Vec<Vec<Vec<f64>>>,
}
