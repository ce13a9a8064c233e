//! Fully-connected networks, their analytic input gradients, and the
//! companion "derivative network" used to certify gradient Lipschitz bounds.
//!
//! Two network roles appear throughout the crate:
//!
//! * a scalar **certificate function** `V(x, x_hat)` over pairs of states,
//!   which must be smooth because training differentiates through its input
//!   gradient, and
//! * a **controller** `g(x, w)` whose output is clamped into the admissible
//!   input box by a [`SaturationBox`].
//!
//! Both are plain feedforward stacks: affine layers interleaved with
//! elementwise activations, with a linear output layer. The layout is kept
//! deliberately minimal so that the Lipschitz certificate (see
//! [`crate::lipcert`]) can consume the raw weight matrices directly.

mod activation;
pub mod io;

pub use activation::Activation;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One affine layer: `z = weight * input + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Weight matrix, `output_dim x input_dim`, row-major semantics.
    pub weight: DMatrix<f64>,
    /// Bias vector, length `output_dim`.
    pub bias: DVector<f64>,
}

/// Feedforward network: hidden affine layers each followed by an activation,
/// then a linear output layer with no activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNet {
    layers: Vec<Layer>,
    activations: Vec<Activation>,
}

/// Axis-aligned output clamp applied after a controller network, confining
/// commands to the admissible input set.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationBox {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl SaturationBox {
    /// Builds a saturation box from per-axis bounds; every `lo` must be
    /// strictly below the matching `hi`.
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                context: "saturation box bounds".into(),
                expected: lo.len(),
                actual: hi.len(),
            });
        }
        for i in 0..lo.len() {
            if lo[i] >= hi[i] || !lo[i].is_finite() || !hi[i].is_finite() {
                return Err(Error::InvalidValue {
                    name: format!("saturation bound on axis {i}"),
                    value: lo[i],
                    requirement: "finite lower bound strictly below finite upper bound".into(),
                });
            }
        }
        Ok(SaturationBox { lo, hi })
    }

    /// Lower bounds.
    #[must_use]
    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    /// Upper bounds.
    #[must_use]
    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    /// Number of axes.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Clamps a vector into the box.
    #[must_use]
    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| u[i].clamp(self.lo[i], self.hi[i]))
    }
}

impl FeedforwardNet {
    /// Builds a network from explicit layers and per-hidden-layer activation
    /// tags. `activations.len()` must equal `layers.len() - 1` and adjacent
    /// layer dimensions must conform.
    pub fn new(layers: Vec<Layer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::BadNetworkRole {
                role: "feedforward network".into(),
                reason: "at least one affine layer is required".into(),
            });
        }
        if activations.len() + 1 != layers.len() {
            return Err(Error::DimensionMismatch {
                context: "activation count vs hidden layer count".into(),
                expected: layers.len() - 1,
                actual: activations.len(),
            });
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.nrows() != layer.bias.len() {
                return Err(Error::DimensionMismatch {
                    context: format!("layer {i} bias length"),
                    expected: layer.weight.nrows(),
                    actual: layer.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].weight.nrows() != layer.weight.ncols() {
                return Err(Error::DimensionMismatch {
                    context: format!("layer {i} input width"),
                    expected: layers[i - 1].weight.nrows(),
                    actual: layer.weight.ncols(),
                });
            }
        }
        Ok(FeedforwardNet {
            layers,
            activations,
        })
    }

    /// Creates a network with the given shape, all hidden layers using one
    /// activation, and weights drawn uniformly from `[-s, s]` with
    /// `s = 0.1 / sqrt(fan_in)`. Biases start at zero. Small initial weights
    /// keep the Lipschitz certificate matrices positive definite at the start
    /// of training.
    pub fn with_shape(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::BadNetworkRole {
                role: "feedforward network".into(),
                reason: "zero-width layer requested".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let s = 0.1 / (fan_in as f64).sqrt();
            let weight =
                DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-1.0..1.0) * s);
            layers.push(Layer {
                weight,
                bias: DVector::zeros(fan_out),
            });
        }
        FeedforwardNet::new(layers, vec![activation; hidden.len()])
    }

    /// Input dimension.
    #[must_use]
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    /// Output dimension.
    #[must_use]
    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.nrows()
    }

    /// Number of hidden layers.
    #[must_use]
    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    /// Widths of the hidden layers, in order.
    #[must_use]
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.nrows())
            .collect()
    }

    /// All layers, first to last.
    #[must_use]
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers, used by the optimizer. Shape changes are
    /// the caller's responsibility to avoid.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Per-hidden-layer activations.
    #[must_use]
    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    /// True when every activation admits first and second derivatives
    /// everywhere.
    #[must_use]
    pub fn is_smooth(&self) -> bool {
        self.activations.iter().all(|a| a.is_smooth())
    }

    /// Validates the structural requirements of a certificate function over
    /// state pairs: input `2 * state_dim`, scalar output, smooth activations.
    pub fn validate_certificate_role(&self, state_dim: usize) -> Result<()> {
        if self.input_dim() != 2 * state_dim {
            return Err(Error::BadNetworkRole {
                role: "certificate function".into(),
                reason: format!(
                    "input dimension {} does not equal twice the state dimension {state_dim}",
                    self.input_dim()
                ),
            });
        }
        if self.output_dim() != 1 {
            return Err(Error::BadNetworkRole {
                role: "certificate function".into(),
                reason: format!("output dimension {} is not scalar", self.output_dim()),
            });
        }
        if let Some(bad) = self.activations.iter().find(|a| !a.is_smooth()) {
            return Err(Error::NonSmoothActivation {
                activation: bad.tag().into(),
                context: "certificate function (training differentiates its gradient)".into(),
            });
        }
        Ok(())
    }

    /// Validates the structural requirements of a controller: input
    /// `state_dim + external_dim`, output matching the saturation box.
    pub fn validate_controller_role(
        &self,
        state_dim: usize,
        external_dim: usize,
        sat: &SaturationBox,
    ) -> Result<()> {
        if self.input_dim() != state_dim + external_dim {
            return Err(Error::BadNetworkRole {
                role: "controller".into(),
                reason: format!(
                    "input dimension {} does not equal state dim {state_dim} + external dim {external_dim}",
                    self.input_dim()
                ),
            });
        }
        if self.output_dim() != sat.dim() {
            return Err(Error::BadNetworkRole {
                role: "controller".into(),
                reason: format!(
                    "output dimension {} does not match saturation box dimension {}",
                    self.output_dim(),
                    sat.dim()
                ),
            });
        }
        Ok(())
    }

    /// Evaluates the network. Pure: identical inputs give bit-identical
    /// outputs.
    pub fn forward(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(input)?;
        let mut v = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            v = &layer.weight * v + &layer.bias;
            if let Some(act) = self.activations.get(i) {
                v.apply(|x| *x = act.apply(*x));
            }
        }
        Ok(v)
    }

    /// Evaluates the network and records pre-activation vectors for each
    /// hidden layer; used by the gradient routines.
    fn forward_trace(&self, input: &DVector<f64>) -> (Vec<DVector<f64>>, DVector<f64>) {
        let mut pre = Vec::with_capacity(self.num_hidden());
        let mut v = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            v = &layer.weight * v + &layer.bias;
            if let Some(act) = self.activations.get(i) {
                pre.push(v.clone());
                v.apply(|x| *x = act.apply(*x));
            }
        }
        (pre, v)
    }

    /// Analytic gradient of a **scalar** network output with respect to the
    /// input: the chain product of layer Jacobians, evaluated right-to-left
    /// as a vector sequence. Requires smooth activations; kinked ones are
    /// rejected because downstream code differentiates this gradient again.
    pub fn input_gradient(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(input)?;
        if self.output_dim() != 1 {
            return Err(Error::BadNetworkRole {
                role: "input gradient".into(),
                reason: format!("output dimension {} is not scalar", self.output_dim()),
            });
        }
        if let Some(bad) = self.activations.iter().find(|a| !a.is_smooth()) {
            return Err(Error::NonSmoothActivation {
                activation: bad.tag().into(),
                context: "analytic input gradient".into(),
            });
        }
        let (pre, _) = self.forward_trace(input);
        // Start with the output layer's single row, then peel layers off:
        // v <- theta_i^T (v .* phi'(z_i)) down to the first layer.
        let last = self.layers.last().expect("nonempty");
        let mut v = last.weight.row(0).transpose();
        for i in (0..self.num_hidden()).rev() {
            let act = self.activations[i];
            let slopes = pre[i].map(|z| act.derivative(z));
            v.component_mul_assign(&slopes);
            v = self.layers[i].weight.transpose() * v;
        }
        Ok(v)
    }

    /// Controller evaluation: concatenates state and external input, runs the
    /// network, clamps into the saturation box. Idempotent in the clamp:
    /// feeding an already-clamped output through the box changes nothing.
    pub fn saturated_forward(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
        sat: &SaturationBox,
    ) -> Result<DVector<f64>> {
        if x.len() + w.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "controller input (state ++ external)".into(),
                expected: self.input_dim(),
                actual: x.len() + w.len(),
            });
        }
        let mut joint = DVector::zeros(x.len() + w.len());
        joint.rows_mut(0, x.len()).copy_from(x);
        joint.rows_mut(x.len(), w.len()).copy_from(w);
        let raw = self.forward(&joint)?;
        if raw.len() != sat.dim() {
            return Err(Error::DimensionMismatch {
                context: "controller output vs saturation box".into(),
                expected: sat.dim(),
                actual: raw.len(),
            });
        }
        Ok(sat.clamp(&raw))
    }

    /// Builds the companion network whose certified Lipschitz constant upper
    /// bounds the Lipschitz constant of this network's input gradient.
    ///
    /// The construction keeps every hidden layer (weights and biases) of the
    /// original and replaces the output layer with
    /// `K * theta_0^T * theta_1^T * ... * theta_{N-1}^T * diag(theta_N)`,
    /// where `K` is the product of the activation Lipschitz constants of
    /// layers `2..N` (empty product = 1 for a single hidden layer). The
    /// result maps the input space to itself and carries a zero output bias.
    ///
    /// Only scalar-output networks admit the construction (the `diag` of the
    /// final layer requires a single row).
    pub fn derivative_network(&self) -> Result<FeedforwardNet> {
        if self.output_dim() != 1 {
            return Err(Error::BadNetworkRole {
                role: "derivative network".into(),
                reason: format!("output dimension {} is not scalar", self.output_dim()),
            });
        }
        if self.num_hidden() == 0 {
            return Err(Error::BadNetworkRole {
                role: "derivative network".into(),
                reason: "a purely affine network has a constant gradient; nothing to certify"
                    .into(),
            });
        }
        // K = product of activation Lipschitz constants for hidden layers 2..N.
        let k: f64 = self.activations[1..].iter().map(|a| a.lipschitz()).product();
        // theta_0^T * ... * theta_{N-1}^T
        let mut chain = self.layers[0].weight.transpose();
        for layer in &self.layers[1..self.layers.len() - 1] {
            chain *= layer.weight.transpose();
        }
        let last_row = self.layers.last().expect("nonempty").weight.row(0);
        let diag_last = DMatrix::from_diagonal(&last_row.transpose());
        let new_last = chain * diag_last * k;

        let mut layers: Vec<Layer> = self.layers[..self.layers.len() - 1].to_vec();
        let out_dim = new_last.nrows();
        layers.push(Layer {
            weight: new_last,
            bias: DVector::zeros(out_dim),
        });
        FeedforwardNet::new(layers, self.activations.clone())
    }

    fn check_input(&self, input: &DVector<f64>) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input".into(),
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }
}
