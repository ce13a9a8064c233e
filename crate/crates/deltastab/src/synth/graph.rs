//! Network computation graphs on the reverse-mode tape.
//!
//! Training differentiates three kinds of quantities with respect to the raw
//! network parameters: forward values, input gradients (the certificate
//! decrease condition consumes `∇V`), and the spectral feasibility matrices
//! of the networks themselves. [`NetVars`] registers one network's weights
//! and biases as tape leaves and rebuilds each of those quantities as graph
//! operations over the same leaves, so a single backward pass yields exact
//! parameter gradients for all of them at once.
//!
//! The flattening helpers at the bottom fix one canonical parameter order
//! (layer 0 weight column-major, layer 0 bias, layer 1 weight, ...) shared by
//! the optimizer state, gradient extraction, and parameter assignment.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::net::{Activation, FeedforwardNet};
use crate::tape::{Gradients, Tape, Var};

/// A feedforward network's parameters registered as leaves on a tape.
///
/// The leaf order matches [`flatten_net`]: weights and biases interleaved by
/// layer. All graph builders on this type reuse the same leaves, so gradients
/// from different loss terms accumulate into the same slots.
#[derive(Debug, Clone)]
pub struct NetVars {
    weights: Vec<Var>,
    biases: Vec<Var>,
    activations: Vec<Activation>,
    input_dim: usize,
    output_dim: usize,
}

/// Forward pass artifacts: the output vector and one pre-activation vector
/// per hidden layer, in layer order. The pre-activations feed
/// [`NetVars::input_gradient_graph`].
#[derive(Debug, Clone)]
pub struct ForwardGraph {
    /// Network output (vector var, possibly length 1).
    pub output: Var,
    /// Pre-activation `W_i a + b_i` for each hidden layer `i`.
    pub preacts: Vec<Var>,
}

impl NetVars {
    /// Registers `net`'s parameters as tape leaves.
    pub fn leaves(tape: &mut Tape, net: &FeedforwardNet) -> Self {
        let mut weights = Vec::with_capacity(net.layers().len());
        let mut biases = Vec::with_capacity(net.layers().len());
        for layer in net.layers() {
            weights.push(tape.matrix(layer.weight.clone()));
            biases.push(tape.vector(layer.bias.clone()));
        }
        NetVars {
            weights,
            biases,
            activations: net.activations().to_vec(),
            input_dim: net.input_dim(),
            output_dim: net.output_dim(),
        }
    }

    /// Weight leaf per layer, outermost last.
    pub fn weights(&self) -> &[Var] {
        &self.weights
    }

    /// Bias leaf per layer.
    pub fn biases(&self) -> &[Var] {
        &self.biases
    }

    /// Hidden-layer activations.
    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    /// Input dimension of the underlying network.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Output dimension of the underlying network.
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Builds the forward pass from an input vector var.
    ///
    /// Panics (via tape shape checks) if `input` does not match the network's
    /// input dimension; callers construct inputs from the same domain data
    /// the network was validated against.
    pub fn forward_graph(&self, tape: &mut Tape, input: Var) -> ForwardGraph {
        let n_hidden = self.activations.len();
        let mut preacts = Vec::with_capacity(n_hidden);
        let mut a = input;
        for i in 0..n_hidden {
            let wx = tape.mat_vec(self.weights[i], a);
            let z = tape.add_v(wx, self.biases[i]);
            preacts.push(z);
            a = tape.map_act(z, self.activations[i]);
        }
        let wx = tape.mat_vec(self.weights[n_hidden], a);
        let output = tape.add_v(wx, self.biases[n_hidden]);
        ForwardGraph { output, preacts }
    }

    /// Builds the gradient of a scalar-output network with respect to its
    /// input, as a vector var differentiable in the parameters.
    ///
    /// Reuses the pre-activations of an existing [`ForwardGraph`] at the same
    /// input: the gradient is `W_0ᵀ D_1 W_1ᵀ D_2 ⋯ W_Nᵀ` applied to the output
    /// row, with `D_i = diag(φ'(z_i))`, accumulated right-to-left as
    /// vector-Jacobian products.
    pub fn input_gradient_graph(&self, tape: &mut Tape, forward: &ForwardGraph) -> Result<Var> {
        if self.output_dim != 1 {
            return Err(Error::BadNetworkRole {
                role: "input gradient graph".into(),
                reason: format!("output dimension {} is not scalar", self.output_dim),
            });
        }
        for act in &self.activations {
            if !act.is_smooth() {
                return Err(Error::NonSmoothActivation {
                    activation: act.tag().into(),
                    context: "input gradient graph".into(),
                });
            }
        }
        let n_hidden = self.activations.len();
        let mut v = tape.row_to_vec(self.weights[n_hidden], 0);
        for i in (0..n_hidden).rev() {
            let slope = tape.map_act_deriv(forward.preacts[i], self.activations[i]);
            let scaled = tape.had_v(v, slope);
            v = tape.mat_t_vec(self.weights[i], scaled);
        }
        Ok(v)
    }

    /// Builds the derivative network's weight list on the tape.
    ///
    /// For a scalar-output network with hidden weights `θ_0..θ_{N-1}` and
    /// output row `θ_N`, the gradient map `x ↦ ∇V(x)` is itself a feedforward
    /// network with the same hidden layers and final weight
    /// `K·θ_0ᵀθ_1ᵀ⋯θ_{N-1}ᵀ·diag(θ_N)`, where `K` is the product of the
    /// activation Lipschitz constants of hidden layers `2..N`. The returned
    /// vars share the hidden-weight leaves, so spectral losses on the
    /// derivative network backpropagate into the original parameters. Must
    /// match [`FeedforwardNet::derivative_network`].
    pub fn derivative_weights_graph(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        if self.output_dim != 1 {
            return Err(Error::BadNetworkRole {
                role: "derivative network".into(),
                reason: format!("output dimension {} is not scalar", self.output_dim),
            });
        }
        let n_hidden = self.activations.len();
        if n_hidden == 0 {
            return Err(Error::BadNetworkRole {
                role: "derivative network".into(),
                reason: "a purely affine network has a constant gradient; nothing to certify"
                    .into(),
            });
        }
        let k: f64 = self.activations[1..].iter().map(|a| a.lipschitz()).product();
        let mut chain = tape.mat_trans(self.weights[0]);
        for &w in &self.weights[1..n_hidden] {
            let wt = tape.mat_trans(w);
            chain = tape.mat_mul(chain, wt);
        }
        let last_row = tape.row_to_vec(self.weights[n_hidden], 0);
        let diag_last = tape.diag_m(last_row);
        let mut new_last = tape.mat_mul(chain, diag_last);
        if k != 1.0 {
            new_last = tape.scale_m(new_last, k);
        }
        let mut out = self.weights[..n_hidden].to_vec();
        out.push(new_last);
        Ok(out)
    }

}

/// Flattens a network's parameters into one vector: per layer, the weight
/// matrix in column-major order followed by the bias.
pub fn flatten_net(net: &FeedforwardNet) -> Vec<f64> {
    let mut out = Vec::with_capacity(param_count(net));
    for layer in net.layers() {
        out.extend(layer.weight.iter());
        out.extend(layer.bias.iter());
    }
    out
}

/// Total parameter count of a network.
pub fn param_count(net: &FeedforwardNet) -> usize {
    net.layers().iter().map(|l| l.weight.len() + l.bias.len()).sum()
}

/// Writes a flat parameter vector (in [`flatten_net`] order) back into the
/// network. Fails if the length does not match.
pub fn assign_net(net: &mut FeedforwardNet, flat: &[f64]) -> Result<()> {
    let expected = param_count(net);
    if flat.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "flat parameter vector".into(),
            expected,
            actual: flat.len(),
        });
    }
    let mut k = 0;
    for layer in net.layers_mut() {
        for w in layer.weight.iter_mut() {
            *w = flat[k];
            k += 1;
        }
        for b in layer.bias.iter_mut() {
            *b = flat[k];
            k += 1;
        }
    }
    Ok(())
}

/// Extracts parameter gradients for a [`NetVars`] in [`flatten_net`] order,
/// resolving the shapes of untouched leaves from the tape values.
pub fn net_gradients(tape: &Tape, vars: &NetVars, grads: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for (&w, &b) in vars.weights.iter().zip(&vars.biases) {
        match grads.matrix(w) {
            Some(g) => out.extend(g.iter()),
            None => out.extend(std::iter::repeat_n(0.0, tape.value_m(w).len())),
        }
        match grads.vector(b) {
            Some(g) => out.extend(g.iter()),
            None => out.extend(std::iter::repeat_n(0.0, tape.value_v(b).len())),
        }
    }
    out
}

/// Builds `V(point)` and `∇V(point)` graphs for a certificate network at a
/// constant input, returning `(value, gradient)` vars.
pub fn value_and_gradient(
    tape: &mut Tape,
    vars: &NetVars,
    point: &DVector<f64>,
) -> Result<(Var, Var)> {
    let input = tape.vector(point.clone());
    let fwd = vars.forward_graph(tape, input);
    let value = tape.index_s(fwd.output, 0);
    let grad = vars.input_gradient_graph(tape, &fwd)?;
    Ok((value, grad))
}
