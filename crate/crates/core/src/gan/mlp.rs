use std::fmt::Write as _;

use crate::error::{FlowError, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative at pre-activation `z` given the output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "identity" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            _ => return None,
        })
    }
}

/// Fully connected network with all parameters in one flat vector.
///
/// Layer `l` owns a block `[W_l (n_out × n_in, row-major), b_l (n_out)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    // inputs of each layer followed by the network output
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape holds the input at least")
    }
}

impl Mlp {
    /// Network with all parameters zero.
    pub fn zeros(layer_sizes: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(FlowError::InvalidParameter {
                name: "layer_sizes",
                reason: format!("need at least two positive sizes, got {layer_sizes:?}"),
            });
        }
        let count = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            layer_sizes,
            hidden,
            output,
            params: vec![0.0; count],
        })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn random(layer_sizes: Vec<usize>, hidden: Activation, output: Activation, s: &mut Stream) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, hidden, output)?;
        let mut offset = 0;
        for w in net.layer_sizes.clone().windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + n_in * n_out] {
                *p = a * (2.0 * s.uniform() - 1.0);
            }
            offset += n_in * n_out + n_out;
        }
        Ok(net)
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(FlowError::LengthMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params = params;
        Ok(self)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated in constructor")
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, n_in, n_out)
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let o = offset;
            offset += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.layer_sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if input.len() != self.input_dim() {
            return Err(FlowError::LengthMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let mut activations = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.layer_sizes.len() - 1);
        for (l, (offset, n_in, n_out)) in self.layers().enumerate() {
            let x = activations.last().expect("nonempty");
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|r| b[r] + w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            let act = self.activation(l);
            let a = z.iter().map(|v| act.apply(*v)).collect();
            pre.push(z);
            activations.push(a);
        }
        let out = activations.last().expect("nonempty").clone();
        Ok((out, Tape { activations, pre }))
    }

    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Reverse pass: adds `(∂out/∂θ)ᵀ grad_out` into `grad_params` and returns
    /// `(∂out/∂input)ᵀ grad_out`.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad_params.len(), self.params.len());
        let layers: Vec<_> = self.layers().collect();
        let mut delta = grad_out.to_vec();
        for (l, &(offset, n_in, n_out)) in layers.iter().enumerate().rev() {
            let act = self.activation(l);
            let a = &tape.activations[l + 1];
            let z = &tape.pre[l];
            for r in 0..n_out {
                delta[r] *= act.derivative(z[r], a[r]);
            }
            let x = &tape.activations[l];
            let w = &self.params[offset..offset + n_in * n_out];
            let (gw, gb) = grad_params[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut next = vec![0.0; n_in];
            for r in 0..n_out {
                let d = delta[r];
                gb[r] += d;
                for c in 0..n_in {
                    gw[r * n_in + c] += d * x[c];
                    next[c] += w[r * n_in + c] * d;
                }
            }
            delta = next;
        }
        delta
    }

    /// Text snapshot: a `layers` header, the activations, then one parameter per line.
    pub fn to_text(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        let mut out = format!(
            "layers {}\nactivations {} {}\n",
            sizes.join(" "),
            self.hidden.name(),
            self.output.name()
        );
        for p in &self.params {
            let _ = writeln!(out, "{p}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |reason: String| FlowError::InvalidParameter {
            name: "snapshot",
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty snapshot".into()))?;
        let sizes = header
            .strip_prefix("layers ")
            .ok_or_else(|| bad("missing `layers` header".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| bad(format!("layer size `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let acts: Vec<&str> = lines
            .next()
            .and_then(|l| l.strip_prefix("activations "))
            .ok_or_else(|| bad("missing `activations` line".into()))?
            .split_whitespace()
            .collect();
        let parse_act = |s: &str| Activation::from_name(s).ok_or_else(|| bad(format!("unknown activation `{s}`")));
        if acts.len() != 2 {
            return Err(bad("expected hidden and output activations".into()));
        }
        let params = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| bad(format!("parameter `{l}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::zeros(sizes, parse_act(acts[0])?, parse_act(acts[1])?)?.with_params(params)
    }
}
