use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdrlError, Result};

/// Softplus sharpness: `σ(x) = ln(1 + e^{βx}) / β`.
pub const SOFTPLUS_BETA: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => {
                let z = SOFTPLUS_BETA * x;
                // ln(1 + e^z) without overflow
                (z.max(0.0) + (-z.abs()).exp().ln_1p()) / SOFTPLUS_BETA
            }
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-SOFTPLUS_BETA * x).exp()),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            other => Err(AdrlError::config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Shape of a fully connected network with `depth` hidden layers of equal
/// `width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub width: usize,
    pub depth: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input: usize, width: usize, depth: usize, output: usize, activation: Activation) -> Self {
        Architecture { input, width, depth, output, activation }
    }

    /// `(rows, cols)` of every weight matrix, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth + 1);
        let mut fan_in = self.input;
        for _ in 0..self.depth {
            shapes.push((self.width, fan_in));
            fan_in = self.width;
        }
        shapes.push((self.output, fan_in));
        shapes
    }

    /// Offsets of `(weights, biases)` for each layer in the flat layout
    /// `H^1, b^1, H^2, b^2, …, H^o, b^o` (matrices row-major).
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut at = 0;
        for (r, c) in self.layer_shapes() {
            out.push((at, at + r * c));
            at += r * c + r;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || (self.depth > 0 && self.width == 0) {
            return Err(AdrlError::parameter("network dimensions must be positive"));
        }
        Ok(())
    }

    /// He-uniform weights scaled by fan-in and zero biases. With
    /// `zero_output` the output layer starts at zero, so the network is
    /// identically zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, zero_output: bool) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        for (l, ((rows, cols), (w_at, _))) in shapes.iter().zip(self.offsets()).enumerate() {
            if l == last && zero_output {
                continue;
            }
            let bound = (6.0 / *cols as f64).sqrt();
            for v in &mut params[w_at..w_at + rows * cols] {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Layer inputs: `x`, then each hidden activation.
    acts: Vec<Vec<f64>>,
    out: Vec<f64>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

/// Forward pass over a flat parameter slice; fills `tape` and returns the
/// output.
pub fn forward_tape<'t>(arch: &Architecture, params: &[f64], x: &[f64], tape: &'t mut Tape) -> &'t [f64] {
    debug_assert_eq!(x.len(), arch.input);
    debug_assert_eq!(params.len(), arch.param_count());
    let shapes = arch.layer_shapes();
    let offsets = arch.offsets();
    tape.pre.resize(arch.depth, Vec::new());
    tape.acts.resize(arch.depth + 1, Vec::new());
    tape.acts[0].clear();
    tape.acts[0].extend_from_slice(x);
    for l in 0..=arch.depth {
        let (rows, cols) = shapes[l];
        let (w_at, b_at) = offsets[l];
        let w = &params[w_at..w_at + rows * cols];
        let b = &params[b_at..b_at + rows];
        let (inputs, rest) = tape.acts.split_at_mut(l + 1);
        let input = &inputs[l];
        let target = if l < arch.depth { &mut tape.pre[l] } else { &mut tape.out };
        target.clear();
        for i in 0..rows {
            let row = &w[i * cols..(i + 1) * cols];
            target.push(b[i] + row.iter().zip(input.iter()).map(|(a, v)| a * v).sum::<f64>());
        }
        if l < arch.depth {
            let act = &mut rest[0];
            act.clear();
            act.extend(tape.pre[l].iter().map(|&z| arch.activation.apply(z)));
        }
    }
    &tape.out
}

/// Reverse pass for the upstream cotangent on the output. Accumulates into
/// `grad_params` and/or `grad_input` when given.
pub fn backward_tape(
    arch: &Architecture,
    params: &[f64],
    tape: &mut Tape,
    upstream: &[f64],
    mut grad_params: Option<&mut [f64]>,
    grad_input: Option<&mut [f64]>,
) {
    let shapes = arch.layer_shapes();
    let offsets = arch.offsets();
    tape.delta.clear();
    tape.delta.extend_from_slice(upstream);
    for l in (0..=arch.depth).rev() {
        let (rows, cols) = shapes[l];
        let (w_at, b_at) = offsets[l];
        let input = &tape.acts[l];
        if let Some(g) = grad_params.as_deref_mut() {
            for i in 0..rows {
                let d = tape.delta[i];
                if d == 0.0 {
                    continue;
                }
                g[b_at + i] += d;
                let gw = &mut g[w_at + i * cols..w_at + (i + 1) * cols];
                for (gv, v) in gw.iter_mut().zip(input.iter()) {
                    *gv += d * v;
                }
            }
        }
        if l == 0 && grad_input.is_none() {
            break;
        }
        // propagate through the weights
        let w = &params[w_at..w_at + rows * cols];
        tape.next.clear();
        tape.next.resize(cols, 0.0);
        for i in 0..rows {
            let d = tape.delta[i];
            if d == 0.0 {
                continue;
            }
            for (nv, wv) in tape.next.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                *nv += d * wv;
            }
        }
        if l > 0 {
            for (nv, z) in tape.next.iter_mut().zip(&tape.pre[l - 1]) {
                *nv *= arch.activation.derivative(*z);
            }
        }
        std::mem::swap(&mut tape.delta, &mut tape.next);
    }
    if let Some(gx) = grad_input {
        for (g, d) in gx.iter_mut().zip(&tape.delta) {
            *g += d;
        }
    }
}

/// A network with its own parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    params: Vec<f64>,
}

impl Mlp {
    pub fn new(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(AdrlError::parameter(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(AdrlError::parameter("non-finite network parameter"));
        }
        Ok(Mlp { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        Self::new(arch, vec![0.0; arch.param_count()])
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input {
            return Err(AdrlError::parameter(format!(
                "network expects {} inputs, got {}",
                self.arch.input,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tape = Tape::default();
        Ok(forward_tape(&self.arch, &self.params, x, &mut tape).to_vec())
    }

    /// Gradient of `weight · output[0]` with respect to every parameter,
    /// in the flat layout.
    pub fn grad_params(&self, x: &[f64], weight: f64) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tape = Tape::default();
        forward_tape(&self.arch, &self.params, x, &mut tape);
        let mut upstream = vec![0.0; self.arch.output];
        upstream[0] = weight;
        let mut g = vec![0.0; self.params.len()];
        backward_tape(&self.arch, &self.params, &mut tape, &upstream, Some(&mut g), None);
        Ok(g)
    }

    /// Gradient of `output[0]` with respect to the input.
    pub fn grad_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tape = Tape::default();
        forward_tape(&self.arch, &self.params, x, &mut tape);
        let mut upstream = vec![0.0; self.arch.output];
        upstream[0] = 1.0;
        let mut g = vec![0.0; x.len()];
        backward_tape(&self.arch, &self.params, &mut tape, &upstream, None, Some(&mut g));
        Ok(g)
    }
}
