use std::cell::RefCell;
use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::FeatureMap;
use super::mlp::{backward_tape, forward_tape, Activation, Architecture, Tape};
use crate::error::{AdrlError, Result};
use crate::rng::{stream, Purpose};

#[derive(Default)]
struct Workspace {
    tape: Tape,
    feat: Vec<f64>,
    gfeat: Vec<f64>,
}

thread_local! {
    static WORKSPACE: RefCell<Workspace> = RefCell::new(Workspace::default());
}

/// Per-stage scalar networks `W_0..W_T` over a shared feature map, stored
/// as one flat parameter vector of `T + 1` equal blocks.
///
/// `W_0` never enters a penalty and is kept only so block `t` is the
/// network for stage `t`. With `pin_terminal` the last block is ignored and
/// callers substitute the terminal reward.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratingFunction {
    horizon: usize,
    arch: Architecture,
    features: FeatureMap,
    pin_terminal: bool,
    params: Vec<f64>,
    pub seed: u64,
    pub iteration: u64,
}

impl GeneratingFunction {
    /// Seeded He-uniform hidden layers with zero output layers, so every
    /// `W_t` starts identically zero.
    pub fn initialized(
        horizon: usize,
        features: FeatureMap,
        width: usize,
        depth: usize,
        activation: Activation,
        pin_terminal: bool,
        seed: u64,
    ) -> Result<Self> {
        let arch = Architecture::new(features.output_dim(), width, depth, 1, activation);
        let mut gen = Self::zeros(horizon, features, arch, pin_terminal)?;
        gen.seed = seed;
        let block = arch.param_count();
        for t in 0..=horizon {
            let mut rng = stream(seed, Purpose::Init, t as u64, 0);
            gen.params[t * block..(t + 1) * block].copy_from_slice(&arch.init(&mut rng, true));
        }
        Ok(gen)
    }

    pub fn zeros(horizon: usize, features: FeatureMap, arch: Architecture, pin_terminal: bool) -> Result<Self> {
        if horizon == 0 {
            return Err(AdrlError::parameter("horizon must be positive"));
        }
        if arch.output != 1 || arch.input != features.output_dim() {
            return Err(AdrlError::parameter(format!(
                "network shape {}→{} does not fit features of size {}",
                arch.input,
                arch.output,
                features.output_dim()
            )));
        }
        Ok(GeneratingFunction {
            horizon,
            params: vec![0.0; (horizon + 1) * arch.param_count()],
            arch,
            features,
            pin_terminal,
            seed: 0,
            iteration: 0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn pin_terminal(&self) -> bool {
        self.pin_terminal
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(AdrlError::parameter("parameter vector has the wrong length"));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(AdrlError::numerical("non-finite parameter update"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn block_range(&self, t: usize) -> Range<usize> {
        let b = self.arch.param_count();
        t * b..(t + 1) * b
    }

    pub fn block(&self, t: usize) -> &[f64] {
        &self.params[self.block_range(t)]
    }

    pub fn block_mut(&mut self, t: usize) -> &mut [f64] {
        let r = self.block_range(t);
        &mut self.params[r]
    }

    /// Whether block `t` influences any penalty and is updated in training.
    pub fn is_trainable(&self, t: usize) -> bool {
        (1..self.horizon).contains(&t) || (t == self.horizon && !self.pin_terminal)
    }

    /// `ϱ_t(s)` from the network (ignores pinning).
    pub fn network_value(&self, t: usize, state: &[f64]) -> f64 {
        WORKSPACE.with(|ws| {
            let ws = &mut *ws.borrow_mut();
            self.features.apply(state, &mut ws.feat);
            forward_tape(&self.arch, self.block(t), &ws.feat, &mut ws.tape)[0]
        })
    }

    /// Accumulates `scale · ∇_s ϱ_t(s)`.
    pub fn network_grad_state(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]) {
        WORKSPACE.with(|ws| {
            let ws = &mut *ws.borrow_mut();
            self.features.apply(state, &mut ws.feat);
            forward_tape(&self.arch, self.block(t), &ws.feat, &mut ws.tape);
            ws.gfeat.clear();
            ws.gfeat.resize(ws.feat.len(), 0.0);
            backward_tape(&self.arch, self.block(t), &mut ws.tape, &[scale], None, Some(&mut ws.gfeat));
            self.features.vjp(state, &ws.gfeat, grad);
        })
    }

    /// `ϱ_t(s)`, accumulating `scale · ∇_s ϱ_t(s)` from the same forward pass.
    pub fn network_value_and_grad_state(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        WORKSPACE.with(|ws| {
            let ws = &mut *ws.borrow_mut();
            self.features.apply(state, &mut ws.feat);
            let v = forward_tape(&self.arch, self.block(t), &ws.feat, &mut ws.tape)[0];
            ws.gfeat.clear();
            ws.gfeat.resize(ws.feat.len(), 0.0);
            backward_tape(&self.arch, self.block(t), &mut ws.tape, &[scale], None, Some(&mut ws.gfeat));
            self.features.vjp(state, &ws.gfeat, grad);
            v
        })
    }

    /// Accumulates `scale · ∇_φ ϱ_t(s)` into block `t` of a full-length
    /// gradient vector.
    pub fn network_grad_params(&self, t: usize, state: &[f64], scale: f64, grad: &mut [f64]) {
        let range = self.block_range(t);
        WORKSPACE.with(|ws| {
            let ws = &mut *ws.borrow_mut();
            self.features.apply(state, &mut ws.feat);
            forward_tape(&self.arch, self.block(t), &ws.feat, &mut ws.tape);
            backward_tape(&self.arch, self.block(t), &mut ws.tape, &[scale], Some(&mut grad[range]), None);
        })
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            horizon: self.horizon,
            architecture: self.arch,
            features: self.features.clone(),
            pin_terminal: self.pin_terminal,
            seed: self.seed,
            iteration: self.iteration,
        }
    }

    /// Binary checkpoint: magic, version, metadata length, metadata (TOML),
    /// then every parameter as little-endian f64.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = toml::to_string(&self.meta()).map_err(|e| AdrlError::numerical(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for v in &self.params {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AdrlError::config("not a checkpoint file"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(AdrlError::config(format!("unsupported checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut meta = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut meta)?;
        let meta: CheckpointMeta = toml::from_str(
            std::str::from_utf8(&meta).map_err(|_| AdrlError::config("checkpoint metadata is not text"))?,
        )
        .map_err(|e| AdrlError::config(format!("checkpoint metadata: {e}")))?;
        let mut gen = Self::zeros(meta.horizon, meta.features, meta.architecture, meta.pin_terminal)?;
        gen.seed = meta.seed;
        gen.iteration = meta.iteration;
        r.read_exact(&mut b8)?;
        if u64::from_le_bytes(b8) as usize != gen.params.len() {
            return Err(AdrlError::config("checkpoint parameter count does not match its architecture"));
        }
        for v in gen.params.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Ok(gen)
    }

    /// Inspection dump: `block,layer,param,row,col,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "block,layer,param,row,col,value")?;
        let shapes = self.arch.layer_shapes();
        let offsets = self.arch.offsets();
        for t in 0..=self.horizon {
            let block = self.block(t);
            for (l, ((rows, cols), (w_at, b_at))) in shapes.iter().zip(&offsets).enumerate() {
                for i in 0..*rows {
                    for j in 0..*cols {
                        writeln!(w, "{t},{l},weight,{i},{j},{:?}", block[w_at + i * cols + j])?;
                    }
                }
                for i in 0..*rows {
                    writeln!(w, "{t},{l},bias,{i},0,{:?}", block[b_at + i])?;
                }
            }
        }
        Ok(())
    }

    /// Content hash of the binary checkpoint (first 16 hex digits of SHA-256).
    pub fn hash(&self) -> String {
        let mut bytes = Vec::new();
        self.write_checkpoint(&mut bytes).expect("in-memory write");
        Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ADRLCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    horizon: usize,
    seed: u64,
    iteration: u64,
    pin_terminal: bool,
    architecture: Architecture,
    features: FeatureMap,
}
