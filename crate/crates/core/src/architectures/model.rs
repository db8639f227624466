use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::layers::DenseParams;
use crate::tensor::{Shape, Tensor};

use super::{Block, Family, ModelSpec, ResNetBlock, VggBlock};

/// Rows per forward pass when predicting without gradients.
const PREDICT_CHUNK: usize = 256;

/// A built network: parameter store plus the layer structure over it.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    store: ParamStore,
    trunk: Vec<Block>,
    /// Hidden ReLU layers, then the linear output unit.
    head: Vec<DenseParams>,
}

impl Model {
    /// Builds and initializes a model; `seed` drives the weight draws.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut trunk = Vec::new();
        let mut channels = spec.input_channels;
        let mut length = spec.input_length;
        let hidden: &[usize] = match spec.family {
            Family::Mlp => &spec.widths,
            Family::Vgg => {
                let pools = spec.pooling_blocks();
                for (i, &w) in spec.widths.iter().enumerate() {
                    let pool = pools.contains(&(i + 1));
                    let name = format!("block{}", i + 1);
                    trunk.push(Block::Vgg(VggBlock::init(&mut store, &name, channels, w, pool, spec.se, &mut rng)));
                    channels = w;
                    if pool {
                        length /= 2;
                    }
                }
                &spec.head
            }
            Family::ResNet => {
                for (i, &w) in spec.widths.iter().enumerate() {
                    let name = format!("block{}", i + 1);
                    trunk.push(Block::ResNet(ResNetBlock::init(&mut store, &name, channels, w, spec.se, &mut rng)));
                    channels = w;
                }
                &spec.head
            }
        };
        let mut n_in = length * channels;
        let mut head = Vec::new();
        for (i, &w) in hidden.iter().enumerate() {
            head.push(DenseParams::init(&mut store, &format!("fc{}", i + 1), n_in, w, true, &mut rng));
            n_in = w;
        }
        head.push(DenseParams::init(&mut store, "out", n_in, 1, true, &mut rng));
        Ok(Model { spec: spec.clone(), store, trunk, head })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn name(&self) -> String {
        self.spec.name()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces the parameters; names and shapes must match the current ones.
    pub fn set_params(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                self.store.len(),
                store.len()
            )));
        }
        for ((_, a), (_, b)) in self.store.iter().zip(store.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::shape(format!(
                    "parameter mismatch: {} {} vs {} {}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        self.store = store;
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.trunk
    }

    /// Exact number of trainable scalars, from the layer structure.
    pub fn count_params(&self) -> usize {
        self.trunk.iter().map(Block::param_count).sum::<usize>()
            + self.head.iter().map(DenseParams::param_count).sum::<usize>()
    }

    pub fn pool_count(&self) -> usize {
        self.trunk.iter().filter(|b| matches!(b, Block::Vgg(v) if v.pool)).count()
    }

    /// Shape of the trunk output before flattening.
    pub fn pre_flatten_shape(&self, batch: usize) -> Shape {
        let length = self.spec.input_length >> self.pool_count();
        let channels = self.spec.widths.last().copied().unwrap_or(1);
        match self.spec.family {
            Family::Mlp => Shape::new(batch, self.spec.input_length, self.spec.input_channels),
            _ => Shape::new(batch, length, channels),
        }
    }

    /// Length of the flattened trunk output fed to the head.
    pub fn flatten_len(&self) -> usize {
        let s = self.pre_flatten_shape(1);
        s.len * s.channels
    }

    /// Trunk followed by flatten: `[B, L, C_in]` → `[B, 1, F]`.
    pub fn trunk_with<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: NodeId) -> Result<NodeId> {
        let expected = (self.spec.input_length, self.spec.input_channels);
        let s = tape.shape(x);
        if (s.len, s.channels) != expected {
            return Err(Error::shape(format!(
                "model expects inputs [B, {}, {}], got {s}",
                expected.0, expected.1
            )));
        }
        let mut h = x;
        for block in &self.trunk {
            h = block.apply(tape, store, h)?;
        }
        tape.flatten(h)
    }

    /// Full forward pass using parameters from `store` (which must share this model's layout).
    pub fn forward_with<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: NodeId) -> Result<NodeId> {
        let mut h = self.trunk_with(tape, store, x)?;
        let last = self.head.len() - 1;
        for (i, layer) in self.head.iter().enumerate() {
            h = layer.apply(tape, store, h)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: NodeId) -> Result<NodeId> {
        self.forward_with(tape, &self.store, x)
    }

    /// Predictions for `[N, L, C_in]` inputs, evaluated in chunks.
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        let n = inputs.shape().batch;
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let chunk = inputs.slice_batch(start, (start + PREDICT_CHUNK).min(n))?;
            let mut tape = Tape::new();
            let x = tape.constant(chunk);
            let y = self.forward(&mut tape, x)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    /// Flattened trunk activations `[N, 1, F]` with the current weights.
    pub fn trunk_features(&self, inputs: &Tensor) -> Result<Tensor> {
        let n = inputs.shape().batch;
        let f = self.flatten_len();
        let mut data = Vec::with_capacity(n * f);
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let chunk = inputs.slice_batch(start, (start + PREDICT_CHUNK).min(n))?;
            let mut tape = Tape::new();
            let x = tape.constant(chunk);
            let h = self.trunk_with(&mut tape, &self.store, x)?;
            data.extend_from_slice(tape.value(h).data());
        }
        Tensor::new(Shape::new(n, 1, f), data)
    }
}
