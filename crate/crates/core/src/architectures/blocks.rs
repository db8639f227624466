use rand::Rng;

use crate::autograd::{NodeId, ParamStore, Tape};
use crate::error::Result;
use crate::layers::{Conv1dParams, DenseParams, KERNEL_SIZE};

use super::SeConfig;

/// Squeeze (global average), excitation (C → C/r → C bottleneck, sigmoid),
/// then channel-wise rescaling of the input.
#[derive(Clone, Debug)]
pub struct SeUnit {
    pub squeeze: DenseParams,
    pub excite: DenseParams,
}

impl SeUnit {
    pub fn init(store: &mut ParamStore, name: &str, channels: usize, cfg: SeConfig, rng: &mut impl Rng) -> Self {
        let hidden = cfg.bottleneck(channels);
        SeUnit {
            squeeze: DenseParams::init(store, &format!("{name}.fc1"), channels, hidden, cfg.bias, rng),
            excite: DenseParams::init(store, &format!("{name}.fc2"), hidden, channels, cfg.bias, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.squeeze.param_count() + self.excite.param_count()
    }

    pub fn apply<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, u: NodeId) -> Result<NodeId> {
        let s = tape.global_avg_pool(u);
        let z = self.squeeze.apply(tape, store, s)?;
        let z = tape.relu(z);
        let e = self.excite.apply(tape, store, z)?;
        let e = tape.sigmoid(e);
        tape.channel_scale(u, e)
    }
}

/// conv → ReLU → conv → ReLU → [SE] → [max-pool].
#[derive(Clone, Debug)]
pub struct VggBlock {
    pub conv1: Conv1dParams,
    pub conv2: Conv1dParams,
    pub se: Option<SeUnit>,
    pub pool: bool,
}

impl VggBlock {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        width: usize,
        pool: bool,
        se: Option<SeConfig>,
        rng: &mut impl Rng,
    ) -> Self {
        VggBlock {
            conv1: Conv1dParams::init(store, &format!("{name}.conv1"), KERNEL_SIZE, in_channels, width, rng),
            conv2: Conv1dParams::init(store, &format!("{name}.conv2"), KERNEL_SIZE, width, width, rng),
            se: se.map(|cfg| SeUnit::init(store, &format!("{name}.se"), width, cfg, rng)),
            pool,
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.se.as_ref().map_or(0, SeUnit::param_count)
    }

    pub fn apply<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: NodeId) -> Result<NodeId> {
        let h = self.conv1.apply(tape, store, x)?;
        let h = tape.relu(h);
        let h = self.conv2.apply(tape, store, h)?;
        let mut h = tape.relu(h);
        if let Some(se) = &self.se {
            h = se.apply(tape, store, h)?;
        }
        if self.pool {
            h = tape.maxpool1d(h)?;
        }
        Ok(h)
    }
}

/// conv → ReLU → conv → [SE], added to the (projected) input, then ReLU.
#[derive(Clone, Debug)]
pub struct ResNetBlock {
    pub conv1: Conv1dParams,
    pub conv2: Conv1dParams,
    pub se: Option<SeUnit>,
    /// 1×1 convolution on the skip path when the width changes.
    pub projection: Option<Conv1dParams>,
}

impl ResNetBlock {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        width: usize,
        se: Option<SeConfig>,
        rng: &mut impl Rng,
    ) -> Self {
        ResNetBlock {
            conv1: Conv1dParams::init(store, &format!("{name}.conv1"), KERNEL_SIZE, in_channels, width, rng),
            conv2: Conv1dParams::init(store, &format!("{name}.conv2"), KERNEL_SIZE, width, width, rng),
            se: se.map(|cfg| SeUnit::init(store, &format!("{name}.se"), width, cfg, rng)),
            projection: (in_channels != width)
                .then(|| Conv1dParams::init(store, &format!("{name}.proj"), 1, in_channels, width, rng)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.conv2.param_count()
            + self.se.as_ref().map_or(0, SeUnit::param_count)
            + self.projection.as_ref().map_or(0, Conv1dParams::param_count)
    }

    pub fn apply<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: NodeId) -> Result<NodeId> {
        let h = self.conv1.apply(tape, store, x)?;
        let h = tape.relu(h);
        let mut h = self.conv2.apply(tape, store, h)?;
        if let Some(se) = &self.se {
            h = se.apply(tape, store, h)?;
        }
        let skip = match &self.projection {
            Some(p) => p.apply(tape, store, x)?,
            None => x,
        };
        let sum = tape.add(h, skip)?;
        Ok(tape.relu(sum))
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Vgg(VggBlock),
    ResNet(ResNetBlock),
}

impl Block {
    pub fn param_count(&self) -> usize {
        match self {
            Block::Vgg(b) => b.param_count(),
            Block::ResNet(b) => b.param_count(),
        }
    }

    pub fn apply<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: NodeId) -> Result<NodeId> {
        match self {
            Block::Vgg(b) => b.apply(tape, store, x),
            Block::ResNet(b) => b.apply(tape, store, x),
        }
    }
}
