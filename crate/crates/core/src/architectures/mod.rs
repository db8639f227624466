//! Model families built from a depth summary: VGG, ResNet (optionally with
//! squeeze-and-excitation units) and plain MLP benchmarks.

mod blocks;
pub mod checkpoint;
mod model;

use std::fmt;
use std::str::FromStr;

pub use blocks::{Block, ResNetBlock, SeUnit, VggBlock};
pub use model::Model;

use crate::error::{Error, Result};

/// Length of the encoded feature vector fed to every model.
pub const INPUT_LENGTH: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Vgg,
    ResNet,
    Mlp,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Vgg => "vgg",
            Family::ResNet => "resnet",
            Family::Mlp => "mlp",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vgg" => Ok(Family::Vgg),
            "resnet" => Ok(Family::ResNet),
            "mlp" => Ok(Family::Mlp),
            other => Err(Error::Config(format!("unknown model family '{other}'"))),
        }
    }
}

/// Ordered per-block channel widths of a convolutional model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthSummary(Vec<usize>);

impl DepthSummary {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::Config("depth summary needs at least one block".into()));
        }
        if widths.contains(&0) {
            return Err(Error::Config("depth summary widths must be positive".into()));
        }
        if widths.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!("depth summary must be non-decreasing: {widths:?}")));
        }
        Ok(DepthSummary(widths))
    }

    /// The published depth summaries for 3 to 10 blocks.
    pub fn standard(blocks: usize) -> Result<Self> {
        let widths: &[usize] = match blocks {
            3 => &[64, 128, 256],
            4 => &[64, 128, 256, 512],
            5 => &[64, 128, 256, 512, 1024],
            6 => &[64, 128, 256, 256, 512, 1024],
            7 => &[64, 128, 256, 256, 512, 512, 1024],
            8 => &[64, 128, 128, 256, 256, 512, 512, 1024],
            9 => &[64, 64, 128, 128, 256, 256, 512, 512, 1024],
            10 => &[64, 64, 128, 128, 256, 256, 512, 512, 1024, 1024],
            n => return Err(Error::Config(format!("no published depth summary for {n} blocks (3..=10)"))),
        };
        DepthSummary::new(widths.to_vec())
    }

    /// Every width divided by `divisor` (at least 1), for reduced-cost experiments.
    pub fn scaled_down(&self, divisor: usize) -> Self {
        let d = divisor.max(1);
        DepthSummary(self.0.iter().map(|w| (w / d).max(1)).collect())
    }

    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    pub fn blocks(&self) -> usize {
        self.0.len()
    }

    /// Powers of two in [64, 1024] and 3 to 10 blocks.
    pub fn is_standard(&self) -> bool {
        (3..=10).contains(&self.0.len())
            && self.0.iter().all(|w| w.is_power_of_two() && (64..=1024).contains(w))
    }
}

/// Squeeze-and-excitation settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeConfig {
    pub reduction: usize,
    pub bias: bool,
}

impl Default for SeConfig {
    fn default() -> Self {
        SeConfig { reduction: 16, bias: true }
    }
}

impl SeConfig {
    pub fn bottleneck(&self, channels: usize) -> usize {
        (channels / self.reduction.max(1)).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub family: Family,
    /// Block widths for conv families, hidden layer widths for MLPs.
    pub widths: Vec<usize>,
    pub se: Option<SeConfig>,
    pub input_length: usize,
    pub input_channels: usize,
    /// Hidden widths of the fully connected head; a linear unit follows.
    pub head: Vec<usize>,
}

/// Two ReLU layers of 50 units ahead of the linear output.
pub const DEFAULT_HEAD: [usize; 2] = [50, 50];

impl ModelSpec {
    pub fn conv(family: Family, summary: &DepthSummary) -> Self {
        ModelSpec {
            family,
            widths: summary.widths().to_vec(),
            se: None,
            input_length: INPUT_LENGTH,
            input_channels: 1,
            head: DEFAULT_HEAD.to_vec(),
        }
    }

    pub fn vgg(blocks: usize) -> Result<Self> {
        Ok(Self::conv(Family::Vgg, &DepthSummary::standard(blocks)?))
    }

    pub fn resnet(blocks: usize) -> Result<Self> {
        Ok(Self::conv(Family::ResNet, &DepthSummary::standard(blocks)?))
    }

    /// A ReLU MLP over the flattened input with the given hidden widths.
    pub fn mlp(hidden: &[usize]) -> Self {
        ModelSpec {
            family: Family::Mlp,
            widths: hidden.to_vec(),
            se: None,
            input_length: INPUT_LENGTH,
            input_channels: 1,
            head: vec![],
        }
    }

    /// Two hidden layers of 50 units.
    pub fn mlp1() -> Self {
        Self::mlp(&[50; 2])
    }

    /// Five hidden layers of 50 units.
    pub fn mlp2() -> Self {
        Self::mlp(&[50; 5])
    }

    pub fn with_se(mut self, se: SeConfig) -> Self {
        self.se = Some(se);
        self
    }

    pub fn name(&self) -> String {
        match self.family {
            Family::Mlp => {
                let w: Vec<String> = self.widths.iter().map(usize::to_string).collect();
                format!("MLP[{}]", w.join(","))
            }
            f => {
                let base = if f == Family::Vgg { "VGG" } else { "ResNet" };
                let se = if self.se.is_some() { "SE-" } else { "" };
                format!("{se}{base}-{}", self.widths.len())
            }
        }
    }

    /// 1-indexed block numbers followed by a max-pool (VGG only).
    pub fn pooling_blocks(&self) -> Vec<usize> {
        if self.family != Family::Vgg {
            return vec![];
        }
        let blocks = self.widths.len();
        let pools = max_pools(self.input_length).min(blocks);
        if pools == 0 {
            return vec![];
        }
        pool_placement(blocks, pools).expect("pools <= blocks")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_length == 0 || self.input_channels == 0 {
            return Err(Error::Config("input length and channels must be positive".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("model widths must be non-empty and positive".into()));
        }
        if self.head.contains(&0) {
            return Err(Error::Config("head widths must be positive".into()));
        }
        match self.family {
            Family::Mlp => {
                if self.se.is_some() {
                    return Err(Error::Config("SE units need a convolutional family".into()));
                }
            }
            _ => {
                DepthSummary::new(self.widths.clone())?;
                if let Some(se) = self.se {
                    if se.reduction == 0 {
                        return Err(Error::Config("SE reduction ratio must be positive".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Flat `key=value` text used inside checkpoints.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        s.push_str(&format!("family={}\n", self.family));
        s.push_str(&format!("widths={}\n", join(&self.widths)));
        match self.se {
            Some(se) => {
                s.push_str("se=true\n");
                s.push_str(&format!("se_reduction={}\n", se.reduction));
                s.push_str(&format!("se_bias={}\n", se.bias));
            }
            None => s.push_str("se=false\n"),
        }
        s.push_str(&format!("input_length={}\n", self.input_length));
        s.push_str(&format!("input_channels={}\n", self.input_channels));
        s.push_str(&format!("head={}\n", join(&self.head)));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed spec line '{line}'")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Config(format!("model spec is missing '{k}'")));
        let list = |v: &str| -> Result<Vec<usize>> {
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',')
                .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad width '{p}'"))))
                .collect()
        };
        let parse_num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Config(format!("bad value for '{k}'")))
        };
        let se = match get("se")?.as_str() {
            "true" => Some(SeConfig {
                reduction: parse_num("se_reduction")?,
                bias: get("se_bias")? == "true",
            }),
            _ => None,
        };
        let spec = ModelSpec {
            family: get("family")?.parse()?,
            widths: list(get("widths")?)?,
            se,
            input_length: parse_num("input_length")?,
            input_channels: parse_num("input_channels")?,
            head: list(get("head")?)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// How many stride-2 pools fit before the length drops below 2.
pub fn max_pools(mut len: usize) -> usize {
    let mut n = 0;
    while len >= 2 {
        len /= 2;
        n += 1;
    }
    n
}

/// Spreads `pools` pooling layers over `blocks` blocks, earliest first.
///
/// Block `i` (1-indexed) is followed by a pool iff
/// `ceil(i·P/B) > ceil((i−1)·P/B)`.
pub fn pool_placement(blocks: usize, pools: usize) -> Result<Vec<usize>> {
    if pools == 0 || pools > blocks {
        return Err(Error::contract(format!("need 1 <= pools ({pools}) <= blocks ({blocks})")));
    }
    let ceil_div = |a: usize, b: usize| a.div_ceil(b);
    Ok((1..=blocks)
        .filter(|&i| ceil_div(i * pools, blocks) > ceil_div((i - 1) * pools, blocks))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_examples() {
        assert_eq!(pool_placement(3, 3).unwrap(), vec![1, 2, 3]);
        assert_eq!(pool_placement(6, 3).unwrap(), vec![1, 3, 5]);
        assert_eq!(pool_placement(4, 3).unwrap(), vec![1, 2, 3]);
        assert_eq!(pool_placement(10, 3).unwrap(), vec![1, 4, 7]);
        assert!(pool_placement(2, 3).is_err());
        assert!(pool_placement(2, 0).is_err());
    }

    #[test]
    fn placement_yields_exactly_p_pools() {
        for b in 1..=20 {
            for p in 1..=b {
                let set = pool_placement(b, p).unwrap();
                assert_eq!(set.len(), p, "B={b} P={p}");
                assert_eq!(set[0], 1);
            }
        }
    }

    #[test]
    fn twelve_allows_three_pools() {
        assert_eq!(max_pools(12), 3);
        assert_eq!(max_pools(1), 0);
        assert_eq!(max_pools(2), 1);
    }

    #[test]
    fn vgg_pools_and_resnet_does_not() {
        for b in 3..=10 {
            assert_eq!(ModelSpec::vgg(b).unwrap().pooling_blocks().len(), 3);
            assert!(ModelSpec::resnet(b).unwrap().pooling_blocks().is_empty());
        }
    }

    #[test]
    fn standard_summaries_are_valid() {
        for b in 3..=10 {
            let d = DepthSummary::standard(b).unwrap();
            assert_eq!(d.blocks(), b);
            assert!(d.is_standard());
        }
        assert!(DepthSummary::standard(11).is_err());
        assert!(!DepthSummary::new(vec![2, 4, 8]).unwrap().is_standard());
        assert!(DepthSummary::new(vec![8, 4]).is_err());
    }

    #[test]
    fn spec_text_round_trip() {
        let specs = [
            ModelSpec::vgg(6).unwrap().with_se(SeConfig::default()),
            ModelSpec::resnet(3).unwrap(),
            ModelSpec::mlp2(),
        ];
        for s in specs {
            assert_eq!(ModelSpec::from_text(&s.to_text()).unwrap(), s);
        }
    }

    #[test]
    fn names() {
        assert_eq!(ModelSpec::vgg(6).unwrap().name(), "VGG-6");
        assert_eq!(ModelSpec::resnet(8).unwrap().with_se(SeConfig::default()).name(), "SE-ResNet-8");
        assert_eq!(ModelSpec::mlp1().name(), "MLP[50,50]");
    }
}
