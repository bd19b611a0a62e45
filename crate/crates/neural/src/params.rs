//! Named, block-tagged network parameters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockTag {
    DownConv(u8),
    Rnn(u8),
    UpConv(u8),
    Head,
    /// Discriminator convolution stages.
    Disc(u8),
    DiscHead,
}

impl BlockTag {
    pub fn is_rnn(self) -> bool {
        matches!(self, BlockTag::Rnn(_))
    }
}

impl fmt::Display for BlockTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockTag::DownConv(k) => write!(f, "down_conv_{k}"),
            BlockTag::Rnn(k) => write!(f, "rnn_{k}"),
            BlockTag::UpConv(k) => write!(f, "up_conv_{k}"),
            BlockTag::Head => write!(f, "head"),
            BlockTag::Disc(k) => write!(f, "disc_{k}"),
            BlockTag::DiscHead => write!(f, "disc_head"),
        }
    }
}

impl FromStr for BlockTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format {
            what: "block tag",
            reason: format!("unknown tag {s:?}"),
        };
        match s {
            "head" => return Ok(BlockTag::Head),
            "disc_head" => return Ok(BlockTag::DiscHead),
            _ => {}
        }
        let (prefix, k) = s.rsplit_once('_').ok_or_else(bad)?;
        let k: u8 = k.parse().map_err(|_| bad())?;
        if !(1..=4).contains(&k) {
            return Err(bad());
        }
        match prefix {
            "down_conv" => Ok(BlockTag::DownConv(k)),
            "rnn" => Ok(BlockTag::Rnn(k)),
            "up_conv" => Ok(BlockTag::UpConv(k)),
            "disc" => Ok(BlockTag::Disc(k)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for BlockTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub tag: BlockTag,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

/// Parameter counts, overall and per block tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
    pub per_block: BTreeMap<String, usize>,
}

impl ParamCounts {
    pub fn trainable_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.trainable as f64 / self.total as f64
        }
    }
}

pub fn count_parameters(params: &ParameterSet) -> ParamCounts {
    let mut per_block = BTreeMap::new();
    let (mut total, mut trainable) = (0, 0);
    for p in params.iter() {
        let n = p.value.len();
        total += n;
        if !p.frozen {
            trainable += n;
        }
        *per_block.entry(p.tag.to_string()).or_insert(0) += n;
    }
    ParamCounts {
        total,
        trainable,
        frozen: total - trainable,
        per_block,
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: Parameter) -> Result<()> {
        if self.index.contains_key(&p.name) {
            return Err(Error::TagMismatch(format!("duplicate parameter {}", p.name)));
        }
        self.index.insert(p.name.clone(), self.params.len());
        self.params.push(p);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).copied().map(move |i| &mut self.params[i])
    }

    /// Freeze (or unfreeze) every parameter of the recurrent blocks.
    pub fn set_rnn_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            if p.tag.is_rnn() {
                p.frozen = frozen;
            }
        }
    }

    pub fn unfreeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = false;
        }
    }

    /// Place every parameter on `g`; frozen ones as constants.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound::new(self, g, false)
    }

    /// Place every parameter on `g` as a constant.
    pub fn bind_constant(&self, g: &mut Graph) -> Bound {
        Bound::new(self, g, true)
    }

    /// Same names, tags and shapes as `other` (values and frozen flags aside).
    pub fn check_layout(&self, other: &ParameterSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::TagMismatch(format!("{} parameters, expected {}", self.len(), other.len())));
        }
        for p in other.iter() {
            let q = self
                .get(&p.name)
                .ok_or_else(|| Error::TagMismatch(format!("missing parameter {}", p.name)))?;
            if q.tag != p.tag {
                return Err(Error::TagMismatch(format!("{}: tag {} expected {}", p.name, q.tag, p.tag)));
            }
            if q.value.shape() != p.value.shape() {
                return Err(Error::TagMismatch(format!(
                    "{}: shape {:?} expected {:?}",
                    p.name,
                    q.value.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Parameters placed on a graph, addressable by name.
pub struct Bound {
    vars: HashMap<String, Var>,
    order: Vec<(String, Var)>,
}

impl Bound {
    fn new(params: &ParameterSet, g: &mut Graph, all_constant: bool) -> Self {
        let mut vars = HashMap::with_capacity(params.len());
        let mut order = Vec::with_capacity(params.len());
        for p in params.iter() {
            let v = g.leaf(p.value.clone(), !(all_constant || p.frozen));
            vars.insert(p.name.clone(), v);
            order.push((p.name.clone(), v));
        }
        Self { vars, order }
    }

    /// Bind already-placed variables by name, e.g. to differentiate with
    /// respect to a chosen subset of parameters.
    pub fn from_vars<S: Into<String>>(vars: impl IntoIterator<Item = (S, Var)>) -> Self {
        let order: Vec<(String, Var)> = vars.into_iter().map(|(n, v)| (n.into(), v)).collect();
        let vars = order.iter().cloned().collect();
        Self { vars, order }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::TagMismatch(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.order.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Gaussian initial values with standard deviation `std`.
pub(crate) fn normal_tensor<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    Tensor::from_shape_simple_fn(shape, || std * rng.sample::<f64, _>(StandardNormal))
}
