use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Which half of the slow/fast split a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Slow,
    Fast,
}

/// Finer grouping used by the parameter report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Any coordinate network: kernel generators, hyper-weights, T reduction.
    SlowNet,
    ChannelMixer,
    Bottleneck,
    Stem,
    Head,
}

impl Role {
    pub fn component(self) -> Component {
        match self {
            Role::SlowNet => Component::Slow,
            _ => Component::Fast,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Role::SlowNet => "slow_network",
            Role::ChannelMixer => "channel_mixer",
            Role::Bottleneck => "bottleneck",
            Role::Stem => "stem",
            Role::Head => "head",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    pub role: Role,
    pub block: Option<usize>,
}

impl Param {
    pub fn component(&self) -> Component {
        self.role.component()
    }
}

/// Named parameters in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, role: Role, block: Option<usize>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, trainable: true, role, block });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.value).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(Error::UnknownParameter(name.to_string())),
        }
    }

    /// Replaces a value; the shape must not change.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.trainable = trainable;
        Ok(())
    }

    /// Freezes or unfreezes every parameter of one component.
    pub fn set_component_trainable(&mut self, component: Component, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.component() == component) {
            p.trainable = trainable;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Gradients keyed by parameter name, in store order.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamGrads {
    pub fn insert(&mut self, name: String, grad: Tensor) {
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = grad,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, grad));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Multiplies every gradient by `s`.
    pub fn scale(&mut self, s: Scalar) {
        for (_, t) in &mut self.entries {
            *t = t.scale(s);
        }
    }

    /// Squared L2 norm over all gradients.
    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().flat_map(|(_, t)| t.data()).map(|&v| (v as f64) * (v as f64)).sum()
    }
}
