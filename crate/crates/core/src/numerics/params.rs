use alloc::string::String;
use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// The four trainable groups of the reconstruction model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// 1-D convolution of the image-form transform.
    ImageConv1d,
    /// 2-D convolution of the image-form transform.
    ImageConv2d,
    /// Visibility query encoder.
    VisibilityQuery,
    /// Neural field plus its FiLM heads.
    Reconstructor,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::ImageConv1d,
        ParamGroup::ImageConv2d,
        ParamGroup::VisibilityQuery,
        ParamGroup::Reconstructor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::ImageConv1d => "theta_c1",
            ParamGroup::ImageConv2d => "theta_c2",
            ParamGroup::VisibilityQuery => "theta_v",
            ParamGroup::Reconstructor => "theta_r",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Named, grouped trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Scalar count of one group.
    pub fn group_size(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn total_size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a trainable leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.params.iter().map(|p| tape.leaf(p.value.clone())).collect())
    }

    /// Registers every parameter as a constant, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound(self.params.iter().map(|p| tape.constant(p.value.clone())).collect())
    }
}

/// Tape handles of a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}
