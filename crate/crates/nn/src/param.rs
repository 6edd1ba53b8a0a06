//! Named trainable parameters and the set that owns them.

use crate::error::NnError;
use ferrograd_core::{ParamId, Tape, Tensor, Var};
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Owns every parameter of a model in declaration order. Layers hold ids
/// into this set; optimizers walk it mutably between tapes.
#[derive(Debug, Default, Clone)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NnError> {
        self.add_with(name, value, true)
    }

    pub fn add_frozen(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
    ) -> Result<ParamId, NnError> {
        self.add_with(name, value, false)
    }

    fn add_with(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        trainable: bool,
    ) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            trainable,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id].value
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate()
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers the parameter on a tape and returns its variable.
    pub fn var<'t>(&self, tape: &'t Tape, id: ParamId) -> Var<'t> {
        tape.param(id, &self.params[id].value)
    }
}
