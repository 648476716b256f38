use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Which part of the model a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Encoder,
    SlHead,
    SslHead,
    /// Parameter sets that are not part of the sleep model (tests, toy problems).
    Other,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::SlHead => "sl_head",
            Group::SslHead => "ssl_head",
            Group::Other => "other",
        }
    }
}

/// Named parameter tensors with matching gradient slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    group: Group,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(group: Group) -> Self {
        Self {
            group,
            names: Vec::new(),
            params: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::ParamMismatch(format!("duplicate parameter name '{name}'")));
        }
        self.grads.push(Tensor::zeros(t.shape()));
        self.params.push(t);
        self.names.push(name);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, t: Tensor<T>) -> Result<Self> {
        self.push(name, t)?;
        Ok(self)
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn grads(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.grads
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(T::ZERO));
    }

    /// Replaces every gradient slot; shapes must match the parameters.
    pub fn set_grads(&mut self, grads: Vec<Tensor<T>>) -> Result<()> {
        if grads.len() != self.params.len()
            || grads.iter().zip(&self.params).any(|(g, p)| g.shape() != p.shape())
        {
            return Err(Error::ParamMismatch(format!(
                "{} gradients do not match the parameter layout",
                self.group.as_str()
            )));
        }
        self.grads = grads;
        Ok(())
    }

    /// Deep copy of the values; the copy never aliases the source.
    pub fn copy_params(&self) -> Self {
        self.clone()
    }

    /// Overwrites values (not gradients) with those of `src`.
    pub fn assign_params(&mut self, src: &ParamSet<T>) -> Result<()> {
        self.check_layout(src)?;
        for (d, s) in self.params.iter_mut().zip(&src.params) {
            d.data_mut().copy_from_slice(s.data());
        }
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamSet<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::ParamMismatch(format!(
                "names differ: {:?} vs {:?}",
                self.names, other.names
            )));
        }
        for ((n, a), b) in self.names.iter().zip(&self.params).zip(&other.params) {
            if a.shape() != b.shape() {
                return Err(Error::ParamMismatch(format!(
                    "'{n}': shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// All values flattened in parameter order.
    pub fn flat_values(&self) -> Vec<T> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            group: self.group,
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(Tensor::cast).collect(),
        }
    }
}
