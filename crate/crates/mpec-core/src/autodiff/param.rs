//! Named learnable parameters, kept outside any tape and re-bound as leaves
//! each step.

use super::{AdError, AdResult, Tensor};

/// A named learnable tensor.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// An ordered set of uniquely named parameters. Order is fixed at insertion
/// and used for gradient accumulation, optimizer state, and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> AdResult<()> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(AdError::DuplicateParameter(name));
        }
        self.params.push(Parameter { name, tensor });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn at(&self, index: usize) -> &Parameter {
        &self.params[index]
    }

    pub fn at_mut(&mut self, index: usize) -> &mut Parameter {
        &mut self.params[index]
    }

    /// Total number of scalar values across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Zeroed per-parameter gradient buffers in set order.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|p| vec![0.0; p.tensor.numel()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(matches!(
            ps.add("w", Tensor::zeros(vec![3])),
            Err(AdError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn order_is_insertion_order() {
        let mut ps = ParamSet::new();
        ps.add("b", Tensor::zeros(vec![1])).unwrap();
        ps.add("a", Tensor::zeros(vec![1])).unwrap();
        let names: Vec<_> = ps.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["b", "a"]);
    }
}
