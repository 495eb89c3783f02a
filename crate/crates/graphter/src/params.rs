//! Named parameter storage shared by model layers, the optimizer and the
//! checkpoint writer.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Entry<F> {
    name: String,
    tensor: Tensor<F>,
    grad: Option<Vec<F>>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    entries: Vec<Entry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.entries.push(Entry { name: name.into(), tensor, grad: None });
        ParamId(self.entries.len() - 1)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn grad(&self, id: ParamId) -> Option<&[F]> {
        self.entries[id.0].grad.as_deref()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[F]) {
        let entry = &mut self.entries[id.0];
        debug_assert_eq!(g.len(), entry.tensor.numel());
        match &mut entry.grad {
            Some(acc) => {
                for (a, &gi) in acc.iter_mut().zip(g) {
                    *a = *a + gi;
                }
            }
            None => entry.grad = Some(g.to_vec()),
        }
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Iterate (name, tensor) pairs, e.g. for checkpointing.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }
}
