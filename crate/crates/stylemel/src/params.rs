//! Named persistent parameter storage.
//!
//! The tape is rebuilt every training step, so parameters live outside it as
//! raw buffers and are re-leafed ("bound") onto each fresh tape. Registration
//! order is fixed at model construction and doubles as the checkpoint blob
//! order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Tape, Tensor};

pub type ParamId = usize;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// N(0, std²) element-wise.
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name `{name}`"
        );
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => (0..n)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            data,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        &mut self.entries[id].data
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Leaf every parameter onto `tape`, in registration order.
    pub fn bind(&self, tape: &Tape) -> Bound {
        let tensors = self
            .entries
            .iter()
            .map(|e| tape.leaf(e.data.clone(), &e.shape))
            .collect();
        Bound { tensors }
    }
}

/// One step's tape-resident view of the whole [`ParamStore`].
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    /// Assemble a view from explicit tensors (index-aligned with the store);
    /// used by the gradient checker to substitute probe leaves for selected
    /// parameters.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Bound { tensors }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    /// The tape the parameters were leafed onto.
    pub fn tape(&self) -> &Tape {
        self.tensors
            .first()
            .map(|t| t.tape())
            .expect("bound parameter set is empty")
    }

    /// Gradient of parameter `id` accumulated by the last backward pass,
    /// or zeros when no loss touched it.
    pub fn grad_or_zero(&self, id: ParamId) -> Vec<f64> {
        self.tensors[id]
            .grad()
            .unwrap_or_else(|| vec![0.0; self.tensors[id].numel()])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn registration_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut ps = ParamStore::new();
            ps.register("a", &[2, 3], Init::Normal(0.1), &mut rng);
            ps.register("b", &[4], Init::Const(1.0), &mut rng);
            ps
        };
        let p1 = build();
        let p2 = build();
        assert_eq!(p1.entry(0).data, p2.entry(0).data);
        assert_eq!(p1.entry(1).data, vec![1.0; 4]);
    }

    #[test]
    fn bind_roundtrips_values_and_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::new();
        let w = ps.register("w", &[3], Init::Normal(1.0), &mut rng);
        let tape = Tape::new();
        let bound = ps.bind(&tape);
        assert_eq!(bound.get(w).data(), ps.entry(w).data);
        bound
            .get(w)
            .mul(bound.get(w))
            .unwrap()
            .sum_all()
            .backward()
            .unwrap();
        let g = bound.grad_or_zero(w);
        let expect: Vec<f64> = ps.entry(w).data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(g, expect);
    }
}
