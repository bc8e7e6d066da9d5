use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Shape, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn next_store_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Every store carries a process-unique id so one tape can hold parameters
/// from several networks (generator and discriminator) without mixing up
/// their gradients.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: next_store_id(),
            names: self.names.clone(),
            tensors: self.tensors.clone(),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            uid: next_store_id(),
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// He-normal initialised conv weight `[out, in, k, k]` and zero bias.
    pub fn conv<R: Rng>(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        gain: f32,
        rng: &mut R,
    ) -> (ParamId, ParamId) {
        let fan_in = (in_ch * k * k) as f32;
        let std = gain * (2.0 / fan_in).sqrt();
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let shape = Shape::new(out_ch, in_ch, k, k);
        let data = (0..shape.numel()).map(|_| normal.sample(rng)).collect();
        let w = self.push(format!("{name}.weight"), Tensor::from_vec(shape, data));
        let b = self.push(format!("{name}.bias"), Tensor::zeros(Shape::new(out_ch, 1, 1, 1)));
        (w, b)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}
