use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Non-trainable entries (fixed permutations, sign vectors, init flags) are persisted but
    /// never receive gradients.
    pub trainable: bool,
}

/// Owns every parameter of a model. Each entry carries a version counter that changes on
/// every write, so derived caches can detect staleness.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    params: Vec<Param>,
    versions: Vec<u64>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
            versions: self.versions.clone(),
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed), params: Vec::new(), versions: Vec::new() }
    }

    /// Process-unique identity of this store.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        self.params.push(Param { name: name.into(), value, trainable });
        self.versions.push(0);
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn version(&self, id: ParamId) -> u64 {
        self.versions[id.0]
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        self.versions[id.0] += 1;
        Ok(())
    }

    /// Mutable access; counts as a write.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.versions[id.0] += 1;
        &mut self.params[id.0].value
    }

    /// Number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on `tape`, trainable ones as leaves. Indexed by [`ParamId`].
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if p.trainable { tape.leaf(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect()
    }

    /// Puts every parameter on `tape` as a constant.
    pub fn bind_constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.value.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versions_track_writes() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::zeros(&[2]), true);
        assert_eq!(s.version(a), 0);
        s.set(a, Tensor::vector(vec![1.0, 2.0])).unwrap();
        s.get_mut(a).data_mut()[0] = 3.0;
        assert_eq!(s.version(a), 2);
        assert!(s.set(a, Tensor::zeros(&[3])).is_err());
        assert_eq!(s.find("a"), Some(a));
    }

    #[test]
    fn clones_get_fresh_identity() {
        let s = ParamStore::new();
        assert_ne!(s.clone().id(), s.id());
    }

    #[test]
    fn bind_marks_only_trainable_leaves() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(1.0), true);
        s.add("flag", Tensor::scalar(0.0), false);
        let mut t = Tape::new();
        let v = s.bind(&mut t);
        assert!(t.needs_grad(v[0]));
        assert!(!t.needs_grad(v[1]));
        assert_eq!(s.trainable_len(), 1);
    }
}
