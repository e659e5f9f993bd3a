//! Dense row-major vector storage keyed by external id.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::VectorId;

/// A set of `dim`-dimensional vectors with stable external ids.
///
/// Removal compacts by moving the last row into the hole, so row order is
/// not stable across deletes; ids are.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorStore {
    dim: usize,
    ids: Vec<VectorId>,
    data: Vec<f32>,
    rows: HashMap<VectorId, usize>,
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    /// Builds a store from row-major data; ids default to row numbers.
    pub fn from_rows(dim: usize, data: Vec<f32>, ids: Option<Vec<VectorId>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        let n = data.len() / dim;
        let ids = ids.unwrap_or_else(|| (0..n as VectorId).collect());
        if ids.len() != n {
            return Err(Error::invalid(format!("{} ids for {n} rows", ids.len())));
        }
        let mut rows = HashMap::with_capacity(n);
        for (r, &id) in ids.iter().enumerate() {
            if rows.insert(id, r).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(Self {
            dim,
            ids,
            data,
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[VectorId] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn get(&self, id: VectorId) -> Option<&[f32]> {
        self.rows.get(&id).map(|&r| self.row(r))
    }

    pub fn contains(&self, id: VectorId) -> bool {
        self.rows.contains_key(&id)
    }

    pub fn push(&mut self, id: VectorId, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if self.rows.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.rows.insert(id, self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn remove(&mut self, id: VectorId) -> bool {
        let Some(r) = self.rows.remove(&id) else {
            return false;
        };
        let last = self.ids.len() - 1;
        if r != last {
            self.ids.swap(r, last);
            let moved = self.ids[r];
            self.rows.insert(moved, r);
            let (head, tail) = self.data.split_at_mut(last * self.dim);
            head[r * self.dim..(r + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
        }
        self.ids.pop();
        self.data.truncate(last * self.dim);
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = (VectorId, &[f32])> {
        self.ids
            .iter()
            .copied()
            .zip(self.data.chunks_exact(self.dim.max(1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_remove_keeps_rows_consistent() {
        let mut s = VectorStore::new(2);
        for i in 0..5u64 {
            s.push(i, &[i as f32, -(i as f32)]).unwrap();
        }
        assert!(matches!(s.push(3, &[0.0, 0.0]), Err(Error::DuplicateId(3))));
        assert!(s.push(9, &[0.0]).is_err());
        assert!(s.remove(1));
        assert!(!s.remove(1));
        assert_eq!(s.len(), 4);
        for (id, v) in s.iter() {
            assert_eq!(v, &[id as f32, -(id as f32)]);
            assert_eq!(s.get(id), Some(v));
        }
        assert!(s.remove(4));
        assert!(s.remove(0));
        assert_eq!(s.ids().len(), 2);
    }

    #[test]
    fn from_rows_validates() {
        assert!(VectorStore::from_rows(0, vec![], None).is_err());
        assert!(VectorStore::from_rows(2, vec![1.0, 2.0, 3.0], None).is_err());
        assert!(VectorStore::from_rows(1, vec![1.0, 2.0], Some(vec![4, 4])).is_err());
        let s = VectorStore::from_rows(1, vec![1.0, 2.0], None).unwrap();
        assert_eq!(s.ids(), &[0, 1]);
    }
}
