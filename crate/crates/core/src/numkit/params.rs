use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
                .collect(),
        }
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Errors unless `other` has exactly the same names and shapes.
    pub fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch {
                op: "param set size",
                left: vec![self.tensors.len()],
                right: vec![other.tensors.len()],
            });
        }
        for ((ka, va), (kb, vb)) in self.tensors.iter().zip(&other.tensors) {
            if ka != kb {
                return Err(Error::UnknownParam(kb.clone()));
            }
            if va.shape() != vb.shape() {
                return Err(Error::ShapeMismatch {
                    op: "param set entry",
                    left: va.shape().to_vec(),
                    right: vb.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Copy with every name prefixed by `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
                .collect(),
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Moves every entry of `other` into `self`; names must not collide.
    pub fn merge(&mut self, other: ParamSet) -> Result<()> {
        for (k, v) in other.tensors {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// Euclidean distance between two sets with the same layout.
    pub fn distance(&self, other: &ParamSet) -> Result<f64> {
        self.check_same_layout(other)?;
        let mut acc = 0.0;
        for (a, b) in self.tensors.values().zip(other.tensors.values()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                acc += (x - y) * (x - y);
            }
        }
        Ok(acc.sqrt())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            tensors: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_is_lexicographic_and_names_unique() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::zeros(vec![1])).unwrap();
        p.insert("a", Tensor::zeros(vec![2])).unwrap();
        assert!(p.insert("a", Tensor::zeros(vec![2])).is_err());
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(p.num_values(), 3);
    }

    #[test]
    fn prefix_round_trip() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let q = p.with_prefix("a.");
        assert!(q.get("a.w").is_ok());
        assert_eq!(q.strip_prefix("a."), p);
        assert!(q.strip_prefix("b.").is_empty());
    }

    #[test]
    fn layout_mismatch_detected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![2])).unwrap();
        let mut q = ParamSet::new();
        q.insert("w", Tensor::zeros(vec![3])).unwrap();
        assert!(p.check_same_layout(&q).is_err());
        assert!(p.check_same_layout(&p.zeros_like()).is_ok());
    }
}
