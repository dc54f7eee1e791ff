use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: Tensor,
    grad: Tensor,
}

/// Named parameters with a gradient accumulator of identical shape.
///
/// Iteration order is the lexicographic order of names, which keeps
/// flattening and checkpoint layout deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a parameter; its gradient is reset to zero.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name.into(), Entry { value, grad });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::NotFound(format!("parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::NotFound(format!("parameter `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.grad))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub(crate) fn accumulate(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::NotFound(format!("parameter `{name}`")))?;
        if entry.grad.len() != delta.len() {
            return Err(Error::shape(
                "accumulate",
                format!("`{name}` has {} entries, gradient has {}", entry.grad.len(), delta.len()),
            ));
        }
        for (g, d) in entry.grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// `value -= lr * grad` for every parameter.
    pub fn descend(&mut self, lr: f64) {
        for e in self.entries.values_mut() {
            let grad = e.grad.data().to_vec();
            for (v, g) in e.value.data_mut().iter_mut().zip(grad) {
                *v -= lr * g;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|e| e.grad.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|e| e.value.is_finite())
    }
}

/// Central-difference gradient of `f` with respect to every scalar in `store`.
pub fn finite_diff_gradient<F>(
    store: &ParamStore,
    mut f: F,
    eps: f64,
) -> Result<BTreeMap<String, Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut work = store.clone();
    let mut out = BTreeMap::new();
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let len = store.value(&name)?.len();
        let mut grad = Tensor::zeros(store.value(&name)?.shape());
        for idx in 0..len {
            let orig = work.value(&name)?.data()[idx];
            work.value_mut(&name)?.data_mut()[idx] = orig + eps;
            let plus = f(&work)?;
            work.value_mut(&name)?.data_mut()[idx] = orig - eps;
            let minus = f(&work)?;
            work.value_mut(&name)?.data_mut()[idx] = orig;
            grad.data_mut()[idx] = (plus - minus) / (2.0 * eps);
        }
        out.insert(name, grad);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_square() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::vector(vec![1.0]));
        let g = finite_diff_gradient(&s, |p| Ok(p.value("x")?.data()[0].powi(2)), 1e-5).unwrap();
        assert!((g["x"].data()[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn fd_of_constant_is_zero() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![1.0, -2.0, 3.0]));
        s.insert("b", Tensor::identity(2));
        let g = finite_diff_gradient(&s, |_| Ok(4.2), 1e-5).unwrap();
        assert!(g.values().all(|t| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let s = ParamStore::new();
        assert!(finite_diff_gradient(&s, |_| Ok(0.0), 0.0).is_err());
    }

    #[test]
    fn grads_match_value_shapes() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[3, 4]));
        s.insert("b", Tensor::zeros(&[4]));
        for (name, v) in s.iter() {
            assert_eq!(v.shape(), s.grad(name).unwrap().shape());
        }
        assert!(s.accumulate("w", &[1.0; 5]).is_err());
    }
}
