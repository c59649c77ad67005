//! Named parameter collections and the plain SGD update.

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub value: Tensor4,
}

/// Ordered `(name, shape, values)` entries for one module's parameters.
///
/// Order and shapes depend only on the architecture. Two sets are compatible
/// when names and shapes match entry by entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightSet {
    entries: Vec<WeightEntry>,
}

impl WeightSet {
    pub fn new(entries: Vec<WeightEntry>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor4) {
        self.entries.push(WeightEntry { name: name.into(), value });
    }

    pub fn entries(&self) -> &[WeightEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [WeightEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn get(&self, index: usize) -> &Tensor4 {
        &self.entries[index].value
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor4 {
        &mut self.entries[index].value
    }

    /// `(name, dims)` per entry.
    pub fn layout(&self) -> Vec<(String, [usize; 4])> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.dims())).collect()
    }

    /// Error names the first entry whose name or shape differs.
    pub fn check_compatible(&self, other: &WeightSet) -> Result<()> {
        for (index, (a, b)) in self.entries.iter().zip(&other.entries).enumerate() {
            if a.name != b.name || a.value.dims() != b.value.dims() {
                return Err(Error::Incompatible {
                    index,
                    expected: format!("{} {:?}", a.name, a.value.dims()),
                    found: format!("{} {:?}", b.name, b.value.dims()),
                });
            }
        }
        if self.entries.len() != other.entries.len() {
            let index = self.entries.len().min(other.entries.len());
            let describe = |s: &WeightSet| {
                s.entries
                    .get(index)
                    .map(|e| format!("{} {:?}", e.name, e.value.dims()))
                    .unwrap_or_else(|| "<end>".into())
            };
            return Err(Error::Incompatible {
                index,
                expected: describe(self),
                found: describe(other),
            });
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| WeightEntry {
                    name: e.name.clone(),
                    value: Tensor4::zeros(e.value.dims()),
                })
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().flat_map(|e| e.value.data().iter().copied())
    }

    /// Flat parameter `i` across all entries, in entry order.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for e in &mut self.entries {
            let n = e.value.len();
            if i < n {
                return &mut e.value.data_mut()[i];
            }
            i -= n;
        }
        panic!("parameter index out of range");
    }

    /// In-place `theta <- theta - eta * g`.
    pub fn apply_sgd(&mut self, grads: &WeightSet, eta: f64) -> Result<()> {
        self.check_compatible(grads)?;
        if !eta.is_finite() || eta < 0.0 {
            return Err(contract(format!("learning rate {eta} must be finite and >= 0")));
        }
        for (w, g) in self.entries.iter_mut().zip(&grads.entries) {
            for (t, &d) in w.value.data_mut().iter_mut().zip(g.value.data()) {
                *t -= eta * d;
            }
        }
        Ok(())
    }
}

/// Plain SGD without momentum: returns `weights - eta * grads`.
pub fn sgd_step(weights: &WeightSet, grads: &WeightSet, eta: f64) -> Result<WeightSet> {
    let mut out = weights.clone();
    out.apply_sgd(grads, eta)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> WeightSet {
        let mut w = WeightSet::default();
        w.push("w", Tensor4::filled([1, 1, 1, 1], v));
        w
    }

    #[test]
    fn sgd_examples() {
        let w = sgd_step(&single(1.0), &single(0.5), 0.1).unwrap();
        assert_eq!(w.get(0).data()[0], 0.95);
        assert_eq!(sgd_step(&single(1.0), &single(0.0), 0.1).unwrap(), single(1.0));
        assert_eq!(sgd_step(&single(1.0), &single(0.5), 0.0).unwrap(), single(1.0));
    }

    #[test]
    fn incompatibility_names_first_mismatch() {
        let mut a = single(0.0);
        a.push("b", Tensor4::zeros([1, 1, 1, 2]));
        let mut b = single(0.0);
        b.push("b", Tensor4::zeros([1, 1, 1, 3]));
        match a.check_compatible(&b) {
            Err(Error::Incompatible { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(a.check_compatible(&single(0.0)), Err(Error::Incompatible { index: 1, .. })));
        assert!(sgd_step(&a, &b, 0.1).is_err());
    }
}
