use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{he_init, Dims, Scalar, Tensor};

use super::plan::NetworkPlan;

/// Named parameter tensors in plan order (`conv1.w`, `fire2.squeeze.b`, ...).
///
/// Biases are stored as `(out, 1, 1, 1)` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// He-normal weights, zero biases, drawn in plan order from `rng`.
    pub fn init(plan: &NetworkPlan, rng: &mut Rng) -> Result<Self> {
        let mut store = Self::new();
        for p in plan.param_shapes() {
            let dims: Dims = p.dims.into();
            let t = if p.is_bias() {
                Tensor::zeros(dims)?
            } else {
                he_init(dims, p.fan_in, rng)?
            };
            store.insert(p.name, t)?;
        }
        Ok(store)
    }

    /// Every plan parameter set to zero.
    pub fn zeros(plan: &NetworkPlan) -> Result<Self> {
        let mut store = Self::new();
        for p in plan.param_shapes() {
            store.insert(p.name, Tensor::zeros(Dims::from(p.dims))?)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Data(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Data(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Data(format!("missing parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total scalar count.
    pub fn element_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.zeros_like()))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Same names and dims as `other`, in any order.
    pub fn check_compatible<U: Scalar>(&self, other: &ParamStore<U>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Data(format!(
                "parameter sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (name, t) in self.iter() {
            let o = other.get(name)?;
            if o.dims() != t.dims() {
                return Err(Error::shape(format!(
                    "parameter `{name}`: {} vs {}",
                    t.dims(),
                    o.dims()
                )));
            }
        }
        Ok(())
    }

    /// Checks that the store holds exactly the plan's parameters.
    pub fn check_plan(&self, plan: &NetworkPlan) -> Result<()> {
        let shapes = plan.param_shapes();
        if shapes.len() != self.len() {
            return Err(Error::Data(format!(
                "plan has {} parameter tensors, store has {}",
                shapes.len(),
                self.len()
            )));
        }
        for p in shapes {
            let t = self.get(&p.name)?;
            if t.dims() != Dims::from(p.dims) {
                return Err(Error::shape(format!(
                    "parameter `{}` should be {}, found {}",
                    p.name,
                    Dims::from(p.dims),
                    t.dims()
                )));
            }
        }
        Ok(())
    }

    /// `self += other` for every entry.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        for (name, t) in self.entries.iter_mut() {
            t.add_assign(other.get(name)?)?;
        }
        Ok(())
    }
}
