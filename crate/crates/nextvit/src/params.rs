//! Layer parameter structs and the named parameter store.
//!
//! A `ParamSet` maps hierarchical dotted keys ("stage2.block3.mhca.gconv.weight")
//! to flat arrays with explicit dims. Layer structs (`ConvParams`, ...) are
//! assembled from the store on demand; the store itself stays untyped so it
//! round-trips through the weight container unchanged.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Grouped 2-D convolution parameters.
///
/// `weight` is (out_channels, in_channels / groups, kh, kw), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Vec<T>,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::GroupMismatch(format!(
                "in {} / out {} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        let expect =
            self.out_channels * (self.in_channels / self.groups) * self.kernel * self.kernel;
        if self.weight.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "conv weight has {} elements, expected {}",
                self.weight.len(),
                expect
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::ShapeMismatch(format!(
                    "conv bias has {} elements, expected {}",
                    b.len(),
                    self.out_channels
                )));
            }
        }
        Ok(())
    }
}

/// Inference-mode batch norm: running statistics plus affine.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn identity(c: usize, eps: T) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: T,
}

/// Dense layer on token matrices; `weight` is (out_features, in_features).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<T> {
    pub weight: Vec<T>,
    pub out_features: usize,
    pub in_features: usize,
    pub bias: Option<Vec<T>>,
}

/// Flat array with explicit dims: the unit stored in a `ParamSet` and in the
/// weight container.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamArray<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> ParamArray<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "param dims {:?} imply {} elements, got {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(ParamArray { dims, data })
    }

    pub fn vector(data: Vec<T>) -> Self {
        ParamArray { dims: vec![data.len()], data }
    }
}

/// What a declared array is, from the initializer's and counter's point of
/// view. Weights carry their fan-in and an init variance gain; running
/// statistics are buffers, not learnable parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize, gain: f64 },
    LinearWeight { fan_in: usize, gain: f64 },
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Learnable parameters count toward model size; running stats do not.
    pub fn learnable(&self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

/// Declaration of one array a model layout expects: its key, dims and kind.
/// The same declarations drive initialization, parameter counting and weight
/// file signature checks, so the three can never drift apart.
#[derive(Clone, Debug, PartialEq)]
pub struct ArraySpec {
    pub key: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
}

impl ArraySpec {
    pub fn new(key: String, dims: Vec<usize>, kind: ParamKind) -> Self {
        ArraySpec { key, dims, kind }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Named collection of learnable arrays, addressed by hierarchical keys.
/// Iteration order is the key order (BTreeMap), so serialization is canonical.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    arrays: BTreeMap<String, ParamArray<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { arrays: BTreeMap::new() }
    }

    pub fn insert(&mut self, key: impl Into<String>, arr: ParamArray<T>) {
        self.arrays.insert(key.into(), arr);
    }

    pub fn get(&self, key: &str) -> Result<&ParamArray<T>> {
        self.arrays.get(key).ok_or_else(|| Error::MissingParam(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.arrays.contains_key(key)
    }

    pub fn remove(&mut self, key: &str) -> Option<ParamArray<T>> {
        self.arrays.remove(key)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamArray<T>)> {
        self.arrays.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    fn vec_named(&self, key: &str, len: usize) -> Result<Vec<T>> {
        let arr = self.get(key)?;
        if arr.data.len() != len {
            return Err(Error::ParamDims(key.to_string(), arr.dims.clone()));
        }
        Ok(arr.data.clone())
    }

    /// Assemble conv parameters from `<prefix>.weight` (+ optional `.bias`).
    /// Geometry (stride/padding/groups) comes from the caller's layer layout.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &self,
        prefix: &str,
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<ConvParams<T>> {
        let wkey = format!("{prefix}.weight");
        let weight =
            self.vec_named(&wkey, out_channels * (in_channels / groups.max(1)) * kernel * kernel)?;
        let bkey = format!("{prefix}.bias");
        let bias =
            if self.contains(&bkey) { Some(self.vec_named(&bkey, out_channels)?) } else { None };
        let p =
            ConvParams { weight, out_channels, in_channels, kernel, stride, padding, groups, bias };
        p.validate()?;
        Ok(p)
    }

    pub fn batch_norm(&self, prefix: &str, c: usize, eps: T) -> Result<BatchNormParams<T>> {
        Ok(BatchNormParams {
            gamma: self.vec_named(&format!("{prefix}.gamma"), c)?,
            beta: self.vec_named(&format!("{prefix}.beta"), c)?,
            running_mean: self.vec_named(&format!("{prefix}.mean"), c)?,
            running_var: self.vec_named(&format!("{prefix}.var"), c)?,
            eps,
        })
    }

    pub fn layer_norm(&self, prefix: &str, c: usize, eps: T) -> Result<LayerNormParams<T>> {
        Ok(LayerNormParams {
            gamma: self.vec_named(&format!("{prefix}.gamma"), c)?,
            beta: self.vec_named(&format!("{prefix}.beta"), c)?,
            eps,
        })
    }

    pub fn linear(
        &self,
        prefix: &str,
        out_features: usize,
        in_features: usize,
    ) -> Result<LinearParams<T>> {
        let weight = self.vec_named(&format!("{prefix}.weight"), out_features * in_features)?;
        let bkey = format!("{prefix}.bias");
        let bias =
            if self.contains(&bkey) { Some(self.vec_named(&bkey, out_features)?) } else { None };
        Ok(LinearParams { weight, out_features, in_features, bias })
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let arrays = self
            .arrays
            .iter()
            .map(|(k, a)| {
                (
                    k.clone(),
                    ParamArray {
                        dims: a.dims.clone(),
                        data: a.data.iter().map(|v| U::from_f64((*v).to_f64())).collect(),
                    },
                )
            })
            .collect();
        ParamSet { arrays }
    }
}
