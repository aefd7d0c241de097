use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl ParamSlice {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat parameter array partitioned into named, contiguous, non-overlapping slices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector<T> {
    values: Vec<T>,
    slices: Vec<ParamSlice>,
}

impl<T: Scalar> Default for ParameterVector<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterVector<T> {
    pub fn new() -> Self {
        Self { values: Vec::new(), slices: Vec::new() }
    }

    /// Appends a named slice and returns its range.
    pub fn push(&mut self, name: impl Into<String>, data: &[T]) -> Range<usize> {
        let offset = self.values.len();
        self.values.extend_from_slice(data);
        self.slices.push(ParamSlice { name: name.into(), offset, len: data.len() });
        offset..offset + data.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.slices.iter().find(|s| s.name == name).map(|s| &self.values[s.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.slices.iter().find(|s| s.name == name)?.range();
        Some(&mut self.values[r])
    }

    /// A zeroed vector with the same partition, used for gradients.
    pub fn zeros_like(&self) -> Self {
        Self { values: vec![T::zero(); self.values.len()], slices: self.slices.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Checks that the slices tile the array exactly.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0;
        for s in &self.slices {
            if s.offset != cursor {
                return Err(Error::InvalidConfig(format!("slice `{}` leaves a gap or overlaps", s.name)));
            }
            cursor += s.len;
        }
        if cursor != self.values.len() {
            return Err(Error::InvalidConfig("slices do not cover the parameter array".into()));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(())
    }

    pub fn copy_from(&mut self, other: &[T]) -> Result<()> {
        if other.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "{} parameters into a vector of {}",
                other.len(),
                self.values.len()
            )));
        }
        self.values.copy_from_slice(other);
        Ok(())
    }
}
