use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Named, contiguous block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub range: Range<usize>,
}

/// Flat vector of all model parameters with named slices that tile it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    values: Vec<f64>,
    slices: Vec<ParamSlice>,
}

#[derive(Debug, Default)]
pub struct ParameterStoreBuilder {
    values: Vec<f64>,
    slices: Vec<ParamSlice>,
}

impl ParameterStoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a named block and returns its range in the flat vector.
    pub fn push(&mut self, name: impl Into<String>, values: impl IntoIterator<Item = f64>) -> Range<usize> {
        let start = self.values.len();
        self.values.extend(values);
        let range = start..self.values.len();
        self.slices.push(ParamSlice {
            name: name.into(),
            range: range.clone(),
        });
        range
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn build(self) -> ParameterStore {
        ParameterStore {
            values: self.values,
            slices: self.slices,
        }
    }
}

impl ParameterStore {
    pub fn builder() -> ParameterStoreBuilder {
        ParameterStoreBuilder::new()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Replaces all values; the parameter count is fixed, so lengths must agree.
    pub fn set_values(&mut self, values: &[f64]) -> Result<(), usize> {
        if values.len() != self.values.len() {
            return Err(values.len());
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.slices.iter().find(|s| s.name == name).map(|s| s.range.clone())
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.range(name).map(|r| &self.values[r])
    }

    /// Slices are disjoint, ordered and cover `0..len` without gaps.
    pub fn is_tiled(&self) -> bool {
        let mut next = 0;
        for s in &self.slices {
            if s.range.start != next || s.range.end < s.range.start {
                return false;
            }
            next = s.range.end;
        }
        next == self.values.len()
    }
}
