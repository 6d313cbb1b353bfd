//! The index process: an `m`-step moving average of `f` applied to the
//! discrete returns.
//!
//! Index values are kept in grid units, i.e. `f` is evaluated on the integer
//! state `i` rather than on the return `i·Δ`. For `f = square` a grid-unit
//! value `v` corresponds to `v·Δ²` in return units, so thresholds estimated
//! on one grid are comparable with another. [`IndexFunction::to_return_units`]
//! converts for reporting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{DiscreteReturnSeries, DiscretizationMap};

/// Label recorded in serialized artifacts for the unit convention of index values.
pub const INDEX_UNITS: &str = "grid";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IndexFunction {
    #[default]
    Square,
    Absolute,
    Identity,
    /// One value per state, in index order (`-z_min` first).
    Table(Vec<f64>),
}

impl IndexFunction {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Square => "square",
            Self::Absolute => "absolute",
            Self::Identity => "identity",
            Self::Table(_) => "table",
        }
    }

    /// `f` evaluated on every state in index order.
    pub fn values_for(&self, map: &DiscretizationMap) -> Result<Vec<f64>> {
        let values: Vec<f64> = match self {
            Self::Square => map.states().map(|i| (i as f64).powi(2)).collect(),
            Self::Absolute => map.states().map(|i| (i as f64).abs()).collect(),
            Self::Identity => map.states().map(f64::from).collect(),
            Self::Table(t) => {
                if t.len() != map.state_count() {
                    return Err(Error::ShapeMismatch {
                        left: map.state_count(),
                        right: t.len(),
                    });
                }
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("index table values must be finite".into()));
                }
                t.clone()
            }
        };
        Ok(values)
    }

    /// Convert a grid-unit index value into return units.
    pub fn to_return_units(&self, v: f64, delta: f64) -> f64 {
        match self {
            Self::Square => v * delta * delta,
            Self::Absolute | Self::Identity => v * delta,
            Self::Table(_) => v,
        }
    }
}

/// Closed range `[lower, upper]` of attainable index values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexBounds {
    pub lower: f64,
    pub upper: f64,
}

impl IndexBounds {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

pub fn index_bounds(map: &DiscretizationMap, f: &IndexFunction) -> Result<IndexBounds> {
    let values = f.values_for(map)?;
    let lower = values.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(IndexBounds { lower, upper })
}

/// Pushes between exact re-summations of the window, bounding rounding drift.
const RESYNC_INTERVAL: usize = 4096;

/// Sliding window sum with O(1) amortized updates.
#[derive(Debug, Clone)]
pub(crate) struct WindowMean {
    ring: Vec<f64>,
    head: usize,
    filled: usize,
    sum: f64,
    since_resync: usize,
}

impl WindowMean {
    pub(crate) fn new(memory: usize) -> Self {
        Self {
            ring: vec![0.0; memory],
            head: 0,
            filled: 0,
            sum: 0.0,
            since_resync: 0,
        }
    }

    /// Push the next `f(J_n)`; returns `V_n` once `m` values have been seen.
    #[inline]
    pub(crate) fn push(&mut self, value: f64) -> Option<f64> {
        let m = self.ring.len();
        if self.filled == m {
            self.sum += value - self.ring[self.head];
        } else {
            self.sum += value;
            self.filled += 1;
        }
        self.ring[self.head] = value;
        self.head = (self.head + 1) % m;
        self.since_resync += 1;
        if self.since_resync == RESYNC_INTERVAL {
            self.since_resync = 0;
            self.sum = self.ring[..self.filled].iter().sum();
        }
        (self.filled == m).then(|| self.sum / m as f64)
    }
}

/// `V_n^m` for `n ≥ m-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    memory: usize,
    function: IndexFunction,
    /// `values[k]` is `V_{k+m-1}`.
    values: Vec<f64>,
}

impl IndexSeries {
    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn function(&self) -> &IndexFunction {
        &self.function
    }

    /// Defined values, starting at time `m-1`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// First time at which the index is defined.
    pub fn first_time(&self) -> usize {
        self.memory - 1
    }

    pub fn value_at(&self, n: usize) -> Option<f64> {
        n.checked_sub(self.memory - 1)
            .and_then(|k| self.values.get(k).copied())
    }

    /// Values that act as the source index of some counted transition
    /// (every defined value except the last).
    pub fn source_values(&self) -> &[f64] {
        &self.values[..self.values.len().saturating_sub(1)]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn window_means(f_values: impl Iterator<Item = f64>, memory: usize) -> Vec<f64> {
    let mut w = WindowMean::new(memory);
    f_values.filter_map(|v| w.push(v)).collect()
}

pub fn compute_index(
    returns: &DiscreteReturnSeries,
    memory: usize,
    f: &IndexFunction,
) -> Result<IndexSeries> {
    if memory == 0 {
        return Err(Error::InvalidParameter("memory must be positive".into()));
    }
    if returns.len() < memory {
        return Err(Error::InsufficientData(format!(
            "series of length {} is shorter than memory {memory}",
            returns.len()
        )));
    }
    let table = f.values_for(returns.map())?;
    let z_min = returns.map().z_min as i32;
    let values = window_means(
        returns.states().iter().map(|&s| table[(s + z_min) as usize]),
        memory,
    );
    Ok(IndexSeries {
        memory,
        function: f.clone(),
        values,
    })
}
