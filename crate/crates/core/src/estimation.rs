//! Regime-conditional transition counting, maximum-likelihood transition
//! matrices and partition log-likelihoods.

use std::ops::AddAssign;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{compute_index, index_bounds, IndexFunction, IndexSeries, INDEX_UNITS};
use crate::market_data::{DiscreteReturnSeries, DiscretizationMap};
use crate::matrix::{Matrix, StochasticMatrix};

/// Sorted thresholds `ψ_1 < … < ψ_k` on the index range. Interval `r`
/// (zero-based) is `(ψ_r, ψ_{r+1}]`, the first being closed at the lower
/// index bound and the last open-ended above `ψ_k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Partition {
    thresholds: Vec<f64>,
}

impl Partition {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("thresholds must be finite".into()));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!(
                "thresholds must be strictly increasing: {thresholds:?}"
            )));
        }
        Ok(Self { thresholds })
    }

    /// The single-interval partition.
    pub fn null() -> Self {
        Self::default()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Number of change points `k`.
    pub fn k(&self) -> usize {
        self.thresholds.len()
    }

    pub fn regime_count(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// Zero-based interval containing `v`.
    #[inline]
    pub fn regime_of(&self, v: f64) -> usize {
        self.thresholds.partition_point(|&psi| psi < v)
    }
}

impl TryFrom<Vec<f64>> for Partition {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Partition::new(v)
    }
}

impl From<Partition> for Vec<f64> {
    fn from(p: Partition) -> Self {
        p.thresholds
    }
}

/// Transition counts `N_{i,j;r}` for each interval `r`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTensor {
    size: usize,
    counts: Vec<Vec<u64>>,
}

impl CountTensor {
    pub fn zeros(size: usize, regimes: usize) -> Self {
        Self {
            size,
            counts: vec![vec![0; size * size]; regimes],
        }
    }

    pub(crate) fn from_raw(size: usize, counts: Vec<Vec<u64>>) -> Self {
        debug_assert!(counts.iter().all(|c| c.len() == size * size));
        Self { size, counts }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn regime_count(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn get(&self, r: usize, i: usize, j: usize) -> u64 {
        self.counts[r][i * self.size + j]
    }

    #[inline]
    pub fn increment(&mut self, r: usize, i: usize, j: usize) {
        self.counts[r][i * self.size + j] += 1;
    }

    /// `N_{i;r}`.
    pub fn row_total(&self, r: usize, i: usize) -> u64 {
        self.counts[r][i * self.size..(i + 1) * self.size].iter().sum()
    }

    pub fn regime(&self, r: usize) -> &[u64] {
        &self.counts[r]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Sum all intervals into a single-interval tensor.
    pub fn pooled(&self) -> CountTensor {
        let mut out = vec![0u64; self.size * self.size];
        for c in &self.counts {
            out.iter_mut().zip(c).for_each(|(o, x)| *o += x);
        }
        CountTensor::from_raw(self.size, vec![out])
    }

    /// Merge intervals `r` and `r+1`.
    pub fn merge_adjacent(&self, r: usize) -> CountTensor {
        let mut counts = self.counts.clone();
        let next = counts.remove(r + 1);
        counts[r].iter_mut().zip(&next).for_each(|(o, x)| *o += x);
        CountTensor::from_raw(self.size, counts)
    }
}

impl AddAssign<&CountTensor> for CountTensor {
    fn add_assign(&mut self, rhs: &CountTensor) {
        assert_eq!(self.size, rhs.size);
        assert_eq!(self.counts.len(), rhs.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Transitions counted per rayon task when counting in parallel.
const COUNT_CHUNK: usize = 1 << 16;

/// Count transitions `J_{n-1} → J_n` attributed to the interval containing
/// `V_{n-1}`, for every `n` whose source index is defined.
pub fn count_transitions(
    returns: &DiscreteReturnSeries,
    index: &IndexSeries,
    partition: &Partition,
) -> Result<CountTensor> {
    check_alignment(returns, index)?;
    let size = returns.map().state_count();
    let indices = returns.indices();
    let first = index.first_time();
    let sources = index.source_values();
    // transition number t has source time first + t
    let tensor = sources
        .par_chunks(COUNT_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut t = CountTensor::zeros(size, partition.regime_count());
            for (off, &v) in chunk.iter().enumerate() {
                let src = first + c * COUNT_CHUNK + off;
                t.increment(
                    partition.regime_of(v),
                    indices[src] as usize,
                    indices[src + 1] as usize,
                );
            }
            t
        })
        .reduce(
            || CountTensor::zeros(size, partition.regime_count()),
            |mut a, b| {
                a += &b;
                a
            },
        );
    Ok(tensor)
}

pub(crate) fn check_alignment(returns: &DiscreteReturnSeries, index: &IndexSeries) -> Result<()> {
    let m = index.memory();
    if returns.len() < m || index.len() != returns.len() - m + 1 {
        return Err(Error::Misaligned(format!(
            "{} returns with memory {m} need {} index values, got {}",
            returns.len(),
            returns.len().saturating_sub(m) + 1,
            index.len()
        )));
    }
    Ok(())
}

/// Estimated matrix per interval with row exposures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrixSet {
    pub matrices: Vec<StochasticMatrix>,
    /// `N_{i;r}` per interval and row.
    pub exposure: Vec<Vec<u64>>,
    /// Rows without any observed transition; these are set to uniform.
    pub unobserved: Vec<Vec<bool>>,
}

pub fn estimate_matrices(counts: &CountTensor) -> TransitionMatrixSet {
    let n = counts.size();
    let mut matrices = Vec::with_capacity(counts.regime_count());
    let mut exposure = Vec::with_capacity(counts.regime_count());
    let mut unobserved = Vec::with_capacity(counts.regime_count());
    for r in 0..counts.regime_count() {
        let mut m = Matrix::zeros(n);
        let mut exp_r = Vec::with_capacity(n);
        let mut unobs_r = Vec::with_capacity(n);
        for i in 0..n {
            let total = counts.row_total(r, i);
            exp_r.push(total);
            unobs_r.push(total == 0);
            for j in 0..n {
                let p = if total == 0 {
                    1.0 / n as f64
                } else {
                    counts.get(r, i, j) as f64 / total as f64
                };
                m.set(i, j, p);
            }
        }
        matrices.push(StochasticMatrix::new(m).expect("count ratios form stochastic rows"));
        exposure.push(exp_r);
        unobserved.push(unobs_r);
    }
    TransitionMatrixSet {
        matrices,
        exposure,
        unobserved,
    }
}

/// `Σ_{ij} N_ij·ln(N_ij/N_i)` for one row-major count matrix, with `0·ln 0 = 0`.
#[inline]
pub(crate) fn regime_log_likelihood(counts: &[u64], size: usize) -> f64 {
    let mut total = 0.0;
    for row in counts.chunks_exact(size) {
        let n_i: u64 = row.iter().sum();
        if n_i == 0 {
            continue;
        }
        let n_i = n_i as f64;
        for &n_ij in row {
            if n_ij > 0 {
                let n_ij = n_ij as f64;
                total += n_ij * (n_ij / n_i).ln();
            }
        }
    }
    total
}

/// Partition log-likelihood `Σ_r L_r`.
pub fn log_likelihood(counts: &CountTensor) -> f64 {
    counts
        .counts
        .iter()
        .map(|c| regime_log_likelihood(c, counts.size))
        .sum()
}

/// An indexed Markov chain: one transition matrix per index interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegimeModelRepr", into = "RegimeModelRepr")]
pub struct RegimeModel {
    pub map: DiscretizationMap,
    pub memory: usize,
    pub index_function: IndexFunction,
    pub partition: Partition,
    pub matrices: Vec<StochasticMatrix>,
    /// Row exposures of the estimation sample, when the model was fitted.
    pub exposure: Option<Vec<Vec<u64>>>,
}

impl RegimeModel {
    pub fn new(
        map: DiscretizationMap,
        memory: usize,
        index_function: IndexFunction,
        partition: Partition,
        matrices: Vec<StochasticMatrix>,
    ) -> Result<Self> {
        if memory == 0 {
            return Err(Error::InvalidParameter("memory must be positive".into()));
        }
        if matrices.len() != partition.regime_count() {
            return Err(Error::InvalidParameter(format!(
                "{} thresholds need {} matrices, got {}",
                partition.k(),
                partition.regime_count(),
                matrices.len()
            )));
        }
        if let Some(m) = matrices.iter().find(|m| m.size() != map.state_count()) {
            return Err(Error::ShapeMismatch {
                left: map.state_count(),
                right: m.size(),
            });
        }
        let bounds = index_bounds(&map, &index_function)?;
        if let Some(t) = partition
            .thresholds()
            .iter()
            .find(|&&t| t < bounds.lower || t > bounds.upper)
        {
            return Err(Error::InvalidParameter(format!(
                "threshold {t} outside index range [{}, {}]",
                bounds.lower, bounds.upper
            )));
        }
        Ok(Self {
            map,
            memory,
            index_function,
            partition,
            matrices,
            exposure: None,
        })
    }

    /// Maximum-likelihood model for a given partition.
    pub fn fit(
        returns: &DiscreteReturnSeries,
        memory: usize,
        index_function: &IndexFunction,
        partition: Partition,
    ) -> Result<Self> {
        let index = compute_index(returns, memory, index_function)?;
        let counts = count_transitions(returns, &index, &partition)?;
        let est = estimate_matrices(&counts);
        let mut model = Self::new(
            *returns.map(),
            memory,
            index_function.clone(),
            partition,
            est.matrices,
        )?;
        model.exposure = Some(est.exposure);
        Ok(model)
    }

    pub fn state_count(&self) -> usize {
        self.map.state_count()
    }

    pub fn matrix_for(&self, v: f64) -> &StochasticMatrix {
        &self.matrices[self.partition.regime_of(v)]
    }

    /// `Σ_n ln P_{J_{n-1},J_n}(V_{n-1})` along a trajectory.
    pub fn trajectory_log_likelihood(&self, returns: &DiscreteReturnSeries) -> Result<f64> {
        let index = compute_index(returns, self.memory, &self.index_function)?;
        let idx = returns.indices();
        let first = index.first_time();
        Ok(index
            .source_values()
            .iter()
            .enumerate()
            .map(|(t, &v)| {
                let src = first + t;
                self.matrix_for(v)
                    .get(idx[src] as usize, idx[src + 1] as usize)
                    .ln()
            })
            .sum())
    }
}

#[derive(Serialize, Deserialize)]
struct RegimeModelRepr {
    map: DiscretizationMap,
    memory: usize,
    index_function: IndexFunction,
    index_units: String,
    thresholds: Partition,
    matrices: Vec<StochasticMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exposure: Option<Vec<Vec<u64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unobserved: Option<Vec<Vec<bool>>>,
}

impl TryFrom<RegimeModelRepr> for RegimeModel {
    type Error = Error;

    fn try_from(r: RegimeModelRepr) -> Result<Self> {
        if r.index_units != INDEX_UNITS {
            return Err(Error::InvalidParameter(format!(
                "unsupported index units `{}`",
                r.index_units
            )));
        }
        let mut m = RegimeModel::new(r.map, r.memory, r.index_function, r.thresholds, r.matrices)?;
        m.exposure = r.exposure;
        Ok(m)
    }
}

impl From<RegimeModel> for RegimeModelRepr {
    fn from(m: RegimeModel) -> Self {
        let unobserved = m
            .exposure
            .as_ref()
            .map(|e| e.iter().map(|row| row.iter().map(|&x| x == 0).collect()).collect());
        Self {
            map: m.map,
            memory: m.memory,
            index_function: m.index_function,
            index_units: INDEX_UNITS.to_string(),
            thresholds: m.partition,
            matrices: m.matrices,
            exposure: m.exposure,
            unobserved,
        }
    }
}
