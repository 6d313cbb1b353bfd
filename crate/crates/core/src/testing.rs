//! Bootstrap calibration of the distance statistic.
//!
//! Under the null hypothesis the returns follow a single Markov matrix. Each
//! bootstrap replicate simulates a plain chain of the data length from that
//! matrix, rebuilds the index and recomputes `D`. By default the change-point
//! search is re-run on every replicate, since the statistic being calibrated
//! is a maximum over thresholds; [`NullMode::Fixed`] keeps the thresholds
//! fixed instead, which is the case covered by the χ² limit.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{
    distance_statistic, search_binned, BinnedCounts, CandidateGrid, IndexedSeries, SearchStrategy,
};
use crate::error::{Error, Result};
use crate::estimation::{count_transitions, estimate_matrices, Partition};
use crate::index::IndexFunction;
use crate::market_data::DiscretizationMap;
use crate::matrix::StochasticMatrix;
use crate::simulation::{markov_indices, stream_rng, InitialState};

/// The single-matrix model replicates are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub matrix: StochasticMatrix,
    pub map: DiscretizationMap,
    pub memory: usize,
    pub index_function: IndexFunction,
    pub initial: InitialState,
}

impl NullModel {
    /// Pooled MLE matrix of the data; replicates start from the empirical
    /// state distribution.
    pub fn from_data(data: &IndexedSeries) -> Result<Self> {
        let counts = count_transitions(data.returns(), data.index(), &Partition::null())?;
        let matrix = estimate_matrices(&counts).matrices.remove(0);
        Ok(Self {
            matrix,
            map: *data.returns().map(),
            memory: data.memory(),
            index_function: data.index().function().clone(),
            initial: InitialState::Distribution(data.returns().state_frequencies()),
        })
    }
}

/// How a replicate's statistic is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullMode {
    /// Re-run the `k`-threshold search on the grid.
    Search { k: usize, strategy: SearchStrategy },
    /// Evaluate `D` at these thresholds only.
    Fixed { thresholds: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    /// Trajectory length, normally the data length.
    pub length: usize,
    pub seed: u64,
    pub mode: NullMode,
}

/// Where a null distribution came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub null_matrix: StochasticMatrix,
    pub length: usize,
    pub grid: Vec<f64>,
    pub min_exposure: u64,
    pub mode: NullMode,
    pub seed: u64,
    /// Replicates where fewer candidates than thresholds were admissible; their
    /// statistic is recorded as 0.
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub samples: Vec<f64>,
    pub provenance: Provenance,
}

impl NullDistribution {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Samples as CSV (`replicate,D`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(["replicate", "D"]).map_err(e)?;
        for (b, d) in self.samples.iter().enumerate() {
            w.write_record([b.to_string(), format!("{d:.9}")]).map_err(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulate `cfg.replicates` null trajectories and record their statistics.
/// Replicate `b` uses RNG stream `b` of `cfg.seed`, so the result does not
/// depend on scheduling.
pub fn bootstrap_null(
    null: &NullModel,
    grid: &CandidateGrid,
    cfg: &BootstrapConfig,
) -> Result<NullDistribution> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidParameter("at least one bootstrap replicate is needed".into()));
    }
    if cfg.length < null.memory + 2 {
        return Err(Error::InvalidParameter(format!(
            "trajectory length {} is below memory + 2 = {}",
            cfg.length,
            null.memory + 2
        )));
    }
    if null.matrix.size() != null.map.state_count() {
        return Err(Error::ShapeMismatch {
            left: null.map.state_count(),
            right: null.matrix.size(),
        });
    }
    let table = null.index_function.values_for(&null.map)?;
    // Validate the initial distribution once so replicates cannot fail on it.
    null.initial.draw(&null.map, &mut stream_rng(cfg.seed, 0))?;

    let (grid, positions) = match &cfg.mode {
        NullMode::Search { k, .. } => {
            if *k == 0 || *k > grid.len() {
                return Err(Error::InvalidParameter(format!(
                    "cannot search {k} thresholds on a grid of {}",
                    grid.len()
                )));
            }
            (grid.clone(), Vec::new())
        }
        NullMode::Fixed { thresholds } => {
            let partition = Partition::new(thresholds.clone())?;
            if partition.k() == 0 {
                return Err(Error::InvalidParameter("fixed mode needs at least one threshold".into()));
            }
            let fixed = CandidateGrid::from_points(partition.thresholds().to_vec(), 0)?;
            let positions = (0..fixed.len()).collect();
            (fixed, positions)
        }
    };

    let size = null.map.state_count();
    let results: Vec<Result<Option<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(cfg.seed, b as u64);
            let start = null.initial.draw(&null.map, &mut rng)?;
            let path = markov_indices(&null.matrix, cfg.length, start, &mut rng);
            let binned = BinnedCounts::from_trajectory(&path, &table, null.memory, size, &grid);
            let null_ll = binned.partition_log_likelihood(&[]);
            let fit_ll = match &cfg.mode {
                NullMode::Search { k, strategy } => {
                    match search_binned(&binned, *k, grid.min_exposure, *strategy) {
                        Ok(o) => o.log_likelihood,
                        Err(Error::NoCandidates(_)) => return Ok(None),
                        Err(e) => return Err(e),
                    }
                }
                NullMode::Fixed { .. } => binned.partition_log_likelihood(&positions),
            };
            Ok(Some(distance_statistic(fit_ll, null_ll)))
        })
        .collect();

    let mut samples = Vec::with_capacity(cfg.replicates);
    let mut degenerate = 0;
    for r in results {
        match r? {
            Some(d) => samples.push(d),
            None => {
                degenerate += 1;
                samples.push(0.0);
            }
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} bootstrap replicate(s) had too few admissible candidates; D recorded as 0");
    }
    Ok(NullDistribution {
        samples,
        provenance: Provenance {
            null_matrix: null.matrix.clone(),
            length: cfg.length,
            grid: grid.points.clone(),
            min_exposure: grid.min_exposure,
            mode: cfg.mode.clone(),
            seed: cfg.seed,
            degenerate,
        },
    })
}

/// Empirical `1 − α` quantile by the nearest-rank rule.
pub fn critical_value(dist: &NullDistribution, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if dist.samples.is_empty() {
        return Err(Error::Empty("null distribution has no samples"));
    }
    let mut sorted = dist.samples.clone();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    // The small offset keeps exact products such as 0.95·100 from rounding up.
    let rank = (((1.0 - alpha) * b as f64) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    Ok(sorted[rank - 1])
}

/// `(1 + #{D_B ≥ D̂}) / (B + 1)`.
pub fn p_value(dist: &NullDistribution, d_hat: f64) -> f64 {
    let exceed = dist.samples.iter().filter(|&&d| d >= d_hat).count();
    (1 + exceed) as f64 / (dist.samples.len() + 1) as f64
}

/// Degrees of freedom of the χ² limit of `D` for a known change point.
pub fn chi_square_reference(states: usize) -> Result<usize> {
    if states < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 states, got {states}")));
    }
    Ok(states * (states - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub alpha: f64,
    pub value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub d_hat: f64,
    pub replicates: usize,
    pub critical_values: Vec<CriticalValue>,
    pub p_value: f64,
}

impl TestResult {
    pub fn rejects_at(&self, alpha: f64) -> Option<bool> {
        self.critical_values
            .iter()
            .find(|c| c.alpha == alpha)
            .map(|c| c.reject)
    }
}

/// Compare an observed statistic with a null distribution; `H₀` is rejected
/// at level `α` when `D̂ ≥ d_α`.
pub fn evaluate(dist: &NullDistribution, d_hat: f64, alphas: &[f64]) -> Result<TestResult> {
    let critical_values = alphas
        .iter()
        .map(|&alpha| {
            let value = critical_value(dist, alpha)?;
            Ok(CriticalValue {
                alpha,
                value,
                reject: d_hat >= value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestResult {
        d_hat,
        replicates: dist.len(),
        critical_values,
        p_value: p_value(dist, d_hat),
    })
}
