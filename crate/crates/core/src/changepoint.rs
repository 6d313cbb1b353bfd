//! Maximum-likelihood change points on the index range.
//!
//! Candidate thresholds split the index range into cells. Transitions are
//! binned once per cell ([`BinnedCounts`]); the counts of any interval made of
//! consecutive cells then come from prefix-sum differences, so the likelihood
//! of a partition costs `O(k·|E|²)` regardless of the series length.
//!
//! Two exact searches are provided for `k` thresholds: exhaustive enumeration
//! of all candidate combinations, and a segmented dynamic program that uses
//! the additivity of the partition log-likelihood over intervals. Both sum
//! interval likelihoods left to right, so they agree bit-for-bit, and both
//! break ties toward the lexicographically smallest threshold vector.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    check_alignment, estimate_matrices, log_likelihood, regime_log_likelihood, CountTensor,
    Partition, RegimeModel,
};
use crate::index::{compute_index, IndexFunction, IndexSeries, WindowMean};
use crate::market_data::DiscreteReturnSeries;

/// Default minimum number of transitions on each side of a candidate.
pub const DEFAULT_MIN_EXPOSURE: u64 = 100;

/// Margin by which a bootstrap or data fit may fall below the null
/// likelihood before it is treated as an error rather than rounding.
const LIKELIHOOD_SLACK: f64 = 1e-9;

/// Discrete returns together with their index series.
#[derive(Debug, Clone)]
pub struct IndexedSeries {
    returns: DiscreteReturnSeries,
    index: IndexSeries,
}

impl IndexedSeries {
    pub fn new(returns: DiscreteReturnSeries, memory: usize, f: &IndexFunction) -> Result<Self> {
        let index = compute_index(&returns, memory, f)?;
        Ok(Self { returns, index })
    }

    pub fn from_parts(returns: DiscreteReturnSeries, index: IndexSeries) -> Result<Self> {
        check_alignment(&returns, &index)?;
        Ok(Self { returns, index })
    }

    pub fn returns(&self) -> &DiscreteReturnSeries {
        &self.returns
    }

    pub fn index(&self) -> &IndexSeries {
        &self.index
    }

    pub fn memory(&self) -> usize {
        self.index.memory()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    #[default]
    Quantile,
    Uniform,
}

/// Sorted candidate thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub points: Vec<f64>,
    /// Candidates removed by the exposure rule.
    pub dropped: Vec<f64>,
    pub mode: GridMode,
    pub min_exposure: u64,
}

impl CandidateGrid {
    /// A grid of explicit points, without the exposure filter.
    pub fn from_points(mut points: Vec<f64>, min_exposure: u64) -> Result<Self> {
        points.sort_by(f64::total_cmp);
        points.dedup();
        if points.is_empty() || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NoCandidates("grid points must be finite and non-empty".into()));
        }
        Ok(Self {
            points,
            dropped: Vec::new(),
            mode: GridMode::Uniform,
            min_exposure,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cell of an index value: the number of candidates strictly below it.
    #[inline]
    pub fn cell_of(&self, v: f64) -> usize {
        self.points.partition_point(|&c| c < v)
    }
}

/// Place `n` candidates on the range of the source index values.
///
/// Quantile mode takes nearest-rank quantiles at `q/(n+1)` (duplicates
/// collapse); uniform mode spaces candidates evenly inside `[min V, max V]`.
/// Candidates without `min_exposure` transitions on both sides are dropped.
pub fn candidate_grid(
    index: &IndexSeries,
    n: usize,
    mode: GridMode,
    min_exposure: u64,
) -> Result<CandidateGrid> {
    if n == 0 {
        return Err(Error::InvalidParameter("grid size must be at least 1".into()));
    }
    let mut sorted = index.source_values().to_vec();
    if sorted.is_empty() {
        return Err(Error::InsufficientData("index series has no transitions".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::NoCandidates("index series is constant".into()));
    }
    if n > distinct.len() {
        return Err(Error::NoCandidates(format!(
            "grid size {n} exceeds the {} distinct index values",
            distinct.len()
        )));
    }
    let total = sorted.len();
    let (lo, hi) = (sorted[0], sorted[total - 1]);
    let mut points: Vec<f64> = (1..=n)
        .map(|q| {
            let p = q as f64 / (n + 1) as f64;
            match mode {
                GridMode::Quantile => {
                    let rank = ((p * total as f64).ceil() as usize).clamp(1, total);
                    sorted[rank - 1]
                }
                GridMode::Uniform => lo + (hi - lo) * p,
            }
        })
        .collect();
    points.dedup();

    let (points, dropped): (Vec<f64>, Vec<f64>) = points.into_iter().partition(|&c| {
        let below = sorted.partition_point(|&v| v <= c) as u64;
        below >= min_exposure && (total as u64 - below) >= min_exposure
    });
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} candidate(s) with fewer than {min_exposure} transitions on one side",
            dropped.len()
        );
    }
    Ok(CandidateGrid {
        points,
        dropped,
        mode,
        min_exposure,
    })
}

/// Transition counts per grid cell with prefix sums over cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCounts {
    size: usize,
    cells: Vec<Vec<u64>>,
    /// `prefix[c]` holds the sum of cells `0..c`.
    prefix: Vec<Vec<u64>>,
}

impl BinnedCounts {
    pub fn new(data: &IndexedSeries, grid: &CandidateGrid) -> Self {
        let size = data.returns.map().state_count();
        let idx = data.returns.indices();
        let first = data.index.first_time();
        let mut cells = vec![vec![0u64; size * size]; grid.len() + 1];
        for (t, &v) in data.index.source_values().iter().enumerate() {
            let src = first + t;
            cells[grid.cell_of(v)][idx[src] as usize * size + idx[src + 1] as usize] += 1;
        }
        Self::from_cells(size, cells)
    }

    /// Bin a raw trajectory of state indices, computing the index on the fly.
    pub(crate) fn from_trajectory(
        indices: &[u8],
        f_table: &[f64],
        memory: usize,
        size: usize,
        grid: &CandidateGrid,
    ) -> Self {
        let mut cells = vec![vec![0u64; size * size]; grid.len() + 1];
        let mut window = WindowMean::new(memory);
        // cell of V_{n-1}, once defined
        let mut prev_cell: Option<usize> = None;
        for (n, &s) in indices.iter().enumerate() {
            if let Some(c) = prev_cell {
                cells[c][indices[n - 1] as usize * size + s as usize] += 1;
            }
            prev_cell = window.push(f_table[s as usize]).map(|v| grid.cell_of(v));
        }
        Self::from_cells(size, cells)
    }

    fn from_cells(size: usize, cells: Vec<Vec<u64>>) -> Self {
        let mut prefix = Vec::with_capacity(cells.len() + 1);
        prefix.push(vec![0u64; size * size]);
        for c in &cells {
            let mut next = prefix.last().unwrap().clone();
            next.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            prefix.push(next);
        }
        Self { size, cells, prefix }
    }

    pub fn state_count(&self) -> usize {
        self.size
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, c: usize) -> &[u64] {
        &self.cells[c]
    }

    /// Counts of cells `first..=last`.
    pub fn interval(&self, first: usize, last: usize) -> Vec<u64> {
        self.prefix[last + 1]
            .iter()
            .zip(&self.prefix[first])
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Log-likelihood contribution of the interval made of cells `first..=last`.
    pub fn interval_log_likelihood(&self, first: usize, last: usize) -> f64 {
        regime_log_likelihood(&self.interval(first, last), self.size)
    }

    /// Transitions with source index in cells `0..=c`.
    fn below(&self, c: usize) -> u64 {
        self.prefix[c + 1].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.prefix.last().unwrap().iter().sum()
    }

    /// Whether each candidate keeps `min_exposure` transitions on both sides.
    pub fn admissible(&self, min_exposure: u64) -> Vec<bool> {
        let total = self.total();
        (0..self.cells.len() - 1)
            .map(|c| {
                let below = self.below(c);
                below >= min_exposure && total - below >= min_exposure
            })
            .collect()
    }

    /// Count tensor of the partition whose thresholds are the given
    /// (strictly increasing) candidate positions.
    pub fn tensor(&self, thresholds: &[usize]) -> CountTensor {
        let mut counts = Vec::with_capacity(thresholds.len() + 1);
        let mut start = 0;
        for &t in thresholds {
            counts.push(self.interval(start, t));
            start = t + 1;
        }
        counts.push(self.interval(start, self.cells.len() - 1));
        CountTensor::from_raw(self.size, counts)
    }

    /// Left-to-right sum of interval likelihoods for a candidate-position vector.
    pub fn partition_log_likelihood(&self, thresholds: &[usize]) -> f64 {
        let mut total = 0.0;
        let mut start = 0;
        for &t in thresholds {
            total += self.interval_log_likelihood(start, t);
            start = t + 1;
        }
        total + self.interval_log_likelihood(start, self.cells.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SearchStrategy {
    Exhaustive,
    #[default]
    Dp,
}

/// Maximizing candidate positions and their log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub positions: Vec<usize>,
    pub log_likelihood: f64,
}

/// Find the `k` admissible candidate positions maximizing the partition
/// log-likelihood.
pub fn search_binned(
    binned: &BinnedCounts,
    k: usize,
    min_exposure: u64,
    strategy: SearchStrategy,
) -> Result<SearchOutcome> {
    let n = binned.cell_count() - 1;
    if k == 0 {
        return Ok(SearchOutcome {
            positions: Vec::new(),
            log_likelihood: binned.partition_log_likelihood(&[]),
        });
    }
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "{k} change points need at least {k} candidates, got {n}"
        )));
    }
    let allowed: Vec<usize> = binned
        .admissible(min_exposure)
        .iter()
        .enumerate()
        .filter_map(|(c, &ok)| ok.then_some(c))
        .collect();
    if allowed.len() < k {
        return Err(Error::NoCandidates(format!(
            "{} candidate(s) pass the exposure rule, {k} needed",
            allowed.len()
        )));
    }
    Ok(match strategy {
        SearchStrategy::Exhaustive => exhaustive(binned, &allowed, k),
        SearchStrategy::Dp => segmented_dp(binned, &allowed, k),
    })
}

fn exhaustive(binned: &BinnedCounts, allowed: &[usize], k: usize) -> SearchOutcome {
    let mut best: Option<SearchOutcome> = None;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let positions: Vec<usize> = combo.iter().map(|&c| allowed[c]).collect();
        let ll = binned.partition_log_likelihood(&positions);
        if best.as_ref().is_none_or(|b| ll > b.log_likelihood) {
            best = Some(SearchOutcome {
                positions,
                log_likelihood: ll,
            });
        }
        // next combination in lexicographic order
        let Some(i) = (0..k).rev().find(|&i| combo[i] < allowed.len() - k + i) else {
            break;
        };
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
    best.expect("at least one combination")
}

fn segmented_dp(binned: &BinnedCounts, allowed: &[usize], k: usize) -> SearchOutcome {
    let n = binned.cell_count() - 1;
    // seg[a][b]: likelihood of cells a..=b, filled for the (a, b) pairs the
    // recursion visits.
    let mut seg = vec![vec![f64::NAN; n + 1]; n + 1];
    let mut segment = |a: usize, b: usize| {
        let cached = seg[a][b];
        if cached.is_nan() {
            let v = binned.interval_log_likelihood(a, b);
            seg[a][b] = v;
            v
        } else {
            cached
        }
    };

    // layer[p] = best (value, positions) with the last threshold at allowed[p]
    let mut layer: Vec<Option<(f64, Vec<usize>)>> = allowed
        .iter()
        .map(|&t| Some((segment(0, t), vec![t])))
        .collect();
    for _ in 1..k {
        let mut next: Vec<Option<(f64, Vec<usize>)>> = vec![None; allowed.len()];
        for (p, &t) in allowed.iter().enumerate() {
            let mut best: Option<(f64, Vec<usize>)> = None;
            for (q, prev) in layer.iter().enumerate().take(p) {
                let Some((value, path)) = prev else { continue };
                let v = value + segment(allowed[q] + 1, t);
                let mut path = path.clone();
                path.push(t);
                if improves(v, &path, best.as_ref()) {
                    best = Some((v, path));
                }
            }
            next[p] = best;
        }
        layer = next;
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (value, path) in layer.iter().flatten() {
        let t = *path.last().unwrap();
        let v = value + segment(t + 1, n);
        if improves(v, path, best.as_ref()) {
            best = Some((v, path.clone()));
        }
    }
    let (log_likelihood, positions) = best.expect("an admissible partition");
    SearchOutcome {
        positions,
        log_likelihood,
    }
}

/// Strictly higher likelihood, or equal likelihood with a lexicographically
/// smaller path.
fn improves(value: f64, path: &[usize], best: Option<&(f64, Vec<usize>)>) -> bool {
    match best {
        None => true,
        Some((bv, bp)) => value > *bv || (value == *bv && path < &bp[..]),
    }
}

/// `D = 2·(fit − null)`, clamped at zero.
pub fn distance_statistic(fit_log_likelihood: f64, null_log_likelihood: f64) -> f64 {
    debug_assert!(fit_log_likelihood >= null_log_likelihood - LIKELIHOOD_SLACK);
    (2.0 * (fit_log_likelihood - null_log_likelihood)).max(0.0)
}

/// `(AIC, BIC)` with `|E|(|E|-1)(k+1)` free parameters; the BIC uses the
/// natural log of the candidate-grid size.
pub fn information_criteria(log_likelihood: f64, k: usize, states: usize, grid_size: usize) -> (f64, f64) {
    let params = (states * (states - 1) * (k + 1)) as f64;
    let aic = 2.0 * params - 2.0 * log_likelihood;
    let bic = 2.0 * (grid_size as f64).ln() * params - 2.0 * log_likelihood;
    (aic, bic)
}

/// A fitted partition with its statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointFit {
    pub k: usize,
    pub thresholds: Vec<f64>,
    /// Positions of the thresholds in the candidate grid.
    pub grid_positions: Vec<usize>,
    pub model: RegimeModel,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub distance: f64,
    pub aic: f64,
    pub bic: f64,
}

/// Searches a fixed data set on a fixed grid.
#[derive(Debug, Clone)]
pub struct ChangePointSearch<'a> {
    data: &'a IndexedSeries,
    grid: &'a CandidateGrid,
    binned: BinnedCounts,
    null_log_likelihood: f64,
}

impl<'a> ChangePointSearch<'a> {
    pub fn new(data: &'a IndexedSeries, grid: &'a CandidateGrid) -> Self {
        let binned = BinnedCounts::new(data, grid);
        let null_log_likelihood = binned.partition_log_likelihood(&[]);
        Self {
            data,
            grid,
            binned,
            null_log_likelihood,
        }
    }

    pub fn binned(&self) -> &BinnedCounts {
        &self.binned
    }

    pub fn grid(&self) -> &CandidateGrid {
        self.grid
    }

    pub fn null_log_likelihood(&self) -> f64 {
        self.null_log_likelihood
    }

    /// Best single change point.
    pub fn single(&self) -> Result<ChangePointFit> {
        if self.grid.is_empty() {
            return Err(Error::NoCandidates("all candidates were dropped by the exposure rule".into()));
        }
        self.search(1, SearchStrategy::Exhaustive)
    }

    /// Best `k` change points; requires `k` smaller than the grid size.
    pub fn multi(&self, k: usize, strategy: SearchStrategy) -> Result<ChangePointFit> {
        if k > 0 && self.grid.is_empty() {
            return Err(Error::NoCandidates("all candidates were dropped by the exposure rule".into()));
        }
        if k > 0 && k >= self.grid.len() {
            return Err(Error::InvalidParameter(format!(
                "{k} change points need a grid of more than {k} candidates, got {}",
                self.grid.len()
            )));
        }
        self.search(k, strategy)
    }

    fn search(&self, k: usize, strategy: SearchStrategy) -> Result<ChangePointFit> {
        let outcome = search_binned(&self.binned, k, self.grid.min_exposure, strategy)?;
        self.fit_at(&outcome.positions)
    }

    /// Fit at explicit candidate positions.
    pub fn fit_at(&self, positions: &[usize]) -> Result<ChangePointFit> {
        let thresholds: Vec<f64> = positions.iter().map(|&p| self.grid.points[p]).collect();
        let counts = self.binned.tensor(positions);
        let est = estimate_matrices(&counts);
        let ll = log_likelihood(&counts);
        let returns = &self.data.returns;
        let mut model = RegimeModel::new(
            *returns.map(),
            self.data.memory(),
            self.data.index.function().clone(),
            Partition::new(thresholds.clone())?,
            est.matrices,
        )?;
        model.exposure = Some(est.exposure);
        let states = returns.map().state_count();
        let (aic, bic) = information_criteria(ll, positions.len(), states, self.grid.len());
        Ok(ChangePointFit {
            k: positions.len(),
            thresholds,
            grid_positions: positions.to_vec(),
            model,
            log_likelihood: ll,
            null_log_likelihood: self.null_log_likelihood,
            distance: distance_statistic(ll, self.null_log_likelihood),
            aic,
            bic,
        })
    }

    /// Fit `k = 0, 1, …` until the criterion improves by less than
    /// `improvement_floor` (relative to the previous value) or `k_max` is
    /// reached. The stopping fit is selected if it still improved the
    /// criterion, otherwise the one before it.
    pub fn select_k(
        &self,
        k_max: usize,
        criterion: Criterion,
        improvement_floor: f64,
        strategy: SearchStrategy,
    ) -> Result<Selection> {
        if k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be at least 1".into()));
        }
        let mut fits = vec![self.fit_at(&[])?];
        let mut trace = vec![TraceRow::first(&fits[0])];
        let mut selected = 0;
        for k in 1..=k_max {
            let fit = match self.multi(k, strategy) {
                Ok(f) => f,
                Err(Error::NoCandidates(_) | Error::InvalidParameter(_)) => break,
                Err(e) => return Err(e),
            };
            let prev = fits.last().unwrap();
            let row = TraceRow::next(&fit, prev);
            let improvement = match criterion {
                Criterion::Aic => -row.aic_change,
                Criterion::Bic => -row.bic_change,
            };
            trace.push(row);
            fits.push(fit);
            if improvement < improvement_floor {
                if improvement > 0.0 {
                    selected = k;
                }
                break;
            }
            selected = k;
        }
        Ok(Selection {
            criterion,
            improvement_floor,
            selected_k: selected,
            fit: fits.swap_remove(selected),
            trace,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    #[default]
    Bic,
}

/// One row of the model-selection trace. Changes are relative to the previous
/// row (`(x_k − x_{k-1}) / |x_{k-1}|`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub thresholds: Vec<f64>,
    pub log_likelihood: f64,
    pub distance: f64,
    pub distance_change: Option<f64>,
    pub aic: f64,
    pub aic_change: f64,
    pub bic: f64,
    pub bic_change: f64,
}

fn relative_change(cur: f64, prev: f64) -> f64 {
    if prev == 0.0 {
        0.0
    } else {
        (cur - prev) / prev.abs()
    }
}

impl TraceRow {
    fn first(fit: &ChangePointFit) -> Self {
        Self {
            k: fit.k,
            thresholds: fit.thresholds.clone(),
            log_likelihood: fit.log_likelihood,
            distance: fit.distance,
            distance_change: None,
            aic: fit.aic,
            aic_change: 0.0,
            bic: fit.bic,
            bic_change: 0.0,
        }
    }

    fn next(fit: &ChangePointFit, prev: &ChangePointFit) -> Self {
        Self {
            k: fit.k,
            thresholds: fit.thresholds.clone(),
            log_likelihood: fit.log_likelihood,
            distance: fit.distance,
            distance_change: (prev.distance > 0.0).then(|| relative_change(fit.distance, prev.distance)),
            aic: fit.aic,
            aic_change: relative_change(fit.aic, prev.aic),
            bic: fit.bic,
            bic_change: relative_change(fit.bic, prev.bic),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub criterion: Criterion,
    pub improvement_floor: f64,
    pub selected_k: usize,
    pub fit: ChangePointFit,
    pub trace: Vec<TraceRow>,
}

/// Trace as CSV: `k,D,D_change_pct,AIC,AIC_change_pct,BIC,BIC_change_pct`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let e = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["k", "D", "D_change_pct", "AIC", "AIC_change_pct", "BIC", "BIC_change_pct"])
        .map_err(e)?;
    for r in trace {
        let pct = |x: f64| format!("{:.4}", 100.0 * x);
        w.write_record([
            r.k.to_string(),
            format!("{:.6}", r.distance),
            r.distance_change.map(pct).unwrap_or_default(),
            format!("{:.6}", r.aic),
            if r.k == 0 { String::new() } else { pct(r.aic_change) },
            format!("{:.6}", r.bic),
            if r.k == 0 { String::new() } else { pct(r.bic_change) },
        ])
        .map_err(e)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::count_transitions;
    use crate::market_data::DiscretizationMap;
    use crate::simulation::{simulate_imc, simulate_markov, InitialState, InitialWindow, SimulationConfig};
    use crate::matrix::StochasticMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map5() -> DiscretizationMap {
        DiscretizationMap::new(1.0, 2, 2).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> StochasticMatrix {
        let rows = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect();
        StochasticMatrix::from_rows(rows).unwrap()
    }

    fn random_series(seed: u64, len: usize, memory: usize) -> IndexedSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_matrix(&mut rng, 5);
        let j = simulate_markov(&p, &map5(), len, &InitialState::Uniform, seed).unwrap();
        IndexedSeries::new(j, memory, &IndexFunction::Square).unwrap()
    }

    #[test]
    fn uniform_grid_spacing() {
        let map = DiscretizationMap::new(1.0, 1, 1).unwrap();
        // V alternates between 0 and 1 (m = 1, states 0 / ±1), last value unused
        let j = DiscreteReturnSeries::new(vec![0, 1, 0, -1, 0, 1, 0], map).unwrap();
        let v = compute_index(&j, 1, &IndexFunction::Square).unwrap();
        let g = candidate_grid(&v, 2, GridMode::Uniform, 0).unwrap();
        assert_eq!(g.points, vec![1.0 / 3.0, 2.0 / 3.0]);
        let g = candidate_grid(&v, 1, GridMode::Uniform, 0).unwrap();
        assert_eq!(g.points, vec![0.5]);
    }

    #[test]
    fn uniform_grid_quarters() {
        let map = DiscretizationMap::new(1.0, 2, 2).unwrap();
        // square values 0, 1, 4 with m = 4: V spans [0, 1] through multiples of ¼
        let states = vec![0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let j = DiscreteReturnSeries::new(states, map).unwrap();
        let v = compute_index(&j, 4, &IndexFunction::Square).unwrap();
        let g = candidate_grid(&v, 3, GridMode::Uniform, 0).unwrap();
        assert_eq!(g.points, vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn constant_index_has_no_candidates() {
        let j = DiscreteReturnSeries::new(vec![1; 20], map5()).unwrap();
        let v = compute_index(&j, 3, &IndexFunction::Square).unwrap();
        assert!(matches!(candidate_grid(&v, 3, GridMode::Quantile, 0), Err(Error::NoCandidates(_))));
    }

    #[test]
    fn quantile_grid_matches_direct_quantiles() {
        let data = random_series(3, 20_000, 10);
        let g = candidate_grid(data.index(), 9, GridMode::Quantile, 0).unwrap();
        let mut sorted = data.index().source_values().to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut direct: Vec<f64> = (1..=9)
            .map(|q| sorted[(q * sorted.len()).div_ceil(10) - 1])
            .collect();
        direct.dedup();
        assert_eq!(g.points, direct);
        // the index is concentrated, so quantile candidates span less of the range
        let u = candidate_grid(data.index(), 9, GridMode::Uniform, 0).unwrap();
        let spread = |p: &[f64]| p[p.len() - 1] - p[0];
        assert!(spread(&g.points) < spread(&u.points), "{:?} vs {:?}", g.points, u.points);
    }

    #[test]
    fn exposure_rule_drops_edge_candidates() {
        let data = random_series(4, 5_000, 10);
        let g = candidate_grid(data.index(), 30, GridMode::Uniform, 100).unwrap();
        assert!(!g.dropped.is_empty());
        let binned = BinnedCounts::new(&data, &g);
        assert!(binned.admissible(100).iter().all(|&a| a));
    }

    #[test]
    fn binned_intervals_match_recount() {
        let data = random_series(5, 8_000, 6);
        let g = candidate_grid(data.index(), 12, GridMode::Quantile, 0).unwrap();
        let binned = BinnedCounts::new(&data, &g);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let mut pos: Vec<usize> = (0..g.len()).filter(|_| rng.random_bool(0.3)).collect();
            pos.dedup();
            let part = Partition::new(pos.iter().map(|&p| g.points[p]).collect()).unwrap();
            let direct = count_transitions(data.returns(), data.index(), &part).unwrap();
            assert_eq!(binned.tensor(&pos), direct);
        }
        assert_eq!(binned.tensor(&[]).total(), (data.returns().len() - 6) as u64);
    }

    #[test]
    fn trajectory_binning_matches_series_binning() {
        let data = random_series(6, 3_000, 7);
        let g = candidate_grid(data.index(), 8, GridMode::Quantile, 0).unwrap();
        let table = IndexFunction::Square.values_for(&map5()).unwrap();
        let a = BinnedCounts::new(&data, &g);
        let b = BinnedCounts::from_trajectory(&data.returns().indices(), &table, 7, 5, &g);
        assert_eq!(a, b);
    }

    #[test]
    fn single_candidate_grid_returns_it() {
        let data = random_series(7, 4_000, 5);
        let g = CandidateGrid::from_points(vec![1.6], 0).unwrap();
        let s = ChangePointSearch::new(&data, &g);
        let fit = s.single().unwrap();
        assert_eq!(fit.thresholds, vec![1.6]);
        let direct = RegimeModel::fit(data.returns(), 5, &IndexFunction::Square, Partition::new(vec![1.6]).unwrap()).unwrap();
        assert_eq!(fit.model.matrices, direct.matrices);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let data = random_series(8, 1_000, 5);
        let g = candidate_grid(data.index(), 3, GridMode::Quantile, 10_000).unwrap();
        assert!(g.is_empty());
        assert!(ChangePointSearch::new(&data, &g).single().is_err());
    }

    #[test]
    fn k_zero_is_the_null_model() {
        let data = random_series(9, 2_000, 5);
        let g = candidate_grid(data.index(), 6, GridMode::Quantile, 0).unwrap();
        let fit = ChangePointSearch::new(&data, &g).multi(0, SearchStrategy::Dp).unwrap();
        assert_eq!(fit.distance, 0.0);
        assert!(fit.thresholds.is_empty());
        assert!(ChangePointSearch::new(&data, &g).multi(g.len(), SearchStrategy::Dp).is_err());
    }

    #[test]
    fn fit_likelihood_equals_direct_partition_likelihood() {
        let data = random_series(10, 10_000, 8);
        let g = candidate_grid(data.index(), 10, GridMode::Quantile, 50).unwrap();
        let fit = ChangePointSearch::new(&data, &g).multi(2, SearchStrategy::Dp).unwrap();
        let part = Partition::new(fit.thresholds.clone()).unwrap();
        let ll = log_likelihood(&count_transitions(data.returns(), data.index(), &part).unwrap());
        assert!((ll - fit.log_likelihood).abs() < 1e-9);
        assert!(fit.distance >= 0.0);
    }

    #[test]
    fn dp_equals_exhaustive_on_random_series() {
        for seed in 0..10u64 {
            let data = random_series(100 + seed, 3_000, 4);
            let g = candidate_grid(data.index(), 10, GridMode::Quantile, 20).unwrap();
            let binned = BinnedCounts::new(&data, &g);
            for k in 1..=3.min(g.len().saturating_sub(1)) {
                let a = search_binned(&binned, k, 20, SearchStrategy::Exhaustive).unwrap();
                let b = search_binned(&binned, k, 20, SearchStrategy::Dp).unwrap();
                assert_eq!(a, b, "seed {seed} k {k}");
            }
        }
    }

    #[test]
    fn monotone_in_k() {
        let data = random_series(11, 6_000, 6);
        let g = candidate_grid(data.index(), 12, GridMode::Quantile, 30).unwrap();
        let s = ChangePointSearch::new(&data, &g);
        let mut prev = f64::NEG_INFINITY;
        let mut prev_d = -1.0;
        for k in 0..5 {
            let fit = s.multi(k, SearchStrategy::Dp).unwrap();
            assert!(fit.log_likelihood >= prev);
            assert!(fit.distance >= prev_d);
            prev = fit.log_likelihood;
            prev_d = fit.distance;
        }
    }

    #[test]
    fn empty_cell_threshold_leaves_likelihood_unchanged() {
        let data = random_series(12, 3_000, 5);
        // V takes multiples of 1/5; 0.05 and 0.1 bracket an empty cell
        let g = CandidateGrid::from_points(vec![0.05, 0.1, 1.0, 2.0], 0).unwrap();
        let binned = BinnedCounts::new(&data, &g);
        assert_eq!(binned.cell(1).iter().sum::<u64>(), 0);
        let a = binned.partition_log_likelihood(&[0, 2]);
        let b = binned.partition_log_likelihood(&[0, 1, 2]);
        assert_eq!(a, b);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance_statistic(-3.0, -3.0), 0.0);
        assert_eq!(distance_statistic(-100.0, -150.0), 100.0);
    }

    #[test]
    fn criteria_examples() {
        let (aic, bic) = information_criteria(0.0, 1, 5, 10);
        assert_eq!(aic, 80.0);
        assert!(bic > aic);
        let (aic, _) = information_criteria(-681_500.0, 4, 5, 10);
        assert_eq!(aic, 1_363_200.0);
        let (aic, bic) = information_criteria(-10.0, 1, 5, 2);
        assert!(bic < aic, "log 2 < 1 shrinks the BIC penalty");
    }

    fn planted(seed: u64, len: usize, thresholds: Vec<f64>) -> IndexedSeries {
        let calm = StochasticMatrix::from_rows(vec![vec![0.05, 0.15, 0.6, 0.15, 0.05]; 5]).unwrap();
        let mid = StochasticMatrix::from_rows(vec![vec![0.12, 0.2, 0.36, 0.2, 0.12]; 5]).unwrap();
        let wild = StochasticMatrix::from_rows(vec![vec![0.22, 0.18, 0.2, 0.18, 0.22]; 5]).unwrap();
        let mats = match thresholds.len() {
            1 => vec![calm, wild],
            _ => vec![calm, mid, wild],
        };
        let model = RegimeModel::new(map5(), 10, IndexFunction::Square, Partition::new(thresholds).unwrap(), mats).unwrap();
        let cfg = SimulationConfig {
            length: len,
            seed,
            initial: InitialWindow::Zeros,
        };
        IndexedSeries::new(simulate_imc(&model, &cfg).unwrap(), 10, &IndexFunction::Square).unwrap()
    }

    #[test]
    fn planted_single_threshold_is_recovered() {
        let data = planted(21, 200_000, vec![1.2]);
        let g = candidate_grid(data.index(), 20, GridMode::Quantile, 100).unwrap();
        let fit = ChangePointSearch::new(&data, &g).single().unwrap();
        let pos = fit.grid_positions[0] as isize;
        let nearest = g.points.iter().enumerate().min_by(|a, b| (a.1 - 1.2).abs().total_cmp(&(b.1 - 1.2).abs())).unwrap().0 as isize;
        assert!((pos - nearest).abs() <= 1, "ψ̂ = {} grid {:?}", fit.thresholds[0], g.points);
        assert!(fit.distance > 1000.0, "D = {}", fit.distance);
    }

    #[test]
    fn select_k_finds_two_planted_thresholds() {
        let data = planted(22, 200_000, vec![0.9, 1.6]);
        let g = candidate_grid(data.index(), 20, GridMode::Quantile, 100).unwrap();
        let s = ChangePointSearch::new(&data, &g);
        let sel = s.select_k(5, Criterion::Bic, 0.001, SearchStrategy::Dp).unwrap();
        assert_eq!(sel.selected_k, 2, "{:#?}", sel.trace);
        let sel = s.select_k(5, Criterion::Aic, 1.0, SearchStrategy::Dp).unwrap();
        assert_eq!(sel.trace.last().unwrap().k, 1);
        // k = 1 still lowers AIC, so the stopping fit is kept.
        assert_eq!(sel.selected_k, 1);
    }

    #[test]
    fn select_k_prefers_null_for_null_data() {
        let mut zero = 0;
        for seed in 0..20u64 {
            let data = random_series(500 + seed, 20_000, 10);
            let g = candidate_grid(data.index(), 15, GridMode::Quantile, 100).unwrap();
            let sel = ChangePointSearch::new(&data, &g)
                .select_k(3, Criterion::Bic, 0.001, SearchStrategy::Dp)
                .unwrap();
            zero += usize::from(sel.selected_k == 0);
        }
        assert!(zero >= 19, "k̂ = 0 in {zero}/20 runs");
    }

    #[test]
    fn trace_csv_layout() {
        let data = random_series(13, 5_000, 5);
        let g = candidate_grid(data.index(), 8, GridMode::Quantile, 50).unwrap();
        let sel = ChangePointSearch::new(&data, &g).select_k(2, Criterion::Aic, 0.0, SearchStrategy::Dp).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&sel.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,D,D_change_pct,AIC,AIC_change_pct,BIC,BIC_change_pct\n0,"));
        assert_eq!(text.lines().count(), sel.trace.len() + 1);
    }
}
