//! First entrance time of the index process into a target interval.
//!
//! Starting from a window of the last `m` returns at time `s`, `g(n)` is the
//! probability that `V_{s+n}` is the first of `V_{s+1}, V_{s+2}, …` to fall in
//! the target. The exact method propagates the not-yet-entered probability
//! mass over all `|E|^m` windows, one step per layer; windows are encoded in
//! base `|E|` with the oldest state as the most significant digit.

use std::io::Write;
use std::ops::{Bound, RangeBounds};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::RegimeModel;
use crate::index::index_bounds;
use crate::market_data::DiscreteReturnSeries;
use crate::simulation::stream_rng;

/// Largest window space the exact method will enumerate.
pub const MAX_EXACT_WINDOWS: u128 = 1_000_000;

/// The last `m` return states, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowState {
    pub states: Vec<i32>,
}

impl WindowState {
    pub fn new(states: Vec<i32>) -> Self {
        Self { states }
    }

    /// The final `memory` states of a series.
    pub fn from_series(returns: &DiscreteReturnSeries, memory: usize) -> Result<Self> {
        if returns.len() < memory {
            return Err(Error::InsufficientData(format!(
                "series of length {} cannot supply a window of {memory}",
                returns.len()
            )));
        }
        Ok(Self::new(returns.states()[returns.len() - memory..].to_vec()))
    }

    fn indices(&self, model: &RegimeModel) -> Result<Vec<u8>> {
        if self.states.len() != model.memory {
            return Err(Error::InvalidParameter(format!(
                "window has {} states, model memory is {}",
                self.states.len(),
                model.memory
            )));
        }
        Ok(DiscreteReturnSeries::new(self.states.clone(), model.map)?.indices())
    }
}

/// An interval of index values (grid units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetInterval {
    pub lower: Bound<f64>,
    pub upper: Bound<f64>,
}

impl TargetInterval {
    pub fn new(lower: Bound<f64>, upper: Bound<f64>) -> Self {
        Self { lower, upper }
    }

    /// `(-∞, ∞)`.
    pub fn everything() -> Self {
        Self::new(Bound::Unbounded, Bound::Unbounded)
    }

    /// Interval of regime `r` (0-based): `[lower, ψ_1]` for the first, then
    /// `(ψ_{r}, ψ_{r+1}]`, the last closed at the upper index bound.
    pub fn regime(model: &RegimeModel, r: usize) -> Result<Self> {
        let t = model.partition.thresholds();
        if r > t.len() {
            return Err(Error::InvalidParameter(format!(
                "regime {r} does not exist in a model with {} regimes",
                t.len() + 1
            )));
        }
        let bounds = index_bounds(&model.map, &model.index_function)?;
        let lower = if r == 0 { Bound::Included(bounds.lower) } else { Bound::Excluded(t[r - 1]) };
        let upper = Bound::Included(if r == t.len() { bounds.upper } else { t[r] });
        Ok(Self::new(lower, upper))
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lower, self.upper).contains(&v)
    }
}

/// One-step successors split by whether they move the index into the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachableSet {
    pub reachable: Vec<i32>,
    pub complement: Vec<i32>,
}

/// Mean of `f` over a window given as state indices, summed oldest first.
fn window_value(indices: impl Iterator<Item = u8>, table: &[f64], memory: usize) -> f64 {
    indices.map(|i| table[i as usize]).sum::<f64>() / memory as f64
}

pub fn reachable_set(window: &WindowState, model: &RegimeModel, target: &TargetInterval) -> Result<ReachableSet> {
    let idx = window.indices(model)?;
    let table = model.index_function.values_for(&model.map)?;
    let m = model.memory;
    let mut out = ReachableSet { reachable: Vec::new(), complement: Vec::new() };
    for j in 0..model.state_count() {
        let v = window_value(idx[1..].iter().copied().chain([j as u8]), &table, m);
        let state = model.map.state_of(j);
        if target.contains(v) {
            out.reachable.push(state);
        } else {
            out.complement.push(state);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum Method {
    Exact,
    MonteCarlo { replicates: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstPassageDistribution {
    pub method: Method,
    pub target: TargetInterval,
    pub horizon: usize,
    /// `g[n-1]` is the probability of first entrance at step `n`.
    pub g: Vec<f64>,
    /// Binomial standard errors (Monte Carlo only).
    pub stderr: Option<Vec<f64>>,
}

impl FirstPassageDistribution {
    /// Probability of no entrance within the horizon.
    pub fn tail_mass(&self) -> f64 {
        1.0 - self.g.iter().sum::<f64>()
    }

    /// `n,g,stderr`; the last column is empty for the exact method.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(["n", "g", "stderr"]).map_err(e)?;
        for (k, g) in self.g.iter().enumerate() {
            let se = self
                .stderr
                .as_ref()
                .map(|s| format!("{:.12e}", s[k]))
                .unwrap_or_default();
            w.write_record([(k + 1).to_string(), format!("{g:.12e}"), se]).map_err(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn window_count(states: usize, memory: usize) -> u128 {
    (states as u128).saturating_pow(memory as u32)
}

pub fn first_passage_exact(
    model: &RegimeModel,
    window: &WindowState,
    target: &TargetInterval,
    horizon: usize,
) -> Result<FirstPassageDistribution> {
    let e = model.state_count();
    let m = model.memory;
    let windows = window_count(e, m);
    if windows > MAX_EXACT_WINDOWS {
        return Err(Error::StateSpaceTooLarge {
            states: windows,
            limit: MAX_EXACT_WINDOWS,
        });
    }
    let windows = windows as usize;
    let idx = window.indices(model)?;
    let table = model.index_function.values_for(&model.map)?;
    let high = windows / e; // E^{m-1}

    // Index value and regime matrix of every window.
    let digits = |code: usize| (0..m).rev().map(move |p| ((code / e.pow(p as u32)) % e) as u8);
    let values: Vec<f64> = (0..windows).map(|c| window_value(digits(c), &table, m)).collect();
    let inside: Vec<bool> = values.iter().map(|&v| target.contains(v)).collect();

    let start = idx.iter().fold(0usize, |c, &d| c * e + d as usize);
    let mut mass = vec![0.0; windows];
    let mut active = vec![start];
    mass[start] = 1.0;
    let mut next = vec![0.0; windows];
    let mut touched = vec![false; windows];
    let mut g = Vec::with_capacity(horizon);

    for _ in 0..horizon {
        let mut entered = 0.0;
        let mut next_active = Vec::new();
        for &code in &active {
            let q = mass[code];
            mass[code] = 0.0;
            let p = model.matrix_for(values[code]);
            let row = p.row(code % e);
            let shifted = (code % high) * e;
            for (j, &pij) in row.iter().enumerate() {
                if pij == 0.0 {
                    continue;
                }
                let succ = shifted + j;
                if inside[succ] {
                    entered += q * pij;
                } else {
                    if !touched[succ] {
                        touched[succ] = true;
                        next_active.push(succ);
                    }
                    next[succ] += q * pij;
                }
            }
        }
        g.push(entered);
        next_active.sort_unstable();
        for &c in &next_active {
            touched[c] = false;
        }
        std::mem::swap(&mut mass, &mut next);
        active = next_active;
        if active.is_empty() {
            g.resize(horizon, 0.0);
            break;
        }
    }
    Ok(FirstPassageDistribution {
        method: Method::Exact,
        target: *target,
        horizon,
        g,
        stderr: None,
    })
}

/// Each replicate runs stream `r` of `seed` for at most `horizon` steps.
pub fn first_passage_mc(
    model: &RegimeModel,
    window: &WindowState,
    target: &TargetInterval,
    horizon: usize,
    replicates: usize,
    seed: u64,
) -> Result<FirstPassageDistribution> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("at least one replicate is needed".into()));
    }
    let idx = window.indices(model)?;
    let table = model.index_function.values_for(&model.map)?;
    let m = model.memory;
    let hits: Vec<Option<usize>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            // ring buffer, `head` is the oldest slot
            let mut ring = idx.clone();
            let mut head = 0;
            let value = |ring: &[u8], head: usize| {
                window_value((0..m).map(|k| ring[(head + k) % m]), &table, m)
            };
            let mut v = value(&ring, head);
            for n in 1..=horizon {
                let current = ring[(head + m - 1) % m] as usize;
                let next = model.matrix_for(v).sample_next(current, rng.random::<f64>());
                ring[head] = next as u8;
                head = (head + 1) % m;
                v = value(&ring, head);
                if target.contains(v) {
                    return Some(n);
                }
            }
            None
        })
        .collect();
    let mut counts = vec![0usize; horizon];
    for n in hits.into_iter().flatten() {
        counts[n - 1] += 1;
    }
    let r = replicates as f64;
    let g: Vec<f64> = counts.iter().map(|&c| c as f64 / r).collect();
    let stderr = g.iter().map(|&p| (p * (1.0 - p) / r).sqrt()).collect();
    Ok(FirstPassageDistribution {
        method: Method::MonteCarlo { replicates, seed },
        target: *target,
        horizon,
        g,
        stderr: Some(stderr),
    })
}
