//! Trajectory generation for indexed and plain Markov chains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::RegimeModel;
use crate::index::WindowMean;
use crate::market_data::{DiscreteReturnSeries, DiscretizationMap};
use crate::matrix::StochasticMatrix;

/// Independent generator for `(seed, stream)`; streams never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The first `m` states of an indexed-chain trajectory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialWindow {
    /// All-zero returns.
    #[default]
    Zeros,
    /// Explicit states, oldest first.
    States(Vec<i32>),
    /// A window drawn uniformly among the length-`m` windows of observed data.
    SampledFrom(Vec<i32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Total trajectory length, initial window included.
    pub length: usize,
    pub seed: u64,
    pub initial: InitialWindow,
}

fn resolve_window(
    initial: &InitialWindow,
    memory: usize,
    map: &DiscretizationMap,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u8>> {
    let states: Vec<i32> = match initial {
        InitialWindow::Zeros => vec![0; memory],
        InitialWindow::States(s) => {
            if s.len() < memory {
                return Err(Error::InvalidParameter(format!(
                    "initial window has {} states, memory is {memory}",
                    s.len()
                )));
            }
            s[s.len() - memory..].to_vec()
        }
        InitialWindow::SampledFrom(data) => {
            if data.len() < memory {
                return Err(Error::InvalidParameter(format!(
                    "{} observed states cannot supply a window of {memory}",
                    data.len()
                )));
            }
            let start = rng.random_range(0..=data.len() - memory);
            data[start..start + memory].to_vec()
        }
    };
    let series = DiscreteReturnSeries::new(states, *map)?;
    Ok(series.indices())
}

/// Simulate an indexed Markov chain: at each step the matrix of the interval
/// holding `V_n` drives the move out of `J_n`.
pub fn simulate_imc(model: &RegimeModel, cfg: &SimulationConfig) -> Result<DiscreteReturnSeries> {
    let m = model.memory;
    if cfg.length <= m {
        return Err(Error::InvalidParameter(format!(
            "length {} must exceed memory {m}",
            cfg.length
        )));
    }
    let mut rng = stream_rng(cfg.seed, 0);
    let table = model.index_function.values_for(&model.map)?;
    let mut path = resolve_window(&cfg.initial, m, &model.map, &mut rng)?;
    path.reserve(cfg.length - m);
    let mut window = WindowMean::new(m);
    let mut v = 0.0;
    for &s in &path {
        if let Some(x) = window.push(table[s as usize]) {
            v = x;
        }
    }
    let mut current = *path.last().unwrap() as usize;
    while path.len() < cfg.length {
        let next = model.matrix_for(v).sample_next(current, rng.random::<f64>());
        path.push(next as u8);
        v = window.push(table[next]).expect("window is full");
        current = next;
    }
    Ok(DiscreteReturnSeries::from_indices(&path, model.map))
}

/// Initial state of a plain Markov chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    Fixed(i32),
    Uniform,
    /// Probabilities per state index (e.g. empirical frequencies).
    Distribution(Vec<f64>),
}

impl InitialState {
    pub(crate) fn draw(&self, map: &DiscretizationMap, rng: &mut ChaCha8Rng) -> Result<usize> {
        let n = map.state_count();
        Ok(match self {
            Self::Fixed(s) => {
                DiscreteReturnSeries::new(vec![*s], *map)?;
                map.index_of(*s)
            }
            Self::Uniform => rng.random_range(0..n),
            Self::Distribution(p) => {
                if p.len() != n {
                    return Err(Error::ShapeMismatch { left: n, right: p.len() });
                }
                let total: f64 = p.iter().sum();
                if !(total > 0.0) || p.iter().any(|&x| x < 0.0) {
                    return Err(Error::InvalidParameter("initial distribution must be non-negative with positive mass".into()));
                }
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                p.iter()
                    .position(|&x| {
                        acc += x;
                        u < acc
                    })
                    .unwrap_or_else(|| p.iter().rposition(|&x| x > 0.0).unwrap())
            }
        })
    }
}

/// Raw state-index path of a plain Markov chain.
pub(crate) fn markov_indices(
    p: &StochasticMatrix,
    length: usize,
    start: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    let mut path = Vec::with_capacity(length);
    if length == 0 {
        return path;
    }
    let mut current = start;
    path.push(current as u8);
    for _ in 1..length {
        current = p.sample_next(current, rng.random::<f64>());
        path.push(current as u8);
    }
    path
}

pub fn simulate_markov(
    p: &StochasticMatrix,
    map: &DiscretizationMap,
    length: usize,
    initial: &InitialState,
    seed: u64,
) -> Result<DiscreteReturnSeries> {
    if p.size() != map.state_count() {
        return Err(Error::ShapeMismatch {
            left: map.state_count(),
            right: p.size(),
        });
    }
    let mut rng = stream_rng(seed, 0);
    let start = initial.draw(map, &mut rng)?;
    Ok(DiscreteReturnSeries::from_indices(
        &markov_indices(p, length, start, &mut rng),
        *map,
    ))
}
