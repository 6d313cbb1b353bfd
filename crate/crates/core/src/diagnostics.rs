//! Matrix distances, autocorrelation of squared returns, and the ordering
//! checks on five-state regime matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::RegimeModel;
use crate::matrix::Matrix;

fn check_shapes(p: &Matrix, q: &Matrix) -> Result<()> {
    if p.size() != q.size() {
        return Err(Error::ShapeMismatch {
            left: p.size(),
            right: q.size(),
        });
    }
    Ok(())
}

fn reference_total(q: &Matrix) -> Result<f64> {
    let total = q.total();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("reference matrix must have positive total".into()));
    }
    Ok(total)
}

/// Percentage root mean square deviation of `p` from the reference `q`:
/// `sqrt(Σ(p−q)²/n) · n · 100 / Σq`, with `n` the number of entries.
pub fn rsmd(p: &Matrix, q: &Matrix) -> Result<f64> {
    check_shapes(p, q)?;
    let total = reference_total(q)?;
    let n = p.entries().len() as f64;
    let ss: f64 = p.entries().iter().zip(q.entries()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / n).sqrt() * n * 100.0 / total)
}

/// Percentage mean absolute deviation: `Σ|p−q| · 100 / Σq`.
pub fn mad(p: &Matrix, q: &Matrix) -> Result<f64> {
    check_shapes(p, q)?;
    let total = reference_total(q)?;
    let abs: f64 = p.entries().iter().zip(q.entries()).map(|(a, b)| (a - b).abs()).sum();
    Ok(abs * 100.0 / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfResult {
    /// `1..=max_lag`.
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    /// Always `"biased"`: covariances are divided by `T` at every lag.
    pub estimator: String,
}

impl AcfResult {
    /// Mean autocorrelation over the lags in `first..=last`.
    pub fn mean_over(&self, first: usize, last: usize) -> f64 {
        let slice: Vec<f64> = self
            .lags
            .iter()
            .zip(&self.values)
            .filter(|(l, _)| **l >= first && **l <= last)
            .map(|(_, v)| *v)
            .collect();
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

/// Sample autocorrelation of `r²`.
pub fn acf_squared(returns: &[f64], max_lag: usize) -> Result<AcfResult> {
    let t = returns.len();
    if t <= max_lag {
        return Err(Error::InsufficientData(format!(
            "series of length {t} is too short for lag {max_lag}"
        )));
    }
    let sq: Vec<f64> = returns.iter().map(|r| r * r).collect();
    let mean = sq.iter().sum::<f64>() / t as f64;
    let centered: Vec<f64> = sq.iter().map(|x| x - mean).collect();
    let var = centered.iter().map(|x| x * x).sum::<f64>() / t as f64;
    // relative spread below 1e-12 is rounding, not variation
    if !(var > 1e-24 * mean * mean) {
        return Err(Error::DegenerateVariance);
    }
    let values = (1..=max_lag)
        .into_par_iter()
        .map(|lag| {
            let cov: f64 = centered[..t - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / t as f64;
            cov / var
        })
        .collect();
    Ok(AcfResult {
        lags: (1..=max_lag).collect(),
        values,
        estimator: "biased".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `p_{i,3}(h) > p_{i,3}(h+1)`: staying at zero return gets less likely with volatility.
    CenterDecreasing,
    /// `p_{i,1}(h) < p_{i,1}(h+1)` and `p_{i,5}(h) < p_{i,5}(h+1)`.
    TailsIncreasing,
    /// Low states lean up, high states lean down.
    MeanReversion,
    /// From state 3: down-moves dominate in calm regimes, up-moves in volatile ones.
    CenterAsymmetry,
}

/// One inequality `lhs relation rhs`. States and regimes are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub family: Family,
    pub state: usize,
    pub regime: usize,
    /// For families comparing adjacent regimes, the second regime.
    pub other_regime: Option<usize>,
    /// Compared column, for single-entry families.
    pub column: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub relation: char,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeStructureReport {
    pub applicable: bool,
    pub note: Option<String>,
    /// Regimes `1..=low_volatility_regimes` count as calm for the asymmetry family.
    pub low_volatility_regimes: usize,
    pub checks: Vec<InequalityCheck>,
}

impl RegimeStructureReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.holds).count()
    }

    pub fn pass_rate(&self) -> f64 {
        if self.checks.is_empty() {
            return 0.0;
        }
        self.passed() as f64 / self.checks.len() as f64
    }

    pub fn family_holds(&self, family: Family) -> bool {
        let mut any = false;
        for c in self.checks.iter().filter(|c| c.family == family) {
            any = true;
            if !c.holds {
                return false;
            }
        }
        any
    }

    pub fn all_hold(&self) -> bool {
        self.applicable && self.passed() == self.checks.len()
    }
}

/// Calm regimes are the first `ceil(3R/5)`; for five regimes, the first three.
pub fn default_low_volatility_regimes(regimes: usize) -> usize {
    (3 * regimes).div_ceil(5)
}

pub fn regime_structure_report(model: &RegimeModel) -> RegimeStructureReport {
    let matrices: Vec<Matrix> = model.matrices.iter().map(|m| m.as_matrix().clone()).collect();
    let low = default_low_volatility_regimes(matrices.len());
    regime_structure_report_for(&matrices, low)
}

/// Evaluate the inequality families on matrices ordered from the calmest
/// regime to the most volatile.
pub fn regime_structure_report_for(matrices: &[Matrix], low_volatility_regimes: usize) -> RegimeStructureReport {
    let not_applicable = |note: String| RegimeStructureReport {
        applicable: false,
        note: Some(note),
        low_volatility_regimes,
        checks: Vec::new(),
    };
    if matrices.is_empty() {
        return not_applicable("no matrices".into());
    }
    if let Some(m) = matrices.iter().find(|m| m.size() != 5) {
        return not_applicable(format!("needs 5 return states, model has {}", m.size()));
    }
    // 1-based accessors
    let p = |h: usize, i: usize, j: usize| matrices[h - 1].get(i - 1, j - 1);
    let regimes = matrices.len();
    let mut checks = Vec::new();
    let mut push = |family, state, regime, other_regime, column, lhs: f64, relation, rhs: f64| {
        let holds = if relation == '<' { lhs < rhs } else { lhs > rhs };
        checks.push(InequalityCheck {
            family,
            state,
            regime,
            other_regime,
            column,
            lhs,
            rhs,
            relation,
            holds,
        });
    };
    for h in 1..regimes {
        for i in 1..=5 {
            push(Family::CenterDecreasing, i, h, Some(h + 1), Some(3), p(h, i, 3), '>', p(h + 1, i, 3));
        }
    }
    for h in 1..regimes {
        for i in 1..=5 {
            for col in [1, 5] {
                push(Family::TailsIncreasing, i, h, Some(h + 1), Some(col), p(h, i, col), '<', p(h + 1, i, col));
            }
        }
    }
    let down = |h, i| p(h, i, 1) + p(h, i, 2);
    let up = |h, i| p(h, i, 4) + p(h, i, 5);
    for h in 1..=regimes {
        for i in [1, 2] {
            push(Family::MeanReversion, i, h, None, None, down(h, i), '<', up(h, i));
        }
        for i in [4, 5] {
            push(Family::MeanReversion, i, h, None, None, down(h, i), '>', up(h, i));
        }
    }
    for h in 1..=regimes {
        let rel = if h <= low_volatility_regimes { '>' } else { '<' };
        push(Family::CenterAsymmetry, 3, h, None, None, down(h, 3), rel, up(h, 3));
    }
    RegimeStructureReport {
        applicable: true,
        note: (regimes < 2).then(|| "a single regime has no adjacent-regime comparisons".to_string()),
        low_volatility_regimes,
        checks,
    }
}
