//! Tick ingestion, fixed-frequency resampling, log-returns and the
//! discretization of returns onto the grid `{-z_min·Δ, …, 0, …, z_max·Δ}`.

use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    /// Epoch milliseconds.
    pub timestamp: i64,
    pub price: f64,
}

/// Tick records sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickSeries {
    ticks: Vec<Tick>,
}

impl TickSeries {
    /// Sorts the ticks (stable, so equal timestamps keep their input order).
    pub fn new(mut ticks: Vec<Tick>) -> Result<Self> {
        if let Some(t) = ticks.iter().find(|t| !(t.price > 0.0) || !t.price.is_finite()) {
            return Err(Error::NonPositivePrice {
                timestamp: t.timestamp,
                price: t.price,
            });
        }
        ticks.sort_by_key(|t| t.timestamp);
        Ok(Self { ticks })
    }

    pub fn ticks(&self) -> &[Tick] {
        &self.ticks
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }
}

/// Row-level problems found while loading a tick file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LoadReport {
    pub rows: usize,
    pub malformed: usize,
    pub out_of_order: usize,
}

/// Parse a timestamp given either as integer epoch milliseconds or ISO-8601.
/// ISO values without an offset are taken as UTC.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(ms) = raw.parse::<i64>() {
        return Some(ms);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp_millis());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp_millis());
        }
    }
    None
}

/// Load `timestamp,price` CSV records.
///
/// Rows that fail to parse are skipped and counted in the report; a row with a
/// parseable but non-positive price is an error.
pub fn load_ticks<R: Read>(source: R) -> Result<(TickSeries, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse(format!("missing `{name}` column")))
    };
    let ts_col = column("timestamp")?;
    let price_col = column("price")?;

    let mut report = LoadReport::default();
    let mut ticks = Vec::new();
    for record in reader.records() {
        report.rows += 1;
        let Ok(record) = record else {
            report.malformed += 1;
            continue;
        };
        let ts = record.get(ts_col).and_then(parse_timestamp);
        let price = record.get(price_col).and_then(|p| p.parse::<f64>().ok());
        match (ts, price) {
            (Some(timestamp), Some(price)) if price.is_finite() => {
                if price <= 0.0 {
                    return Err(Error::NonPositivePrice { timestamp, price });
                }
                if ticks.last().is_some_and(|t: &Tick| t.timestamp > timestamp) {
                    report.out_of_order += 1;
                }
                ticks.push(Tick { timestamp, price });
            }
            _ => report.malformed += 1,
        }
    }
    if report.rows == 0 {
        return Err(Error::Empty("tick file has no data rows"));
    }
    if ticks.is_empty() {
        return Err(Error::Parse(format!("all {} rows are malformed", report.rows)));
    }
    if report.malformed > 0 {
        log::warn!("skipped {} malformed tick rows", report.malformed);
    }
    if report.out_of_order > 0 {
        log::warn!("{} ticks were out of order and have been sorted", report.out_of_order);
    }
    Ok((TickSeries::new(ticks)?, report))
}

/// Prices sampled on a fixed period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub start_time: i64,
    pub period: i64,
    pub prices: Vec<f64>,
}

/// Trading sessions as half-open `[start, end)` epoch-ms intervals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionCalendar {
    pub sessions: Vec<(i64, i64)>,
}

/// Sample one price per period: the last tick strictly before each boundary
/// `start + k·period`, `k ≥ 1`, carrying the previous price forward through
/// periods without ticks. Boundaries run until the last tick is covered.
pub fn resample(ticks: &TickSeries, period: i64) -> Result<PriceSeries> {
    if period <= 0 {
        return Err(Error::InvalidParameter(format!("period must be positive, got {period}")));
    }
    let ticks = ticks.ticks();
    let (first, last) = match (ticks.first(), ticks.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => return Err(Error::Empty("no ticks to resample")),
    };
    let periods = ((last - first) / period + 1) as usize;
    let mut prices = Vec::with_capacity(periods);
    let mut cursor = 0;
    let mut current = ticks[0].price;
    for k in 1..=periods as i64 {
        let boundary = first + k * period;
        while cursor < ticks.len() && ticks[cursor].timestamp < boundary {
            current = ticks[cursor].price;
            cursor += 1;
        }
        prices.push(current);
    }
    Ok(PriceSeries {
        start_time: first,
        period,
        prices,
    })
}

/// Resample each session separately. Ticks outside every session are ignored
/// and sessions without ticks are skipped.
pub fn resample_sessions(
    ticks: &TickSeries,
    period: i64,
    calendar: &SessionCalendar,
) -> Result<Vec<PriceSeries>> {
    let mut out = Vec::new();
    for &(start, end) in &calendar.sessions {
        let inside: Vec<Tick> = ticks
            .ticks()
            .iter()
            .filter(|t| t.timestamp >= start && t.timestamp < end)
            .copied()
            .collect();
        if inside.is_empty() {
            continue;
        }
        out.push(resample(&TickSeries { ticks: inside }, period)?);
    }
    if out.is_empty() {
        return Err(Error::Empty("no ticks fall inside the session calendar"));
    }
    Ok(out)
}

/// Dimensionless log-returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub values: Vec<f64>,
}

pub fn log_returns(prices: &PriceSeries) -> Result<ReturnSeries> {
    if prices.prices.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "log-returns need at least 2 prices, got {}",
            prices.prices.len()
        )));
    }
    let values = prices
        .prices
        .windows(2)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    Ok(ReturnSeries { values })
}

/// Concatenate per-session returns; no return spans a session boundary.
/// Sessions with a single price contribute nothing.
pub fn session_log_returns(sessions: &[PriceSeries]) -> Result<ReturnSeries> {
    let mut values = Vec::new();
    for s in sessions.iter().filter(|s| s.prices.len() >= 2) {
        values.extend(log_returns(s)?.values);
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("no session has two or more prices".into()));
    }
    Ok(ReturnSeries { values })
}

/// State indices are stored as bytes.
pub const MAX_STATES: usize = 256;

/// The map from continuous returns to the discrete grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationMap {
    pub delta: f64,
    pub z_min: u32,
    pub z_max: u32,
}

impl DiscretizationMap {
    pub fn new(delta: f64, z_min: u32, z_max: u32) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid amplitude must be positive, got {delta}")));
        }
        // One side may be empty (e.g. E = {0, Δ}), but there must be two states.
        if z_min + z_max == 0 {
            return Err(Error::InvalidParameter("the grid needs at least two states".into()));
        }
        if z_min as usize + z_max as usize + 1 > MAX_STATES {
            return Err(Error::InvalidParameter(format!("at most {MAX_STATES} return states are supported")));
        }
        Ok(Self { delta, z_min, z_max })
    }

    /// |E| = z_min + z_max + 1.
    #[inline]
    pub fn state_count(&self) -> usize {
        (self.z_min + self.z_max + 1) as usize
    }

    /// Signed states `-z_min..=z_max` in index order.
    pub fn states(&self) -> impl Iterator<Item = i32> {
        -(self.z_min as i32)..=self.z_max as i32
    }

    #[inline]
    pub fn index_of(&self, state: i32) -> usize {
        (state + self.z_min as i32) as usize
    }

    #[inline]
    pub fn state_of(&self, index: usize) -> i32 {
        index as i32 - self.z_min as i32
    }

    /// The return value `i·Δ` of a state.
    #[inline]
    pub fn value(&self, state: i32) -> f64 {
        state as f64 * self.delta
    }

    /// Assign `r` to the state whose cell `((i-½)Δ, (i+½)Δ]` contains it,
    /// saturating at the extreme states.
    #[inline]
    pub fn discretize_value(&self, r: f64) -> i32 {
        let raw = (r / self.delta - 0.5).ceil();
        raw.clamp(-(self.z_min as f64), self.z_max as f64) as i32
    }

    fn contains(&self, state: i32) -> bool {
        state >= -(self.z_min as i32) && state <= self.z_max as i32
    }
}

/// Discrete returns as signed grid states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteReturnSeries {
    states: Vec<i32>,
    map: DiscretizationMap,
}

impl DiscreteReturnSeries {
    pub fn new(states: Vec<i32>, map: DiscretizationMap) -> Result<Self> {
        if let Some(s) = states.iter().find(|&&s| !map.contains(s)) {
            return Err(Error::InvalidParameter(format!(
                "state {s} outside [-{}, {}]",
                map.z_min, map.z_max
            )));
        }
        Ok(Self { states, map })
    }

    pub(crate) fn from_indices(indices: &[u8], map: DiscretizationMap) -> Self {
        let states = indices.iter().map(|&k| map.state_of(k as usize)).collect();
        Self { states, map }
    }

    pub fn states(&self) -> &[i32] {
        &self.states
    }

    pub fn map(&self) -> &DiscretizationMap {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Zero-based state indices (`state + z_min`).
    pub fn indices(&self) -> Vec<u8> {
        self.states
            .iter()
            .map(|&s| self.map.index_of(s) as u8)
            .collect()
    }

    /// Midpoint return values `i·Δ`.
    pub fn values(&self) -> Vec<f64> {
        self.states.iter().map(|&s| self.map.value(s)).collect()
    }

    /// Empirical frequency of each state, in index order.
    pub fn state_frequencies(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.map.state_count()];
        for &s in &self.states {
            counts[self.map.index_of(s)] += 1;
        }
        let n = self.states.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "state"]).map_err(csv_err)?;
        for (n, s) in self.states.iter().enumerate() {
            w.write_record([n.to_string(), s.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read an `n,state` CSV. Lines starting with `#` are ignored.
    pub fn read_csv<R: Read>(source: R, map: DiscretizationMap) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(source);
        let headers = reader.headers().map_err(csv_err)?.clone();
        let col = headers
            .iter()
            .position(|h| h == "state")
            .ok_or_else(|| Error::Parse("missing `state` column".into()))?;
        let mut states = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(csv_err)?;
            let s = record
                .get(col)
                .and_then(|v| v.parse::<i32>().ok())
                .ok_or_else(|| Error::Parse(format!("row {}: bad state", row + 1)))?;
            states.push(s);
        }
        if states.is_empty() {
            return Err(Error::Empty("state file has no rows"));
        }
        Self::new(states, map)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn discretize(returns: &ReturnSeries, map: &DiscretizationMap) -> DiscreteReturnSeries {
    let states = returns
        .values
        .iter()
        .map(|&r| map.discretize_value(r))
        .collect();
    DiscreteReturnSeries { states, map: *map }
}

/// Build a grid for `returns`. Without an override, Δ = 4σ̂/(z_min+z_max),
/// which puts the extreme grid points at ±2σ̂ for a symmetric grid.
pub fn build_map(
    returns: &ReturnSeries,
    z_min: u32,
    z_max: u32,
    delta_override: Option<f64>,
) -> Result<DiscretizationMap> {
    if let Some(delta) = delta_override {
        return DiscretizationMap::new(delta, z_min, z_max);
    }
    let n = returns.values.len();
    if n == 0 {
        return Err(Error::Empty("no returns"));
    }
    let mean = returns.values.iter().sum::<f64>() / n as f64;
    let var = returns
        .values
        .iter()
        .map(|r| (r - mean).powi(2))
        .sum::<f64>()
        / (n.max(2) - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance);
    }
    DiscretizationMap::new(4.0 * sd / (z_min + z_max) as f64, z_min, z_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ticks(rows: &[(i64, f64)]) -> TickSeries {
        TickSeries::new(rows.iter().map(|&(timestamp, price)| Tick { timestamp, price }).collect()).unwrap()
    }

    #[test]
    fn loads_two_rows() {
        let (t, r) = load_ticks("timestamp,price\n0,10\n1000,10.5\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(r.malformed, 0);
    }

    #[test]
    fn sorts_out_of_order_rows() {
        let (t, r) = load_ticks("timestamp,price\n2000,3\n1000,2\n3000,4\n".as_bytes()).unwrap();
        assert_eq!(r.out_of_order, 1);
        let ts: Vec<i64> = t.ticks().iter().map(|x| x.timestamp).collect();
        assert_eq!(ts, vec![1000, 2000, 3000]);
    }

    #[test]
    fn zero_price_is_an_error() {
        let err = load_ticks("timestamp,price\n0,10\n1,0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("non-positive price"), "{err}");
    }

    #[test]
    fn malformed_rows_are_counted() {
        let (t, r) = load_ticks("timestamp,price\n0,10\nxx,11\n5,abc\n7,12\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(r.malformed, 2);
    }

    #[test]
    fn empty_and_headerless_files_fail() {
        assert!(matches!(load_ticks("timestamp,price\n".as_bytes()), Err(Error::Empty(_))));
        assert!(matches!(load_ticks("a,b\n1,2\n".as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn iso_timestamps_are_detected() {
        let (t, _) = load_ticks(
            "timestamp,price\n2010-01-04T09:00:00Z,10\n2010-01-04 09:00:30,11\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(t.ticks()[1].timestamp - t.ticks()[0].timestamp, 30_000);
    }

    #[test]
    fn resample_last_tick_before_boundary() {
        let t = ticks(&[(0, 10.0), (30_000, 11.0), (90_000, 12.0)]);
        let p = resample(&t, 60_000).unwrap();
        assert_eq!(p.prices, vec![11.0, 12.0]);
    }

    #[test]
    fn resample_single_tick() {
        let p = resample(&ticks(&[(5, 7.0)]), 60_000).unwrap();
        assert_eq!(p.prices, vec![7.0]);
    }

    #[test]
    fn resample_carries_forward_through_gaps() {
        // Boundaries at 60,120,180,240,300 s; 120..240 see no new ticks.
        let t = ticks(&[(0, 10.0), (30_000, 11.0), (250_000, 12.0)]);
        let p = resample(&t, 60_000).unwrap();
        assert_eq!(p.prices, vec![11.0, 11.0, 11.0, 11.0, 12.0]);
    }

    #[test]
    fn resample_rejects_bad_period() {
        assert!(resample(&ticks(&[(0, 1.0)]), 0).is_err());
        assert!(resample(&ticks(&[(0, 1.0)]), -5).is_err());
    }

    #[test]
    fn session_returns_skip_overnight_gap() {
        let t = ticks(&[(0, 10.0), (60_000, 11.0), (120_000, 12.0), (1_000_000, 20.0), (1_060_000, 21.0), (1_120_000, 22.0)]);
        let cal = SessionCalendar {
            sessions: vec![(0, 180_000), (1_000_000, 1_180_000)],
        };
        let sessions = resample_sessions(&t, 60_000, &cal).unwrap();
        let r = session_log_returns(&sessions).unwrap();
        assert!(r.values.iter().all(|v| v.abs() < 0.2));
        let all = log_returns(&resample(&t, 60_000).unwrap()).unwrap();
        assert!(all.values.iter().any(|v| *v > 0.4));
    }

    #[test]
    fn log_return_examples() {
        let p = |v: Vec<f64>| PriceSeries { start_time: 0, period: 1, prices: v };
        assert_eq!(log_returns(&p(vec![1.0, 1.0])).unwrap().values, vec![0.0]);
        assert_eq!(log_returns(&p(vec![1.0, std::f64::consts::E])).unwrap().values, vec![1.0]);
        let r = log_returns(&p(vec![100.0, 101.0])).unwrap().values[0];
        assert!((r - 1.01f64.ln()).abs() < 1e-15);
        assert!(log_returns(&p(vec![1.0])).is_err());
    }

    #[test]
    fn discretize_examples() {
        let map = DiscretizationMap::new(0.001, 2, 2).unwrap();
        let d = |r: f64| map.discretize_value(r);
        assert_eq!(d(0.0), 0);
        assert_eq!(d(0.6 * 0.001), 1);
        assert_eq!(d(-100.0 * 0.001), -2);
        assert_eq!(d(100.0 * 0.001), 2);
        // right-closed cells: (−½Δ, ½Δ] → 0, (½Δ, 1½Δ] → 1
        assert_eq!(d(0.5 * 0.001), 0);
        assert_eq!(d(-0.5 * 0.001), -1);
    }

    #[test]
    fn build_map_rules() {
        let zero = ReturnSeries { values: vec![0.0; 10] };
        assert!(matches!(build_map(&zero, 2, 2, None), Err(Error::ZeroVariance)));
        let m = build_map(&zero, 2, 2, Some(0.0123)).unwrap();
        assert_eq!(m.delta, 0.0123);
        assert_eq!(m.state_count(), 5);
        assert!(DiscretizationMap::new(1.0, 0, 0).is_err());
        assert_eq!(DiscretizationMap::new(1.0, 0, 1).unwrap().state_count(), 2);
    }

    #[test]
    fn build_map_standard_normal_gives_unit_delta() {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        // Box–Muller standard normals.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..200_000)
            .map(|_| {
                let u1: f64 = rand::Rng::random::<f64>(&mut rng).max(1e-300);
                let u2: f64 = rand::Rng::random(&mut rng);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let m = build_map(&ReturnSeries { values }, 2, 2, None).unwrap();
        assert!((m.delta - 1.0).abs() < 0.01, "delta {}", m.delta);
    }

    #[test]
    fn states_csv_round_trip() {
        let map = DiscretizationMap::new(1.0, 2, 2).unwrap();
        let s = DiscreteReturnSeries::new(vec![0, -2, 2, 1], map).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("n,state\n0,0\n1,-2\n"));
        assert_eq!(DiscreteReturnSeries::read_csv(&buf[..], map).unwrap(), s);
        assert!(DiscreteReturnSeries::new(vec![3], map).is_err());
    }

    proptest! {
        #[test]
        fn discretize_picks_nearest_interior_state(r in -10.0f64..10.0, delta in 0.01f64..2.0) {
            let map = DiscretizationMap::new(delta, 3, 3).unwrap();
            let s = map.discretize_value(r);
            prop_assert!((-3..=3).contains(&s));
            if s > -3 && s < 3 {
                let dist = (r - s as f64 * delta).abs();
                for other in -3..=3 {
                    prop_assert!(dist <= (r - other as f64 * delta).abs() + 1e-12);
                }
            }
        }

        #[test]
        fn grid_values_map_to_themselves(i in -4i32..=4, delta in 1e-4f64..10.0) {
            let map = DiscretizationMap::new(delta, 4, 4).unwrap();
            prop_assert_eq!(map.discretize_value(map.value(i)), i);
        }

        #[test]
        fn log_returns_invert_cumulative_exponentiation(rs in proptest::collection::vec(-0.05f64..0.05, 1..200)) {
            let mut prices = vec![100.0];
            for r in &rs {
                let last = *prices.last().unwrap();
                prices.push(last * r.exp());
            }
            let back = log_returns(&PriceSeries { start_time: 0, period: 1, prices }).unwrap();
            for (a, b) in back.values.iter().zip(&rs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
