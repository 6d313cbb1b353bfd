use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use imc::changepoint::{
    candidate_grid, write_trace_csv, CandidateGrid, ChangePointFit, ChangePointSearch, Criterion, GridMode,
    IndexedSeries, SearchStrategy, Selection,
};
use imc::diagnostics::{acf_squared, mad, rsmd};
use imc::first_passage::{
    first_passage_exact, first_passage_mc, reachable_set, Method, TargetInterval, WindowState,
};
use imc::index::IndexFunction;
use imc::market_data::{build_map, discretize, load_ticks, log_returns, resample, LoadReport};
use imc::simulation::{simulate_imc, InitialWindow, SimulationConfig};
use imc::testing::{bootstrap_null, chi_square_reference, evaluate, BootstrapConfig, NullDistribution, NullMode, NullModel, TestResult};
use serde::Serialize;

use crate::artifacts::{read_map, read_matrices, read_model, read_returns, Artifacts};
use crate::config::{
    check_positive, config_hash, parse_choice, required, AcfArgs, DataArgs, FptArgs, GridArgs, IngestArgs,
    SelectArgs, SimulateArgs, TestArgs,
};
use crate::error::{CliError, Context};

pub type Outcome = Result<Vec<PathBuf>, CliError>;

fn input_err(msg: String) -> CliError {
    CliError::Input(anyhow!(msg))
}

// Defaults are written into the settings before hashing, so the hash names
// the configuration that actually ran.

pub(crate) fn data_defaults(a: &mut DataArgs) -> Result<(), CliError> {
    let returns = required(a.returns.clone(), "returns")?;
    a.map.get_or_insert_with(|| returns.with_file_name("map.json"));
    a.memory.get_or_insert(30);
    a.index_function.get_or_insert_with(|| "square".into());
    Ok(())
}

pub(crate) fn grid_defaults(g: &mut GridArgs) {
    g.grid_size.get_or_insert(50);
    g.grid_mode.get_or_insert_with(|| "quantile".into());
    g.min_exposure.get_or_insert(imc::changepoint::DEFAULT_MIN_EXPOSURE);
    g.strategy.get_or_insert_with(|| "dp".into());
}

pub(crate) fn select_defaults(s: &mut SelectArgs) {
    s.k.get_or_insert(1);
    s.auto.get_or_insert(false);
    s.criterion.get_or_insert_with(|| "bic".into());
    s.improvement_floor.get_or_insert(0.001);
    s.k_max.get_or_insert(6);
}

pub(crate) fn test_defaults(t: &mut TestArgs) -> Result<(), CliError> {
    required(t.seed, "seed")?;
    t.bootstrap.get_or_insert(1000);
    t.alpha.get_or_insert_with(|| vec![0.05, 0.01]);
    t.fixed_psi.get_or_insert(false);
    Ok(())
}

pub(crate) fn load_data(a: &DataArgs) -> Result<IndexedSeries, CliError> {
    let returns_path = a.returns.as_ref().unwrap();
    let map = read_map(a.map.as_ref().unwrap())?;
    let returns = read_returns(returns_path, map)?;
    let f: IndexFunction = parse_choice(a.index_function.as_ref().unwrap(), "index-function")?;
    let memory = check_positive(a.memory.unwrap(), "memory")?;
    IndexedSeries::new(returns, memory, &f).context_with(|| format!("indexing {}", returns_path.display()))
}

pub(crate) fn build_grid(data: &IndexedSeries, g: &GridArgs) -> Result<CandidateGrid, CliError> {
    let mode: GridMode = parse_choice(g.grid_mode.as_ref().unwrap(), "grid-mode")?;
    let grid = candidate_grid(data.index(), g.grid_size.unwrap(), mode, g.min_exposure.unwrap())?;
    log::info!("{} candidates ({} dropped by exposure)", grid.len(), grid.dropped.len());
    Ok(grid)
}

pub(crate) fn strategy(g: &GridArgs) -> Result<SearchStrategy, CliError> {
    parse_choice(g.strategy.as_ref().unwrap(), "strategy")
}

pub(crate) fn select(search: &ChangePointSearch, s: &SelectArgs, strategy: SearchStrategy) -> Result<Selection, CliError> {
    let criterion: Criterion = parse_choice(s.criterion.as_ref().unwrap(), "criterion")?;
    Ok(search.select_k(s.k_max.unwrap(), criterion, s.improvement_floor.unwrap(), strategy)?)
}

/// Fit with a fixed `k`, or by information criterion when `--auto` is set.
fn choose_fit(
    search: &ChangePointSearch,
    s: &SelectArgs,
    strategy: SearchStrategy,
) -> Result<(ChangePointFit, Option<Selection>), CliError> {
    if s.auto.unwrap() {
        let selection = select(search, s, strategy)?;
        log::info!("selected k = {}", selection.selected_k);
        return Ok((selection.fit.clone(), Some(selection)));
    }
    let k = s.k.unwrap();
    let fit = if k == 0 { search.fit_at(&[])? } else { search.multi(k, strategy)? };
    Ok((fit, None))
}

pub(crate) fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Serialize)]
struct IngestSummary {
    input: PathBuf,
    load: LoadReport,
    period_ms: i64,
    prices: usize,
    returns: usize,
    delta: f64,
    delta_estimated: bool,
    z_min: u32,
    z_max: u32,
    state_frequencies: Vec<f64>,
}

pub fn ingest(mut a: IngestArgs, out: Option<PathBuf>) -> Outcome {
    let input = required(a.input.clone(), "input")?;
    let period = *a.period_ms.get_or_insert(60_000);
    let z_min = *a.z_min.get_or_insert(2);
    let z_max = *a.z_max.get_or_insert(2);
    if period <= 0 {
        return Err(input_err("--period-ms must be positive".into()));
    }
    let file = File::open(&input)
        .with_context(|| format!("cannot read {}", input.display()))
        .map_err(CliError::Input)?;
    let (ticks, load) = load_ticks(file).context_with(|| format!("loading {}", input.display()))?;
    let prices = resample(&ticks, period)?;
    let returns = log_returns(&prices)?;
    let map = build_map(&returns, z_min, z_max, a.delta)?;
    let discrete = discretize(&returns, &map);

    let mut art = Artifacts::create(&out_dir(out), "ingest", config_hash("ingest", &a))?;
    art.csv("returns.csv", |w| discrete.write_csv(w))?;
    art.json("map.json", "map", &map)?;
    art.json(
        "ingest.json",
        "ingest",
        &IngestSummary {
            input,
            load,
            period_ms: period,
            prices: prices.prices.len(),
            returns: discrete.len(),
            delta: map.delta,
            delta_estimated: a.delta.is_none(),
            z_min,
            z_max,
            state_frequencies: discrete.state_frequencies(),
        },
    )?;
    Ok(art.commit())
}

#[derive(Serialize)]
struct FitSummary<'a> {
    k: usize,
    thresholds: &'a [f64],
    log_likelihood: f64,
    null_log_likelihood: f64,
    distance: f64,
    aic: f64,
    bic: f64,
    grid: &'a [f64],
    dropped_candidates: &'a [f64],
    selection: Option<SelectionSummary>,
}

#[derive(Serialize)]
struct SelectionSummary {
    criterion: Criterion,
    improvement_floor: f64,
    selected_k: usize,
}

impl<'a> FitSummary<'a> {
    fn new(fit: &'a ChangePointFit, grid: &'a CandidateGrid, selection: Option<&Selection>) -> Self {
        Self {
            k: fit.k,
            thresholds: &fit.thresholds,
            log_likelihood: fit.log_likelihood,
            null_log_likelihood: fit.null_log_likelihood,
            distance: fit.distance,
            aic: fit.aic,
            bic: fit.bic,
            grid: &grid.points,
            dropped_candidates: &grid.dropped,
            selection: selection.map(|s| SelectionSummary {
                criterion: s.criterion,
                improvement_floor: s.improvement_floor,
                selected_k: s.selected_k,
            }),
        }
    }
}

#[derive(Serialize)]
struct FitSettings<'a> {
    data: &'a DataArgs,
    grid: &'a GridArgs,
    select: &'a SelectArgs,
}

pub fn fit(mut d: DataArgs, mut g: GridArgs, mut s: SelectArgs, out: Option<PathBuf>) -> Outcome {
    data_defaults(&mut d)?;
    grid_defaults(&mut g);
    select_defaults(&mut s);
    let data = load_data(&d)?;
    let grid = build_grid(&data, &g)?;
    let search = ChangePointSearch::new(&data, &grid);
    let (fit, selection) = choose_fit(&search, &s, strategy(&g)?)?;

    let hash = config_hash("fit", &FitSettings { data: &d, grid: &g, select: &s });
    let mut art = Artifacts::create(&out_dir(out), "fit", hash)?;
    art.json("model.json", "model", &fit.model)?;
    art.json("fit.json", "fit", &FitSummary::new(&fit, &grid, selection.as_ref()))?;
    if let Some(sel) = &selection {
        art.csv("trace.csv", |w| write_trace_csv(&sel.trace, w))?;
    }
    Ok(art.commit())
}

#[derive(Serialize)]
struct TestSummary<'a> {
    k: usize,
    thresholds: &'a [f64],
    null_mode: &'a NullMode,
    result: &'a TestResult,
    null_mean: f64,
    degenerate_replicates: usize,
    chi_square_degrees_of_freedom: usize,
}

#[derive(Serialize)]
struct TestSettings<'a> {
    data: &'a DataArgs,
    grid: &'a GridArgs,
    select: &'a SelectArgs,
    test: &'a TestArgs,
}

pub(crate) fn null_distribution(
    data: &IndexedSeries,
    grid: &CandidateGrid,
    fit: &ChangePointFit,
    t: &TestArgs,
    strategy: SearchStrategy,
) -> Result<NullDistribution, CliError> {
    let mode = if t.fixed_psi.unwrap() {
        NullMode::Fixed { thresholds: fit.thresholds.clone() }
    } else {
        NullMode::Search { k: fit.k, strategy }
    };
    let cfg = BootstrapConfig {
        replicates: check_positive(t.bootstrap.unwrap(), "bootstrap")?,
        length: data.returns().len(),
        seed: t.seed.unwrap(),
        mode,
    };
    log::info!("bootstrapping {} replicates", cfg.replicates);
    Ok(bootstrap_null(&NullModel::from_data(data)?, grid, &cfg)?)
}

pub fn test(mut d: DataArgs, mut g: GridArgs, mut s: SelectArgs, mut t: TestArgs, out: Option<PathBuf>) -> Outcome {
    data_defaults(&mut d)?;
    grid_defaults(&mut g);
    select_defaults(&mut s);
    test_defaults(&mut t)?;
    let data = load_data(&d)?;
    let grid = build_grid(&data, &g)?;
    let search = ChangePointSearch::new(&data, &grid);
    let strategy = strategy(&g)?;
    let (fit, _) = choose_fit(&search, &s, strategy)?;
    if fit.k == 0 {
        return Err(CliError::Statistical(anyhow!(
            "no change point was selected; pass --k to test a fixed number"
        )));
    }
    let dist = null_distribution(&data, &grid, &fit, &t, strategy)?;
    let result = evaluate(&dist, fit.distance, t.alpha.as_ref().unwrap())?;

    let hash = config_hash("test", &TestSettings { data: &d, grid: &g, select: &s, test: &t });
    let mut art = Artifacts::create(&out_dir(out), "test", hash)?;
    art.json(
        "test.json",
        "test",
        &TestSummary {
            k: fit.k,
            thresholds: &fit.thresholds,
            null_mode: &dist.provenance.mode,
            result: &result,
            null_mean: dist.mean(),
            degenerate_replicates: dist.provenance.degenerate,
            chi_square_degrees_of_freedom: chi_square_reference(data.returns().map().state_count())?,
        },
    )?;
    art.csv("bootstrap.csv", |w| dist.write_csv(w))?;
    Ok(art.commit())
}

pub fn simulate(mut a: SimulateArgs, out: Option<PathBuf>) -> Outcome {
    let model_path = required(a.model.clone(), "model")?;
    let length = required(a.length, "length")?;
    let seed = required(a.seed, "seed")?;
    let model = read_model(&model_path)?;
    let initial = match a.initial.get_or_insert_with(|| "zeros".into()).as_str() {
        "zeros" => InitialWindow::Zeros,
        "from-data" => {
            let path = required(a.returns.clone(), "returns")?;
            InitialWindow::SampledFrom(read_returns(&path, model.map)?.states().to_vec())
        }
        other => return Err(input_err(format!("invalid value `{other}` for --initial"))),
    };
    let traj = simulate_imc(&model, &SimulationConfig { length, seed, initial })?;

    let mut art = Artifacts::create(&out_dir(out), "simulate", config_hash("simulate", &a))?;
    art.csv("traj.csv", |w| traj.write_csv(w))?;
    Ok(art.commit())
}

#[derive(Serialize)]
struct FptSummary<'a> {
    target_regime: usize,
    target: &'a TargetInterval,
    window: &'a WindowState,
    method: &'a Method,
    horizon: usize,
    total_mass: f64,
    tail_mass: f64,
    reachable_next_step: Vec<i32>,
}

fn parse_window(raw: &str) -> Result<Vec<i32>, CliError> {
    raw.split(',')
        .map(|s| s.trim().parse::<i32>())
        .collect::<Result<_, _>>()
        .map_err(|_| input_err(format!("invalid value `{raw}` for --window")))
}

pub fn fpt(mut a: FptArgs, out: Option<PathBuf>) -> Outcome {
    let model = read_model(&required(a.model.clone(), "model")?)?;
    let regime = required(a.target_regime, "target-regime")?;
    let horizon = required(a.horizon, "horizon")?;
    let raw_window = required(a.window.clone(), "window")?;
    if regime == 0 || regime > model.partition.regime_count() {
        return Err(input_err(format!(
            "--target-regime must be in 1..={}",
            model.partition.regime_count()
        )));
    }
    if a.exact == Some(true) && a.mc.is_some() {
        return Err(input_err("--exact and --mc are mutually exclusive".into()));
    }
    let window = if raw_window == "from-data" {
        let path = required(a.returns.clone(), "returns")?;
        WindowState::from_series(&read_returns(&path, model.map)?, model.memory)?
    } else {
        WindowState::new(parse_window(&raw_window)?)
    };
    let target = TargetInterval::regime(&model, regime - 1)?;
    let dist = match a.mc {
        Some(replicates) => {
            let seed = required(a.seed, "seed")?;
            first_passage_mc(&model, &window, &target, horizon, check_positive(replicates, "mc")?, seed)?
        }
        None => {
            a.exact = Some(true);
            first_passage_exact(&model, &window, &target, horizon)?
        }
    };
    let reachable = reachable_set(&window, &model, &target)?.reachable;

    let mut art = Artifacts::create(&out_dir(out), "fpt", config_hash("fpt", &a))?;
    art.csv("fpt.csv", |w| dist.write_csv(w))?;
    art.json(
        "fpt.json",
        "first-passage",
        &FptSummary {
            target_regime: regime,
            target: &target,
            window: &window,
            method: &dist.method,
            horizon,
            total_mass: dist.g.iter().sum(),
            tail_mass: dist.tail_mass(),
            reachable_next_step: reachable,
        },
    )?;
    Ok(art.commit())
}

#[derive(Serialize)]
struct AcfSettings<'a> {
    data: &'a DataArgs,
    acf: &'a AcfArgs,
}

pub fn acf(mut d: DataArgs, mut a: AcfArgs, out: Option<PathBuf>) -> Outcome {
    data_defaults(&mut d)?;
    let max_lag = check_positive(*a.max_lag.get_or_insert(1000), "max-lag")?;
    let returns_path = d.returns.as_ref().unwrap();
    let returns = read_returns(returns_path, read_map(d.map.as_ref().unwrap())?)?;
    let result = acf_squared(&returns.values(), max_lag)?;

    let hash = config_hash("acf", &AcfSettings { data: &d, acf: &a });
    let mut art = Artifacts::create(&out_dir(out), "acf", hash)?;
    art.csv("acf.csv", |w| {
        w.extend_from_slice(b"lag,acf\n");
        for (lag, v) in result.lags.iter().zip(&result.values) {
            w.extend_from_slice(format!("{lag},{v:.12e}\n").as_bytes());
        }
        Ok(())
    })?;
    Ok(art.commit())
}

#[derive(Debug, Serialize)]
pub struct MatrixDistance {
    /// 1-based position of the matrix in both files.
    pub regime: usize,
    pub rsmd_pct: f64,
    pub mad_pct: f64,
}

/// Distances of each matrix in `first` from the one at the same position in
/// `reference`. Printed as JSON; also saved when `out` is given.
pub fn matdist(first: &Path, reference: &Path, out: Option<PathBuf>) -> Outcome {
    let p = read_matrices(first)?;
    let q = read_matrices(reference)?;
    if p.len() != q.len() {
        return Err(input_err(format!(
            "{} holds {} matrices but {} holds {}",
            first.display(),
            p.len(),
            reference.display(),
            q.len()
        )));
    }
    let distances = p
        .iter()
        .zip(&q)
        .enumerate()
        .map(|(r, (a, b))| {
            Ok(MatrixDistance {
                regime: r + 1,
                rsmd_pct: rsmd(a, b)?,
                mad_pct: mad(a, b)?,
            })
        })
        .collect::<imc::Result<Vec<_>>>()?;
    println!("{}", serde_json::to_string_pretty(&distances)?);
    let Some(dir) = out else {
        return Ok(Vec::new());
    };
    let mut art = Artifacts::create(&dir, "matdist", config_hash("matdist", &(first, reference)))?;
    art.json("matdist.json", "distances", &distances)?;
    Ok(art.commit())
}
