//! `report`: fit, test and diagnose in one run, with a Markdown summary.

use std::fmt::Write as _;
use std::path::PathBuf;

use imc::changepoint::{write_trace_csv, ChangePointSearch, Selection, TraceRow};
use imc::diagnostics::{mad, regime_structure_report, rsmd, RegimeStructureReport};
use imc::testing::TestResult;
use imc::Matrix;
use serde::Serialize;

use crate::artifacts::Artifacts;
use crate::commands::{
    build_grid, data_defaults, grid_defaults, load_data, null_distribution, out_dir, select, select_defaults,
    strategy, test_defaults, Outcome,
};
use crate::config::{config_hash, DataArgs, GridArgs, SelectArgs, TestArgs};

#[derive(Serialize)]
struct ReportSettings<'a> {
    data: &'a DataArgs,
    grid: &'a GridArgs,
    select: &'a SelectArgs,
    test: &'a TestArgs,
}

#[derive(Serialize)]
struct SingleChangePoint {
    threshold: f64,
    distance: f64,
    low: Matrix,
    high: Matrix,
    rsmd_pct: f64,
    mad_pct: f64,
    test: TestResult,
}

#[derive(Serialize)]
struct Summary {
    observations: usize,
    memory: usize,
    states: Vec<i32>,
    grid_size: usize,
    single: SingleChangePoint,
    trace: Vec<TraceRow>,
    selected_k: usize,
    thresholds: Vec<f64>,
    matrices: Vec<Matrix>,
    rsmd_pct: Vec<Vec<f64>>,
    mad_pct: Vec<Vec<f64>>,
    structure: RegimeStructureReport,
}

fn pairwise(m: &[Matrix], metric: fn(&Matrix, &Matrix) -> imc::Result<f64>) -> imc::Result<Vec<Vec<f64>>> {
    m.iter()
        .map(|a| m.iter().map(|b| metric(a, b)).collect())
        .collect()
}

/// When `--k` is given explicitly the detailed tables use that many change
/// points; otherwise they use the information-criterion choice.
pub fn report(mut d: DataArgs, mut g: GridArgs, mut s: SelectArgs, mut t: TestArgs, out: Option<PathBuf>) -> Outcome {
    let fixed_k = s.k;
    data_defaults(&mut d)?;
    grid_defaults(&mut g);
    select_defaults(&mut s);
    test_defaults(&mut t)?;
    let data = load_data(&d)?;
    let grid = build_grid(&data, &g)?;
    let search = ChangePointSearch::new(&data, &grid);
    let strategy = strategy(&g)?;

    let one = search.single()?;
    let dist = null_distribution(&data, &grid, &one, &t, strategy)?;
    let test = imc::testing::evaluate(&dist, one.distance, t.alpha.as_ref().unwrap())?;
    let low = one.model.matrices[0].as_matrix().clone();
    let high = one.model.matrices[1].as_matrix().clone();
    let single = SingleChangePoint {
        threshold: one.thresholds[0],
        distance: one.distance,
        rsmd_pct: rsmd(&high, &low)?,
        mad_pct: mad(&high, &low)?,
        low,
        high,
        test,
    };

    let selection: Selection = select(&search, &s, strategy)?;
    let chosen = match fixed_k {
        Some(0) => search.fit_at(&[])?,
        Some(k) => search.multi(k, strategy)?,
        None => selection.fit.clone(),
    };
    let matrices: Vec<Matrix> = chosen.model.matrices.iter().map(|m| m.as_matrix().clone()).collect();
    let summary = Summary {
        observations: data.returns().len(),
        memory: data.memory(),
        states: data.returns().map().states().collect(),
        grid_size: grid.len(),
        single,
        trace: selection.trace.clone(),
        selected_k: chosen.k,
        thresholds: chosen.thresholds.clone(),
        rsmd_pct: pairwise(&matrices, rsmd)?,
        mad_pct: pairwise(&matrices, mad)?,
        matrices,
        structure: regime_structure_report(&chosen.model),
    };

    let hash = config_hash("report", &ReportSettings { data: &d, grid: &g, select: &s, test: &t });
    let mut art = Artifacts::create(&out_dir(out), "report", hash)?;
    let markdown = render(&summary, art.stamp().config_hash.as_str());
    art.json("report.json", "report", &summary)?;
    art.json("model.json", "model", &chosen.model)?;
    art.csv("trace.csv", |w| write_trace_csv(&summary.trace, w))?;
    art.csv("bootstrap.csv", |w| dist.write_csv(w))?;
    art.text("report.md", &markdown)?;
    Ok(art.commit())
}

fn matrix_table(out: &mut String, m: &Matrix, states: &[i32]) {
    out.push_str("| from \\ to |");
    for s in states {
        let _ = write!(out, " {s} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(states.len()));
    out.push('\n');
    for (i, s) in states.iter().enumerate() {
        let _ = write!(out, "| {s} |");
        for v in m.row(i) {
            let _ = write!(out, " {v:.4} |");
        }
        out.push('\n');
    }
    out.push('\n');
}

fn pairwise_table(out: &mut String, title: &str, values: &[Vec<f64>]) {
    let _ = writeln!(out, "### {title}\n");
    out.push_str("| |");
    for r in 1..=values.len() {
        let _ = write!(out, " P({r}) |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(values.len()));
    out.push('\n');
    for (r, row) in values.iter().enumerate() {
        let _ = write!(out, "| P({}) |", r + 1);
        for v in row {
            let _ = write!(out, " {v:.1} |");
        }
        out.push('\n');
    }
    out.push('\n');
}

fn pct(x: Option<f64>) -> String {
    x.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "".into())
}

fn render(s: &Summary, config_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Indexed Markov chain report\n");
    let _ = writeln!(
        out,
        "{} observations, memory {}, {} candidate thresholds. Config `{}`.\n",
        s.observations, s.memory, s.grid_size, &config_hash[..12]
    );

    let one = &s.single;
    let _ = writeln!(out, "## One change point\n");
    let _ = writeln!(out, "Threshold {:.4}, D = {:.2}.\n", one.threshold, one.distance);
    let _ = writeln!(out, "### Low-volatility matrix\n");
    matrix_table(&mut out, &one.low, &s.states);
    let _ = writeln!(out, "### High-volatility matrix\n");
    matrix_table(&mut out, &one.high, &s.states);
    let _ = writeln!(out, "| %RSMD | %MAD |\n|---|---|\n| {:.1} | {:.1} |\n", one.rsmd_pct, one.mad_pct);

    let _ = writeln!(out, "### Bootstrap test\n");
    out.push_str("| D |");
    for c in &one.test.critical_values {
        let _ = write!(out, " D*({:.2}) |", 1.0 - c.alpha);
    }
    out.push_str(" p-value |\n|---|");
    out.push_str(&"---|".repeat(one.test.critical_values.len() + 1));
    let _ = write!(out, "\n| {:.2} |", one.test.d_hat);
    for c in &one.test.critical_values {
        let _ = write!(out, " {:.2} |", c.value);
    }
    let _ = writeln!(out, " {:.4} |\n", one.test.p_value);
    let _ = writeln!(out, "{} bootstrap replicates.\n", one.test.replicates);

    let _ = writeln!(out, "## Number of change points\n");
    out.push_str("| k | D | D change % | AIC | AIC change % | BIC | BIC change % |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in &s.trace {
        let first = r.k == 0;
        let _ = writeln!(
            out,
            "| {} | {:.2} | {} | {:.2} | {} | {:.2} | {} |",
            r.k,
            r.distance,
            pct(r.distance_change),
            r.aic,
            pct((!first).then_some(r.aic_change)),
            r.bic,
            pct((!first).then_some(r.bic_change)),
        );
    }
    out.push('\n');

    let _ = writeln!(out, "## Selected model: {} change points\n", s.selected_k);
    if !s.thresholds.is_empty() {
        out.push_str("| threshold | value |\n|---|---|\n");
        for (i, t) in s.thresholds.iter().enumerate() {
            let _ = writeln!(out, "| ψ{} | {t:.4} |", i + 1);
        }
        out.push('\n');
    }
    for (r, m) in s.matrices.iter().enumerate() {
        let _ = writeln!(out, "### P({})\n", r + 1);
        matrix_table(&mut out, m, &s.states);
    }
    pairwise_table(&mut out, "%RSMD between regimes", &s.rsmd_pct);
    pairwise_table(&mut out, "%MAD between regimes", &s.mad_pct);

    let st = &s.structure;
    let _ = writeln!(out, "## Regime structure\n");
    if st.applicable {
        let _ = writeln!(
            out,
            "{} of {} inequalities hold ({:.0}%).\n",
            st.passed(),
            st.checks.len(),
            100.0 * st.pass_rate()
        );
    } else {
        let _ = writeln!(out, "Not applicable: {}.\n", st.note.as_deref().unwrap_or("unsupported shape"));
    }
    out
}
