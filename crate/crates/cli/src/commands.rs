//! Subcommand implementations. Each writes its artifacts plus
//! `<command>.report.json` into the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use svysens::benchmark::{benchmark_all, benchmark_subset, min_k, BenchmarkRecord};
use svysens::bias::{ObservedScale, SensitivityParams};
use svysens::bootstrap::{bootstrap_interval, BootstrapConfig};
use svysens::calibration::{solve_raking, weighted_mean, weighted_se, CalibrationProblem, WeightVector};
use svysens::data::{load_population, load_survey, Filter, IngestConfig, Kind, LoadStats, SurveyFrame};
use svysens::detection::{detect, DetectConfig, LambdaPolicy, MrfConfig};
use svysens::features::{build_features, FeatureMap, Margins, TargetSpec};
use svysens::partial::{binary_grid, ensure_partial, partial_sweep, standardized_grid};
use svysens::simulation::{
    draw_sample, exact_moments, generate, oracle_decomposition, ExactMoments, COVARIATE_NAMES, N_COVARIATES,
};
use svysens::summary::{
    contour_grid, killer_region_area, robustness_value, BenchmarkPoint, ContourGrid, Resolution, RobustnessInput,
};
use svysens::{Error, Result};

use crate::config::{DataSection, RunConfig, WeightingSection};
use crate::report::*;
use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

pub const DEFAULT_OUT: &str = "svysens-out";

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
    /// Restricts artifacts to one format; the report JSON is always written.
    pub format: Option<Format>,
}

impl Context {
    pub fn new(cfg: RunConfig, out: Option<PathBuf>, seed: Option<u64>, format: Option<Format>) -> Result<Self> {
        cfg.validate()?;
        let out = out
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let seed = seed.unwrap_or(cfg.seed);
        Ok(Context { cfg, out, seed, format })
    }

    fn wants(&self, f: Format) -> bool {
        self.format.is_none_or(|g| g == f)
    }

    fn report(&self, command: &str) -> SensitivityReport {
        SensitivityReport::new(command, Provenance::new(self.cfg.digest(), self.seed))
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn write_report(&self, report: &SensitivityReport) -> Result<PathBuf> {
        self.write(&format!("{}.report.json", report.command), &report.to_json()?)
    }
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

fn weighting_columns(w: &WeightingSection) -> Vec<String> {
    let mut cols = Vec::new();
    for v in w.variables.iter().chain(w.interactions.iter().flatten()) {
        push_unique(&mut cols, v);
    }
    cols
}

/// Survey columns used by any configured step, so that listwise deletion
/// yields the same rows for every subcommand.
fn survey_columns(cfg: &RunConfig) -> Vec<String> {
    let mut cols = weighting_columns(&cfg.weighting);
    if let Some(p) = &cfg.partial {
        push_unique(&mut cols, &p.variable);
    }
    if let Some(d) = &cfg.detect {
        for c in d.covariates.iter().chain(&d.sampling_set).chain(&d.partial) {
            push_unique(&mut cols, c);
        }
    }
    if let Some(o) = &cfg.data.outcome {
        cols.retain(|c| c != o);
    }
    cols
}

fn ingest(
    data: &DataSection,
    outcome: Option<&str>,
    columns: Vec<String>,
    weight_col: Option<String>,
) -> Result<IngestConfig> {
    Ok(IngestConfig {
        outcome: outcome.map(str::to_string),
        columns,
        kinds: data.kinds.clone(),
        weight_col,
        delimiter: data.delimiter,
        filters: if outcome.is_some() {
            data.filters
                .iter()
                .map(|f| f.parse::<Filter>())
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        },
    })
}

fn required_path<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("missing `{key}`")))
}

pub fn load_sample(cfg: &RunConfig) -> Result<(SurveyFrame, LoadStats)> {
    let outcome = cfg.outcome()?;
    let path = required_path(&cfg.data.survey, "data.survey")?;
    let ic = ingest(
        &cfg.data,
        Some(outcome),
        survey_columns(cfg),
        cfg.data.weight_col.clone(),
    )?;
    load_survey(path, &ic)
}

pub struct Prepared {
    pub survey: SurveyFrame,
    pub stats: LoadStats,
    pub target: TargetSpec,
    pub problem: CalibrationProblem,
}

impl Prepared {
    pub fn y(&self) -> &[f64] {
        self.survey.outcome()
    }
}

/// Loads survey and target and builds the calibration problem.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    if cfg.weighting.variables.is_empty() {
        return Err(Error::Config("`weighting.variables` is empty".into()));
    }
    let (survey, stats) = load_sample(cfg)?;
    let target = match (&cfg.data.population, &cfg.data.margins) {
        (Some(p), None) => {
            let ic = ingest(
                &cfg.data,
                None,
                weighting_columns(&cfg.weighting),
                cfg.data.population_weight_col.clone(),
            )?;
            TargetSpec::Population(load_population(p, &ic)?.0)
        }
        (None, Some(m)) => {
            let margins = Margins::from_path(m)?;
            let kinds: BTreeMap<String, Kind> = survey.frame().schema().into_iter().collect();
            margins.validate(&kinds)?;
            TargetSpec::Margins(margins)
        }
        _ => {
            return Err(Error::Config(
                "give exactly one of `data.population` or `data.margins`".into(),
            ))
        }
    };
    let mut map = FeatureMap::main_effects(survey.frame(), &cfg.weighting.variables)?;
    for i in &cfg.weighting.interactions {
        map = map.with_interaction(i)?;
    }
    let features = build_features(survey.frame(), &target, &map)?;
    let mut problem = CalibrationProblem::new(&features, survey.base_weights())?;
    problem.tolerance = cfg.weighting.tolerance;
    problem.max_iter = cfg.weighting.max_iter;
    problem.cap = cfg.weighting.cap;
    Ok(Prepared {
        survey,
        stats,
        target,
        problem,
    })
}

fn solve(p: &Prepared) -> Result<WeightVector> {
    solve_raking(&p.problem)?.ensure_converged()
}

fn csv_table<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
}

fn estimates(p: &Prepared, w: &[f64]) -> Result<Estimates> {
    let y = p.y();
    let ones = vec![1.0; y.len()];
    Ok(Estimates {
        outcome: p.survey.outcome_col().to_string(),
        n: y.len(),
        unweighted: Estimate {
            estimate: weighted_mean(&ones, y)?,
            se: weighted_se(&ones, y)?,
        },
        weighted: Estimate {
            estimate: weighted_mean(w, y)?,
            se: weighted_se(w, y)?,
        },
        se_method: SE_LABEL.to_string(),
    })
}

fn robustness(scale: &ObservedScale, b_star: f64) -> Result<RobustnessRow> {
    let r = robustness_value(&RobustnessInput {
        mu_hat: scale.mu_hat,
        b_star,
        var_y: scale.var_y,
        var_w: scale.var_w,
    })?;
    Ok(RobustnessRow {
        b_star,
        mu_hat: scale.mu_hat,
        var_y: scale.var_y,
        var_w: scale.var_w,
        a: r.a,
        rv: r.rv,
    })
}

pub fn cmd_weight(ctx: &Context) -> Result<SensitivityReport> {
    let p = prepare(&ctx.cfg)?;
    let wv = solve_raking(&p.problem)?;
    let q = &p.problem.base_weights;
    let q_mean = q.iter().sum::<f64>() / q.len() as f64;
    let q: Vec<f64> = q.iter().map(|v| v / q_mean).collect();
    let before = p.problem.achieved(&q);
    let after = p.problem.achieved(&wv.w);
    let balance: Vec<BalanceRow> = p
        .problem
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| BalanceRow {
            constraint: name.clone(),
            before: before[j],
            after: after[j],
            target: p.problem.targets[j],
            abs_error: (after[j] - p.problem.targets[j]).abs(),
        })
        .collect();

    if ctx.wants(Format::Csv) {
        let mut s = String::from("row,weight\n");
        for (i, w) in wv.w.iter().enumerate() {
            let _ = writeln!(s, "{i},{w}");
        }
        ctx.write("weights.csv", &s)?;
        ctx.write("balance.csv", &csv_table(&balance)?)?;
    }
    let mut report = ctx.report("weight");
    report.weighting = Some(Weighting {
        n: p.survey.n(),
        rows_dropped: p.stats.dropped,
        rows_filtered: p.stats.filtered,
        diagnostics: wv.diagnostics.clone(),
        balance,
        weights: wv.w.clone(),
    });
    ctx.write_report(&report)?;
    // weights are written either way; non-convergence still fails the run
    wv.ensure_converged()?;
    Ok(report)
}

pub fn cmd_summary(ctx: &Context) -> Result<SensitivityReport> {
    let b_star = ctx.cfg.b_star()?;
    let p = prepare(&ctx.cfg)?;
    let w = solve(&p)?;
    let est = estimates(&p, &w.w)?;
    let scale = ObservedScale::from_sample(&w.w, p.y())?;
    let rob = robustness(&scale, b_star)?;
    if ctx.wants(Format::Csv) {
        let mut s = String::from("estimator,estimate,se\n");
        let _ = writeln!(s, "unweighted,{},{}", est.unweighted.estimate, est.unweighted.se);
        let _ = writeln!(s, "weighted,{},{}", est.weighted.estimate, est.weighted.se);
        ctx.write("estimates.csv", &s)?;
        ctx.write("robustness.csv", &csv_table(&[rob])?)?;
    }
    let mut report = ctx.report("summary");
    report.estimates = Some(est);
    report.robustness = Some(rob);
    ctx.write_report(&report)?;
    Ok(report)
}

fn benchmark_rows(
    ctx: &Context,
    p: &Prepared,
    w: &WeightVector,
    rob: &RobustnessRow,
) -> Result<Vec<(BenchmarkRecord, BenchmarkRow)>> {
    let cfg = &ctx.cfg.benchmark;
    let covariates = cfg
        .covariates
        .clone()
        .unwrap_or_else(|| ctx.cfg.weighting.variables.clone());
    let mut recs = benchmark_all(&p.problem, w, p.y(), &covariates, rob.b_star)?;
    for subset in &cfg.subsets {
        recs.push(benchmark_subset(&p.problem, w, p.y(), subset, rob.b_star)?);
    }
    Ok(recs
        .into_iter()
        .map(|r| {
            let k = min_k(r.r2_loo, r.rho_hat, rob.rv, rob.mu_hat - rob.b_star).ok();
            let row = BenchmarkRow::new(&r, k);
            (r, row)
        })
        .collect())
}

#[derive(Serialize)]
struct BenchmarkCsvRow<'a> {
    variable: &'a str,
    r2_hat: f64,
    rho_hat: f64,
    mrcs: String,
    est_bias: f64,
    r2_loo: f64,
    rho_degenerate: bool,
}

pub fn cmd_benchmark(ctx: &Context) -> Result<SensitivityReport> {
    let b_star = ctx.cfg.b_star()?;
    let p = prepare(&ctx.cfg)?;
    let w = solve(&p)?;
    let rob = robustness(&ObservedScale::from_sample(&w.w, p.y())?, b_star)?;
    let rows: Vec<BenchmarkRow> = benchmark_rows(ctx, &p, &w, &rob)?.into_iter().map(|(_, r)| r).collect();
    if ctx.wants(Format::Csv) {
        let csv_rows: Vec<BenchmarkCsvRow> = rows
            .iter()
            .map(|r| BenchmarkCsvRow {
                variable: &r.variable,
                r2_hat: r.r2_hat,
                rho_hat: r.rho_hat,
                mrcs: r.mrcs.to_string(),
                est_bias: r.est_bias,
                r2_loo: r.r2_loo,
                rho_degenerate: r.rho_degenerate,
            })
            .collect();
        ctx.write("benchmark.csv", &csv_table(&csv_rows)?)?;
    }
    let mut report = ctx.report("benchmark");
    report.robustness = Some(rob);
    report.benchmarks = Some(rows);
    ctx.write_report(&report)?;
    Ok(report)
}

pub fn contour_csv(grid: &ContourGrid) -> String {
    let mut s = String::from("rho,r2,bias,killer\n");
    for (i, r2) in grid.r2_axis.iter().enumerate() {
        for (j, rho) in grid.rho_axis.iter().enumerate() {
            let _ = writeln!(s, "{rho},{r2},{},{}", grid.bias[i][j], grid.killer[i][j] as u8);
        }
    }
    s
}

pub fn cmd_contour(ctx: &Context) -> Result<SensitivityReport> {
    let b_star = ctx.cfg.b_star()?;
    let p = prepare(&ctx.cfg)?;
    let w = solve(&p)?;
    let scale = ObservedScale::from_sample(&w.w, p.y())?;
    let rob = robustness(&scale, b_star)?;
    let c = ctx.cfg.contour;
    let mut grid = contour_grid(
        &scale,
        b_star,
        Resolution {
            rho: c.rho_points,
            r2: c.r2_points,
            r2_max: c.r2_max,
        },
    )?;
    let rows = benchmark_rows(ctx, &p, &w, &rob)?;
    grid.benchmark_points = rows
        .iter()
        .map(|(r, _)| BenchmarkPoint {
            label: r.label.clone(),
            rho: r.rho_hat,
            r2: r.r2_hat,
            bias: r.est_bias,
        })
        .collect();

    let mut files = Vec::new();
    if ctx.wants(Format::Csv) {
        ctx.write("contour.csv", &contour_csv(&grid))?;
        files.push("contour.csv".to_string());
    }
    if ctx.wants(Format::Json) {
        ctx.write("contour.json", &(serde_json::to_string(&grid)? + "\n"))?;
        files.push("contour.json".to_string());
    }
    if ctx.wants(Format::Svg) {
        ctx.write("contour.svg", &svg::contour_svg(&grid))?;
        files.push("contour.svg".to_string());
    }
    let mut report = ctx.report("contour");
    report.robustness = Some(rob);
    report.benchmarks = Some(rows.into_iter().map(|(_, r)| r).collect());
    report.contour = Some(ContourRef {
        files,
        rho_points: c.rho_points,
        r2_points: c.r2_points,
        r2_max: c.r2_max,
        killer_share: killer_region_area(&grid),
    });
    ctx.write_report(&report)?;
    Ok(report)
}

/// Whether the population file header names `column`.
fn population_has(cfg: &RunConfig, column: &str) -> Result<bool> {
    let Some(path) = &cfg.data.population else {
        return Ok(false);
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(cfg.data.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(file);
    Ok(rdr.headers()?.iter().any(|h| h == column))
}

pub fn cmd_partial(ctx: &Context) -> Result<SensitivityReport> {
    let section = ctx
        .cfg
        .partial
        .as_ref()
        .ok_or_else(|| Error::Config("missing `[partial]` section".into()))?;
    let name = section.variable.as_str();
    let p = prepare(&ctx.cfg)?;
    ensure_partial(name, &p.problem, Some(&p.target))?;
    if population_has(&ctx.cfg, name)? {
        return Err(Error::Config(format!(
            "`{name}` is available in the target; include it in the weights instead of sweeping it"
        )));
    }
    let col = p.survey.frame().require(name)?;
    let v = col
        .as_numeric()
        .ok_or_else(|| Error::Schema(format!("partial variable `{name}` must be numeric or binary")))?;
    let grid = match &section.grid {
        Some(g) => g.clone(),
        None if col.kind == Kind::Binary => binary_grid(v),
        None => standardized_grid(v)?.values(),
    };
    let sweep = partial_sweep(&p.problem, name, v, p.y(), &grid)?;
    if ctx.wants(Format::Csv) {
        let mut s = String::from("t_v,estimate,se,converged,feasible\n");
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for pt in &sweep.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                pt.t_v,
                opt(pt.estimate),
                opt(pt.se),
                pt.converged,
                pt.feasible
            );
        }
        ctx.write("sweep.csv", &s)?;
    }
    if ctx.wants(Format::Svg) {
        ctx.write("sweep.svg", &svg::sweep_svg(&sweep, ctx.cfg.b_star))?;
    }
    let mut report = ctx.report("partial");
    report.sweep = Some(sweep);
    ctx.write_report(&report)?;
    Ok(report)
}

pub fn cmd_detect(ctx: &Context) -> Result<SensitivityReport> {
    let d = ctx
        .cfg
        .detect
        .as_ref()
        .ok_or_else(|| Error::Config("missing `[detect]` section".into()))?;
    if d.sampling_set.is_empty() {
        return Err(Error::Config("`detect.sampling_set` is empty".into()));
    }
    let (survey, _) = load_sample(&ctx.cfg)?;
    let covariates = if d.covariates.is_empty() {
        ctx.cfg.weighting.variables.clone()
    } else {
        d.covariates.clone()
    };
    let cfg = DetectConfig {
        mrf: MrfConfig {
            lambda: match d.lambda {
                Some(l) => LambdaPolicy::Fixed(l),
                None => LambdaPolicy::CrossValidation {
                    folds: d.folds,
                    seed: ctx.seed,
                },
            },
            rule: d.rule,
        },
        max_len: d.max_len,
        path_cap: d.path_cap,
        minimize_partial: d.minimize_partial,
    };
    let det = detect(
        survey.frame(),
        survey.outcome_col(),
        &covariates,
        &d.sampling_set,
        &d.partial,
        &cfg,
    )?;
    if let Some(g) = &det.graph {
        if ctx.wants(Format::Csv) {
            ctx.write("edges.csv", &g.to_edge_csv())?;
        }
        ctx.write("graph.dot", &g.to_dot())?;
    }
    let mut report = ctx.report("detect");
    report.detection = Some(det);
    ctx.write_report(&report)?;
    Ok(report)
}

pub fn cmd_bootstrap(ctx: &Context) -> Result<SensitivityReport> {
    let b = &ctx.cfg.bootstrap;
    let params = SensitivityParams::new(b.rho, b.r2).map_err(|e| Error::Config(e.to_string()))?;
    let p = prepare(&ctx.cfg)?;
    let w = solve(&p)?;
    let ci = bootstrap_interval(
        &p.problem,
        p.y(),
        &params,
        &BootstrapConfig {
            replicates: b.replicates,
            alpha: b.alpha,
            seed: ctx.seed,
            mode: b.mode,
        },
    )?;
    let mut report = ctx.report("bootstrap");
    report.estimates = Some(estimates(&p, &w.w)?);
    report.bootstrap = Some(ci);
    ctx.write_report(&report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub seed: u64,
    pub replication: u64,
    pub population_size: usize,
    pub sample_size: usize,
    /// Finite-population mean of Y.
    pub mu: f64,
    pub mu_hat: f64,
    pub mu_hat_oracle: f64,
    pub mu_hat_marginal: f64,
    pub r2: f64,
    pub rho: f64,
    pub cov_eps_y: f64,
    pub var_w: f64,
    pub var_w_star: f64,
    pub var_eps: f64,
    pub exact: ExactMoments,
}

pub fn cmd_simulate(ctx: &Context) -> Result<OracleSummary> {
    let mut dgp = ctx.cfg.simulate.dgp.clone();
    dgp.seed = ctx.seed;
    let rep = ctx.cfg.simulate.replication;
    let pop = generate(&dgp, rep)?;
    let idx = draw_sample(&pop, dgp.seed, rep)?;
    let oracle = oracle_decomposition(&dgp, &pop, &idx)?;

    let mut survey = String::from("x1,x2,x3,y\n");
    for &i in &idx {
        for k in 0..N_COVARIATES {
            let _ = write!(survey, "{},", pop.cell[i] >> k & 1);
        }
        let _ = writeln!(survey, "{}", pop.y[i]);
    }
    let mut population = COVARIATE_NAMES.join(",") + "\n";
    for &c in &pop.cell {
        let bits: Vec<String> = (0..N_COVARIATES).map(|k| (c >> k & 1).to_string()).collect();
        population.push_str(&bits.join(","));
        population.push('\n');
    }
    ctx.write("survey.csv", &survey)?;
    ctx.write("population.csv", &population)?;

    let d = oracle.decomposition;
    let summary = OracleSummary {
        seed: dgp.seed,
        replication: rep,
        population_size: pop.len(),
        sample_size: idx.len(),
        mu: oracle.mu,
        mu_hat: oracle.mu_hat,
        mu_hat_oracle: oracle.mu_hat_oracle,
        mu_hat_marginal: oracle.mu_hat_marginal,
        r2: d.r2,
        rho: d.rho.value,
        cov_eps_y: d.cov_eps_y,
        var_w: d.var_w,
        var_w_star: d.var_w_star,
        var_eps: d.var_eps,
        exact: exact_moments(&dgp)?,
    };
    ctx.write("oracle.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;

    let mut run = RunConfig {
        b_star: Some(0.0),
        seed: dgp.seed,
        ..RunConfig::default()
    };
    run.data.survey = Some("survey.csv".into());
    run.data.population = Some("population.csv".into());
    run.data.outcome = Some("y".into());
    run.weighting.variables = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    run.simulate.dgp = dgp;
    run.simulate.replication = rep;
    let text = toml::to_string(&run).map_err(|e| Error::Invalid(e.to_string()))?;
    ctx.write("config.toml", &text)?;
    Ok(summary)
}
