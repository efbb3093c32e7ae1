//! Simulation grid: generate, learn with every strategy, evaluate.

use std::io::Write;
use std::time::Instant;

use lmebn::infer::Engine;
use lmebn::metrics::{evaluate, EvalOptions, MetricRow};
use lmebn::model::fit_parameters;
use lmebn::search::{hill_climb, SearchConfig};
use lmebn::simgen::{build_replicate, Cell, Replicate, Scenario};
use lmebn::{BnModel, Execution, LmeConfig, Strategy};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const RESULTS_COLUMNS: [&str; 17] = [
    "N",
    "avg_parents",
    "F",
    "n_j",
    "scenario",
    "replicate",
    "strategy",
    "shd",
    "shd_xonly",
    "kl_joint",
    "kl_mc_xonly",
    "rmad_known_f",
    "rmad_unknown_f",
    "f1",
    "n_over_p",
    "runtime_ms",
    "error",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub n_vars: usize,
    pub avg_parents: f64,
    pub n_groups: usize,
    pub n_j: usize,
    pub scenario: Scenario,
    pub replicate: usize,
    pub strategy: Strategy,
    pub metrics: Option<MetricRow>,
    pub runtime_ms: u64,
    pub error: Option<String>,
}

impl ResultRow {
    fn new(cell: &Cell, replicate: usize, strategy: Strategy) -> Self {
        Self {
            n_vars: cell.n_vars,
            avg_parents: cell.avg_parents,
            n_groups: cell.n_groups,
            n_j: cell.n_j,
            scenario: cell.scenario,
            replicate,
            strategy,
            metrics: None,
            runtime_ms: 0,
            error: None,
        }
    }

    pub fn record(&self) -> Vec<String> {
        let mut rec = vec![
            self.n_vars.to_string(),
            self.avg_parents.to_string(),
            self.n_groups.to_string(),
            self.n_j.to_string(),
            self.scenario.to_string(),
            self.replicate.to_string(),
            self.strategy.to_string(),
        ];
        rec.extend(metric_fields(self.metrics.as_ref()));
        rec.push(self.runtime_ms.to_string());
        rec.push(self.error.clone().unwrap_or_default());
        rec
    }
}

/// The metric columns of a results row; empty strings when absent.
pub fn metric_fields(m: Option<&MetricRow>) -> Vec<String> {
    let num = |f: fn(&MetricRow) -> f64| m.map(|m| f(m).to_string()).unwrap_or_default();
    vec![
        m.map(|m| m.shd.to_string()).unwrap_or_default(),
        m.map(|m| m.shd_xonly.to_string()).unwrap_or_default(),
        num(|m| m.kl_joint),
        num(|m| m.kl_mc_xonly),
        num(|m| m.rmad_known_f),
        num(|m| m.rmad_unknown_f),
        num(|m| m.f1),
        num(|m| m.n_over_p),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub strategies: Vec<Strategy>,
    pub engine: Engine,
    /// Worker threads; `None` uses the default pool.
    pub jobs: Option<usize>,
    /// Record wall-clock times (makes output run-dependent).
    pub timing: bool,
    pub lme: LmeConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            engine: Engine::Exact,
            jobs: None,
            timing: false,
            lme: LmeConfig::default(),
        }
    }
}

/// Structure search followed by parameter fitting.
pub fn learn(
    data: &lmebn::GroupedDataset,
    strategy: Strategy,
    lme: &LmeConfig,
    seed: u64,
    execution: Execution,
) -> lmebn::Result<(BnModel, f64)> {
    let search = SearchConfig {
        seed,
        lme: lme.clone(),
        ..SearchConfig::default()
    };
    let found = hill_climb(data, strategy, &search)?;
    let model = fit_parameters(&found.dag, data, strategy, lme, execution)?;
    Ok((model, found.score))
}

fn run_strategy(
    config: &RunConfig,
    rep: &Replicate,
    truth: &BnModel,
    strategy: Strategy,
    options: &RunOptions,
) -> lmebn::Result<MetricRow> {
    let (model, _) = learn(&rep.train, strategy, &options.lme, rep.seeds.inference, Execution::Sequential)?;
    let eval = EvalOptions {
        engine: options.engine,
        mc_samples: config.mc_samples,
        seed: rep.seeds.inference,
        execution: Execution::Sequential,
    };
    evaluate(
        truth,
        &model,
        &rep.eval,
        rep.train.n_rows(),
        rep.truth.parameter_count(),
        &eval,
    )
}

/// Rows of one replicate of one cell, one per strategy. Failures are
/// recorded in the rows rather than returned.
pub fn run_replicate(config: &RunConfig, cell: &Cell, replicate: usize, options: &RunOptions) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = options
        .strategies
        .iter()
        .map(|&s| ResultRow::new(cell, replicate, s))
        .collect();
    let built = build_replicate(&config.experiment, cell, replicate).and_then(|rep| {
        let truth = rep.truth.to_model()?;
        Ok((rep, truth))
    });
    let (rep, truth) = match built {
        Ok(x) => x,
        Err(e) => {
            for row in &mut rows {
                row.error = Some(format!("generation: {e}"));
            }
            return rows;
        }
    };
    for row in &mut rows {
        let start = Instant::now();
        match run_strategy(config, &rep, &truth, row.strategy, options) {
            Ok(m) => row.metrics = Some(m),
            Err(e) => row.error = Some(e.to_string()),
        }
        if options.timing {
            row.runtime_ms = start.elapsed().as_millis() as u64;
        }
    }
    rows
}

/// Runs `f` over `items` on up to `jobs` threads, keeping input order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: Option<usize>, f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        let exec = Execution::Parallel;
        match jobs {
            Some(1) => Ok(lmebn::exec::map_slice(items, Execution::Sequential, f)),
            Some(j) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(j)
                    .build()
                    .map_err(|e| CliError::Config(vec![format!("thread pool: {e}")]))?;
                Ok(pool.install(|| lmebn::exec::map_slice(items, exec, f)))
            }
            None => Ok(lmebn::exec::map_slice(items, exec, f)),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        Ok(lmebn::exec::map_slice(items, Execution::Sequential, f))
    }
}

/// Every (cell, replicate, strategy) row, sorted in that order.
pub fn run_grid(config: &RunConfig, options: &RunOptions) -> CliResult<Vec<ResultRow>> {
    if options.jobs == Some(0) {
        return Err(CliError::Config(vec!["--jobs must be at least 1".into()]));
    }
    let tasks: Vec<(Cell, usize)> = config
        .experiment
        .cells()
        .into_iter()
        .flat_map(|c| (0..config.experiment.replicates).map(move |r| (c, r)))
        .collect();
    let nested = parallel_map(&tasks, options.jobs, |(cell, r)| run_replicate(config, cell, *r, options))?;
    Ok(nested.into_iter().flatten().collect())
}

pub fn write_results<W: Write>(out: W, rows: &[ResultRow], header: bool) -> CliResult<()> {
    let records: Vec<Vec<String>> = rows.iter().map(ResultRow::record).collect();
    write_records(out, &records, header)
}

pub fn write_records<W: Write>(out: W, records: &[Vec<String>], header: bool) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let res = (|| -> csv::Result<()> {
        if header {
            w.write_record(RESULTS_COLUMNS)?;
        }
        for rec in records {
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| CliError::Data(format!("writing results: {e}")))
}

pub fn results_to_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_results(&mut buf, rows, true).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8")
}
