use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lmebn::infer::{classify_all, predict_all};
use lmebn::metrics::{evaluate, EvalOptions};
use lmebn::simgen::{build_replicate, parameter_count, Cell, ReplicateSeeds};
use lmebn::{BnModel, Execution, LmeConfig, LocalDistribution, Strategy};
use serde::Serialize;

use crate::args::{EvaluateArgs, ExperimentArgs, GenerateArgs, LearnArgs, PredictArgs};
use crate::config::{read_config, ConfigEcho, RunConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{self, metric_fields, parallel_map, RunOptions};
use crate::modelfile::{read_model, to_file, write_model};
use crate::table::{read_dataset, write_dataset};

/// Version of the results CSV layout.
pub const RESULTS_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRecord {
    pub replicate: usize,
    pub dag: u64,
    pub parameters: u64,
    pub data: u64,
    pub eval: u64,
    pub inference: u64,
}

impl SeedRecord {
    fn new(replicate: usize, s: &ReplicateSeeds) -> Self {
        Self {
            replicate,
            dag: s.dag,
            parameters: s.parameters,
            data: s.data,
            eval: s.eval,
            inference: s.inference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub index: usize,
    pub name: String,
    #[serde(rename = "N")]
    pub n_vars: usize,
    pub avg_parents: f64,
    #[serde(rename = "F")]
    pub n_groups: usize,
    pub n_j: usize,
    pub scenario: String,
    pub replicates: Vec<SeedRecord>,
}

/// What a run needs to be repeated exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub software_version: String,
    pub results_schema: u32,
    pub master_seed: u64,
    pub config: ConfigEcho,
    pub cells: Vec<CellRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        let exp = &config.experiment;
        let cells = exp
            .cells()
            .iter()
            .map(|c| CellRecord {
                index: c.index,
                name: c.slug(),
                n_vars: c.n_vars,
                avg_parents: c.avg_parents,
                n_groups: c.n_groups,
                n_j: c.n_j,
                scenario: c.scenario.to_string(),
                replicates: (0..exp.replicates)
                    .map(|r| SeedRecord::new(r, &exp.seeds(c, r)))
                    .collect(),
            })
            .collect();
        Self {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            results_schema: RESULTS_SCHEMA,
            master_seed: exp.seed,
            config: config.echo(),
            cells,
            elapsed_ms: None,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut config = read_config(path)?;
    if let Some(s) = seed {
        config.experiment.seed = s;
    }
    Ok(config)
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn replicate_dir(out: &Path, cell: &Cell, replicate: usize) -> PathBuf {
    out.join("cells").join(cell.slug()).join(format!("rep{replicate}"))
}

pub fn generate(args: &GenerateArgs) -> CliResult<()> {
    let start = Instant::now();
    let config = load_config(&args.config, args.seed)?;
    let exp = &config.experiment;
    let tasks: Vec<(Cell, usize)> = exp
        .cells()
        .into_iter()
        .flat_map(|c| (0..exp.replicates).map(move |r| (c, r)))
        .collect();
    let built = parallel_map(&tasks, args.jobs, |(cell, r)| {
        let rep = build_replicate(exp, cell, *r)?;
        let truth = rep.truth.to_model()?;
        Ok::<_, lmebn::Error>((rep, truth))
    })?;
    for ((cell, r), result) in tasks.iter().zip(built) {
        let (rep, truth) = result?;
        let dir = replicate_dir(&args.out, cell, *r);
        create_dir(&dir)?;
        write_dataset(&dir.join("data.csv"), &rep.train, &args.group_col)?;
        write_dataset(&dir.join("eval.csv"), &rep.eval, &args.group_col)?;
        write_model(&dir.join("truth.json"), &to_file(&truth, None, None))?;
    }
    let mut manifest = RunManifest::new(&config);
    if args.timing {
        manifest.elapsed_ms = Some(start.elapsed().as_millis() as u64);
    }
    manifest.write(&args.out.join("manifest.json"))?;
    eprintln!("wrote {} replicates to {}", tasks.len(), args.out.display());
    Ok(())
}

/// One-paragraph description of a learned model.
pub fn summary(model: &BnModel, score: f64, rows: usize) -> String {
    let x_arcs = model.dag().without_group().arc_count();
    let mut s = format!(
        "strategy {}: {} variables, {} groups, {} rows\narcs between variables: {x_arcs}\nBIC: {score}\n",
        model.strategy(),
        model.n_vars(),
        model.n_groups(),
        rows,
    );
    let degenerate: Vec<&str> = model
        .degenerate_nodes()
        .into_iter()
        .map(|v| model.dag().name(v))
        .collect();
    if !degenerate.is_empty() {
        s.push_str(&format!("degenerate group fits: {}\n", degenerate.join(", ")));
    }
    let mut boundary = Vec::new();
    let mut unconverged = Vec::new();
    for (v, local) in model.locals().iter().enumerate() {
        if let LocalDistribution::Mixed(fit) = &local.distribution {
            if fit.boundary {
                boundary.push(model.dag().name(v));
            }
            if !fit.converged {
                unconverged.push(model.dag().name(v));
            }
        }
    }
    if !boundary.is_empty() {
        s.push_str(&format!("random-effect covariance on the boundary: {}\n", boundary.join(", ")));
    }
    if !unconverged.is_empty() {
        s.push_str(&format!("optimizer budget exhausted: {}\n", unconverged.join(", ")));
    }
    s
}

pub fn learn(args: &LearnArgs) -> CliResult<String> {
    let data = read_dataset(&args.data, &args.group_col)?;
    let strategy: Strategy = args.strategy.into();
    let (model, score) = experiment::learn(&data, strategy, &LmeConfig::default(), args.seed, Execution::default())?;
    write_model(&args.out, &to_file(&model, Some(score), Some(data.n_rows())))?;
    Ok(summary(&model, score, data.n_rows()))
}

/// Average number of variable parents in a graph.
fn average_parents(model: &BnModel) -> f64 {
    model.dag().without_group().arc_count() as f64 / model.n_vars() as f64
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> CliResult<Vec<String>> {
    let start = Instant::now();
    let (truth, _) = read_model(&args.truth)?;
    let (learned, file) = read_model(&args.model)?;
    let data = read_dataset(&args.data, &args.group_col)?;
    if truth.dag().group().is_none() {
        return Err(CliError::Data("the generating model must have a group node".into()));
    }
    let n_train = file
        .training_rows
        .ok_or_else(|| CliError::Data(format!("{}: training_rows is missing", args.model.display())))?;
    if args.mc_samples < 2 {
        return Err(CliError::Config(vec!["--mc-samples must be at least 2".into()]));
    }
    let options = EvalOptions {
        engine: args.engine.engine(),
        mc_samples: args.mc_samples,
        seed: args.seed,
        execution: Execution::default(),
    };
    let p = parameter_count(truth.dag(), truth.n_groups());
    let metrics = evaluate(&truth, &learned, &data, n_train, p, &options)?;
    let runtime = if args.timing { start.elapsed().as_millis() as u64 } else { 0 };
    let mut rec = vec![
        truth.n_vars().to_string(),
        average_parents(&truth).to_string(),
        truth.n_groups().to_string(),
        String::new(),
        String::new(),
        String::new(),
        learned.strategy().to_string(),
    ];
    rec.extend(metric_fields(Some(&metrics)));
    rec.push(runtime.to_string());
    rec.push(String::new());
    let header = fs::metadata(&args.out).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&args.out)
        .map_err(|e| CliError::io(&args.out, e))?;
    experiment::write_records(file, std::slice::from_ref(&rec), header)?;
    Ok(rec)
}

pub fn experiment_cmd(args: &ExperimentArgs) -> CliResult<()> {
    let start = Instant::now();
    let config = load_config(&args.config, args.seed)?;
    let mut strategies: Vec<Strategy> = args.strategy.iter().map(|&s| s.into()).collect();
    if strategies.is_empty() {
        strategies = Strategy::ALL.to_vec();
    }
    strategies.sort_by_key(|s| Strategy::ALL.iter().position(|x| x == s));
    strategies.dedup();
    let options = RunOptions {
        strategies,
        engine: args.engine.engine(),
        jobs: args.jobs,
        timing: args.timing,
        lme: LmeConfig::default(),
    };
    let rows = experiment::run_grid(&config, &options)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join("results.csv");
            let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
            experiment::write_results(file, &rows, true)?;
            let mut manifest = RunManifest::new(&config);
            if args.timing {
                manifest.elapsed_ms = Some(start.elapsed().as_millis() as u64);
            }
            manifest.write(&dir.join("manifest.json"))?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => experiment::write_results(std::io::stdout().lock(), &rows, true)?,
    }
    if failed > 0 {
        eprintln!("{failed} rows failed; see the error column");
    }
    Ok(())
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let (model, _) = read_model(&args.model)?;
    let data = read_dataset(&args.data, &args.group_col)?;
    let exec = Execution::default();
    let pred = predict_all(&model, &data, !args.unknown_f, args.engine.engine(), args.seed, exec)?;
    let classes = classify_all(&model, &data, exec)?;
    let mut w = csv::Writer::from_path(&args.out).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    let write = |w: &mut csv::Writer<fs::File>| -> csv::Result<()> {
        let mut header: Vec<String> = data.names().to_vec();
        header.push(args.group_col.clone());
        header.push(format!("{}_predicted", args.group_col));
        w.write_record(&header)?;
        for k in 0..data.n_rows() {
            let mut rec: Vec<String> = pred.iter().map(|col| col[k].to_string()).collect();
            rec.push(data.labels()[data.groups()[k]].clone());
            rec.push(model.group_labels()[classes[k]].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))
}

pub fn write_stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}
