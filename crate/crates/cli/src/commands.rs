use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use meshgnn::eval::{
    baseline_policy, density_sweep, depth_sweep, evaluate, logical_out_degree, metrics_from_run,
    train_on, BaselineKind, ExperimentConfig, GnnPolicy, MetricsReport, OraclePolicy, SweepTable, TopologySource,
    DEFAULT_DEGREES, DEFAULT_DEPTHS,
};
use meshgnn::gnn::GnnConfig;
use meshgnn::graph::{validate_graph, ServiceGraph};
use meshgnn::persist::{load_model_expecting, save_model};
use meshgnn::sim::{run_simulation, write_samples_jsonl, RoutingPolicy, WorkloadSpec};
use meshgnn::topogen::TopologySpec;
use meshgnn::train::{gradcheck_property, TrainReport, GRADCHECK_SEED};
use serde::Serialize;
use serde_json::json;

use crate::config::{read_structured, to_json, CliError, InputFile, RunConfig, RunDir, RunRecord};
use crate::{Command, Common, PolicyArg, WorkloadArg};

/// Loaded `--config` plus the input-file record.
struct Loaded {
    config: RunConfig,
    inputs: Vec<InputFile>,
    out: PathBuf,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let mut inputs = Vec::new();
    let mut config: RunConfig = match &common.config {
        Some(path) => {
            let c = read_structured(path)?;
            inputs.push(InputFile::new("config", path)?);
            c
        }
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    Ok(Loaded { config, inputs, out: common.out.clone() })
}

fn log(started: Instant, msg: impl AsRef<str>) {
    eprintln!("[{:7.1}s] {}", started.elapsed().as_secs_f64(), msg.as_ref());
}

pub fn run(command: Command) -> Result<(), CliError> {
    let sweep = matches!(command, Command::SweepDepth { .. } | Command::SweepDensity { .. });
    if !sweep {
        // Only sweep cells run in parallel; the pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let started = Instant::now();
    match command {
        Command::Topogen { common, spec } => topogen(&common, spec.as_deref(), started),
        Command::Simulate { common, graph, policy, model, workload } => {
            simulate(&common, graph.as_deref(), policy, model.as_deref(), workload, started)
        }
        Command::Train { common } => train(&common, started),
        Command::Eval { common, model } => eval(&common, model.as_deref(), started),
        Command::SweepDepth { common, values, seeds } => sweep_depth(&common, values, seeds, started),
        Command::SweepDensity { common, values, seeds } => sweep_density(&common, values, seeds, started),
        Command::Gradcheck { common, instances } => gradcheck(&common, instances, started),
    }
}

fn topogen(common: &Common, spec: Option<&Path>, started: Instant) -> Result<(), CliError> {
    let Loaded { config, mut inputs, out } = load(common)?;
    let mut topology = config.effective_experiment().topology;
    if let Some(path) = spec {
        let mut s: TopologySpec = read_structured(path)?;
        inputs.push(InputFile::new("spec", path)?);
        if let Some(seed) = config.seed {
            s.seed = seed;
        }
        topology = TopologySource::Generated(s);
    }
    let g = topology.build()?;
    let dir = RunDir::create(&out, &RunRecord { command: "topogen", inputs, config: json!({ "topology": topology }) })?;
    let text = g.to_json().map_err(|e| CliError::Validation(e.to_string()))?;
    let path = dir.write("graph.json", text)?;
    log(started, format!("wrote {}", path.display()));
    println!("nodes {}", g.n_nodes());
    println!("edges {}", g.n_edges());
    println!("logical_out_degree {:.4}", logical_out_degree(&g));
    println!("run_dir {}", dir.path.display());
    Ok(())
}

fn load_graph(path: &Path) -> Result<ServiceGraph, CliError> {
    let g = ServiceGraph::load(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    validate_graph(&g).map_err(|v| {
        let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        CliError::Validation(format!("{}: {}", path.display(), list.join("; ")))
    })?;
    Ok(g)
}

fn load_policy(path: &Path, gnn: &GnnConfig, name: &str) -> Result<GnnPolicy, CliError> {
    let snap = load_model_expecting(path, gnn)?;
    let stats = snap
        .stats
        .ok_or_else(|| CliError::Validation(format!("{}: snapshot carries no feature statistics", path.display())))?;
    Ok(GnnPolicy::new(name, snap.params, stats))
}

fn print_metrics(r: &MetricsReport) {
    println!("{} mean_relative_error {:.6}", r.policy, r.mean_relative_error);
    println!("{} jitter_prediction_error_ms {:.6}", r.policy, r.jitter_prediction_error);
    println!("{} routing_decision_accuracy {:.6}", r.policy, r.routing_decision_accuracy);
}

fn simulate(
    common: &Common,
    graph: Option<&Path>,
    policy: PolicyArg,
    model: Option<&Path>,
    workload: WorkloadArg,
    started: Instant,
) -> Result<(), CliError> {
    let Loaded { config, mut inputs, out } = load(common)?;
    let exp = config.effective_experiment();
    let g = match graph {
        Some(path) => {
            inputs.push(InputFile::new("graph", path)?);
            load_graph(path)?
        }
        None => exp.topology.build()?,
    };
    let exp = exp.resolve(&g)?;
    let w: WorkloadSpec = match workload {
        WorkloadArg::Collect => exp.collect.clone(),
        WorkloadArg::Evaluate => exp.evaluate.clone(),
    };
    let mut chosen: Box<dyn RoutingPolicy> = match policy {
        PolicyArg::StaticShortest => baseline_policy(BaselineKind::StaticShortest, w.seed),
        PolicyArg::RoundRobin => baseline_policy(BaselineKind::RoundRobin, w.seed),
        PolicyArg::LeastConnections => baseline_policy(BaselineKind::LeastConnections, w.seed),
        PolicyArg::Random => baseline_policy(BaselineKind::Random, w.seed),
        PolicyArg::Oracle => Box::new(OraclePolicy),
        PolicyArg::Gnn => {
            let path = model.ok_or_else(|| CliError::Validation("--policy gnn needs --model".into()))?;
            inputs.push(InputFile::new("model", path)?);
            Box::new(load_policy(path, &exp.gnn, "gnn")?)
        }
    };
    if model.is_some() && policy != PolicyArg::Gnn {
        return Err(CliError::Validation("--model is only used with --policy gnn".into()));
    }
    let record = RunRecord {
        command: "simulate",
        inputs,
        config: json!({ "topology": exp.topology, "workload": w, "policy": chosen.name(), "gnn": exp.gnn }),
    };
    let dir = RunDir::create(&out, &record)?;
    let output = run_simulation(&g, &w, chosen.as_mut(), true)?;
    log(started, format!("simulated {} requests", output.trace.injected()));

    let mut trace = Vec::new();
    output.trace.write_csv(&mut trace)?;
    dir.write("trace.csv", trace)?;
    let mut samples = Vec::new();
    write_samples_jsonl(&output.samples, &mut samples).map_err(CliError::io("encoding samples"))?;
    dir.write("samples.jsonl", samples)?;
    let report = metrics_from_run(chosen.name(), &w, &output)?;
    dir.write("metrics.json", to_json(&report)?)?;

    println!("injected {}", output.trace.injected());
    println!("completed {}", output.trace.completed_count);
    println!("inflight_at_horizon {}", output.trace.inflight_at_horizon);
    println!("decisions {}", output.decisions.len());
    print_metrics(&report);
    println!("run_dir {}", dir.path.display());
    Ok(())
}

/// Per-epoch CSV without wall-clock time, so reruns are byte-identical.
fn report_csv(report: &TrainReport) -> String {
    let mut s = String::from("epoch,loss,val_accuracy\n");
    for e in &report.epochs {
        let _ = writeln!(s, "{},{},{}", e.epoch, e.loss, e.val_accuracy);
    }
    s
}

fn log_epochs(started: Instant, report: &TrainReport) {
    for e in &report.epochs {
        log(started, format!("epoch {} loss {:.5} val_accuracy {:.4} ({:.1}s)", e.epoch, e.loss, e.val_accuracy, e.seconds));
    }
}

fn train(common: &Common, started: Instant) -> Result<(), CliError> {
    let Loaded { config, inputs, out } = load(common)?;
    let exp = config.effective_experiment();
    let g = exp.topology.build()?;
    let exp = exp.resolve(&g)?;
    let dir = RunDir::create(&out, &RunRecord { command: "train", inputs, config: json!({ "experiment": exp }) })?;
    let model = match train_on(&g, &exp, &exp.gnn) {
        Ok(m) => m,
        Err(e) => {
            if let meshgnn::eval::EvalError::Train(meshgnn::train::TrainError::Divergence { report, .. }) = &e {
                log_epochs(started, report);
                dir.write("train_report.csv", report_csv(report))?;
            }
            return Err(e.into());
        }
    };
    log_epochs(started, &model.report);
    let path = dir.file("model.json");
    save_model(&path, &model.params, Some(&model.stats))?;
    dir.write("train_report.csv", report_csv(&model.report))?;

    println!("samples {}", model.n_samples);
    if let Some(last) = model.report.epochs.last() {
        println!("final_loss {:.6}", last.loss);
        println!("val_accuracy {:.6}", last.val_accuracy);
    }
    println!("model {}", path.display());
    println!("run_dir {}", dir.path.display());
    Ok(())
}

fn eval(common: &Common, model: Option<&Path>, started: Instant) -> Result<(), CliError> {
    let Loaded { config, mut inputs, out } = load(common)?;
    let exp = config.effective_experiment();
    let g = exp.topology.build()?;
    let exp = exp.resolve(&g)?;
    if let Some(path) = model {
        inputs.push(InputFile::new("model", path)?);
    }
    let dir = RunDir::create(&out, &RunRecord { command: "eval", inputs, config: json!({ "experiment": exp }) })?;
    let mut gnn = match model {
        Some(path) => load_policy(path, &exp.gnn, "gnn")?,
        None => {
            let trained = train_on(&g, &exp, &exp.gnn)?;
            log_epochs(started, &trained.report);
            save_model(&dir.file("model.json"), &trained.params, Some(&trained.stats))?;
            dir.write("train_report.csv", report_csv(&trained.report))?;
            trained.policy("gnn")
        }
    };
    let mut reports = vec![evaluate(&g, &exp.evaluate, &mut gnn)?];
    for kind in BaselineKind::ALL {
        reports.push(evaluate(&g, &exp.evaluate, baseline_policy(kind, exp.evaluate.seed).as_mut())?);
        log(started, format!("evaluated {kind}"));
    }
    dir.write("metrics.json", to_json(&reports)?)?;
    let mut csv =
        String::from("policy,mean_relative_error,jitter_prediction_error,routing_decision_accuracy,n_decisions,n_paths\n");
    for r in &reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.policy, r.mean_relative_error, r.jitter_prediction_error, r.routing_decision_accuracy, r.n_decisions, r.n_paths
        );
        print_metrics(r);
    }
    dir.write("metrics.csv", csv)?;
    println!("run_dir {}", dir.path.display());
    Ok(())
}

fn write_sweep(dir: &RunDir, table: &SweepTable) -> Result<(), CliError> {
    let mut csv = Vec::new();
    table.write_csv(&mut csv).map_err(CliError::io("encoding sweep table"))?;
    dir.write("sweep.csv", csv)?;
    dir.write("sweep.json", table.to_json().map_err(|e| CliError::Validation(e.to_string()))? + "\n")?;
    for r in &table.rows {
        println!(
            "{} {} acc_mean {:.6} acc_std {:.6} mre_mean {:.6} jitter_mean {:.6}",
            table.param_name, r.param, r.acc_mean, r.acc_std, r.mre_mean, r.jitter_mean
        );
    }
    println!("run_dir {}", dir.path.display());
    Ok(())
}

fn seeds_or(config: &RunConfig, seeds: Option<Vec<u64>>) -> Result<Vec<u64>, CliError> {
    let seeds = seeds.unwrap_or_else(|| config.sweep.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::Validation("at least one seed is required".into()));
    }
    Ok(seeds)
}

#[derive(Serialize)]
struct SweepRecord<'a, T: Serialize> {
    base: &'a ExperimentConfig,
    values: &'a [T],
    seeds: &'a [u64],
}

fn sweep_depth(common: &Common, values: Option<Vec<usize>>, seeds: Option<Vec<u64>>, started: Instant) -> Result<(), CliError> {
    let Loaded { config, inputs, out } = load(common)?;
    let seeds = seeds_or(&config, seeds)?;
    let values = values.unwrap_or_else(|| config.sweep.depths.clone());
    let values = if values.is_empty() { DEFAULT_DEPTHS.to_vec() } else { values };
    let base = &config.experiment;
    let record = SweepRecord { base, values: &values, seeds: &seeds };
    let dir = RunDir::create(&out, &RunRecord { command: "sweep-depth", inputs, config: record })?;
    let table = depth_sweep(base, &values, &seeds)?;
    log(started, format!("{} cells", table.cells.len()));
    write_sweep(&dir, &table)
}

fn sweep_density(common: &Common, values: Option<Vec<f64>>, seeds: Option<Vec<u64>>, started: Instant) -> Result<(), CliError> {
    let Loaded { config, inputs, out } = load(common)?;
    let seeds = seeds_or(&config, seeds)?;
    let values = values.unwrap_or_else(|| config.sweep.degrees.clone());
    let values = if values.is_empty() { DEFAULT_DEGREES.to_vec() } else { values };
    let base = &config.experiment;
    let record = SweepRecord { base, values: &values, seeds: &seeds };
    let dir = RunDir::create(&out, &RunRecord { command: "sweep-density", inputs, config: record })?;
    let table = density_sweep(base, &values, &seeds)?;
    log(started, format!("{} cells", table.cells.len()));
    write_sweep(&dir, &table)
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// The train module's gradient property: random decisions of at most six
/// nodes against fresh two-layer models of width four.
fn gradcheck(common: &Common, instances: Option<usize>, started: Instant) -> Result<(), CliError> {
    let Loaded { config, inputs, out } = load(common)?;
    let seed = config.seed.unwrap_or(GRADCHECK_SEED);
    let settings = &config.gradcheck;
    let instances = instances.unwrap_or(settings.instances);
    if instances == 0 {
        return Err(CliError::Validation("need at least one instance".into()));
    }
    let lambda = config.experiment.train.loss_weight_regression;
    let record = json!({ "seed": seed, "instances": instances, "epsilon": settings.epsilon, "lambda": lambda });
    let dir = RunDir::create(&out, &RunRecord { command: "gradcheck", inputs, config: record })?;
    let summary = gradcheck_property(seed, instances, lambda, settings.epsilon)?;
    dir.write("gradcheck.json", to_json(&summary)?)?;
    log(started, format!("{instances} instances checked"));
    let worst = summary.max_rel_error;
    let near: usize = summary.instances.iter().map(|r| r.near_resolution).sum();
    println!("max_rel_error {worst:.3e}");
    println!("coordinates_near_resolution {near}");
    println!("run_dir {}", dir.path.display());
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Divergence(format!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}")))
    }
}
