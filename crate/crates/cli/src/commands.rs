use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use modelsel_core::data::{load_labels_path, load_predictions_path, write_labels, write_predictions};
use modelsel_core::eval::{build_report, content_hash, export_curve_csvs, export_report, import_report, run_experiment};
use modelsel_core::synth::{drift_collection, generate_collection, uniform_targets};
use modelsel_core::tuning::tune_epsilon;
use modelsel_core::{
    EpsilonGrid, ErrorRate, MetricsReport, PolicyKind, PolicySpec, SyntheticSpec, TuningReport,
};
use modelsel_service::{replay_selection, AppState, Collection, ServiceError, Transcript};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, base_dir, ReportConfig, RunConfig, ServeConfig, SynthConfig, TuneConfig};
use crate::{CliError, Common};

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// `--out` (relative to the working directory), else the config's `out`
/// (relative to the config file), else `./out`.
fn out_dir(flags: &Common, base: &Path, configured: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = match (&flags.out, configured) {
        (Some(flag), _) => flag.clone(),
        (None, Some(path)) => config::resolve(base, path),
        (None, None) => PathBuf::from("out"),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn init_workers(workers: Option<usize>) -> Result<(), CliError> {
    match workers {
        Some(0) => Err(CliError::Config("workers must be positive".into())),
        Some(k) => rayon::ThreadPoolBuilder::new().num_threads(k).build_global().map_err(runtime),
        None => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_summary(report: &MetricsReport) {
    println!("master_seed = {}", report.master_seed);
    println!("config_hash = {}", report.config_hash);
    for curve in &report.identification {
        let last = curve.points.last().map(|p| p.value).unwrap_or(0.0);
        let reach = report
            .vicinity(&curve.policy, 0.0)
            .map(|b| b.to_string())
            .unwrap_or_else(|| "never".into());
        println!(
            "{:<28} identification at max budget {:.3}; every realization exact from budget {reach}",
            curve.policy, last
        );
    }
}

pub fn tune(flags: &Common) -> Result<(), CliError> {
    let mut cfg: TuneConfig = config::load(&flags.config)?;
    let base = base_dir(&flags.config);
    let predictions = config::input(&base, &cfg.predictions, "predictions")?;
    if let Some(seed) = flags.seed {
        cfg.experiment.master_seed = seed;
    }
    init_workers(flags.workers.or(cfg.workers))?;
    let out = out_dir(flags, &base, cfg.out.as_deref())?;

    let matrix = load_predictions_path(&predictions)?;
    let probe = PolicySpec::model_selector(ErrorRate::new(0.5)?).with_class_mode(cfg.class_mode);
    let eval_cfg = cfg.experiment.build(vec![probe]);
    eval_cfg.validate(matrix.num_examples())?;
    let grid = cfg.grid.clone().map(EpsilonGrid::new).transpose()?;
    info!(
        "tuning on {} examples x {} models, master seed {}",
        matrix.num_examples(),
        matrix.num_models(),
        eval_cfg.master_seed
    );
    let report = tune_epsilon(&matrix, grid.as_ref(), &eval_cfg, &cfg.noisy_oracle)?;
    let path = out.join("tuning_report.json");
    write_json(&path, &report)?;
    for s in &report.scores {
        println!("epsilon {:.2}  score {:.4}", s.epsilon, s.score);
    }
    println!("master_seed = {}", report.master_seed);
    println!("config_hash = {}", report.config_hash);
    println!("chosen_epsilon = {}", report.chosen_epsilon);
    info!("wrote {}", path.display());
    Ok(())
}

pub fn run(flags: &Common) -> Result<(), CliError> {
    let mut cfg: RunConfig = config::load(&flags.config)?;
    let base = base_dir(&flags.config);
    let predictions = config::input(&base, &cfg.predictions, "predictions")?;
    let labels = config::input(&base, &cfg.labels, "labels")?;
    if let Some(seed) = flags.seed {
        cfg.experiment.master_seed = seed;
    }
    if let Some(path) = &cfg.tuning_report {
        let tuned: TuningReport = read_json(&config::input(&base, path, "tuning report")?)?;
        for spec in cfg
            .policies
            .iter_mut()
            .filter(|p| p.kind == PolicyKind::ModelSelector && p.epsilon.is_none())
        {
            spec.epsilon = Some(ErrorRate::new(tuned.chosen_epsilon)?);
        }
    }
    init_workers(flags.workers.or(cfg.workers))?;
    let out = out_dir(flags, &base, cfg.out.as_deref())?;

    let matrix = load_predictions_path(&predictions)?;
    let labels = load_labels_path(&labels, &matrix)?;
    let exp = cfg.experiment.build(cfg.policies.clone());
    exp.validate(matrix.num_examples())?;
    info!(
        "{} realizations of {} policies, master seed {}",
        exp.realizations,
        exp.policies.len(),
        exp.master_seed
    );
    let results = run_experiment(&matrix, &labels, &exp)?;
    let report = build_report(&matrix, &exp, &results)?;
    export_report(&report, out.join("report.json"))?;
    let csvs = export_curve_csvs(&report, &out)?;
    print_summary(&report);
    info!("wrote report.json and {} curve files to {}", csvs.len(), out.display());
    Ok(())
}

pub fn synth(flags: &Common) -> Result<(), CliError> {
    let mut cfg: SynthConfig = config::load(&flags.config)?;
    let base = base_dir(&flags.config);
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if flags.workers.is_some() {
        warn!("--workers has no effect on synth");
    }
    let targets = match (&cfg.accuracy_targets, &cfg.targets) {
        (Some(t), None) => t.clone(),
        (None, Some(r)) => uniform_targets(r.count, r.low, r.high, r.seed),
        _ => return Err(CliError::Config("set exactly one of accuracy_targets or [targets]".into())),
    };
    let spec = SyntheticSpec {
        num_examples: cfg.num_examples,
        num_classes: cfg.num_classes,
        accuracy_targets: targets,
        correlation: cfg.correlation,
        seed: cfg.seed,
    };
    let collection = if cfg.drift {
        drift_collection(&spec)?
    } else {
        generate_collection(&spec)?
    };
    let out = out_dir(flags, &base, cfg.out.as_deref())?;
    let create = |name: &str| fs::File::create(out.join(name)).map_err(runtime);
    write_predictions(&collection.matrix, create("predictions.csv")?)?;
    write_labels(&collection.matrix, &collection.labels, create("labels.csv")?)?;
    let meta = json!({
        "config_hash": content_hash(&(&spec, cfg.drift)),
        "master_seed": spec.seed,
        "drift": cfg.drift,
        "spec": spec,
        "warnings": collection.warnings,
    });
    write_json(&out.join("synth.json"), &meta)?;
    println!("master_seed = {}", spec.seed);
    println!(
        "wrote {} examples x {} models to {}",
        collection.matrix.num_examples(),
        collection.matrix.num_models(),
        out.display()
    );
    Ok(())
}

pub fn serve(flags: &Common) -> Result<(), CliError> {
    let mut cfg: ServeConfig = config::load(&flags.config)?;
    let base = base_dir(&flags.config);
    if flags.seed.is_some() {
        warn!("--seed has no effect on serve; sessions take their seed from the create request");
    }
    for source in &mut cfg.collections {
        source.predictions = config::input(&base, &source.predictions, "predictions")?;
        if let Some(p) = &source.display {
            source.display = Some(config::input(&base, p, "display")?);
        }
        if let Some(p) = &source.class_names {
            source.class_names = Some(config::input(&base, p, "class names")?);
        }
    }
    let out = out_dir(flags, &base, cfg.out.as_deref())?;
    let checkpoints = match &cfg.checkpoint_dir {
        Some(dir) => config::resolve(&base, dir),
        None => out.join("sessions"),
    };
    let collections = cfg
        .collections
        .iter()
        .map(Collection::load)
        .collect::<Result<Vec<_>, _>>()?;
    let (state, restored) = AppState::restore(collections, checkpoints.clone()).map_err(runtime)?;
    let state = Arc::new(state);

    let mut builder = tokio::runtime::Builder::new_multi_thread();
    if let Some(k) = flags.workers.or(cfg.workers) {
        if k == 0 {
            return Err(CliError::Config("workers must be positive".into()));
        }
        builder.worker_threads(k);
    }
    let rt = builder.enable_all().build().map_err(runtime)?;
    let saved = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {}: {e}", cfg.bind)))?;
        let addr = listener.local_addr().map_err(runtime)?;
        println!("listening on http://{addr} ({restored} sessions restored)");
        use std::io::Write;
        std::io::stdout().flush().ok();
        let shutdown = async {
            tokio::signal::ctrl_c().await.ok();
        };
        modelsel_service::serve(listener, state, shutdown).await.map_err(runtime)
    })?;
    println!("checkpointed {saved} sessions to {}", checkpoints.display());
    Ok(())
}

pub fn report(flags: &Common) -> Result<(), CliError> {
    let cfg: ReportConfig = config::load(&flags.config)?;
    let base = base_dir(&flags.config);
    if flags.seed.is_some() || flags.workers.is_some() {
        warn!("--seed and --workers have no effect on report");
    }
    match (&cfg.input, &cfg.transcript) {
        (Some(input), None) => {
            let path = config::input(&base, input, "report")?;
            let report = import_report(&path).map_err(|e| match e {
                modelsel_core::Error::Json(e) => CliError::Data(format!("{}: {e}", path.display())),
                other => other.into(),
            })?;
            let out = out_dir(flags, &base, cfg.out.as_deref())?;
            let files = export_curve_csvs(&report, &out)?;
            print_summary(&report);
            println!("wrote {} curve files to {}", files.len(), out.display());
            Ok(())
        }
        (None, Some(transcript)) => {
            let predictions = cfg
                .predictions
                .as_ref()
                .ok_or_else(|| CliError::Config("replaying a transcript requires predictions".into()))?;
            let matrix = load_predictions_path(config::input(&base, predictions, "predictions")?)?;
            let transcript: Transcript = read_json(&config::input(&base, transcript, "transcript")?)?;
            let pick = replay_selection(&matrix, &transcript).map_err(|e| match e {
                ServiceError::Internal(m) => CliError::Runtime(m),
                other => CliError::Data(other.to_string()),
            })?;
            let out = out_dir(flags, &base, cfg.out.as_deref())?;
            let summary = json!({
                "session_id": transcript.session_id,
                "config_hash": content_hash(&transcript),
                "master_seed": transcript.seed,
                "steps": transcript.steps.len(),
                "model_index": pick.model_index,
                "model_name": matrix.model_names()[pick.model_index],
                "labeled_accuracy": pick.labeled_accuracy,
                "posterior_mass": pick.posterior_mass,
            });
            write_json(&out.join("selection.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(runtime)?);
            Ok(())
        }
        _ => Err(CliError::Config("set exactly one of input or transcript".into())),
    }
}
