use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use wlclass_core::classifiers::{
    self, feature_importance_report, KernelSpec, ModelFamily, ModelFile, ModelParams,
    ModelProvenance, TrainedModel,
};
use wlclass_core::dataset_io::{
    ingest_raw_reader, read_challenge_archive_bytes, write_challenge_archive_bytes, write_raw_csv,
    ChallengeDataset, IngestConfig, NonFinitePolicy, SensorKind,
};
use wlclass_core::features::{CovarianceOptions, FeaturePipeline, Reduction};
use wlclass_core::model_selection::{
    evaluate_predictions, grid_search, parse_manifest, reproduce_table, GridSpec,
    ReportProvenance, ReproduceOptions,
};
use wlclass_core::seed::{self, sha256_hex};
use wlclass_core::synth::{default_26_class_spec, four_class_spec, generate_corpus};
use wlclass_core::windowing::{build_challenge_dataset, filter_min_length, WindowPolicy};
use wlclass_core::Error;

use crate::cli::*;
use crate::features_io::{self, FeatureMeta};
use crate::run_manifest::{beside, Recorder};

pub enum Failure {
    Usage(String),
    Core(Error),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::NotConverged(_) => 3,
            Failure::Core(e) if e.is_numerical() => 3,
            Failure::Core(Error::InvalidArgument(_)) => 1,
            Failure::Core(_) => 2,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::NotConverged(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Default location of the run manifest for a parsed command.
pub fn manifest_path(cmd: &Command) -> PathBuf {
    match cmd {
        Command::Synth(a) => a.out.join("synth.manifest.json"),
        Command::Window(a) => beside(&a.out, ".manifest.json"),
        Command::Featurize(a) => beside(&a.out, ".manifest.json"),
        Command::Train(a) => beside(&a.out, ".manifest.json"),
        Command::Predict(a) => beside(&a.out, ".manifest.json"),
        Command::Gridsearch(a) => beside(&a.out, ".manifest.json"),
        Command::Evaluate(a) => a
            .out
            .as_ref()
            .map_or_else(|| PathBuf::from("wlclass-evaluate.manifest.json"), |o| beside(o, ".manifest.json")),
        Command::Reproduce(a) => a
            .out
            .as_ref()
            .map_or_else(|| PathBuf::from("wlclass-reproduce.manifest.json"), |o| beside(o, ".manifest.json")),
    }
}

pub fn dispatch(cmd: &Command, rec: &mut Recorder) -> Outcome {
    match cmd {
        Command::Synth(a) => synth(a, rec),
        Command::Window(a) => window(a, rec),
        Command::Featurize(a) => featurize(a, rec),
        Command::Train(a) => train(a, rec),
        Command::Predict(a) => predict(a, rec),
        Command::Gridsearch(a) => gridsearch(a, rec),
        Command::Evaluate(a) => evaluate(a, rec),
        Command::Reproduce(a) => reproduce(a, rec),
    }
}

fn policy(split: &SplitArgs, master: u64, rec: &mut Recorder) -> WindowPolicy {
    match split.policy {
        PolicyArg::Start => WindowPolicy::start(split.length),
        PolicyArg::Middle => WindowPolicy::middle(split.length),
        PolicyArg::Random => {
            let s = seed::derive(master, "window");
            rec.seed("window", s);
            WindowPolicy::random(s, split.length)
        }
    }
}

fn synth(a: &SynthArgs, rec: &mut Recorder) -> Outcome {
    let mut spec = if a.classes == 4 {
        four_class_spec(a.seed, a.scale)?
    } else {
        default_26_class_spec(a.seed, a.scale)?
    };
    spec.noise = a.noise;
    spec.warmup_samples = a.warmup;
    for c in &mut spec.classes {
        c.length_range = (a.min_length.unwrap_or(c.length_range.0), a.max_length.unwrap_or(c.length_range.1));
    }
    rec.seed("synth", a.seed);
    let trials = generate_corpus(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    rec.write_output(&a.out.join("spec.json"), &serde_json::to_vec_pretty(&spec).map_err(Error::from)?)?;
    let target = if a.emit_archive {
        let policy = policy(&a.split, a.seed, rec);
        let split_seed = seed::derive(a.seed, "split");
        rec.seed("split", split_seed);
        let usable = filter_min_length(trials.clone(), a.split.length);
        let d = build_challenge_dataset(&usable, &policy, a.split.split, split_seed)?;
        let path = a.out.join("archive.npz");
        rec.write_output(&path, &write_challenge_archive_bytes(&d)?)?;
        path
    } else {
        let mut buf = Vec::new();
        write_raw_csv(&trials, &mut buf)?;
        let path = a.out.join("telemetry.csv");
        rec.write_output(&path, &buf)?;
        path
    };
    println!(
        "wrote {} trials from {} jobs in {} classes to {}",
        trials.len(),
        spec.total_jobs(),
        spec.classes.len(),
        target.display()
    );
    Ok(())
}

fn window(a: &WindowArgs, rec: &mut Recorder) -> Outcome {
    let bytes = rec.read_input(&a.input)?;
    let config = IngestConfig {
        non_finite: if a.forward_fill { NonFinitePolicy::ForwardFill } else { NonFinitePolicy::DropRow },
        allow_extra_columns: a.allow_extra_columns,
    };
    let trials = ingest_raw_reader(bytes.as_slice(), SensorKind::Gpu, config)?;
    let total = trials.len();
    let trials = filter_min_length(trials, a.split.length);
    if trials.len() < total {
        log::info!("dropped {} trials shorter than {} samples", total - trials.len(), a.split.length);
    }
    let policy = policy(&a.split, a.seed, rec);
    let split_seed = seed::derive(a.seed, "split");
    rec.seed("split", split_seed);
    let d = build_challenge_dataset(&trials, &policy, a.split.split, split_seed)?;
    rec.write_output(&a.out, &write_challenge_archive_bytes(&d)?)?;
    println!(
        "{} train / {} test windows of {} samples, {} classes -> {}",
        d.y_train.len(),
        d.y_test.len(),
        a.split.length,
        d.class_count(),
        a.out.display()
    );
    Ok(())
}

fn reduction(r: &ReductionArgs) -> Reduction {
    match r.reduction {
        ReductionArg::Cov => Reduction::Covariance(CovarianceOptions {
            center_per_trial: r.center_per_trial,
            unbiased_scale: r.unbiased_scale,
        }),
        ReductionArg::Pca => Reduction::Pca { k: r.pca_k },
    }
}

fn load_archive(path: &Path, rec: &mut Recorder) -> Result<(ChallengeDataset, String), Failure> {
    let bytes = rec.read_input(path)?;
    let hash = sha256_hex(&bytes);
    Ok((read_challenge_archive_bytes(&bytes)?, hash))
}

fn featurize(a: &FeaturizeArgs, rec: &mut Recorder) -> Outcome {
    let (d, hash) = load_archive(&a.input, rec)?;
    let pipeline = FeaturePipeline::fit(d.x_train.view(), &reduction(&a.reduction))?;
    let train = pipeline.transform(d.x_train.view())?;
    let test = pipeline.transform(d.x_test.view())?;
    let (train_path, test_path, meta_path) = features_io::csv_paths(&a.out);
    rec.write_output(&train_path, &features_io::write_table(&train.feature_names, &train.data, &d.y_train)?)?;
    rec.write_output(&test_path, &features_io::write_table(&test.feature_names, &test.data, &d.y_test)?)?;
    let meta = FeatureMeta {
        class_names: d.class_names.clone(),
        feature_names: train.feature_names.clone(),
        source_sha256: hash,
        pipeline,
    };
    rec.write_output(&meta_path, &serde_json::to_vec(&meta).map_err(Error::from)?)?;
    println!(
        "{} features ({}) for {} train / {} test trials -> {}",
        train.feature_names.len(),
        train.provenance.reduction,
        d.y_train.len(),
        d.y_test.len(),
        train_path.display()
    );
    Ok(())
}

fn model_params(m: &ModelArgs) -> Result<ModelParams, Failure> {
    let family: ModelFamily = m.model.into();
    let mut p = ModelParams::defaults(family);
    let wrong = |flag: &str| Failure::Usage(format!("--{flag} does not apply to --model {family}"));
    match &mut p {
        ModelParams::Rf(f) => {
            for (flag, set) in [
                ("c", m.c.is_some()),
                ("kernel", m.kernel.is_some()),
                ("kernel-gamma", m.kernel_gamma.is_some()),
                ("tol", m.tol.is_some()),
                ("max-iter", m.max_iter.is_some()),
                ("rounds", m.rounds.is_some()),
                ("learning-rate", m.learning_rate.is_some()),
                ("gamma", m.gamma.is_some()),
                ("alpha", m.alpha.is_some()),
                ("lambda", m.lambda.is_some()),
                ("min-child-weight", m.min_child_weight.is_some()),
            ] {
                if set {
                    return Err(wrong(flag));
                }
            }
            if let Some(v) = m.n_trees {
                f.n_trees = v;
            }
            if let Some(v) = m.max_depth {
                f.max_depth = Some(v).filter(|&d| d > 0);
            }
            if let Some(v) = m.min_leaf {
                f.min_leaf = v;
            }
            if let Some(v) = m.max_features {
                f.max_features = Some(v).filter(|&d| d > 0);
            }
        }
        ModelParams::Svm(s) => {
            for (flag, set) in [
                ("n-trees", m.n_trees.is_some()),
                ("max-depth", m.max_depth.is_some()),
                ("min-leaf", m.min_leaf.is_some()),
                ("max-features", m.max_features.is_some()),
                ("rounds", m.rounds.is_some()),
                ("learning-rate", m.learning_rate.is_some()),
                ("gamma", m.gamma.is_some()),
                ("alpha", m.alpha.is_some()),
                ("lambda", m.lambda.is_some()),
                ("min-child-weight", m.min_child_weight.is_some()),
            ] {
                if set {
                    return Err(wrong(flag));
                }
            }
            if let Some(v) = m.c {
                s.c = v;
            }
            s.kernel = match (m.kernel, m.kernel_gamma) {
                (Some(KernelArg::Linear), Some(_)) => {
                    return Err(Failure::Usage("--kernel-gamma needs --kernel rbf".into()))
                }
                (Some(KernelArg::Linear), None) => KernelSpec::Linear,
                (_, g) => KernelSpec::Rbf { gamma: g },
            };
            if let Some(v) = m.tol {
                s.tol = v;
            }
            if let Some(v) = m.max_iter {
                s.max_iter = v;
            }
        }
        ModelParams::Gbt(g) => {
            for (flag, set) in [
                ("n-trees", m.n_trees.is_some()),
                ("min-leaf", m.min_leaf.is_some()),
                ("max-features", m.max_features.is_some()),
                ("c", m.c.is_some()),
                ("kernel", m.kernel.is_some()),
                ("kernel-gamma", m.kernel_gamma.is_some()),
                ("tol", m.tol.is_some()),
                ("max-iter", m.max_iter.is_some()),
            ] {
                if set {
                    return Err(wrong(flag));
                }
            }
            if let Some(v) = m.rounds {
                g.rounds = v;
            }
            if let Some(v) = m.learning_rate {
                g.learning_rate = v;
            }
            if let Some(v) = m.max_depth {
                g.max_depth = v;
            }
            if let Some(v) = m.gamma {
                g.gamma = v;
            }
            if let Some(v) = m.alpha {
                g.alpha = v;
            }
            if let Some(v) = m.lambda {
                g.lambda = v;
            }
            if let Some(v) = m.min_child_weight {
                g.min_child_weight = v;
            }
        }
    }
    Ok(p)
}

fn generic_names(labels: &[usize]) -> Vec<String> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    (0..k).map(|i| format!("class_{i}")).collect()
}

/// Feature rows and labels loaded from a `featurize` CSV.
struct LoadedFeatures {
    x: Array2<f64>,
    y: Vec<usize>,
    names: Vec<String>,
    meta: Option<FeatureMeta>,
    hash: String,
}

fn load_features(path: &Path, rec: &mut Recorder) -> Result<LoadedFeatures, Failure> {
    let bytes = rec.read_input(path)?;
    let hash = sha256_hex(&bytes);
    let table = features_io::read_table(&bytes)?;
    let meta_path = features_io::meta_path(path);
    let meta = if meta_path.exists() {
        let m: FeatureMeta = serde_json::from_slice(&rec.read_input(&meta_path)?).map_err(Error::from)?;
        if m.feature_names != table.names {
            return Err(Error::SchemaMismatch(format!(
                "{} does not describe the columns of {}",
                meta_path.display(),
                path.display()
            ))
            .into());
        }
        Some(m)
    } else {
        log::warn!("no {} beside the features; class names will be generic", meta_path.display());
        None
    };
    Ok(LoadedFeatures { x: table.x, y: table.y, names: table.names, meta, hash })
}

fn train(a: &TrainArgs, rec: &mut Recorder) -> Outcome {
    let model_seed = seed::derive(a.seed, "model");
    rec.seed("model", model_seed);
    let params = model_params(&a.model)?.with_seed(model_seed);
    let (x, y, class_names, feature_names, pipeline, hash) = if let Some(path) = &a.input.features {
        let f = load_features(path, rec)?;
        let class_names = f.meta.as_ref().map_or_else(|| generic_names(&f.y), |m| m.class_names.clone());
        (f.x, f.y, class_names, f.names, f.meta.map(|m| m.pipeline), f.hash)
    } else {
        let path = a.input.archive.as_ref().expect("clap enforces one input");
        let (d, hash) = load_archive(path, rec)?;
        let pipeline = FeaturePipeline::fit(d.x_train.view(), &reduction(&a.reduction))?;
        let f = pipeline.transform(d.x_train.view())?;
        (f.data, d.y_train, d.class_names, f.feature_names, Some(pipeline), hash)
    };
    if let Some(&bad) = y.iter().find(|&&l| l >= class_names.len()) {
        return Err(Error::LabelOutOfRange { label: bad as i64, max: class_names.len() as i64 - 1 }.into());
    }
    let model = classifiers::train(x.view(), &y, class_names.len(), &params)?;
    let train_pred = model.predict(x.view())?;
    let train_acc = wlclass_core::model_selection::accuracy(&train_pred, &y);
    let converged = model.converged();
    if let TrainedModel::Gbt(g) = &model {
        let report = feature_importance_report(g, &feature_names);
        println!("feature importance (splits, total gain):");
        for e in report.iter().take(10) {
            println!("  {:<48} {:>6} {:>14.4}", e.name, e.split_count, e.total_gain);
        }
        let mut lines = String::new();
        for e in &report {
            lines.push_str(&serde_json::to_string(e).map_err(Error::from)?);
            lines.push('\n');
        }
        rec.write_output(&beside(&a.out, ".importance.jsonl"), lines.as_bytes())?;
    }
    let file = ModelFile {
        provenance: ModelProvenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            family: params.family(),
            dataset_hash: hash,
            class_names,
            feature_names,
            pipeline,
            seed: a.seed,
            params,
        },
        model,
    };
    rec.write_output(&a.out, &classifiers::write_model_file(&file)?)?;
    println!("trained {} on {} rows, training accuracy {:.2}% -> {}", params.family(), y.len(), train_acc, a.out.display());
    if !converged {
        return Err(Failure::NotConverged(
            "SVM solver reached --max-iter before meeting its tolerance; model written but flagged".into(),
        ));
    }
    Ok(())
}

fn load_model(path: &Path, rec: &mut Recorder) -> Result<ModelFile, Failure> {
    let bytes = rec.read_input(path)?;
    Ok(classifiers::read_model_file(&bytes)?)
}

/// Features, optional labels, class names and a dataset id for scoring.
struct ScoringInput {
    x: Array2<f64>,
    y: Vec<usize>,
    class_names: Vec<String>,
    dataset_id: String,
}

fn scoring_input(input: &InputArgs, model: &ModelFile, rec: &mut Recorder) -> Result<ScoringInput, Failure> {
    if let Some(path) = &input.features {
        let f = load_features(path, rec)?;
        if f.names != model.provenance.feature_names {
            return Err(Error::ShapeMismatch(format!(
                "features {:?} do not match the model's {:?}",
                f.names.len(),
                model.provenance.feature_names.len()
            ))
            .into());
        }
        let class_names = f.meta.map_or_else(|| model.provenance.class_names.clone(), |m| m.class_names);
        Ok(ScoringInput { x: f.x, y: f.y, class_names, dataset_id: f.hash })
    } else {
        let path = input.archive.as_ref().expect("clap enforces one input");
        let pipeline = model.provenance.pipeline.as_ref().ok_or_else(|| {
            Failure::Usage("model carries no feature pipeline; pass --features instead of --archive".into())
        })?;
        let (d, hash) = load_archive(path, rec)?;
        let f = pipeline.transform(d.x_test.view())?;
        Ok(ScoringInput { x: f.data, y: d.y_test, class_names: d.class_names, dataset_id: hash })
    }
}

fn predict(a: &PredictArgs, rec: &mut Recorder) -> Outcome {
    let model = load_model(&a.model_path, rec)?;
    let input = scoring_input(&a.input, &model, rec)?;
    let pred = model.model.predict(input.x.view())?;
    let names = &model.provenance.class_names;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "label", "class"]).map_err(Error::from)?;
    for (i, &p) in pred.iter().enumerate() {
        let name = names.get(p).map_or("", String::as_str);
        w.write_record([i.to_string(), p.to_string(), name.to_string()]).map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    rec.write_output(&a.out, &bytes)?;
    println!("{} predictions -> {}", pred.len(), a.out.display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs, rec: &mut Recorder) -> Outcome {
    let model = load_model(&a.model_path, rec)?;
    let input = scoring_input(&a.input, &model, rec)?;
    if input.class_names.len() != model.provenance.class_names.len() {
        return Err(Error::ShapeMismatch(format!(
            "test data has {} classes, model was trained on {}",
            input.class_names.len(),
            model.provenance.class_names.len()
        ))
        .into());
    }
    let pred = model.model.predict(input.x.view())?;
    let report = evaluate_predictions(
        &pred,
        &input.y,
        &input.class_names,
        &input.dataset_id,
        ReportProvenance::from_model_file(&model),
    )?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        rec.write_output(out, report.to_json_lines()?.as_bytes())?;
    }
    Ok(())
}

fn parse_reduction(s: &str) -> Result<Reduction, Failure> {
    let t = s.trim().to_ascii_lowercase();
    let cov = |center: bool, unbiased: bool| Reduction::Covariance(CovarianceOptions { center_per_trial: center, unbiased_scale: unbiased });
    match t.as_str() {
        "cov" => return Ok(cov(false, false)),
        "cov+center" => return Ok(cov(true, false)),
        "cov+unbiased" => return Ok(cov(false, true)),
        "cov+center+unbiased" => return Ok(cov(true, true)),
        _ => {}
    }
    t.strip_prefix("pca")
        .map(|k| k.trim_start_matches(':'))
        .and_then(|k| k.parse().ok())
        .map(|k| Reduction::Pca { k })
        .ok_or_else(|| Failure::Usage(format!("unknown reduction {s:?}; use cov or pca:K")))
}

fn parse_grid(s: &str) -> Result<(String, Vec<f64>), Failure> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("grid entry {s:?} must look like name=v1,v2")))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::Usage(format!("grid entry {s:?} has a non-numeric value")))?;
    Ok((name.trim().to_string(), values))
}

fn gridsearch(a: &GridsearchArgs, rec: &mut Recorder) -> Outcome {
    let family: ModelFamily = a.model.model.into();
    let reductions = a.reductions.iter().map(|r| parse_reduction(r)).collect::<Result<Vec<_>, _>>()?;
    let mut spec = GridSpec::baseline(family, reductions, a.seed);
    spec.base = model_params(&a.model)?;
    if !a.grid.is_empty() {
        spec.grid = a.grid.iter().map(|g| parse_grid(g)).collect::<Result<_, _>>()?;
    }
    if let Some(k) = a.folds {
        spec.folds = k;
    }
    rec.seed("cv/folds", seed::derive(a.seed, "cv/folds"));
    rec.seed("model", seed::derive(a.seed, "model"));
    let (d, hash) = load_archive(&a.archive, rec)?;
    let cv = grid_search(d.x_train.view(), &d.y_train, d.class_count(), &spec)?;

    let mut table = String::new();
    let mut lines = String::new();
    let _ = writeln!(table, "{:<40} {:>9} {:>9}", "cell", "mean %", "std %");
    for c in &cv.cells {
        let marker = if c.cell.index == cv.best_cell { " *" } else { "" };
        let _ = writeln!(table, "{:<40} {:>9.2} {:>9.2}{marker}", c.cell.label(), 100.0 * c.mean, 100.0 * c.std);
        let mut v = serde_json::to_value(c).map_err(Error::from)?;
        v["record"] = serde_json::json!("cell");
        v["label"] = serde_json::json!(c.cell.label());
        lines.push_str(&serde_json::to_string(&v).map_err(Error::from)?);
        lines.push('\n');
    }
    let best = serde_json::json!({"record": "best", "cell": cv.best_cell, "label": cv.best().cell.label()});
    lines.push_str(&best.to_string());
    lines.push('\n');
    print!("{table}");
    rec.write_output(&beside(&a.out, ".cv.jsonl"), lines.as_bytes())?;

    let feature_names = cv.pipeline.transform(d.x_train.slice(s![0..1, .., ..]))?.feature_names;
    let converged = cv.model.converged();
    let file = ModelFile {
        provenance: ModelProvenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            family,
            dataset_hash: hash,
            class_names: d.class_names.clone(),
            feature_names,
            pipeline: Some(cv.pipeline.clone()),
            seed: a.seed,
            params: cv.params,
        },
        model: cv.model,
    };
    rec.write_output(&a.out, &classifiers::write_model_file(&file)?)?;
    println!("refit best cell ({}) -> {}", cv.cells[cv.best_cell].cell.label(), a.out.display());
    if !converged {
        return Err(Failure::NotConverged("refit SVM hit its iteration cap; model written but flagged".into()));
    }
    Ok(())
}

fn reproduce(a: &ReproduceArgs, rec: &mut Recorder) -> Outcome {
    let text = String::from_utf8(rec.read_input(&a.manifest)?)
        .map_err(|_| Error::SchemaMismatch("manifest is not UTF-8".into()))?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let manifest = parse_manifest(&text, base)?;
    let families: Vec<ModelFamily> = if a.family.is_empty() {
        vec![ModelFamily::Svm, ModelFamily::Rf, ModelFamily::Gbt]
    } else {
        a.family.iter().map(|&f| f.into()).collect()
    };
    let opts = ReproduceOptions { seed: a.seed, folds: a.folds, pca_ks: a.pca_ks.clone() };
    rec.seed("reproduce", a.seed);
    let report = reproduce_table(&manifest, &families, &opts)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        rec.write_output(out, report.to_json_lines()?.as_bytes())?;
    }
    if report.cells().all(|(_, c)| c.accuracy.is_none()) {
        let first = report.cells().find_map(|(_, c)| c.error.clone()).unwrap_or_default();
        return Err(Error::MissingArchive(format!("no table cell could be computed ({first})")).into());
    }
    Ok(())
}
