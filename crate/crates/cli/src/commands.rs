use std::path::{Path, PathBuf};

use mednet_core::analysis::{count_flops, pullback_metric, CostReport, Spectrum};
use mednet_core::data::{
    generate_synthetic, stratified_split, write_pnm, Dataset, DatasetManifest, Image, ManifestRecord, SplitIndices,
    SplitName,
};
use mednet_core::federated::{make_clients, run_federated, write_rounds_csv, RoundReport};
use mednet_core::harness::{
    evaluate, train, write_history_csv, CheckpointRecord, MetricsReport, ModelTask, Precision, Split,
};
use mednet_core::model::{build_variant, check_params, count_params, init_params, ModelGraph, ParamSet, Variant};
use mednet_core::optim::ModelObjective;
use mednet_core::rng::Rng;
use mednet_core::{Error, Result, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, MAX_ANALYZE_DIM};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn prepare_output(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg.output.as_path();
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let path = out.join("config.json");
    std::fs::write(&path, cfg.to_json()?).map_err(|e| io_err(&path, e))?;
    Ok(out)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| io_err(path, e))
}

fn build_graph(cfg: &RunConfig, variant: Variant) -> Result<ModelGraph> {
    build_variant(variant, &cfg.model.backbone(), cfg.model.num_classes)
}

/// Dataset and its train/val/test indices as described by the data section.
pub fn load_data<T: Scalar>(cfg: &RunConfig) -> Result<(Dataset<T>, SplitIndices)> {
    let d = cfg.data()?;
    let [h, w] = cfg.model.input_size;
    let (data, splits) = if let Some(spec) = &d.synthetic {
        if spec.size != [h, w] {
            return Err(Error::Config(format!(
                "synthetic size {:?} differs from model input {:?}",
                spec.size, cfg.model.input_size
            )));
        }
        let (x, y) = generate_synthetic::<T>(spec)?;
        let splits = stratified_split(&y, d.fractions, cfg.seed)?;
        (Dataset::new(x, y, spec.num_classes)?, splits)
    } else {
        let path = d.manifest.as_deref().ok_or_else(|| Error::Config("data: missing manifest".into()))?;
        if !path.is_file() {
            return Err(Error::Data(format!("manifest {} not found", path.display())));
        }
        DatasetManifest::read(path)?.load::<T>(h, w)?
    };
    if data.num_classes != cfg.model.num_classes {
        return Err(Error::Config(format!(
            "data has {} classes, model expects {}",
            data.num_classes, cfg.model.num_classes
        )));
    }
    Ok((data, splits))
}

struct Parts<T> {
    train: Dataset<T>,
    val: Dataset<T>,
    test: Option<Dataset<T>>,
}

fn load_parts<T: Scalar>(cfg: &RunConfig) -> Result<Parts<T>> {
    let (data, splits) = load_data::<T>(cfg)?;
    let test = if splits.test.is_empty() { None } else { Some(data.subset(&splits.test)?) };
    Ok(Parts { train: data.subset(&splits.train)?, val: data.subset(&splits.val)?, test })
}

fn split_of<T: Scalar>(d: &Dataset<T>) -> Result<Split<'_, T>> {
    Split::new(&d.inputs, &d.labels)
}

fn score<T: Scalar>(graph: &ModelGraph, w: &ParamSet<T>, d: Option<&Dataset<T>>) -> Result<Option<MetricsReport>> {
    d.map(|d| evaluate(graph, w, split_of(d)?)).transpose()
}

/// Contents of `metrics.json` after `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub epochs_run: usize,
    /// 0 when no epoch improved on the initial weights.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    /// Scores of the best checkpoint.
    pub val: MetricsReport,
    pub test: Option<MetricsReport>,
}

struct Trained<T> {
    summary: TrainSummary,
    best: CheckpointRecord<T>,
    last: ParamSet<T>,
    history: Vec<mednet_core::harness::EpochRecord>,
}

fn fit<T: Scalar>(cfg: &RunConfig, graph: &ModelGraph, variant: Variant, parts: &Parts<T>) -> Result<Trained<T>> {
    let mut task = ModelTask::new(graph, split_of(&parts.train)?, split_of(&parts.val)?, cfg.train.batch_size, cfg.seed)?;
    let outcome = train(&mut task, init_params::<T>(graph, cfg.seed), &cfg.train)?;
    let best = outcome.best;
    let summary = TrainSummary {
        variant,
        epochs_run: outcome.history.len(),
        best_epoch: best.epoch,
        best_val_accuracy: best.val_accuracy,
        val: evaluate(graph, &best.weights, split_of(&parts.val)?)?,
        test: score(graph, &best.weights, parts.test.as_ref())?,
    };
    Ok(Trained { summary, best, last: outcome.last, history: outcome.history })
}

fn train_as<T: Scalar>(cfg: &RunConfig) -> Result<TrainSummary> {
    let out = prepare_output(cfg)?;
    let graph = build_graph(cfg, cfg.model.variant)?;
    let parts = load_parts::<T>(cfg)?;
    let run = fit(cfg, &graph, cfg.model.variant, &parts)?;
    write_history_csv(&out.join("history.csv"), &run.history)?;
    run.best.save(&out.join("checkpoint"))?;
    run.last.save(&out.join("final"))?;
    write_json(&out.join("metrics.json"), &run.summary)?;
    Ok(run.summary)
}

/// Centralized training. Writes `history.csv`, the best checkpoint in
/// `checkpoint/`, the last weights in `final/` and `metrics.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg),
        Precision::F64 => train_as::<f64>(cfg),
    }
}

/// Contents of `metrics.json` after `federated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedSummary {
    pub rounds: usize,
    pub clients: usize,
    pub client_samples: Vec<usize>,
    /// Scores of the final global model.
    pub val: MetricsReport,
    pub test: Option<MetricsReport>,
    pub history: Vec<RoundReport>,
}

fn federated_as<T: Scalar>(cfg: &RunConfig) -> Result<FederatedSummary> {
    let fc = cfg.federated()?;
    let out = prepare_output(cfg)?;
    let graph = build_graph(cfg, cfg.model.variant)?;
    let parts = load_parts::<T>(cfg)?;
    let objective = ModelObjective::new(&graph, &parts.train.inputs, &parts.train.labels)?;
    let clients = make_clients(fc, parts.train.len(), &parts.train.labels)?;
    let val = split_of(&parts.val)?;
    let run = run_federated(fc, &clients, &objective, init_params::<T>(&graph, cfg.seed), |w| {
        Ok(Some(evaluate(&graph, w, val)?.accuracy))
    })?;
    let weights = run.server.weights;
    write_rounds_csv(&out.join("rounds.csv"), &run.history)?;
    let record = CheckpointRecord {
        epoch: run.server.round as usize,
        val_accuracy: run.history.last().and_then(|r| r.val_accuracy),
        weights,
    };
    record.save(&out.join("checkpoint"))?;
    let summary = FederatedSummary {
        rounds: fc.rounds,
        clients: fc.clients,
        client_samples: clients.iter().map(|c| c.n_k()).collect(),
        val: evaluate(&graph, &record.weights, val)?,
        test: score(&graph, &record.weights, parts.test.as_ref())?,
        history: run.history,
    };
    write_json(&out.join("metrics.json"), &summary)?;
    Ok(summary)
}

/// Federated training on the train split. Writes `rounds.csv`, the final
/// global model in `checkpoint/` and `metrics.json`.
pub fn cmd_federated(cfg: &RunConfig) -> Result<FederatedSummary> {
    cfg.federated()?;
    match cfg.precision {
        Precision::F32 => federated_as::<f32>(cfg),
        Precision::F64 => federated_as::<f64>(cfg),
    }
}

/// One line of `ablation.csv`: test scores (validation scores without a
/// test split) and the structure of the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub roc_auc: Option<f64>,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub params: usize,
    pub flops: u64,
    pub pool: String,
    /// Hidden dense widths joined by `/`.
    pub hidden: String,
    pub head_dense: usize,
    pub head_dropout: usize,
    pub head_batch_norm: usize,
    pub head_concat: usize,
}

fn structure_row(graph: &ModelGraph, variant: Variant, m: &MetricsReport, best_epoch: usize) -> AblationRow {
    let census = graph.census("head/");
    let n = |k: &str| census.get(k).copied().unwrap_or(0);
    let pool = if n("global_max_pool") > 0 { "max" } else { "avg" };
    let hidden: Vec<String> = graph
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, node)| node.name.starts_with("head/") && node.op.kind() == "dense")
        .map(|(id, _)| graph.shape_of(id).last().copied().unwrap_or(0).to_string())
        .collect();
    let hidden = hidden[..hidden.len().saturating_sub(1)].join("/");
    AblationRow {
        variant,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        roc_auc: m.roc_auc,
        accuracy: m.accuracy,
        best_epoch,
        params: count_params(graph),
        flops: count_flops(graph).total_flops,
        pool: pool.into(),
        hidden,
        head_dense: n("dense"),
        head_dropout: n("dropout"),
        head_batch_norm: n("batch_norm"),
        head_concat: n("concat"),
    }
}

fn ablation_as<T: Scalar>(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let out = prepare_output(cfg)?;
    let parts = load_parts::<T>(cfg)?;
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let graph = build_graph(cfg, variant)?;
        let run = fit(cfg, &graph, variant, &parts)?;
        let m = run.summary.test.as_ref().unwrap_or(&run.summary.val);
        rows.push(structure_row(&graph, variant, m, run.summary.best_epoch));
    }
    let path = out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(rows)
}

/// Trains all nine variants on the same data and seed and writes
/// `ablation.csv`.
pub fn cmd_ablation(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    match cfg.precision {
        Precision::F32 => ablation_as::<f32>(cfg),
        Precision::F64 => ablation_as::<f64>(cfg),
    }
}

/// Per-layer cost of the configured model. Writes `cost.csv`.
pub fn cmd_flops(cfg: &RunConfig) -> Result<CostReport> {
    let out = prepare_output(cfg)?;
    let report = count_flops(&build_graph(cfg, cfg.model.variant)?);
    report.write_csv(&out.join("cost.csv"))?;
    Ok(report)
}

/// Pullback-metric spectrum at one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSpectrum {
    /// Index into the test split, or of the random draw without data.
    pub point: usize,
    pub label: Option<usize>,
    pub spectrum: Spectrum,
}

fn analysis_points(cfg: &RunConfig, shape: &[usize]) -> Result<Vec<(Tensor<f64>, Option<usize>)>> {
    let count = cfg.analyze.points;
    if cfg.data.is_none() {
        let numel: usize = shape.iter().product();
        return Ok((0..count)
            .map(|i| {
                let mut rng = Rng::derived(cfg.seed, "analyze", i as u64);
                let v: Vec<f64> = (0..numel).map(|_| rng.next_f64()).collect();
                (Tensor::new(shape.to_vec(), v).expect("point shape"), None)
            })
            .collect());
    }
    let (data, splits) = load_data::<f64>(cfg)?;
    let pool = if splits.test.is_empty() { &splits.val } else { &splits.test };
    pool.iter()
        .take(count)
        .map(|&i| Ok((data.inputs.gather(&[i])?.reshape(shape)?, Some(data.labels[i]))))
        .collect()
}

/// Eigen-spectra of the pullback metric at test inputs, using the
/// checkpoint weights when one is configured. Writes `spectra.json`.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<Vec<PointSpectrum>> {
    let out = prepare_output(cfg)?;
    let graph = build_graph(cfg, cfg.model.variant)?;
    let shape = graph.input_shape().to_vec();
    let dim: usize = shape.iter().product();
    if dim > MAX_ANALYZE_DIM {
        return Err(Error::Config(format!("analyze needs an input of at most {MAX_ANALYZE_DIM} values, model takes {dim}")));
    }
    let params: ParamSet<f64> = match &cfg.checkpoint {
        Some(dir) => CheckpointRecord::<f64>::load(dir)?.weights,
        None => init_params::<f64>(&graph, cfg.seed),
    };
    check_params(&graph, &params)?;
    let mut spectra = Vec::new();
    for (point, (x, label)) in analysis_points(cfg, &shape)?.into_iter().enumerate() {
        let spectrum = pullback_metric(&graph, &params, &x)?.spectrum(cfg.analyze.eigenpairs, cfg.seed)?;
        spectra.push(PointSpectrum { point, label, spectrum });
    }
    write_json(&out.join("spectra.json"), &spectra)?;
    Ok(spectra)
}

/// Files produced by `gendata`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataSummary {
    pub manifest: PathBuf,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Renders the synthetic dataset as PPM images plus `manifest.csv`.
pub fn cmd_gendata(cfg: &RunConfig) -> Result<GenDataSummary> {
    let d = cfg.data()?;
    let spec = d.synthetic.as_ref().ok_or_else(|| Error::Config("gendata needs a synthetic data section".into()))?;
    let out = prepare_output(cfg)?;
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| io_err(&images, e))?;
    let (x, y) = generate_synthetic::<f64>(spec)?;
    let splits = stratified_split(&y, d.fractions, cfg.seed)?;
    let mut split_of = vec![SplitName::Test; y.len()];
    for &i in &splits.train {
        split_of[i] = SplitName::Train;
    }
    for &i in &splits.val {
        split_of[i] = SplitName::Val;
    }
    let [h, w] = spec.size;
    let mut records = Vec::with_capacity(y.len());
    for (i, &label) in y.iter().enumerate() {
        let rel = PathBuf::from("images").join(format!("{i:05}.ppm"));
        let img = Image::from_unit_tensor(&x.gather(&[i])?.reshape(&[h, w, 3])?)?;
        write_pnm(&out.join(&rel), &img)?;
        records.push(ManifestRecord { path: rel, label, split: split_of[i] });
    }
    let manifest = DatasetManifest {
        records,
        class_names: (0..spec.num_classes).map(|c| format!("class{c}")).collect(),
        root: out.to_path_buf(),
    };
    let path = out.join("manifest.csv");
    manifest.write(&path)?;
    Ok(GenDataSummary { manifest: path, train: splits.train.len(), val: splits.val.len(), test: splits.test.len() })
}

/// Contents of `metrics.json` after `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub checkpoint_epoch: usize,
    /// Validation accuracy recorded when the checkpoint was written.
    pub recorded_val_accuracy: Option<f64>,
    pub val: MetricsReport,
    pub test: Option<MetricsReport>,
}

fn eval_as<T: Scalar>(cfg: &RunConfig) -> Result<EvalSummary> {
    let dir = cfg.checkpoint()?;
    let out = prepare_output(cfg)?;
    let graph = build_graph(cfg, cfg.model.variant)?;
    let record = CheckpointRecord::<T>::load(dir)?;
    check_params(&graph, &record.weights)?;
    let parts = load_parts::<T>(cfg)?;
    let summary = EvalSummary {
        checkpoint: dir.to_path_buf(),
        checkpoint_epoch: record.epoch,
        recorded_val_accuracy: record.val_accuracy,
        val: evaluate(&graph, &record.weights, split_of(&parts.val)?)?,
        test: score(&graph, &record.weights, parts.test.as_ref())?,
    };
    write_json(&out.join("metrics.json"), &summary)?;
    Ok(summary)
}

/// Scores a saved checkpoint on the validation and test splits. Writes
/// `metrics.json`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalSummary> {
    cfg.checkpoint()?;
    match cfg.precision {
        Precision::F32 => eval_as::<f32>(cfg),
        Precision::F64 => eval_as::<f64>(cfg),
    }
}
