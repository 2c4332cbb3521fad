use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use stgcn::curriculum::{curriculum_fit, load_curriculum, make_pacing_with_ratio, pacing_json, score_samples, scores_csv, Curriculum};
use stgcn::features::{extract as extract_layer, features_csv, fuse, save_features, train_classifier, FeatureSet, Reduction};
use stgcn::io::csv::{confusion_csv, export_dir, history_csv};
use stgcn::io::{load_dataset, save_dataset};
use stgcn::model::{checkpoint, StGcn};
use stgcn::preprocess::{run_pipeline, PipelineConfig, SplitSpec};
use stgcn::synth::{generate, transfer_benchmark_with, BenchmarkSpec, Family, GeneratorSpec, Primitive};
use stgcn::train::{evaluate as evaluate_model, fit, History, Metrics, TrainConfig};
use stgcn::transfer::{apply_plan, load_pretrained};
use stgcn::{seed, Dataset, SkeletonTopology, TopologyKind};

use crate::config::{ExperimentConfig, Kind};
use crate::{ConfigError, FamilyArg, ImportFormat};

/// Metrics summary consumed by `report`.
#[derive(Debug, Serialize, serde::Deserialize)]
pub struct RunMetrics {
    pub row: String,
    pub column: String,
    pub top1_accuracy: f64,
    pub loss: f64,
    pub samples: usize,
    pub per_class_accuracy: Vec<f64>,
}

/// Collects written artifacts and their hashes for the run manifest.
struct Artifacts {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.hashes.insert(name.to_string(), seed::sha256_hex(bytes));
        Ok(())
    }

    /// Records a file some library routine already wrote.
    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.dir.join(name))?;
        self.hashes.insert(name.to_string(), seed::sha256_hex(&bytes));
        Ok(())
    }

    fn manifest(mut self, command: &str, seed: Option<u64>, config: Value, inputs: &[&Path]) -> Result<()> {
        let mut input_hashes = BTreeMap::new();
        for p in inputs {
            if p.is_file() {
                input_hashes.insert(p.display().to_string(), seed::sha256_hex(&std::fs::read(p)?));
            }
        }
        let manifest = json!({
            "command": command,
            "seed": seed,
            "config": config,
            "inputs": input_hashes,
            "artifacts": self.hashes,
        });
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(self.dir.join("manifest.json"), text)?;
        self.hashes.clear();
        Ok(())
    }
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn topology_of(data: &Dataset) -> Result<SkeletonTopology> {
    SkeletonTopology::for_kind(data.topology).with_context(|| {
        format!(
            "datasets with a {} skeleton cannot be trained from the command line",
            data.topology
        )
    })
}

fn parse_topology(name: &str) -> Result<TopologyKind> {
    Ok(match name {
        "kinect_v1" => TopologyKind::KinectV1,
        "kinect_v2" => TopologyKind::KinectV2,
        "shared20" => TopologyKind::Shared20,
        other => bail!(ConfigError(format!("unknown topology `{other}`"))),
    })
}

pub fn import(
    out: &Path,
    format: ImportFormat,
    input: &Path,
    output: &str,
    topology: Option<&str>,
    frame_rate: f64,
    dump_csv: Option<&Path>,
) -> Result<()> {
    let (dataset, dropped) = match format {
        ImportFormat::NtuSkeleton => {
            let imported = stgcn::io::ntu::import_dir(input)?;
            (imported.dataset, imported.dropped.len())
        }
        ImportFormat::Csv => {
            let kind = topology.map(parse_topology).transpose()?;
            (stgcn::io::csv::import_dir(input, kind, frame_rate)?, 0)
        }
    };
    let mut art = Artifacts::new(out);
    save_dataset(&dataset, out.join(output))?;
    art.record(output)?;
    if let Some(dir) = dump_csv {
        std::fs::create_dir_all(dir)?;
        export_dir(&dataset, dir)?;
    }
    println!(
        "imported {} samples, {} classes, {} dropped file(s) -> {}",
        dataset.len(),
        dataset.num_classes(),
        dropped,
        out.join(output).display()
    );
    art.manifest(
        "import",
        None,
        json!({ "input": input, "frame_rate": frame_rate, "dropped": dropped }),
        &[],
    )
}

pub struct PreprocessOverrides {
    pub fra: Option<usize>,
    pub smooth: Option<usize>,
    pub frames: Option<usize>,
    pub remap: bool,
    pub train_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub train_subjects: Option<Vec<u32>>,
}

pub fn preprocess(out: &Path, input: &Path, config: Option<&Path>, o: PreprocessOverrides) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<PipelineConfig>(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if o.fra.is_some() {
        cfg.keep_every = o.fra;
    }
    if o.smooth.is_some() {
        cfg.smoothing_window = o.smooth;
    }
    if let Some(t) = o.frames {
        cfg.target_frames = t;
    }
    cfg.remap_to_shared |= o.remap;
    match (o.train_subjects, &mut cfg.split) {
        (Some(subjects), split) => {
            if o.train_fraction.is_some() {
                bail!(ConfigError("--train-subjects and --train-fraction are exclusive".into()));
            }
            *split = SplitSpec::CrossSubject {
                train_subjects: subjects.into_iter().collect(),
            };
        }
        (None, SplitSpec::RandomRatio { train_fraction, seed }) => {
            *train_fraction = o.train_fraction.unwrap_or(*train_fraction);
            *seed = o.seed.unwrap_or(*seed);
        }
        (None, SplitSpec::CrossSubject { .. }) => {}
    }

    let data = load(input)?;
    let result = run_pipeline(&data, &cfg).context("preprocessing")?;
    let mut art = Artifacts::new(out);
    save_dataset(&result.train, out.join("train.stgd"))?;
    art.record("train.stgd")?;
    save_dataset(&result.val, out.join("val.stgd"))?;
    art.record("val.stgd")?;
    art.write("preprocess.log", (result.log.join("\n") + "\n").as_bytes())?;
    for line in &result.log {
        println!("{line}");
    }
    art.manifest("preprocess", None, serde_json::to_value(&cfg)?, &[input])
}

fn metrics_json(row: &str, column: &str, m: &Metrics) -> Result<Vec<u8>> {
    let rm = RunMetrics {
        row: row.to_string(),
        column: column.to_string(),
        top1_accuracy: m.top1_accuracy,
        loss: m.loss,
        samples: m.total(),
        per_class_accuracy: m.per_class_accuracy.clone(),
    };
    Ok((serde_json::to_string_pretty(&rm)? + "\n").into_bytes())
}

fn column_name(cfg: &ExperimentConfig) -> String {
    cfg.label.clone().unwrap_or_else(|| {
        let p = cfg.data.val.as_ref().unwrap_or(&cfg.data.train);
        p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    })
}

struct Inputs {
    train: Dataset,
    val: Dataset,
}

fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    let train = load(&cfg.data.train)?;
    let val = match &cfg.data.val {
        Some(p) => load(p)?,
        None => train.subset(&[]),
    };
    if !val.is_empty() && val.class_names != train.class_names {
        bail!(stgcn::Error::Incompatible("train and val datasets list different classes".into()));
    }
    Ok(Inputs { train, val })
}

/// Writes the checkpoint, history and (when there is a validation set)
/// metrics of a trained network.
fn finish_training(
    art: &mut Artifacts,
    model: &StGcn,
    history: &History,
    inputs: &Inputs,
    row: &str,
    column: &str,
) -> Result<()> {
    art.write("model.stgc", &checkpoint::to_bytes(model)?)?;
    art.write("history.csv", history_csv(history).as_bytes())?;
    if let Some(last) = history.last() {
        println!(
            "epoch {}: train loss {:.4}, train acc {:.4}{}",
            last.epoch,
            last.train_loss,
            last.train_accuracy,
            last.val.as_ref().map_or(String::new(), |m| format!(", val acc {:.4}", m.top1_accuracy))
        );
    }
    if !inputs.val.is_empty() {
        let m = evaluate_model(model, &inputs.val)?;
        art.write("confusion.csv", confusion_csv(&m, &inputs.val.class_names).as_bytes())?;
        art.write("metrics.json", &metrics_json(row, column, &m)?)?;
    }
    Ok(())
}

fn input_paths(cfg: &ExperimentConfig) -> Vec<&Path> {
    let mut v: Vec<&Path> = vec![&cfg.data.train];
    v.extend(cfg.data.val.as_deref());
    v
}

pub fn train(out: &Path, path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(path, Kind::Train)?;
    let inputs = load_inputs(&cfg)?;
    let frames = uniform_frames(&inputs.train)?;
    let mcfg = cfg.model_config(topology_of(&inputs.train)?, inputs.train.num_classes(), frames)?;
    let mut model = StGcn::new(mcfg, cfg.head_spec(), cfg.model_seed())?;
    let history = fit(&mut model, &inputs.train, &inputs.val, &cfg.train_config()).context("training")?;
    let mut art = Artifacts::new(out);
    finish_training(&mut art, &model, &history, &inputs, "train", &column_name(&cfg))?;
    art.manifest("train", Some(cfg.seed), serde_json::to_value(&cfg)?, &input_paths(&cfg))
}

fn uniform_frames(data: &Dataset) -> Result<usize> {
    data.uniform_frames()
        .ok_or_else(|| stgcn::Error::Shape("training samples must share one length; run preprocess first".into()).into())
}

pub fn finetune(out: &Path, path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(path, Kind::Finetune)?;
    let plan = cfg.transfer_plan().expect("checked by load");
    let t = cfg.transfer.as_ref().expect("checked by load");
    let inputs = load_inputs(&cfg)?;
    let topology = topology_of(&inputs.train)?;
    let mut model = load_pretrained(&t.checkpoint, &topology, inputs.train.num_classes(), plan.head.clone())
        .with_context(|| format!("loading {}", t.checkpoint.display()))?;
    apply_plan(&mut model, &plan)?;
    let history = fit(&mut model, &inputs.train, &inputs.val, &cfg.train_config()).context("fine-tuning")?;
    let row = format!("{}(n={})", plan.mode.as_str(), plan.n);
    let mut art = Artifacts::new(out);
    finish_training(&mut art, &model, &history, &inputs, &row, &column_name(&cfg))?;
    let mut paths = input_paths(&cfg);
    paths.push(&t.checkpoint);
    art.manifest("finetune", Some(cfg.seed), serde_json::to_value(&cfg)?, &paths)
}

fn features_for(model: &StGcn, data: &Dataset, layers: &[usize], pooling: stgcn::features::Pooling) -> Result<FeatureSet> {
    if layers.len() == 1 {
        return Ok(extract_layer(model, data, layers[0], pooling)?);
    }
    let sets = layers
        .iter()
        .map(|&l| extract_layer(model, data, l, pooling))
        .collect::<stgcn::Result<Vec<_>>>()?;
    Ok(fuse(&sets)?)
}

pub fn extract(out: &Path, path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(path, Kind::Extract)?;
    let f = cfg.features.as_ref().expect("checked by load");
    if f.layers.is_empty() {
        bail!(ConfigError("[features] layers must name at least one block".into()));
    }
    let inputs = load_inputs(&cfg)?;
    let model = match &f.checkpoint {
        Some(p) => checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let frames = uniform_frames(&inputs.train)?;
            let mcfg = cfg.model_config(topology_of(&inputs.train)?, inputs.train.num_classes(), frames)?;
            StGcn::new(mcfg, cfg.head_spec(), cfg.model_seed())?
        }
    };
    let mut train_set = features_for(&model, &inputs.train, &f.layers, f.pooling)?;
    let mut val_set = if inputs.val.is_empty() {
        None
    } else {
        Some(features_for(&model, &inputs.val, &f.layers, f.pooling)?)
    };
    if let Some(method) = f.reduction {
        let dims = f
            .dims
            .ok_or_else(|| ConfigError("[features] reduction needs dims".into()))?;
        let r = Reduction::fit(&train_set, method, dims)?;
        train_set = r.transform(&train_set)?;
        val_set = val_set.map(|v| r.transform(&v)).transpose()?;
    }
    let mut art = Artifacts::new(out);
    save_features(&train_set, out.join("features_train.stgf"))?;
    art.record("features_train.stgf")?;
    art.write("features_train.csv", features_csv(&train_set).as_bytes())?;
    if let Some(v) = &val_set {
        save_features(v, out.join("features_val.stgf"))?;
        art.record("features_val.stgf")?;
        art.write("features_val.csv", features_csv(v).as_bytes())?;
    }
    println!("extracted {} x {} features from block(s) {:?}", train_set.n, train_set.d, f.layers);
    if let (Some(spec), Some(v)) = (cfg.classifier_spec(), &val_set) {
        let (_, m) = train_classifier(&train_set, v, &spec).context("training the classifier")?;
        let layers: Vec<String> = f.layers.iter().map(|l| l.to_string()).collect();
        let row = format!("layer{}+{}", layers.join("-"), serde_json::to_value(spec.kind)?.as_str().unwrap_or("clf"));
        art.write("confusion.csv", confusion_csv(&m, &inputs.val.class_names).as_bytes())?;
        art.write("metrics.json", &metrics_json(&row, &column_name(&cfg), &m)?)?;
        println!("{row}: val acc {:.4}", m.top1_accuracy);
    }
    let mut paths = input_paths(&cfg);
    paths.extend(f.checkpoint.as_deref());
    art.manifest("extract", Some(cfg.seed), serde_json::to_value(&cfg)?, &paths)
}

pub fn curriculum(out: &Path, path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(path, Kind::Curriculum)?;
    let c = cfg.curriculum.as_ref().expect("checked by load");
    let inputs = load_inputs(&cfg)?;
    let frames = uniform_frames(&inputs.train)?;
    let mcfg = cfg.model_config(topology_of(&inputs.train)?, inputs.train.num_classes(), frames)?;
    let mut tc: TrainConfig = cfg.train_config();
    let plan = match (&c.scores, &c.pacing) {
        (Some(s), Some(p)) => load_curriculum(s, p)?,
        (None, None) => {
            let mut scoring = tc.clone();
            scoring.seed = seed::derive(cfg.seed, "curriculum-scoring");
            let scores = score_samples(&mcfg, &inputs.train, &scoring).context("scoring samples")?;
            let pacing = make_pacing_with_ratio(inputs.train.len(), c.steps, tc.epochs, c.ratio)?;
            Curriculum::new(scores, pacing)?
        }
        _ => bail!(ConfigError("[curriculum] scores and pacing must be given together".into())),
    };
    for lr in &mut tc.lr_values {
        *lr *= c.lr_scale;
    }
    let mut model = StGcn::new(mcfg, cfg.head_spec(), cfg.model_seed())?;
    let history = curriculum_fit(&mut model, &inputs.train, &inputs.val, &plan, &tc).context("curriculum training")?;
    let mut art = Artifacts::new(out);
    art.write("scores.csv", scores_csv(&plan).as_bytes())?;
    art.write("pacing.json", pacing_json(&plan)?.as_bytes())?;
    finish_training(&mut art, &model, &history, &inputs, "curriculum", &column_name(&cfg))?;
    let mut paths = input_paths(&cfg);
    paths.extend(c.scores.as_deref());
    paths.extend(c.pacing.as_deref());
    art.manifest("curriculum", Some(cfg.seed), serde_json::to_value(&cfg)?, &paths)
}

pub fn evaluate(out: &Path, ckpt: &Path, data_path: &Path, name: &str) -> Result<()> {
    let model = checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let data = load(data_path)?;
    if data.num_classes() != model.num_classes() {
        bail!(stgcn::Error::Incompatible(format!(
            "checkpoint predicts {} classes, dataset has {}",
            model.num_classes(),
            data.num_classes()
        )));
    }
    let m = evaluate_model(&model, &data)?;
    let column = data_path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut art = Artifacts::new(out);
    art.write("confusion.csv", confusion_csv(&m, &data.class_names).as_bytes())?;
    art.write("metrics.json", &metrics_json(name, &column, &m)?)?;
    println!("top-1 accuracy {:.4} on {} samples, loss {:.4}", m.top1_accuracy, m.total(), m.loss);
    art.manifest("evaluate", None, json!({ "name": name }), &[ckpt, data_path])
}

pub struct SynthArgs {
    pub family: FamilyArg,
    pub classes: Vec<String>,
    pub per_class: usize,
    pub frames: usize,
    pub noise: Option<f64>,
    pub seed: u64,
    pub benchmark: bool,
    pub dump_csv: Option<PathBuf>,
}

fn parse_primitive(name: &str) -> Result<Primitive> {
    Primitive::ALL
        .into_iter()
        .find(|p| p.name() == name)
        .ok_or_else(|| {
            let known: Vec<&str> = Primitive::ALL.iter().map(|p| p.name()).collect();
            ConfigError(format!("unknown motion `{name}` (known: {})", known.join(", "))).into()
        })
}

pub fn synth(out: &Path, a: SynthArgs) -> Result<()> {
    let mut art = Artifacts::new(out);
    let mut outputs: Vec<(&str, Dataset)> = Vec::new();
    let config;
    if a.benchmark {
        let mut spec = BenchmarkSpec::default();
        spec.frames = a.frames;
        let (source, target) = transfer_benchmark_with(&spec, a.seed)?;
        outputs.push(("source.stgd", source));
        outputs.push(("target.stgd", target));
        config = json!({ "benchmark": true, "frames": a.frames });
    } else {
        let family = match a.family {
            FamilyArg::A => Family::A,
            FamilyArg::B => Family::B,
        };
        let classes = a.classes.iter().map(|c| parse_primitive(c)).collect::<Result<Vec<_>>>()?;
        let mut spec = GeneratorSpec::new(family, classes, a.per_class, a.frames, a.seed);
        if let Some(n) = a.noise {
            spec.noise_std = n;
        }
        outputs.push(("synth.stgd", generate(&spec)?));
        config = json!({
            "family": format!("{family:?}"),
            "classes": a.classes,
            "per_class": a.per_class,
            "frames": a.frames,
            "noise_std": spec.noise_std,
        });
    }
    for (name, data) in &outputs {
        save_dataset(data, out.join(name))?;
        art.record(name)?;
        println!("{name}: {} samples, {} classes", data.len(), data.num_classes());
        if let Some(dir) = &a.dump_csv {
            let sub = dir.join(name.trim_end_matches(".stgd"));
            std::fs::create_dir_all(&sub)?;
            export_dir(data, &sub)?;
        }
    }
    art.manifest("synth", Some(a.seed), config, &[])
}
