//! End-to-end run: load or generate graphs, prune, embed, train, evaluate and
//! explain, writing every report into one output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{
    default_p_grid, explainer_accuracy, write_accuracy_csv, ExplainConfig, PAccuracy,
};
use crate::features::{
    benign_instruction_vectors, write_json, AutoencoderCheckpoint, EmbeddingKind, EmbeddingSpec,
    Featurizer, GcnCheckpoint,
};
use crate::graph::{load_graphs, split_stratified, AttrGraph, DatasetManifest};
use crate::nn::{
    evaluate, train_autoencoder, train_gcn, AutoencoderConfig, EmbeddingTable, FeatureMatrix,
    GcnConfig, GcnModel, GraphSample, Metrics,
};
use crate::reduce::{reduce_corpus, CorpusReport, ReductionConfig, Timing};
use crate::seed::derive_seed;
use crate::synth::{gen_synthetic, SyntheticSpec};
use crate::x86::Aggregation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
    },
    /// A dataset manifest; graph paths resolve against its directory.
    Manifest {
        path: PathBuf,
    },
    Files {
        train: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Run seed; every stage seed is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub reduction: ReductionConfig,
    pub embedding: EmbeddingKind,
    pub aggregation: Aggregation,
    pub autoencoder: AutoencoderConfig,
    pub gcn: GcnConfig,
    /// `None` skips the explanation stage.
    pub explain: Option<ExplainConfig>,
    pub p_grid: Vec<f64>,
    pub fne_table: Option<PathBuf>,
    /// Rayon worker count; `None` uses all cores.
    pub jobs: Option<usize>,
    /// Write wall times into the reduction report.
    pub timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataSource::Synthetic {
                spec: SyntheticSpec::default(),
            },
            reduction: ReductionConfig::default(),
            embedding: EmbeddingKind::Raw,
            aggregation: Aggregation::Mean,
            autoencoder: AutoencoderConfig::default(),
            gcn: GcnConfig::default(),
            explain: Some(ExplainConfig::default()),
            p_grid: default_p_grid(),
            fne_table: None,
            jobs: None,
            timings: false,
        }
    }
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.reduction.validate()?;
        if let Some(e) = &self.explain {
            e.validate()?;
        }
        if self.p_grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Config("p_grid values must lie in (0,1]".into()));
        }
        if let DataSource::Synthetic { spec } = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Stage seeds derived from the run seed.
    pub fn stage_seeds(&self) -> BTreeMap<&'static str, u64> {
        ["data", "autoencoder", "gcn", "explain", "fne"]
            .into_iter()
            .map(|s| (s, derive_seed(self.seed, s)))
            .collect()
    }
}

/// Loads (or generates) the train and test graphs for `source`.
pub fn load_split(source: &DataSource, seed: u64) -> Result<(Vec<AttrGraph>, Vec<AttrGraph>)> {
    match source {
        DataSource::Synthetic { spec } => {
            let graphs: Vec<AttrGraph> = gen_synthetic(spec, seed)?
                .into_iter()
                .map(|s| s.graph)
                .collect();
            Ok(split_stratified(
                graphs,
                spec.train_fraction,
                1.0 - spec.train_fraction,
                seed,
            ))
        }
        DataSource::Manifest { path } => {
            let manifest = DatasetManifest::read(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            Ok(manifest.split(manifest.load(base)?))
        }
        DataSource::Files { train, test } => Ok((load_graphs(train)?, load_graphs(test)?)),
    }
}

/// Feature matrices for each graph, in parallel, order preserved.
pub fn featurize(f: &Featurizer, graphs: &[AttrGraph]) -> Result<Vec<FeatureMatrix>> {
    use rayon::prelude::*;
    graphs.par_iter().map(|g| f.features(g)).collect()
}

pub fn samples(graphs: &[AttrGraph], features: Vec<FeatureMatrix>) -> Result<Vec<GraphSample>> {
    graphs
        .iter()
        .zip(features)
        .map(|(g, x)| GraphSample::new(g, x))
        .collect()
}

/// Training samples with empty graphs dropped (and logged).
pub fn trainable(samples: Vec<GraphSample>) -> Vec<GraphSample> {
    samples
        .into_iter()
        .filter(|s| {
            let keep = s.prop.node_count() > 0;
            if !keep {
                log::warn!(
                    "training graph `{}` is empty after reduction; dropped",
                    s.graph_id
                );
            }
            keep
        })
        .collect()
}

/// Per-graph size statistics with a final `TOTAL` row.
pub fn write_stats_csv<W: std::io::Write>(graphs: &[AttrGraph], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["graph_id", "label", "nodes", "edges", "components"])?;
    let (mut n, mut e, mut c) = (0, 0, 0);
    for g in graphs {
        let comps = g.component_count();
        n += g.node_count();
        e += g.edge_count();
        c += comps;
        w.write_record([
            g.graph_id().to_string(),
            g.label().map_or(String::new(), |l| l.index().to_string()),
            g.node_count().to_string(),
            g.edge_count().to_string(),
            comps.to_string(),
        ])?;
    }
    w.write_record([
        "TOTAL".into(),
        String::new(),
        n.to_string(),
        e.to_string(),
        c.to_string(),
    ])?;
    w.flush().map_err(|e| Error::Csv(e.into()))
}

fn stage<T>(
    name: &'static str,
    times: &mut BTreeMap<&'static str, f64>,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    });
    times.insert(name, start.elapsed().as_secs_f64());
    if out.is_ok() {
        log::info!("stage {name} done in {:.2}s", times[name]);
    }
    out
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub train: Vec<AttrGraph>,
    pub test: Vec<AttrGraph>,
    pub reduction: CorpusReport,
    pub featurizer: Featurizer,
    pub model: GcnModel,
    pub loss_log: Vec<f64>,
    pub autoencoder_loss_log: Option<Vec<f64>>,
    pub metrics: Metrics,
    pub explainer: Option<Vec<PAccuracy>>,
    pub stage_seconds: BTreeMap<&'static str, f64>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a PipelineConfig,
    seeds: BTreeMap<&'static str, u64>,
    train_graphs: usize,
    test_graphs: usize,
    stage_seconds: &'a BTreeMap<&'static str, f64>,
    metrics: &'a Metrics,
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Runs every stage in memory without writing files.
pub fn run_stages(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let seeds = cfg.stage_seeds();
    let mut times = BTreeMap::new();

    let (train_raw, test_raw) = stage("load", &mut times, || load_split(&cfg.data, seeds["data"]))?;
    let (train, test, reduction) = stage("prune", &mut times, || {
        let (train, mut report) = reduce_corpus(&train_raw, &cfg.reduction)?;
        let (test, test_report) = reduce_corpus(&test_raw, &cfg.reduction)?;
        report.rows.extend(test_report.rows);
        report.totals = report.totals.merge(test_report.totals);
        Ok((train, test, report))
    })?;

    let mut ae_log = None;
    let featurizer = stage("embed", &mut times, || {
        let spec = match cfg.embedding {
            EmbeddingKind::Raw => EmbeddingSpec::Raw {
                aggregation: cfg.aggregation,
            },
            EmbeddingKind::Fne => EmbeddingSpec::Fne { seed: seeds["fne"] },
            EmbeddingKind::Ae => {
                let ae_cfg = AutoencoderConfig {
                    seed: seeds["autoencoder"],
                    ..cfg.autoencoder
                };
                let benign = benign_instruction_vectors(&train, cfg.aggregation)?;
                let trained = train_autoencoder(&benign, &ae_cfg)?;
                ae_log = Some(trained.loss_log);
                EmbeddingSpec::Ae {
                    aggregation: cfg.aggregation,
                    autoencoder: trained.model,
                }
            }
        };
        let table = match &cfg.fne_table {
            Some(p) => EmbeddingTable::load(p)?,
            None => EmbeddingTable::default(),
        };
        Ok(Featurizer::new(spec).with_table(table))
    })?;

    let gcn_cfg = GcnConfig {
        seed: seeds["gcn"],
        ..cfg.gcn
    };
    let (train_x, test_samples) = stage("featurize", &mut times, || {
        Ok((
            featurize(&featurizer, &train)?,
            samples(&test, featurize(&featurizer, &test)?)?,
        ))
    })?;
    let trained = stage("train", &mut times, || {
        train_gcn(&trainable(samples(&train, train_x)?), &gcn_cfg)
    })?;
    let metrics = stage("eval", &mut times, || {
        evaluate(&trained.model, &test_samples)
    })?;

    let explainer = match &cfg.explain {
        Some(ecfg) => Some(stage("explain", &mut times, || {
            let corpus: Vec<(AttrGraph, FeatureMatrix)> = test
                .iter()
                .cloned()
                .zip(test_samples.iter().map(|s| s.x.clone()))
                .collect();
            explainer_accuracy(&trained.model, &corpus, ecfg, &cfg.p_grid, seeds["explain"])
        })?),
        None => None,
    };

    Ok(PipelineOutput {
        train,
        test,
        reduction,
        featurizer,
        model: trained.model,
        loss_log: trained.loss_log,
        autoencoder_loss_log: ae_log,
        metrics,
        explainer,
        stage_seconds: times,
    })
}

/// Runs the pipeline and writes `reduction_report.csv`, `metrics.csv`,
/// `explainer_accuracy.csv`, `model.json` and `run_manifest.json` to `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = run_stages(cfg)?;
    let timing = if cfg.timings {
        Timing::Record
    } else {
        Timing::Omit
    };
    write_file(&dir.join("reduction_report.csv"), |b| {
        out.reduction.write_csv(b, timing)
    })?;
    write_file(&dir.join("metrics.csv"), |b| out.metrics.write_csv(b))?;
    if let Some(rows) = &out.explainer {
        write_file(&dir.join("explainer_accuracy.csv"), |b| {
            write_accuracy_csv(rows, b)
        })?;
    }
    if let (EmbeddingSpec::Ae { autoencoder, .. }, Some(log)) =
        (&out.featurizer.spec, &out.autoencoder_loss_log)
    {
        write_json(
            dir.join("autoencoder.json"),
            &AutoencoderCheckpoint {
                config: AutoencoderConfig {
                    seed: derive_seed(cfg.seed, "autoencoder"),
                    ..cfg.autoencoder
                },
                model: autoencoder.clone(),
                loss_log: log.clone(),
            },
        )?;
    }
    write_json(
        dir.join("model.json"),
        &GcnCheckpoint {
            config: GcnConfig {
                seed: derive_seed(cfg.seed, "gcn"),
                ..cfg.gcn
            },
            embedding: out.featurizer.spec.clone(),
            model: out.model.clone(),
            loss_log: out.loss_log.clone(),
        },
    )?;
    let manifest = RunManifest {
        config: cfg,
        seeds: cfg.stage_seeds(),
        train_graphs: out.train.len(),
        test_graphs: out.test.len(),
        stage_seconds: &out.stage_seconds,
        metrics: &out.metrics,
    };
    std::fs::write(
        dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )
    .map_err(|e| Error::io(dir.join("run_manifest.json"), e))?;
    Ok(out)
}
