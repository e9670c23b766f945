//! Data preparation, training runs, evaluation and the ablation suite.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use cadnet_core::grid::{CellRef, Sample};
use cadnet_core::model::{BatchInput, Cadnet, ModelConfig, Variant};
use cadnet_core::scoring::{
    detection_accuracy, reconstruction_error, score, Accuracy, AnomalyReport, EvalSummary, SummaryRow,
    DEFAULT_PRESENCE_FLOOR, DEFAULT_THRESHOLD,
};
use cadnet_core::train::{init_seed, substream, train, EpochLog, TrainConfig};
use cadnet_core::world::{split_dataset, RuleBook, World};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{self, Header};
use crate::error::{IoError, IoResult};

pub const SPLIT_FILES: [&str; 5] = ["train.jsonl", "val.jsonl", "test.jsonl", "point.jsonl", "contextual.jsonl"];
pub const MANIFEST_FILE: &str = "manifest.json";

/// Sub-streams of the data seed.
mod data_streams {
    pub const NORMAL: u64 = 10;
    pub const SPLIT: u64 = 11;
    pub const POINT: u64 = 12;
    pub const CONTEXTUAL: u64 = 13;
    pub const RUNS: u64 = 20;
}

fn derive(seed: u64, stream: u64) -> u64 {
    substream(seed, stream).random()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub normal: usize,
    pub fractions: [f64; 3],
    pub point: usize,
    pub contextual: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { normal: 40_000, fractions: [0.6, 0.1, 0.3], point: 180, contextual: 120 }
    }
}

/// Normal splits plus the two evaluation sets, all drawn from one seed.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub header: Header,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub point: Vec<Sample>,
    pub contextual: Vec<Sample>,
    pub warnings: Vec<String>,
}

impl Bundle {
    pub fn generate(world: &World, rules: &RuleBook, cfg: &DataConfig, seed: u64) -> IoResult<Bundle> {
        rules.validate(&world.classes)?;
        let spec = &world.spec;
        let header = Header::new(spec.grid_size, spec.frame_dim, &world.classes);
        let normal = world.generate_normal(cfg.normal, derive(seed, data_streams::NORMAL));
        let split = split_dataset(normal, cfg.fractions, derive(seed, data_streams::SPLIT))?;
        let point = world.inject_point_anomalies(&split.test, rules, cfg.point.min(split.test.len()), derive(seed, data_streams::POINT))?;
        let ctx = world.inject_contextual_anomalies(
            &split.test,
            rules,
            spec.rarity_threshold,
            cfg.contextual,
            derive(seed, data_streams::CONTEXTUAL),
        )?;
        let mut warnings = point.warnings;
        warnings.extend(ctx.warnings);
        if cfg.point > split.test.len() {
            warnings.push(format!("only {} test samples for {} point anomalies", split.test.len(), cfg.point));
        }
        Ok(Bundle {
            header,
            train: split.train,
            val: split.val,
            test: split.test,
            point: point.samples,
            contextual: ctx.samples,
            warnings,
        })
    }

    fn parts(&self) -> [&Vec<Sample>; 5] {
        [&self.train, &self.val, &self.test, &self.point, &self.contextual]
    }

    /// SHA-256 of each split's serialised form, keyed by file name.
    pub fn hashes(&self) -> IoResult<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (name, part) in SPLIT_FILES.iter().zip(self.parts()) {
            out.insert(name.to_string(), dataset::sha256_hex(&dataset::to_bytes(&self.header, part)?));
        }
        Ok(out)
    }

    /// Writes the five split files and returns their hashes.
    pub fn write(&self, dir: &Path) -> IoResult<BTreeMap<String, String>> {
        std::fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.to_owned(), source })?;
        let mut out = BTreeMap::new();
        for (name, part) in SPLIT_FILES.iter().zip(self.parts()) {
            let bytes = dataset::to_bytes(&self.header, part)?;
            let path = dir.join(name);
            std::fs::write(&path, &bytes).map_err(|source| IoError::File { path, source })?;
            out.insert(name.to_string(), dataset::sha256_hex(&bytes));
        }
        Ok(out)
    }

    /// Reads a directory written by [`Bundle::write`], checking hashes when given.
    pub fn read(dir: &Path, expected: Option<&BTreeMap<String, String>>) -> IoResult<Bundle> {
        let mut parts = Vec::new();
        let mut header = None;
        for name in SPLIT_FILES {
            let path = dir.join(name);
            if let Some(want) = expected.and_then(|e| e.get(name)) {
                let got = dataset::hash_file(&path)?;
                if &got != want {
                    return Err(IoError::Format(format!("{}: hash {got} does not match manifest {want}", path.display())));
                }
            }
            let (h, samples) = dataset::read_dataset(&path)?;
            match &header {
                None => header = Some(h),
                Some(first) if *first != h => {
                    return Err(IoError::Format(format!("{} header differs from {}", path.display(), SPLIT_FILES[0])))
                }
                Some(_) => {}
            }
            parts.push(samples);
        }
        let mut it = parts.into_iter();
        let mut next = || it.next().expect("five parts");
        Ok(Bundle {
            header: header.expect("five headers"),
            train: next(),
            val: next(),
            test: next(),
            point: next(),
            contextual: next(),
            warnings: Vec::new(),
        })
    }
}

/// Manifest written by `generate` next to the split files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub seed: u64,
    pub scenario: String,
    pub data: DataConfig,
    pub files: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> IoResult<T> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_owned(), source })?;
    serde_json::from_str(&text).map_err(|e| IoError::Format(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| IoError::File { path: path.to_owned(), source })
}

/// Deterministic reconstructions (`z = mu`) in fixed-size batches.
pub fn reconstruct(net: &Cadnet, samples: &[Sample]) -> IoResult<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let input = BatchInput::from_samples(&refs, &net.config)?;
        let xh = net.reconstruct(&input)?;
        out.extend(xh.data().chunks(net.config.cells()).map(|c| c.to_vec()));
    }
    Ok(out)
}

pub fn reports(net: &Cadnet, samples: &[Sample], floor: f64, threshold: f64) -> IoResult<Vec<AnomalyReport>> {
    let (s, c) = (net.config.grid_size, net.config.classes);
    reconstruct(net, samples)?
        .iter()
        .zip(samples)
        .map(|(xh, smp)| Ok(score(smp.id, smp.grid.values(), xh, s, c, floor, threshold)?))
        .collect()
}

fn accuracy_on(net: &Cadnet, set: &[Sample], floor: f64, threshold: f64) -> IoResult<Accuracy> {
    let r = reports(net, set, floor, threshold)?;
    let gt: Vec<Vec<CellRef>> = set.iter().map(|s| s.ground_truth.clone().unwrap_or_default()).collect();
    Ok(detection_accuracy(&r, &gt)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub reconstruction_error: f64,
    pub point: Accuracy,
    pub contextual: Accuracy,
}

pub fn evaluate(net: &Cadnet, bundle: &Bundle, floor: f64, threshold: f64) -> IoResult<RunMetrics> {
    let xh = reconstruct(net, &bundle.test)?;
    let e = reconstruction_error(bundle.test.iter().zip(&xh).map(|(s, r)| (s.grid.values(), r.as_slice())))?;
    Ok(RunMetrics {
        reconstruction_error: e,
        point: accuracy_on(net, &bundle.point, floor, threshold)?,
        contextual: accuracy_on(net, &bundle.contextual, floor, threshold)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Training seeds per variant; each table row is the median over them.
    pub seeds: usize,
    pub threshold: f64,
    pub presence_floor: f64,
    pub output_bias: f64,
    pub skip_gain: f64,
    /// Worker threads for independent runs; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let mut train = TrainConfig { corruption_rate: 0.4, transplant_rate: 2.0, max_epochs: 12, ..TrainConfig::default() };
        train.optimizer.learning_rate = 0.005;
        SuiteConfig {
            data: DataConfig::default(),
            train,
            seeds: 3,
            threshold: DEFAULT_THRESHOLD,
            presence_floor: DEFAULT_PRESENCE_FLOOR,
            output_bias: -12.0,
            skip_gain: 20.0,
            threads: 0,
        }
    }
}

impl SuiteConfig {
    /// Parses a suite file as a patch over the defaults, so a partial `[train]` table keeps the
    /// suite's learning rate and epochs rather than the plain training defaults.
    pub fn from_toml_str(text: &str) -> IoResult<SuiteConfig> {
        fn merge(base: &mut toml::Table, patch: toml::Table) {
            for (k, v) in patch {
                match (base.get_mut(&k), v) {
                    (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
                    (_, v) => {
                        base.insert(k, v);
                    }
                }
            }
        }
        let patch: toml::Table = toml::from_str(text).map_err(|e| IoError::Format(e.to_string()))?;
        let mut base = toml::Table::try_from(SuiteConfig::default()).map_err(|e| IoError::Format(e.to_string()))?;
        merge(&mut base, patch);
        base.try_into().map_err(|e: toml::de::Error| IoError::Format(e.to_string()))
    }

    pub fn model_config(&self, world: &World, variant: Variant) -> ModelConfig {
        let spec = &world.spec;
        let mut m = ModelConfig::new(spec.grid_size, world.classes.len(), spec.frame_dim, spec.bounds).for_variant(variant);
        m.output_bias = self.output_bias;
        m.skip_gain = self.skip_gain;
        m
    }

    pub fn run_seeds(&self, seed: u64) -> Vec<u64> {
        let mut rng = substream(seed, data_streams::RUNS);
        (0..self.seeds).map(|_| rng.random()).collect()
    }

    fn workers(&self) -> usize {
        match self.threads {
            0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            n => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub diverged: Option<String>,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub seconds: f64,
}

/// Trains one variant on `bundle` and evaluates it.
pub fn run_one(
    world: &World,
    bundle: &Bundle,
    cfg: &SuiteConfig,
    variant: Variant,
    seed: u64,
    on_epoch: impl FnMut(&EpochLog),
) -> IoResult<(Cadnet, RunRecord)> {
    let t0 = Instant::now();
    let mut net = Cadnet::new(cfg.model_config(world, variant), init_seed(seed))?;
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    let outcome = train(&mut net, &bundle.train, &bundle.val, &tc, on_epoch)?;
    let metrics = evaluate(&net, bundle, cfg.presence_floor, cfg.threshold)?;
    let record = RunRecord {
        variant: variant.name().to_string(),
        seed,
        epochs: outcome.epochs,
        best_epoch: outcome.best_epoch,
        diverged: outcome.diverged,
        metrics: Some(metrics),
        error: None,
        checkpoint: None,
        seconds: t0.elapsed().as_secs_f64(),
    };
    Ok((net, record))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SuiteConfig,
    pub seed: u64,
    pub dataset_hashes: BTreeMap<String, String>,
    pub runs: Vec<RunRecord>,
    pub summary: EvalSummary,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// One row per variant: per-metric median over the successful runs.
pub fn summarise(variants: &[Variant], runs: &[RunRecord]) -> EvalSummary {
    let rows = variants
        .iter()
        .map(|v| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.variant == v.name()).collect();
            let ok: Vec<&RunMetrics> = mine.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let errors: Vec<String> = mine.iter().filter_map(|r| r.error.clone()).collect();
            let pick = |f: &dyn Fn(&RunMetrics) -> f64| median(ok.iter().map(|m| f(m)).collect());
            SummaryRow {
                variant: v.name().to_string(),
                reconstruction_error: pick(&|m| m.reconstruction_error),
                point_accuracy: pick(&|m| m.point.accuracy),
                point_fpr: pick(&|m| m.point.false_positive_rate),
                contextual_accuracy: pick(&|m| m.contextual.accuracy),
                failure: if errors.is_empty() { None } else { Some(errors.join("; ")) },
            }
        })
        .collect();
    EvalSummary { rows }
}

/// Trains every `(variant, seed)` pair on the same bundle and summarises.
/// `checkpoints` receives one file per run when given. Failed runs become marked rows.
pub fn run_experiment_suite(
    world: &World,
    bundle: &Bundle,
    cfg: &SuiteConfig,
    variants: &[Variant],
    seed: u64,
    checkpoints: Option<&Path>,
    log: &(dyn Fn(&str) + Sync),
) -> IoResult<RunManifest> {
    if let Some(dir) = checkpoints {
        std::fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.to_owned(), source })?;
    }
    let seeds = cfg.run_seeds(seed);
    let jobs: Vec<(Variant, usize, u64)> =
        variants.iter().flat_map(|&v| seeds.iter().enumerate().map(move |(i, &s)| (v, i, s))).collect();
    let results: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers().min(jobs.len()).max(1) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(variant, i, s)) = jobs.get(j) else { break };
                let tag = format!("{}#{i}", variant.name());
                let t0 = Instant::now();
                let res = run_one(world, bundle, cfg, variant, s, |e| {
                    log(&format!(
                        "{tag} epoch {} lr {} train {:.4} val {:.4}",
                        e.epoch, e.learning_rate, e.train_loss, e.val_loss
                    ))
                });
                let record = match res {
                    Ok((net, mut rec)) => {
                        if let Some(dir) = checkpoints {
                            let path = dir.join(format!("{}-{i}.ckpt", variant.name()));
                            match checkpoint::save(&net, &path) {
                                Ok(()) => rec.checkpoint = Some(path),
                                Err(e) => rec.error = Some(format!("checkpoint: {e}")),
                            }
                        }
                        if let Some(m) = &rec.metrics {
                            log(&format!(
                                "{tag} done in {:.0}s: E {:.4} point {:.1} (FPR {:.3}) contextual {:.1}",
                                rec.seconds, m.reconstruction_error, m.point.accuracy, m.point.false_positive_rate, m.contextual.accuracy
                            ));
                        }
                        rec
                    }
                    Err(e) => {
                        log(&format!("{tag} failed: {e}"));
                        RunRecord {
                            variant: variant.name().to_string(),
                            seed: s,
                            epochs: Vec::new(),
                            best_epoch: None,
                            diverged: None,
                            metrics: None,
                            error: Some(e.to_string()),
                            checkpoint: None,
                            seconds: t0.elapsed().as_secs_f64(),
                        }
                    }
                };
                results.lock().expect("no poisoned workers")[j] = Some(record);
            });
        }
    });
    let runs: Vec<RunRecord> = results.into_inner().expect("no poisoned workers").into_iter().flatten().collect();
    let summary = summarise(variants, &runs);
    Ok(RunManifest { config: cfg.clone(), seed, dataset_hashes: bundle.hashes()?, runs, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub description: String,
    /// `None` when a row needed for the check is missing or failed.
    pub passed: Option<bool>,
    pub detail: String,
}

/// The table-level ordering checks on a summary. Rows absent from the summary leave a check unevaluated.
pub fn check_orderings(summary: &EvalSummary) -> Vec<Criterion> {
    let get = |v: Variant, f: fn(&SummaryRow) -> Option<f64>| summary.row(v.name()).and_then(f);
    let e = |r: &SummaryRow| r.reconstruction_error;
    let pt = |r: &SummaryRow| r.point_accuracy;
    let fpr = |r: &SummaryRow| r.point_fpr;
    let cx = |r: &SummaryRow| r.contextual_accuracy;
    use Variant::*;
    let mut out = Vec::new();
    let mut add = |id: &str, description: &str, vals: Option<(bool, String)>| {
        let (passed, detail) = match vals {
            Some((p, d)) => (Some(p), d),
            None => (None, "rows missing".to_string()),
        };
        out.push(Criterion { id: id.into(), description: description.into(), passed, detail });
    };
    add(
        "A3",
        "full reconstruction error <= 0.05; wo-skip exceeds it by >= 0.10",
        (|| {
            let (f, w) = (get(Full, e)?, get(WoSkip, e)?);
            Some((f <= 0.05 && w - f >= 0.10, format!("full {f:.4}, wo-skip {w:.4}")))
        })(),
    );
    add(
        "A4",
        "full point accuracy >= 85 with FPR <= 0.10; wo-gps-time within 5 points",
        (|| {
            let (f, r, g) = (get(Full, pt)?, get(Full, fpr)?, get(WoGpsTime, pt)?);
            Some((f >= 85.0 && r <= 0.10 && (f - g).abs() <= 5.0, format!("full {f:.1} (FPR {r:.3}), wo-gps-time {g:.1}")))
        })(),
    );
    add(
        "A5",
        "contextual ordering: full >= 75, full - wo-gps-time >= 20, single-context ablations between, wo-frame below full and above their minimum",
        (|| {
            let (f, g, t, l, fr) = (get(Full, cx)?, get(WoGpsTime, cx)?, get(WoTime, cx)?, get(WoGps, cx)?, get(WoFrame, cx)?);
            let between = |v: f64| v > g && v < f;
            let ok = f >= 75.0 && f - g >= 20.0 && between(t) && between(l) && fr < f && fr > t.min(l);
            Some((ok, format!("full {f:.1}, wo-gps-time {g:.1}, wo-time {t:.1}, wo-gps {l:.1}, wo-frame {fr:.1}")))
        })(),
    );
    add(
        "A6",
        "wo-skip point accuracy >= 30 below full; wo-skip-c loses more contextual than point accuracy",
        (|| {
            let (fp, fc) = (get(Full, pt)?, get(Full, cx)?);
            let (sp, cp, cc) = (get(WoSkip, pt)?, get(WoSkipC, pt)?, get(WoSkipC, cx)?);
            let ok = fp - sp >= 30.0 && (fc - cc) > (fp - cp);
            Some((
                ok,
                format!("full point {fp:.1}, wo-skip point {sp:.1}; wo-skip-c drops point {:.1}, contextual {:.1}", fp - cp, fc - cc),
            ))
        })(),
    );
    add(
        "A7",
        "autoencoder contextual accuracy >= 20 below full",
        (|| {
            let (f, a) = (get(Full, cx)?, get(Autoencoder, cx)?);
            Some((f - a >= 20.0, format!("full {f:.1}, autoencoder {a:.1}")))
        })(),
    );
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub runs: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Wall-clock statistics of single-sample forward passes, after three warm-up passes.
pub fn timing_probe(net: &Cadnet, sample: &Sample, n_runs: usize) -> IoResult<TimingStats> {
    if n_runs == 0 {
        return Err(IoError::Format("timing probe needs at least one run".into()));
    }
    let input = BatchInput::from_samples(&[sample], &net.config)?;
    for _ in 0..3 {
        std::hint::black_box(net.reconstruct(&input)?);
    }
    let mut ms = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let t0 = Instant::now();
        std::hint::black_box(net.reconstruct(&input)?);
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean = ms.iter().sum::<f64>() / n_runs as f64;
    let var = ms.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n_runs as f64;
    Ok(TimingStats {
        runs: n_runs,
        mean_ms: mean,
        std_ms: var.sqrt(),
        min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: ms.iter().copied().fold(0.0, f64::max),
    })
}
