use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cadnet::checkpoint;
use cadnet::dataset::open_dataset;
use cadnet::harness::{
    check_orderings, evaluate, read_json, run_experiment_suite, run_one, summarise, write_json, Bundle, DataConfig,
    DataManifest, RunManifest, SuiteConfig, MANIFEST_FILE,
};
use cadnet::scenario::{load_rulebook, load_scenario};
use cadnet_core::model::{gradcheck_network, toy_config, Variant};
use cadnet_core::scoring::{score, DEFAULT_PRESENCE_FLOOR};
use cadnet_core::world::World;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cadnet", version, about = "Context-conditioned anomaly detection on detector grids")]
struct Cli {
    /// Random seed (required by generate, train and ablate).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scenario file for generate, experiment config for train/ablate.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train/val/test splits and the two evaluation sets.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rulebook: Option<PathBuf>,
        #[arg(long)]
        normal: Option<usize>,
        #[arg(long)]
        point: Option<usize>,
        #[arg(long)]
        contextual: Option<usize>,
    },
    /// Train one variant on a generated data directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score samples from a dataset file, one JSON report per line.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a generated data directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Train every variant over several seeds and print the comparison table.
    Ablate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of rows.
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<String>>,
        #[arg(long)]
        rulebook: Option<PathBuf>,
        #[arg(long)]
        normal: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients on a 4x4x4 network.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct ScoringArgs {
    #[arg(long, default_value_t = 0.6)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_PRESENCE_FLOOR)]
    presence_floor: f64,
}

fn need_seed(seed: Option<u64>, cmd: &str) -> Result<u64> {
    seed.with_context(|| format!("{cmd} requires --seed"))
}

fn suite_config(path: Option<&Path>) -> Result<SuiteConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SuiteConfig::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(SuiteConfig::default()),
    }
}

fn parse_variant(name: &str) -> Result<Variant> {
    Variant::parse(name).with_context(|| {
        let known: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant {name}; expected one of {}", known.join(", "))
    })
}

fn check_threshold(s: &ScoringArgs) -> Result<()> {
    if !s.threshold.is_finite() || !s.presence_floor.is_finite() {
        bail!("--threshold and --presence-floor must be finite");
    }
    Ok(())
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Generate { out, rulebook, normal, point, contextual } => {
            let seed = need_seed(cli.seed, "generate")?;
            let spec = load_scenario(cli.config.as_deref())?;
            let rules = load_rulebook(rulebook.as_deref())?;
            let scenario = spec.name.clone();
            let world = World::new(spec)?;
            let d = DataConfig::default();
            let data = DataConfig {
                normal: normal.unwrap_or(d.normal),
                point: point.unwrap_or(d.point),
                contextual: contextual.unwrap_or(d.contextual),
                ..d
            };
            let bundle = Bundle::generate(&world, &rules, &data, seed)?;
            let files = bundle.write(&out)?;
            for w in &bundle.warnings {
                log(&format!("warning: {w}"));
            }
            let manifest = DataManifest { seed, scenario, data, files, warnings: bundle.warnings.clone() };
            write_json(&out.join(MANIFEST_FILE), &manifest)?;
            println!(
                "wrote {} train, {} val, {} test, {} point, {} contextual samples to {}",
                bundle.train.len(),
                bundle.val.len(),
                bundle.test.len(),
                bundle.point.len(),
                bundle.contextual.len(),
                out.display()
            );
        }
        Cmd::Train { data, out, variant, epochs } => {
            let seed = need_seed(cli.seed, "train")?;
            let variant = parse_variant(&variant)?;
            let mut cfg = suite_config(cli.config.as_deref())?;
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            cfg.train.validate()?;
            let dm: DataManifest = read_json(&data.join(MANIFEST_FILE))?;
            let bundle = Bundle::read(&data, Some(&dm.files))?;
            let world = World::new(load_scenario(None)?)?;
            if bundle.header.s != world.spec.grid_size || bundle.header.f != world.spec.frame_dim {
                bail!("data directory does not match the default scenario extents");
            }
            let (net, mut rec) = run_one(&world, &bundle, &cfg, variant, seed, |e| {
                log(&format!("epoch {} lr {} train {:.4} val {:.4}", e.epoch, e.learning_rate, e.train_loss, e.val_loss))
            })?;
            checkpoint::save(&net, &out)?;
            rec.checkpoint = Some(out.clone());
            if let Some(d) = &rec.diverged {
                log(&format!("warning: {d}; kept the last good parameters"));
            }
            let summary = summarise(&[variant], std::slice::from_ref(&rec));
            print!("{}", summary.to_table());
            let manifest = RunManifest { config: cfg, seed, dataset_hashes: dm.files, runs: vec![rec], summary };
            write_json(&out.with_extension("manifest.json"), &manifest)?;
        }
        Cmd::Infer { checkpoint: ck, input, scoring, out } => {
            check_threshold(&scoring)?;
            let net = checkpoint::load(&ck)?;
            let reader = open_dataset(&input)?;
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(std::io::stdout().lock()),
            };
            let mut sink = BufWriter::new(sink);
            let mut failures = 0usize;
            for (i, rec) in reader.enumerate() {
                let result = rec.map_err(anyhow::Error::from).and_then(|s| {
                    let xh = cadnet::harness::reconstruct(&net, std::slice::from_ref(&s))?;
                    let (g, c) = (net.config.grid_size, net.config.classes);
                    Ok(score(s.id, s.grid.values(), &xh[0], g, c, scoring.presence_floor, scoring.threshold)?)
                });
                match result {
                    Ok(report) => {
                        serde_json::to_writer(&mut sink, &report)?;
                        sink.write_all(b"\n")?;
                    }
                    Err(e) => {
                        failures += 1;
                        log(&format!("record {}: {e:#}", i + 1));
                    }
                }
            }
            sink.flush()?;
            if failures > 0 {
                log(&format!("{failures} records could not be scored"));
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Eval { checkpoint: ck, data, scoring } => {
            check_threshold(&scoring)?;
            let net = checkpoint::load(&ck)?;
            let dm: DataManifest = read_json(&data.join(MANIFEST_FILE))?;
            let bundle = Bundle::read(&data, Some(&dm.files))?;
            let m = evaluate(&net, &bundle, scoring.presence_floor, scoring.threshold)?;
            println!("reconstruction error {:.4}", m.reconstruction_error);
            println!(
                "point accuracy {:.1}% ({} of {}), false positive rate {:.3}",
                m.point.accuracy, m.point.hits, m.point.injected, m.point.false_positive_rate
            );
            println!("contextual accuracy {:.1}% ({} of {})", m.contextual.accuracy, m.contextual.hits, m.contextual.injected);
        }
        Cmd::Ablate { out, rows, rulebook, normal } => {
            let seed = need_seed(cli.seed, "ablate")?;
            let mut cfg = suite_config(cli.config.as_deref())?;
            if let Some(n) = normal {
                cfg.data.normal = n;
            }
            cfg.train.validate()?;
            let variants = match rows {
                Some(r) => r.iter().map(|n| parse_variant(n.trim())).collect::<Result<Vec<_>>>()?,
                None => Variant::ALL.to_vec(),
            };
            let world = World::new(load_scenario(None)?)?;
            let rules = load_rulebook(rulebook.as_deref())?;
            let bundle = Bundle::generate(&world, &rules, &cfg.data, seed)?;
            for w in &bundle.warnings {
                log(&format!("warning: {w}"));
            }
            let ckdir = out.as_ref().map(|o| o.join("checkpoints"));
            let manifest = run_experiment_suite(&world, &bundle, &cfg, &variants, seed, ckdir.as_deref(), &log)?;
            let table = manifest.summary.to_table();
            print!("{table}");
            let criteria = check_orderings(&manifest.summary);
            let mut failed = false;
            for c in &criteria {
                let verdict = match c.passed {
                    Some(true) => "PASS",
                    Some(false) => {
                        failed = true;
                        "FAIL"
                    }
                    None => "SKIP",
                };
                println!("{verdict} {}: {} ({})", c.id, c.description, c.detail);
            }
            failed |= manifest.summary.rows.iter().any(|r| r.failure.is_some());
            if let Some(o) = &out {
                std::fs::write(o.join("table.txt"), &table).with_context(|| format!("writing {}", o.display()))?;
                write_json(&o.join("run_manifest.json"), &manifest)?;
            }
            if failed {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Gradcheck { step, tolerance } => {
            let t0 = std::time::Instant::now();
            let report = gradcheck_network(toy_config(), 7, step, tolerance)?;
            for p in &report.params {
                println!("{:<24} {:>6} checked  max rel. error {:.2e}  {}", p.name, p.checked, p.max_error, if p.passed == p.checked { "ok" } else { "FAIL" });
            }
            println!(
                "{:.4}% of {} scalars within {tolerance:e} in {:.1}s",
                100.0 * report.pass_fraction(),
                report.checked(),
                t0.elapsed().as_secs_f64()
            );
            if report.pass_fraction() < 0.999 {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
