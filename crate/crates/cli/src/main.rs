use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use yformer::data::{
    find_dataset, ingest_csv, synth_series, CsvOptions, Dataset, DatasetSpec, Frequency, RawSeries, SplitSpec,
    SynthKind, WindowSpec,
};
use yformer::harness::gradcheck::{self, SuiteGroup};
use yformer::harness::{
    ablate, alpha_distribution, baselines, evaluate, find_presets, fit_model_config, grid_search, preset, train,
    Grid, ResultStore, Setting, TrainConfig,
};
use yformer::model::{load_checkpoint, save_checkpoint, ModelConfig};

#[derive(Parser)]
#[command(name = "yformer", version, about = "Far-horizon time-series forecasting with a Y-shaped sparse transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and persist its record and checkpoint.
    Train(TrainCmd),
    /// Exhaustive search over learning rate, weight decay, alpha and depth.
    Grid(GridCmd),
    /// Compare the full model, alpha = 0 and the skipless variant.
    Ablate(AblateCmd),
    /// Finite-difference checks of every operation, attention layer and block.
    Gradcheck(GradcheckCmd),
    /// Write a seeded synthetic series as CSV.
    Synth(SynthCmd),
    /// Score a saved checkpoint on the test split.
    Eval(EvalCmd),
    /// List the published optimal hyperparameters.
    Presets(PresetsCmd),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset name in the manifest.
    #[arg(long)]
    dataset: Option<String>,
    /// TOML manifest; defaults to $YFORMER_MANIFEST.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// CSV file with a leading date column.
    #[arg(long, conflicts_with_all = ["dataset", "manifest", "synth"])]
    csv: Option<PathBuf>,
    /// Generate the series instead of reading one.
    #[arg(long, value_name = "KIND", conflicts_with_all = ["dataset", "manifest"])]
    synth: Option<SynthKind>,
    #[arg(long, default_value_t = 2000)]
    synth_length: usize,
    #[arg(long, default_value_t = 0.1)]
    synth_sigma: f64,
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
    /// Sampling interval for CSV input, e.g. 1h or 15min.
    #[arg(long)]
    frequency: Option<Frequency>,
    #[arg(long)]
    forward_fill: bool,
    /// Forecast column for the univariate setting.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value = "univariate")]
    setting: Setting,
    /// `months:TRAIN,VAL,TEST` or `ratio:TRAIN,VAL`.
    #[arg(long, value_parser = parse_split)]
    split: Option<SplitSpec>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 48)]
    history: usize,
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Encoder blocks per branch.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = yformer::attention::DEFAULT_SAMPLING_FACTOR)]
    sampling_factor: f64,
    /// Reconstruction weight.
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    #[arg(long)]
    no_skips: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_train_batches: Option<usize>,
    #[arg(long)]
    max_eval_windows: Option<usize>,
    /// Report test metrics in raw units.
    #[arg(long)]
    destandardize: bool,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Take history, lr, weight decay, alpha, batch size and depth from the
    /// published table for this dataset, horizon and setting.
    #[arg(long)]
    preset: bool,
    #[arg(long, default_value = "Yformer")]
    variant: String,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Defaults to OUT/model.ckpt.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct GridCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_values_t = Grid::default().learning_rates)]
    lrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = Grid::default().weight_decays)]
    weight_decays: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = Grid::default().alphas)]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = Grid::default().depths)]
    depths: Vec<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Overrides --horizon.
    #[arg(long, value_delimiter = ',', default_values_t = [24, 48])]
    horizons: Vec<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long, default_value_t = gradcheck::DEFAULT_INSTANCES)]
    instances: usize,
    /// Restrict to ops, attention or blocks; repeatable.
    #[arg(long, value_parser = parse_group)]
    group: Vec<SuiteGroup>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long, default_value = "sum-of-sines")]
    kind: SynthKind,
    #[arg(long, default_value_t = 2000)]
    length: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long)]
    max_eval_windows: Option<usize>,
    #[arg(long)]
    destandardize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PresetsCmd {
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    setting: Option<Setting>,
    #[arg(long)]
    json: bool,
}

fn parse_split(s: &str) -> std::result::Result<SplitSpec, String> {
    let (kind, rest) = s.split_once(':').ok_or("expected months:A,B,C or ratio:A,B")?;
    let parts: Vec<&str> = rest.split(',').collect();
    match (kind, parts.as_slice()) {
        ("months", [a, b, c]) => {
            let n = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("{x:?}: {e}"));
            Ok(SplitSpec::Months {
                train: n(a)?,
                val: n(b)?,
                test: n(c)?,
            })
        }
        ("ratio", [a, b]) => {
            let f = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
            Ok(SplitSpec::Ratio { train: f(a)?, val: f(b)? })
        }
        _ => Err(format!("bad split {s:?}; expected months:A,B,C or ratio:A,B")),
    }
}

fn parse_group(s: &str) -> std::result::Result<SuiteGroup, String> {
    match s {
        "ops" => Ok(SuiteGroup::Ops),
        "attention" => Ok(SuiteGroup::Attention),
        "blocks" => Ok(SuiteGroup::Blocks),
        _ => Err(format!("unknown group {s:?}; expected ops, attention or blocks")),
    }
}

/// A series plus the defaults that come with its source.
struct Source {
    name: String,
    series: RawSeries,
    target: String,
    split: SplitSpec,
}

impl DataArgs {
    fn load(&self) -> Result<Source> {
        let mut src = if let Some(kind) = self.synth {
            Source {
                name: "synthetic".into(),
                series: synth_series(kind, self.synth_length, self.synth_sigma, self.synth_seed)?,
                target: "value".into(),
                split: SplitSpec::SYNTHETIC,
            }
        } else if let Some(path) = &self.csv {
            let opts = CsvOptions {
                forward_fill: self.forward_fill,
                frequency: self.frequency,
            };
            let series = ingest_csv(path, opts)?;
            let target = if series.names.iter().any(|n| n == "OT") {
                "OT".to_string()
            } else {
                series.names.last().cloned().context("CSV has no value columns")?
            };
            Source {
                name: path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned()),
                series,
                target,
                split: SplitSpec::SYNTHETIC,
            }
        } else {
            let m = find_dataset(self.manifest.as_deref(), self.dataset.as_deref())?;
            Source {
                series: m.load_series()?,
                name: m.name,
                target: m.target,
                split: m.split,
            }
        };
        if let Some(t) = &self.target {
            src.target = t.clone();
        }
        if let Some(s) = &self.split {
            src.split = s.clone();
        }
        if self.setting == Setting::Univariate {
            src.series = src.series.select(&[src.target.as_str()])?;
        }
        Ok(src)
    }

    fn spec(&self, src: &Source, history: usize, horizon: usize) -> DatasetSpec {
        DatasetSpec {
            targets: match self.setting {
                Setting::Univariate => vec![src.target.clone()],
                Setting::Multivariate => vec![],
            },
            split: src.split.clone(),
            window: WindowSpec::new(history, horizon),
        }
    }
}

impl ModelArgs {
    fn template(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.heads,
            depth: self.depth,
            sampling_factor: self.sampling_factor,
            alpha: self.alpha,
            disable_skips: self.no_skips,
            ..ModelConfig::new(self.history, self.horizon, 0, 1)
        }
    }
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            max_train_batches: self.max_train_batches,
            max_eval_windows: self.max_eval_windows,
            destandardize: self.destandardize,
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn run_train(cmd: TrainCmd) -> Result<()> {
    let src = cmd.data.load()?;
    let mut template = cmd.model.template();
    let mut tc = cmd.train.config();
    if cmd.preset {
        let p = preset(&src.name, cmd.model.horizon, cmd.data.setting)?;
        template.history = p.history;
        template.alpha = p.alpha;
        template.depth = p.encoder_blocks;
        tc.learning_rate = p.learning_rate;
        tc.weight_decay = p.weight_decay;
        tc.batch_size = p.batch_size;
    }
    let ds = Dataset::prepare(&src.series, &cmd.data.spec(&src, template.history, template.horizon))?;
    let cfg = fit_model_config(&ds, &template);
    let store = ResultStore::create(&cmd.out)?;
    let outcome = match train(&cfg, &tc, &ds, &src.name, &cmd.variant) {
        Ok(o) => o,
        Err(yformer::Error::Diverged(record)) => {
            store.append(&record)?;
            print_json(&record)?;
            bail!("training diverged in epoch {}", record.diverged_epoch.unwrap_or_default());
        }
        Err(e) => return Err(e.into()),
    };
    let run = store.append(&outcome.record)?;
    let ckpt = cmd.checkpoint.unwrap_or_else(|| cmd.out.join("model.ckpt"));
    save_checkpoint(&outcome.model, &ckpt)?;
    print_json(&outcome.record)?;
    eprintln!(
        "test mse {:.6} mae {:.6} (best epoch {}); record {}, checkpoint {}",
        outcome.record.test.mse,
        outcome.record.test.mae,
        outcome.record.best_epoch,
        run.display(),
        ckpt.display()
    );
    Ok(())
}

fn run_grid(cmd: GridCmd) -> Result<()> {
    let src = cmd.data.load()?;
    let ds = Dataset::prepare(&src.series, &cmd.data.spec(&src, cmd.model.history, cmd.model.horizon))?;
    let cfg = fit_model_config(&ds, &cmd.model.template());
    let grid = Grid {
        learning_rates: cmd.lrs,
        weight_decays: cmd.weight_decays,
        alphas: cmd.alphas,
        depths: cmd.depths,
    };
    let store = ResultStore::create(&cmd.out)?;
    let result = grid_search(&grid, &cfg, &cmd.train.config(), &ds, &src.name, Some(&store))?;
    store.write_summary(&result.records)?;
    let best = result.best_record().context("every grid cell diverged")?;
    print_json(best)?;
    for (horizon, counts) in alpha_distribution(std::slice::from_ref(best)) {
        for (alpha, n) in counts {
            eprintln!("horizon {horizon}: winning alpha {alpha} ({n})");
        }
    }
    eprintln!(
        "{} runs; best {} with val loss {:.6}",
        result.records.len(),
        best.variant,
        best.best_val_loss.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_ablate(cmd: AblateCmd) -> Result<()> {
    let src = cmd.data.load()?;
    let spec = cmd.data.spec(&src, cmd.model.history, cmd.model.horizon);
    let store = ResultStore::create(&cmd.out)?;
    let report = ablate(
        &src.series,
        &spec,
        &cmd.horizons,
        &cmd.model.template(),
        &cmd.train.config(),
        &src.name,
        Some(&store),
    )?;
    println!("variant,horizon,mse,mae,parameters");
    for row in &report.rows {
        println!("{},{},{},{},{}", row.variant, row.horizon, row.mse, row.mae, row.parameter_count);
    }
    Ok(())
}

fn run_gradcheck(cmd: GradcheckCmd) -> Result<bool> {
    let report = gradcheck::run_suite(&cmd.group, cmd.instances)?;
    if cmd.json {
        print_json(&report)?;
    } else {
        for c in &report.cases {
            println!(
                "{} {:?}/{}: {} instances, {} entries, max rel err {:.2e}",
                if c.passed { "ok  " } else { "FAIL" },
                c.group,
                c.name,
                c.instances,
                c.checked,
                c.max_relative_error
            );
        }
        println!("{:.1}s", report.seconds);
    }
    Ok(report.passed())
}

fn run_synth(cmd: SynthCmd) -> Result<()> {
    let series = synth_series(cmd.kind, cmd.length, cmd.sigma, cmd.seed)?;
    match &cmd.out {
        Some(path) => series.save_csv(path)?,
        None => series.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn run_eval(cmd: EvalCmd) -> Result<()> {
    let model = load_checkpoint(&cmd.checkpoint)?;
    let src = cmd.data.load()?;
    let ds = Dataset::prepare(&src.series, &cmd.data.spec(&src, model.cfg.history, model.cfg.horizon))?;
    let geometry = ds.model_config();
    if (geometry.predictors, geometry.targets, geometry.time_features)
        != (model.cfg.predictors, model.cfg.targets, model.cfg.time_features)
    {
        bail!(
            "{} expects {} predictors, {} targets and {} time features; the data has {}, {} and {}",
            cmd.checkpoint.display(),
            model.cfg.predictors,
            model.cfg.targets,
            model.cfg.time_features,
            geometry.predictors,
            geometry.targets,
            geometry.time_features
        );
    }
    let metrics = evaluate(&model, &ds, &ds.test, cmd.batch_size, cmd.max_eval_windows, cmd.seed, cmd.destandardize)?;
    let naive = baselines(&ds, &ds.test, cmd.max_eval_windows, cmd.destandardize)?;
    print_json(&serde_json::json!({
        "checkpoint": cmd.checkpoint,
        "dataset": src.name,
        "test": metrics,
        "repeat_last": naive.repeat_last,
        "train_mean": naive.train_mean,
    }))
}

fn run_presets(cmd: PresetsCmd) -> Result<()> {
    let rows = find_presets(cmd.dataset.as_deref(), cmd.horizon, cmd.setting);
    if rows.is_empty() {
        bail!("no preset matches");
    }
    for p in rows {
        if cmd.json {
            print_json(p)?;
        } else {
            println!(
                "{} {} horizon {}: history {}, lr {}, weight decay {}, alpha {}, batch {}, encoder blocks {}",
                p.dataset, p.setting, p.horizon, p.history, p.learning_rate, p.weight_decay, p.alpha, p.batch_size, p.encoder_blocks
            );
        }
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => c.checkpoint.as_deref().map_or(Ok(()), ensure_parent).and_then(|_| run_train(c)),
        Command::Grid(c) => run_grid(c),
        Command::Ablate(c) => run_ablate(c),
        Command::Gradcheck(c) => match run_gradcheck(c) {
            Ok(true) => Ok(()),
            Ok(false) => Err(anyhow::anyhow!("gradient check failed")),
            Err(e) => Err(e),
        },
        Command::Synth(c) => c.out.as_deref().map_or(Ok(()), ensure_parent).and_then(|_| run_synth(c)),
        Command::Eval(c) => run_eval(c),
        Command::Presets(c) => run_presets(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
