use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use geolatent::harness::{self, Dataset, MetricsRow, ProbeResult};
use geolatent::nets::{Checkpoint, EpochRecord, Model};
use geolatent::patchkit::{self, class_name, PreprocessOptions, Split, RELEVANT_CLASSES};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::{report, CliError};

type Result<T> = std::result::Result<T, CliError>;

const CHECKPOINT: &str = "checkpoint.bin";
const RESOLVED: &str = "config.resolved.toml";
const LOSSES: &str = "losses.csv";
const RUN_ROOT_ENV: &str = "GEOLATENT_RUN_ROOT";
const SAVE_EVERY: u64 = 10;

fn io(path: &Path, e: std::io::Error) -> CliError {
    geolatent::Error::io(path, e).into()
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io(path, e))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus directory (gets `tiles/` and `masks/`).
    #[arg(long)]
    out: PathBuf,
    /// Tiles per class.
    #[arg(long, default_value_t = 25)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let tiles = patchkit::synth_corpus(a.n, harness::TILE, &mut ChaCha8Rng::seed_from_u64(a.seed));
    patchkit::write_corpus(&a.out, &tiles)?;
    println!("wrote {} tiles to {}", tiles.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Corpus directory with `tiles/` and `masks/`.
    corpus: PathBuf,
    /// Manifest path (default `<corpus>/manifest.jsonl`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = patchkit::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Per-class record cap.
    #[arg(long, default_value_t = 8000)]
    cap: usize,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Comma-separated source ids held out as the test split.
    #[arg(long, value_delimiter = ',')]
    test_sources: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let opts = PreprocessOptions {
        threshold: a.threshold,
        cap: a.cap,
        val_fraction: a.val_fraction,
        test_sources: a.test_sources.into_iter().collect::<BTreeSet<_>>(),
        seed: a.seed,
    };
    let (manifest, rep) = patchkit::preprocess_corpus(&a.corpus, &opts)?;
    let out = a.out.unwrap_or_else(|| a.corpus.join("manifest.jsonl"));
    patchkit::write_manifest(&out, &manifest)?;
    if manifest.records.is_empty() {
        eprintln!("warning: no tile passed the relevance threshold {}; manifest is empty", a.threshold);
    }
    println!("scanned {} tiles, kept {}", rep.scanned, manifest.records.len());
    println!("| class | train | val | test |\n|---|---|---|---|");
    for c in RELEVANT_CLASSES {
        let count = |s| manifest.split(s).filter(|r| r.label == c).count();
        println!("| {} | {} | {} | {} |", class_name(c), count(Split::Train), count(Split::Val), count(Split::Test));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run root directory.
    #[arg(long, env = RUN_ROOT_ENV, default_value = "runs")]
    out: PathBuf,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    resume: bool,
    /// Stop after this many epochs, leaving a resumable checkpoint.
    #[arg(long)]
    stop_after: Option<u64>,
}

fn losses_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,reconstruction,regularization,spread,total\n");
    for r in history {
        s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.reconstruction, r.regularization, r.spread, r.total));
    }
    s
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let manifest = patchkit::read_manifest(&cfg.data.manifest)?;
    let data = Dataset::load(&manifest, &cfg.corpus_root(), split, cfg.model.channels)?;
    if data.is_empty() {
        return Err(geolatent::Error::EmptySplit(format!(
            "{} split of {}",
            split.as_str(),
            cfg.data.manifest.display()
        ))
        .into());
    }
    Ok(data)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let parent = match a.config.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let base = std::fs::canonicalize(parent).map_err(|e| io(parent, e))?;
    let mut cfg = RunConfig::load(&a.config)?.resolve(&base);
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let dir = cfg.run_dir(&a.out);
    let ck_path = dir.join(CHECKPOINT);
    let mut current = if a.resume {
        if !ck_path.exists() {
            return Err(CliError::Usage(format!("--resume: no checkpoint in {}", dir.display())));
        }
        Some(Checkpoint::load(&ck_path)?)
    } else {
        None
    };
    let data = load_split(&cfg, Split::Train)?;
    let norm = match &current {
        Some(ck) => ck.header.norm.clone(),
        None => data.norm_stats(),
    };
    write(&dir.join(RESOLVED), cfg.to_toml())?;

    let target = a.stop_after.unwrap_or(cfg.train.epochs).min(cfg.train.epochs);
    let mut done = current.as_ref().map_or(0, |c| c.header.history.len() as u64);
    if current.is_none() || done < target {
        loop {
            let stop = (done + SAVE_EVERY).min(target);
            let ck = harness::train_until(&cfg.model, &cfg.train, &data, &norm, current.as_ref(), stop, |r| {
                eprintln!(
                    "epoch {}/{} total {:.4} reconstruction {:.4}",
                    r.epoch, cfg.train.epochs, r.total, r.reconstruction
                );
            })?;
            ck.save(&ck_path)?;
            write(&dir.join(LOSSES), losses_csv(&ck.header.history))?;
            done = ck.header.history.len() as u64;
            current = Some(ck);
            if done >= target {
                break;
            }
        }
    }
    println!("{}", dir.display());
    Ok(())
}

struct Run {
    dir: PathBuf,
    config: RunConfig,
    checkpoint: Checkpoint,
}

impl Run {
    fn open(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join(RESOLVED))?;
        let ck_path = dir.join(CHECKPOINT);
        if !ck_path.exists() {
            return Err(CliError::Usage(format!("no checkpoint in {}", dir.display())));
        }
        let checkpoint = Checkpoint::load(&ck_path)?;
        Ok(Self { dir: dir.to_path_buf(), config, checkpoint })
    }

    fn model(&self) -> Result<Model> {
        Ok(self.checkpoint.restore_model()?)
    }

    fn row(&self, model: String, split: Split, metric: &str, value: f64) -> MetricsRow {
        MetricsRow {
            model,
            latent_dim: self.checkpoint.header.config.latent_dim,
            split: split.as_str().to_string(),
            metric: metric.to_string(),
            value,
            seed: self.checkpoint.header.seed,
            wall_time: harness::wall_clock(),
        }
    }
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse::<Split>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    run: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Metrics log to append to (default `<run>/metrics.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let run = Run::open(&a.run)?;
    let data = load_split(&run.config, a.split)?;
    let mut model = run.model()?;
    let value = harness::eval_reconstruction(&mut model, &data, &run.checkpoint.header.norm)?;
    let row = run.row(model.config().tag(), a.split, "reconstruction", value);
    harness::append_metrics(&a.out.unwrap_or_else(|| run.dir.join("metrics.csv")), &[row])?;
    println!("reconstruction {} {value}", a.split.as_str());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    run: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Overrides `probe.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train the supervised CNN baseline instead of a latent probe.
    #[arg(long)]
    baseline: bool,
}

fn confusion_csv(result: &ProbeResult) -> String {
    let mut s = String::from("true");
    for c in RELEVANT_CLASSES {
        s.push_str(&format!(",{}", class_name(c)));
    }
    s.push('\n');
    for (c, row) in RELEVANT_CLASSES.iter().zip(&result.confusion) {
        s.push_str(class_name(*c));
        for n in row {
            s.push_str(&format!(",{n}"));
        }
        s.push('\n');
    }
    s
}

pub fn probe(a: ProbeArgs) -> Result<()> {
    let run = Run::open(&a.run)?;
    let mut pcfg = run.config.probe.clone();
    if let Some(s) = a.seed {
        pcfg.seed = s;
    }
    let train = load_split(&run.config, Split::Train)?;
    let test = load_split(&run.config, a.split)?;
    let norm = &run.checkpoint.header.norm;
    let cfg = &run.checkpoint.header.config;
    let (result, tag, stem) = if a.baseline {
        let (res, _) = harness::cnn_baseline(cfg, &train, &test, norm, &pcfg)?;
        let tag = if cfg.equivariant { "ECNN" } else { "CNN" };
        (res, tag.to_string(), "cnn")
    } else {
        let mut model = run.model()?;
        let (res, mut p) = harness::linear_probe(&mut model, &train, &test, norm, &pcfg)?;
        p.save(&run.dir.join("probe.json"))?;
        (res, cfg.tag(), "probe")
    };
    write(&run.dir.join(format!("{stem}_confusion.csv")), confusion_csv(&result))?;
    let row = run.row(tag, a.split, &format!("{stem}_accuracy"), result.accuracy);
    harness::append_metrics(&a.out.unwrap_or_else(|| run.dir.join("metrics.csv")), &[row])?;
    println!("{stem}_accuracy {} {} (n={})", a.split.as_str(), result.accuracy, result.n_test);
    Ok(())
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    run: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (default `<run>/samples`).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let run = Run::open(&a.run)?;
    let mut model = run.model()?;
    let h = &run.checkpoint.header;
    let tiles = harness::sample_grid(
        &mut model,
        &h.norm,
        a.n,
        h.latent_bounds.as_ref(),
        &mut ChaCha8Rng::seed_from_u64(a.seed),
    )?;
    let out = a.out.unwrap_or_else(|| run.dir.join("samples"));
    harness::write_sample_grid(&out, &tiles)?;
    println!("{} samples in {}", tiles.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    run: PathBuf,
    /// First endpoint image.
    from: PathBuf,
    /// Second endpoint image.
    to: PathBuf,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    /// Output directory (default `<run>/interp`).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn interp(a: InterpArgs) -> Result<()> {
    let run = Run::open(&a.run)?;
    let mut model = run.model()?;
    let norm = &run.checkpoint.header.norm;
    let images = [patchkit::read_rgb(&a.from)?, patchkit::read_rgb(&a.to)?];
    let ends = Dataset::from_images(&images, vec![0, 0], vec![], model.config().channels)?;
    let batch = ends.all(norm);
    let originals = [
        harness::frame_to_image(batch.item(0), ends.channels, norm),
        harness::frame_to_image(batch.item(1), ends.channels, norm),
    ];
    let probe_path = run.dir.join("probe.json");
    let mut probe = if probe_path.exists() { Some(harness::Probe::load(&probe_path)?) } else { None };
    let strip =
        harness::interpolate(&mut model, norm, &batch, [&originals[0], &originals[1]], a.steps, probe.as_mut())?;
    let out = a.out.unwrap_or_else(|| run.dir.join("interp"));
    harness::write_strip(&out, &strip)?;
    println!("{} frames in {}", strip.frames.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct Export3dArgs {
    run: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Output CSV (default `<run>/latent3d.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn export3d(a: Export3dArgs) -> Result<()> {
    let run = Run::open(&a.run)?;
    let mut model = run.model()?;
    let data = load_split(&run.config, a.split)?;
    let rows = harness::export_latent_3d(&mut model, &data, &run.checkpoint.header.norm, a.n)?;
    let out = a.out.unwrap_or_else(|| run.dir.join("latent3d.csv"));
    harness::write_latent_csv(&out, &rows)?;
    println!("{} points in {}", rows.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV files.
    logs: Vec<PathBuf>,
    /// Directory for `report.md` and one CSV per table.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    let mut bad = 0;
    for p in &a.logs {
        let text = std::fs::read_to_string(p).map_err(|e| io(p, e))?;
        let (r, b) = harness::read_metrics(&text);
        rows.extend(r);
        bad += b;
    }
    if bad > 0 {
        eprintln!("warning: skipped {bad} malformed rows");
    }
    let tables = report::pivot(&rows);
    let md = if tables.is_empty() {
        report::empty_markdown()
    } else {
        tables.iter().map(report::Table::markdown).collect::<Vec<_>>().join("\n")
    };
    if let Some(dir) = &a.out {
        write(&dir.join("report.md"), &md)?;
        for t in &tables {
            write(&dir.join(format!("{}.csv", t.file_stem())), t.csv())?;
        }
    }
    print!("{md}");
    Ok(())
}
