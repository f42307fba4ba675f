//! The `dsnet` command line: scene synthesis, training, evaluation, sweeps
//! and exports.

pub mod config;
pub mod map;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{self, LabelRaster, PatchSet, SceneSpec, SmoothingDomain, Split, SplitRule};
use crate::error::{Error, Result};
use crate::experiment::{self, Dataset, SweepParam};
use crate::model::{DecoderKind, DsnetConfig, Precision, ReluPlacement};
use crate::tensor::{checkpoint, ParamStore, Scalar};
use crate::train::{self, Schedule};

pub use config::{RunConfig, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "dsnet", version, about = "Dual-branch hyperspectral unmixing and classification")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for synthesis, splitting, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Zero wall-clock fields in logs so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Floating-point width of training and inference.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    pub precision: Option<String>,
    /// TOML or JSON configuration, or a run manifest to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled scene.
    Synth(SynthArgs),
    /// Train a network on a labeled scene.
    Train(TrainArgs),
    /// Score a checkpoint on the test split and emit a classification map.
    Eval(EvalArgs),
    /// Train and score a grid of configurations.
    Sweep(SweepArgs),
    /// Write per-pixel abundance maps of the whole scene.
    ExportAbundance(ExportAbundanceArgs),
    /// Write per-pixel class features as CSV.
    ExportFeatures(ExportFeaturesArgs),
}

fn parse_size(text: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = text.split_once(['x', 'X']).ok_or("expected ROWSxCOLS")?;
    let n = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("`{s}` is not a count"));
    Ok((n(r)?, n(c)?))
}

/// A number, or `none`/`inf` for no value.
#[derive(Debug, Clone, Copy)]
pub struct Maybe(pub Option<f64>);

fn parse_optional(text: &str) -> std::result::Result<Maybe, String> {
    match text {
        "none" | "inf" => Ok(Maybe(None)),
        t => t.parse().map(|v| Maybe(Some(v))).map_err(|_| format!("`{t}` is not a number")),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub bands: Option<usize>,
    /// Material count, which is also the class count.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Scene extent as ROWSxCOLS.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
    /// Signal-to-noise ratio in dB, or `inf` for a noiseless scene.
    #[arg(long, value_parser = parse_optional)]
    pub snr: Option<Maybe>,
    /// Gaussian smoothing scale of the abundance fields, in pixels.
    #[arg(long)]
    pub smoothness: Option<f64>,
    #[arg(long, value_enum)]
    pub smoothing: Option<SmoothingArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bilinear interaction strength.
    #[arg(long)]
    pub nonlinear: Option<f64>,
    /// Dominant-abundance threshold for labeling, or `none` to label all.
    #[arg(long, value_parser = parse_optional)]
    pub purity: Option<Maybe>,
    /// Endmember CSV with one row per band and one column per material.
    #[arg(long)]
    pub endmembers: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SmoothingArg {
    Log,
    Linear,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding `cube.hdr/raw` and `labels.hdr/raw`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub cube: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

impl DataArgs {
    fn cube_path(&self) -> Result<PathBuf> {
        self.cube
            .clone()
            .or_else(|| self.data.as_ref().map(|d| d.join("cube.hdr")))
            .ok_or_else(|| Error::Config("give --data or --cube".into()))
    }

    fn labels_path(&self) -> Result<PathBuf> {
        self.labels
            .clone()
            .or_else(|| self.data.as_ref().map(|d| d.join("labels.hdr")))
            .ok_or_else(|| Error::Config("give --data or --labels".into()))
    }

    fn load(&self, manifest: &mut RunManifest) -> Result<Dataset> {
        let (cube, labels) = (self.cube_path()?, self.labels_path()?);
        for p in [&cube, &labels] {
            let (raw, hdr) = data::raster_paths(p);
            manifest.input(&hdr)?;
            manifest.input(&raw)?;
        }
        Dataset::new(data::load_cube(&cube)?, data::load_labels(&labels)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Full,
    NoFusion,
    LinearDecoder,
    LinearNoFusion,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleArg {
    Blended,
    Alternating,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReluArg {
    Shared,
    NonlinearOnly,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the reconstruction term.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    /// Odd patch side length.
    #[arg(long)]
    pub patch: Option<usize>,
    /// Endmember count; defaults to the class count.
    #[arg(long)]
    pub endmembers: Option<usize>,
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    #[arg(long, value_enum)]
    pub relu: Option<ReluArg>,
    /// Training samples per class.
    #[arg(long, group = "split_rule")]
    pub train_per_class: Option<usize>,
    /// Fraction of each class used for training.
    #[arg(long, group = "split_rule")]
    pub train_ratio: Option<f64>,
    /// Comma-separated training counts per class.
    #[arg(long, group = "split_rule", value_delimiter = ',')]
    pub train_counts: Option<Vec<usize>>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag {
                    t.$field = v;
                }
            };
        }
        set!(epochs => epochs);
        set!(batch => batch_size);
        set!(lr => lr0);
        set!(lambda => lambda);
        set!(decoder_layers => decoder_layers);
        set!(patch => patch);
        if self.endmembers.is_some() {
            t.endmembers = self.endmembers;
        }
        if let Some(v) = self.variant {
            t.fusion = matches!(v, Variant::Full | Variant::LinearDecoder);
            t.decoder = match v {
                Variant::Full | Variant::NoFusion => DecoderKind::Nonlinear,
                Variant::LinearDecoder | Variant::LinearNoFusion => DecoderKind::Linear,
            };
        }
        if let Some(s) = self.schedule {
            t.schedule = match s {
                ScheduleArg::Blended => Schedule::Blended,
                ScheduleArg::Alternating => Schedule::Alternating,
            };
        }
        if let Some(r) = self.relu {
            t.relu = match r {
                ReluArg::Shared => ReluPlacement::Shared,
                ReluArg::NonlinearOnly => ReluPlacement::NonlinearOnly,
            };
        }
        if let Some(n) = self.train_per_class {
            cfg.split.rule = SplitRule::PerClass(n);
        }
        if let Some(r) = self.train_ratio {
            cfg.split.rule = SplitRule::Ratio(r);
        }
        if let Some(c) = &self.train_counts {
            cfg.split.rule = SplitRule::Counts(c.clone());
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapScope {
    Labeled,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint stem, `.bin` or `.manifest` path.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split manifest; defaults to `split.csv` beside the checkpoint.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Pixels classified in the map.
    #[arg(long, value_enum, default_value = "labeled")]
    pub map: MapScope,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// K, lambda or ablation.
    #[arg(long)]
    pub param: String,
    /// `v1,v2,...` or `start:stop:step`; not used by the ablation grid.
    #[arg(long)]
    pub values: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportAbundanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output raster path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportFeaturesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "labeled")]
    pub pixels: MapScope,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

fn base_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.sync_seed();
    if g.deterministic {
        cfg.train.deterministic = true;
    }
    if let Some(p) = &g.precision {
        cfg.train.precision = Precision::from_bits(p.parse().expect("validated by clap"))?;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str, manifest: &mut RunManifest) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    manifest.artifact(path);
    Ok(())
}

fn seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Runs one parsed command line, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = base_config(&cli.global)?;
    match cli.command {
        Command::Synth(a) => synth(cfg, &a),
        Command::Train(a) => match cfg.train.precision {
            Precision::F32 => train_cmd::<f32>(cfg, &a),
            Precision::F64 => train_cmd::<f64>(cfg, &a),
        },
        Command::Eval(a) => {
            let meta = checkpoint::load::<f32>(&a.checkpoint)?.1;
            match precision_for(&cli.global, &meta)? {
                Precision::F32 => eval_cmd::<f32>(cfg, &a),
                Precision::F64 => eval_cmd::<f64>(cfg, &a),
            }
        }
        Command::Sweep(a) => sweep_cmd(cfg, &a),
        Command::ExportAbundance(a) => {
            let meta = checkpoint::load::<f32>(&a.checkpoint)?.1;
            match precision_for(&cli.global, &meta)? {
                Precision::F32 => export_abundance::<f32>(cfg, &a),
                Precision::F64 => export_abundance::<f64>(cfg, &a),
            }
        }
        Command::ExportFeatures(a) => {
            let meta = checkpoint::load::<f32>(&a.checkpoint)?.1;
            match precision_for(&cli.global, &meta)? {
                Precision::F32 => export_features::<f32>(cfg, &a),
                Precision::F64 => export_features::<f64>(cfg, &a),
            }
        }
    }
}

/// The precision flag when given, else the one recorded in the checkpoint.
fn precision_for(g: &Global, meta: &BTreeMap<String, String>) -> Result<Precision> {
    let bits = match (&g.precision, meta.get("precision")) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => m.clone(),
        (None, None) => "32".into(),
    };
    let bits = bits
        .parse()
        .map_err(|_| Error::Incompatible(format!("bad `precision` value `{bits}`")))?;
    Precision::from_bits(bits)
}

fn read_endmembers(path: &Path, spec: &SceneSpec) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::format(path, format!("row {}: not a list of numbers", i + 1)))
        })
        .collect::<Result<_>>()?;
    if rows.len() != spec.bands || rows.iter().any(|r| r.len() != spec.materials) {
        return Err(Error::format(
            path,
            format!("expected {} rows of {} values", spec.bands, spec.materials),
        ));
    }
    Ok(rows.concat())
}

fn endmembers_csv(m: &[f64], materials: usize) -> String {
    let mut out = String::new();
    for row in m.chunks(materials) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn synth(mut cfg: RunConfig, a: &SynthArgs) -> Result<()> {
    let start = Instant::now();
    let s = &mut cfg.scene;
    if let Some(v) = a.bands {
        s.bands = v;
    }
    if let Some(v) = a.classes {
        s.materials = v;
    }
    if let Some((r, c)) = a.size {
        s.rows = r;
        s.cols = c;
    }
    if let Some(Maybe(v)) = a.snr {
        s.snr_db = v;
    }
    if let Some(v) = a.smoothness {
        s.smoothness = v;
    }
    if let Some(v) = a.smoothing {
        s.smoothing = match v {
            SmoothingArg::Log => SmoothingDomain::Log,
            SmoothingArg::Linear => SmoothingDomain::Linear,
        };
    }
    if let Some(v) = a.alpha {
        s.dirichlet_alpha = v;
    }
    if let Some(v) = a.nonlinear {
        s.nonlinear_strength = v;
    }
    if let Some(Maybe(v)) = a.purity {
        s.purity_threshold = v;
    }
    let mut manifest = RunManifest::new("synth", &cfg);
    if let Some(p) = &a.endmembers {
        cfg.scene.endmembers = Some(read_endmembers(p, &cfg.scene)?);
        manifest.input(p)?;
    }
    let scene = data::generate_scene(&cfg.scene, cfg.seed)?;
    manifest.config = cfg.clone();
    create_dir(&a.out)?;
    for (raw, hdr) in [
        data::save_cube(&scene.cube, &a.out.join("cube"))?,
        data::save_labels(&scene.labels, &a.out.join("labels"))?,
        data::save_cube(&scene.abundance_cube()?, &a.out.join("abundances"))?,
    ] {
        manifest.artifact(hdr);
        manifest.artifact(raw);
    }
    write(&a.out.join("endmembers.csv"), &endmembers_csv(&scene.endmembers, cfg.scene.materials), &mut manifest)?;
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(&a.out.join("manifest.json"))?;
    println!(
        "scene {}x{}x{} with {} materials, {} labeled pixels, SNR {:.2} dB -> {}",
        cfg.scene.bands,
        cfg.scene.rows,
        cfg.scene.cols,
        cfg.scene.materials,
        scene.labels.labeled_count(),
        scene.measured_snr_db(),
        a.out.display()
    );
    Ok(())
}

fn checkpoint_meta(model: &DsnetConfig, cfg: &RunConfig, epochs: usize) -> BTreeMap<String, String> {
    let mut meta = model.to_meta();
    meta.insert("precision".into(), cfg.train.precision.bits().to_string());
    meta.insert("seed".into(), cfg.seed.to_string());
    meta.insert("epochs".into(), epochs.to_string());
    meta
}

fn train_cmd<T: Scalar>(mut cfg: RunConfig, a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    a.flags.apply(&mut cfg);
    cfg.train.validate()?;
    if a.checkpoint_every == Some(0) {
        return Err(Error::Config("--checkpoint-every must be positive".into()));
    }
    let mut manifest = RunManifest::new("train", &cfg);
    let data = a.data.load(&mut manifest)?;
    create_dir(&a.out)?;
    let ckpt_dir = a.out.join("checkpoints");
    let log_path = a.out.join("log.csv");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{}", train::LOG_HEADER).map_err(|e| Error::io(&log_path, e))?;
    let model = cfg.train.model(data.cube.bands(), data.classes);
    let mut snapshots = Vec::new();
    let outcome = experiment::run::<T>(&data, &cfg.split, &cfg.train, |row, store| {
        writeln!(log, "{}", row.csv_row()).map_err(|e| Error::io(&log_path, e))?;
        if let Some(n) = a.checkpoint_every {
            if (row.epoch + 1) % n == 0 {
                create_dir(&ckpt_dir)?;
                let stem = ckpt_dir.join(format!("epoch_{:04}", row.epoch + 1));
                let (bin, man) = checkpoint::save(store, &checkpoint_meta(&model, &cfg, row.epoch + 1), &stem)?;
                snapshots.extend([bin, man]);
            }
        }
        Ok(())
    })?;
    manifest.timings.insert("train".into(), seconds(start));
    manifest.artifact(&log_path);
    for p in snapshots {
        manifest.artifact(p);
    }
    let (bin, man) = checkpoint::save(
        &outcome.params,
        &checkpoint_meta(&outcome.model, &cfg, cfg.train.epochs),
        &a.out.join("model"),
    )?;
    manifest.artifact(bin);
    manifest.artifact(man);
    write(&a.out.join("split.csv"), &outcome.split.to_manifest(&outcome.patches), &mut manifest)?;
    write(&a.out.join("report.txt"), &outcome.confusion.report()?, &mut manifest)?;
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(&a.out.join("manifest.json"))?;
    let m = outcome.metrics;
    let last = outcome.log.last().map_or(f64::NAN, |r| r.total_loss);
    println!(
        "trained {} epochs on {} samples, final loss {last:.4}; test OA {:.2}% AA {:.2}% Kappa {:.2}% -> {}",
        cfg.train.epochs,
        outcome.split.train.len(),
        m.oa * 100.0,
        m.aa * 100.0,
        m.kappa * 100.0,
        a.out.display()
    );
    Ok(())
}

struct Loaded<T> {
    model: DsnetConfig,
    params: ParamStore<T>,
}

fn load_model<T: Scalar>(path: &Path, manifest: &mut RunManifest) -> Result<Loaded<T>> {
    let (params, meta) = checkpoint::load::<T>(path)?;
    let (bin, man) = checkpoint::paths(path);
    manifest.input(&bin)?;
    manifest.input(&man)?;
    let model = DsnetConfig::from_meta(&meta)?;
    crate::model::check_params(&model, &params)?;
    Ok(Loaded { model, params })
}

fn check_compatible(model: &DsnetConfig, data: &Dataset) -> Result<()> {
    if model.bands != data.cube.bands() {
        return Err(Error::Incompatible(format!(
            "checkpoint expects {} bands, cube has {}",
            model.bands,
            data.cube.bands()
        )));
    }
    if data.classes > model.classes {
        return Err(Error::Incompatible(format!(
            "checkpoint knows {} classes, labels reach {}",
            model.classes, data.classes
        )));
    }
    Ok(())
}

/// Predicted labels (`1..`) at the given samples, 0 elsewhere.
fn label_map<T: Scalar>(lm: &mut Loaded<T>, set: &PatchSet, rows: usize, cols: usize) -> Result<LabelRaster> {
    let all: Vec<usize> = (0..set.len()).collect();
    let predicted = train::predict_classes(&mut lm.params, &lm.model, set, &all)?;
    let mut map = vec![0u16; rows * cols];
    for (i, p) in predicted.into_iter().enumerate() {
        map[set.pixel_index(i)] = p as u16 + 1;
    }
    LabelRaster::new(rows, cols, map)
}

fn eval_cmd<T: Scalar>(cfg: RunConfig, a: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("eval", &cfg);
    let mut lm = load_model::<T>(&a.checkpoint, &mut manifest)?;
    let data = a.data.load(&mut manifest)?;
    check_compatible(&lm.model, &data)?;
    let patches = PatchSet::labeled(&data.cube, &data.labels, lm.model.patch)?;
    let split_path = match &a.split {
        Some(p) => p.clone(),
        None => checkpoint::stem(&a.checkpoint)
            .parent()
            .map_or_else(|| PathBuf::from("split.csv"), |d| d.join("split.csv")),
    };
    let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
    manifest.input(&split_path)?;
    let split = Split::from_manifest(&text, &patches)?;
    let confusion = train::evaluate(&mut lm.params, &lm.model, &patches, &split.test)?;
    let report = confusion.report()?;
    create_dir(&a.out)?;
    write(&a.out.join("report.txt"), &report, &mut manifest)?;
    write(&a.out.join("metrics.csv"), &confusion.metrics_csv()?, &mut manifest)?;
    write(&a.out.join("confusion.csv"), &confusion.to_csv(), &mut manifest)?;
    manifest.timings.insert("score".into(), seconds(start));

    let (rows, cols) = (data.cube.rows(), data.cube.cols());
    let map = match a.map {
        MapScope::Labeled => label_map(&mut lm, &patches, rows, cols)?,
        MapScope::All => {
            let every = PatchSet::all_pixels(&data.cube, Some(&data.labels), lm.model.patch)?;
            label_map(&mut lm, &every, rows, cols)?
        }
    };
    let (raw, hdr) = data::save_labels(&map, &a.out.join("map"))?;
    manifest.artifact(hdr);
    manifest.artifact(raw);
    let png_path = a.out.join("map.png");
    map::write_png(&map, &png_path)?;
    manifest.artifact(png_path);
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(&a.out.join("manifest.json"))?;
    print!("{report}");
    Ok(())
}

fn sweep_cmd(mut cfg: RunConfig, a: &SweepArgs) -> Result<()> {
    let start = Instant::now();
    a.flags.apply(&mut cfg);
    cfg.train.validate()?;
    let param = SweepParam::parse(&a.param)?;
    let values = match (&a.values, param) {
        (Some(v), _) => experiment::parse_values(v)?,
        (None, SweepParam::Ablation) => Vec::new(),
        (None, _) => return Err(Error::Config(format!("--values is required for a {} sweep", param.name()))),
    };
    let cells = experiment::cells(param, &values, &cfg.train)?;
    let mut manifest = RunManifest::new("sweep", &cfg);
    let data = a.data.load(&mut manifest)?;
    let report = |r: &experiment::CellResult| match (&r.metrics, &r.error) {
        (Some(m), _) => println!("cell {}: OA {:.2}%", r.label, m.oa * 100.0),
        (_, Some(e)) => println!("cell {}: failed: {e}", r.label),
        _ => {}
    };
    let results = match cfg.train.precision {
        Precision::F32 => experiment::run_sweep::<f32>(&data, &cfg.split, &cells, report),
        Precision::F64 => experiment::run_sweep::<f64>(&data, &cfg.split, &cells, report),
    };
    create_dir(&a.out)?;
    let table = experiment::render_table(param, &results);
    write(&a.out.join("table.txt"), &table, &mut manifest)?;
    write(&a.out.join("cells.csv"), &experiment::results_csv(&results), &mut manifest)?;
    if param == SweepParam::Lambda {
        let mut pairs = String::from("lambda,oa\n");
        for r in &results {
            let oa = r.metrics.map_or(String::new(), |m| m.oa.to_string());
            let _ = writeln!(pairs, "{},{oa}", r.label);
        }
        write(&a.out.join("lambda_oa.csv"), &pairs, &mut manifest)?;
    }
    for r in &results {
        manifest.timings.insert(format!("cell {}", r.label), r.elapsed_s);
    }
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(&a.out.join("manifest.json"))?;
    print!("{table}");
    Ok(())
}

fn export_abundance<T: Scalar>(cfg: RunConfig, a: &ExportAbundanceArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("export-abundance", &cfg);
    let mut lm = load_model::<T>(&a.checkpoint, &mut manifest)?;
    let cube_path = a.data.cube_path()?;
    let (raw, hdr) = data::raster_paths(&cube_path);
    manifest.input(&hdr)?;
    manifest.input(&raw)?;
    let cube = data::load_cube(&cube_path)?;
    let maps = train::abundance_maps(&mut lm.params, &lm.model, &cube)?;
    let (raw, hdr) = data::save_cube(&maps, &a.out)?;
    manifest.artifact(&hdr);
    manifest.artifact(raw);
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(&hdr.with_extension("manifest.json"))?;
    println!("{} abundance maps of {}x{} -> {}", maps.bands(), maps.rows(), maps.cols(), hdr.display());
    Ok(())
}

fn export_features<T: Scalar>(cfg: RunConfig, a: &ExportFeaturesArgs) -> Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("export-features", &cfg);
    let mut lm = load_model::<T>(&a.checkpoint, &mut manifest)?;
    let data = a.data.load(&mut manifest)?;
    check_compatible(&lm.model, &data)?;
    let set = match a.pixels {
        MapScope::Labeled => PatchSet::labeled(&data.cube, &data.labels, lm.model.patch)?,
        MapScope::All => PatchSet::all_pixels(&data.cube, Some(&data.labels), lm.model.patch)?,
    };
    let all: Vec<usize> = (0..set.len()).collect();
    let features = train::class_features(&mut lm.params, &lm.model, &set, &all)?;
    let mut out = String::from("row,col,label");
    for k in 1..=lm.model.classes {
        let _ = write!(out, ",c{k}");
    }
    out.push('\n');
    for (i, f) in features.iter().enumerate() {
        let s = set.sample(i);
        let _ = write!(out, "{},{},{}", s.row, s.col, s.label);
        for v in f {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write(&a.out, &out, &mut manifest)?;
    manifest.timings.insert("total".into(), seconds(start));
    manifest.write(&a.out.with_extension("manifest.json"))?;
    println!("{} feature rows -> {}", features.len(), a.out.display());
    Ok(())
}

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    err.kind().exit_code()
}
