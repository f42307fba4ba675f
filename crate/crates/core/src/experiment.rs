//! Train/evaluate cycles on a labeled scene and grids of them.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{split, LabelRaster, PatchSet, SpectralCube, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, Metrics};
use crate::model::{DecoderKind, DsnetConfig};
use crate::tensor::{ParamStore, Scalar};
use crate::train::{self, EpochLog, TrainConfig};

/// A cube with its label raster; classes are `1..=classes`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cube: SpectralCube,
    pub labels: LabelRaster,
    pub classes: usize,
}

impl Dataset {
    pub fn new(cube: SpectralCube, labels: LabelRaster) -> Result<Self> {
        labels.matches(&cube)?;
        let classes = labels.max_label() as usize;
        if classes == 0 {
            return Err(Error::Empty("label raster has no labeled pixels".into()));
        }
        Ok(Self { cube, labels, classes })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub model: DsnetConfig,
    pub params: ParamStore<T>,
    pub log: Vec<EpochLog>,
    /// Every labeled pixel; `split` indexes into it.
    pub patches: PatchSet,
    pub split: Split,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

/// Splits, trains on the training part and scores the test part.
pub fn run<T: Scalar>(
    data: &Dataset,
    split_spec: &SplitSpec,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog, &ParamStore<T>) -> Result<()>,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let patches = PatchSet::labeled(&data.cube, &data.labels, cfg.patch)?;
    let split = split(&patches, split_spec)?;
    let trained = train::train::<T>(&patches.subset(&split.train), data.classes, cfg, on_epoch)?;
    let mut params = trained.params;
    let confusion = train::evaluate(&mut params, &trained.model, &patches, &split.test)?;
    let metrics = confusion.metrics()?;
    Ok(RunOutcome {
        model: trained.model,
        params,
        log: trained.log,
        patches,
        split,
        confusion,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "K")]
    DecoderLayers,
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "ablation")]
    Ablation,
}

impl SweepParam {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "K" | "k" | "decoder-layers" => Ok(SweepParam::DecoderLayers),
            "lambda" => Ok(SweepParam::Lambda),
            "ablation" => Ok(SweepParam::Ablation),
            other => Err(Error::Config(format!("unknown sweep parameter `{other}` (K, lambda, ablation)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::DecoderLayers => "K",
            SweepParam::Lambda => "lambda",
            SweepParam::Ablation => "ablation",
        }
    }
}

/// Shortest decimal text of `x` after rounding away float noise.
fn tidy(x: f64) -> f64 {
    format!("{x:.10}").parse().expect("formatted float")
}

/// A comma list (`1,2,3`) or an inclusive range `start:stop:step`.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Config(format!("sweep values `{text}`: {m}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
    let values: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("ranges are start:stop:step"));
        }
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| tidy(a + i as f64 * step)).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad("need at least one finite value"));
    }
    Ok(values)
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub cfg: TrainConfig,
}

/// Seed of one cell, a function of the base seed and the cell key only.
pub fn cell_seed(base: u64, param: SweepParam, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{base}/{}/{label}", param.name()).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// The four fusion x decoder variants in report order.
pub const ABLATION: [(bool, DecoderKind); 4] = [
    (false, DecoderKind::Linear),
    (false, DecoderKind::Nonlinear),
    (true, DecoderKind::Linear),
    (true, DecoderKind::Nonlinear),
];

pub fn variant_label(fusion: bool, decoder: DecoderKind) -> String {
    let d = match decoder {
        DecoderKind::Linear => "linear",
        DecoderKind::Nonlinear => "nonlinear",
    };
    format!("{}+{d}", if fusion { "fusion" } else { "no-fusion" })
}

pub fn cells(param: SweepParam, values: &[f64], base: &TrainConfig) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    let mut push = |label: String, mut cfg: TrainConfig| {
        cfg.seed = cell_seed(base.seed, param, &label);
        out.push(Cell { label, cfg });
    };
    match param {
        SweepParam::DecoderLayers => {
            for &v in values {
                if v.fract() != 0.0 || v < 1.0 {
                    return Err(Error::Config(format!("K must be a positive integer, got {v}")));
                }
                push(format!("{v}"), TrainConfig { decoder_layers: v as usize, ..base.clone() });
            }
        }
        SweepParam::Lambda => {
            for &v in values {
                push(format!("{v}"), TrainConfig { lambda: v, ..base.clone() });
            }
        }
        SweepParam::Ablation => {
            if !values.is_empty() {
                return Err(Error::Config("the ablation grid is fixed and takes no values".into()));
            }
            for (fusion, decoder) in ABLATION {
                push(variant_label(fusion, decoder), TrainConfig { fusion, decoder, ..base.clone() });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub label: String,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
    pub elapsed_s: f64,
}

/// Runs every cell in order; a failing cell is recorded and the rest go on.
pub fn run_sweep<T: Scalar>(
    data: &Dataset,
    split_spec: &SplitSpec,
    cells: &[Cell],
    mut progress: impl FnMut(&CellResult),
) -> Vec<CellResult> {
    cells
        .iter()
        .map(|cell| {
            let start = Instant::now();
            let outcome = run::<T>(data, split_spec, &cell.cfg, |_, _| Ok(()));
            let result = CellResult {
                label: cell.label.clone(),
                seed: cell.cfg.seed,
                metrics: outcome.as_ref().ok().map(|o| o.metrics),
                error: outcome.err().map(|e| e.to_string()),
                elapsed_s: if cell.cfg.deterministic { 0.0 } else { start.elapsed().as_secs_f64() },
            };
            progress(&result);
            result
        })
        .collect()
}

fn pct(m: Option<Metrics>, f: fn(&Metrics) -> f64) -> String {
    m.map_or_else(|| "failed".into(), |m| format!("{:.2}", f(&m) * 100.0))
}

const ROWS: [(&str, fn(&Metrics) -> f64); 3] = [("OA (%)", |m| m.oa), ("AA (%)", |m| m.aa), ("Kappa (%)", |m| m.kappa)];

/// Text table: metrics by column for K and lambda, three rows per variant
/// for the ablation grid.
pub fn render_table(param: SweepParam, results: &[CellResult]) -> String {
    let mut out = String::new();
    match param {
        SweepParam::DecoderLayers | SweepParam::Lambda => {
            let head = if param == SweepParam::DecoderLayers { "K" } else { "lambda" };
            let _ = write!(out, "{head:<10}");
            for r in results {
                let _ = write!(out, " | {:>8}", r.label);
            }
            out.push('\n');
            for (name, f) in ROWS {
                let _ = write!(out, "{name:<10}");
                for r in results {
                    let _ = write!(out, " | {:>8}", pct(r.metrics, f));
                }
                out.push('\n');
            }
        }
        SweepParam::Ablation => {
            let _ = writeln!(out, "{:<7} | {:<6} | {:<9} | {:<10} | {:>8}", "fusion", "linear", "nonlinear", "metric", "value");
            for (r, (fusion, decoder)) in results.iter().zip(ABLATION) {
                let mark = |b: bool| if b { "x" } else { "-" };
                for (i, (name, f)) in ROWS.iter().enumerate() {
                    let cols = if i == 0 {
                        (mark(fusion), mark(decoder == DecoderKind::Linear), mark(decoder == DecoderKind::Nonlinear))
                    } else {
                        ("", "", "")
                    };
                    let _ = writeln!(out, "{:<7} | {:<6} | {:<9} | {:<10} | {:>8}", cols.0, cols.1, cols.2, name, pct(r.metrics, *f));
                }
            }
        }
    }
    for r in results.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(out, "cell {} failed: {}", r.label, r.error.as_deref().unwrap_or(""));
    }
    out
}

/// `label,seed,status,oa,aa,kappa,elapsed_s` per cell.
pub fn results_csv(results: &[CellResult]) -> String {
    let mut out = String::from("label,seed,status,oa,aa,kappa,elapsed_s\n");
    for r in results {
        match r.metrics {
            Some(m) => {
                let _ = writeln!(out, "{},{},ok,{},{},{},{:.3}", r.label, r.seed, m.oa, m.aa, m.kappa, r.elapsed_s);
            }
            None => {
                let _ = writeln!(out, "{},{},failed,,,,{:.3}", r.label, r.seed, r.elapsed_s);
            }
        }
    }
    out
}
