//! Joint training of both branches with Adam and a step-decay schedule,
//! plus the inference helpers built on a trained parameter store.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PatchSet, SpectralCube};
use crate::error::{Error, Result};
use crate::losses::{ce_loss, re_loss, total_loss, LossConfig};
use crate::metrics::ConfusionMatrix;
use crate::model::{self, DecoderKind, DsnetConfig, Precision, ReluPlacement};
use crate::tensor::ops::{self, BnConfig, Mode};
use crate::tensor::{ParamStore, Scalar, Session, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// One step per batch on `lambda * RE + (1 - lambda) * CE`.
    #[default]
    Blended,
    /// Two steps per batch: `lambda * RE`, then `(1 - lambda) * CE`.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub lambda: f64,
    pub decoder_layers: usize,
    pub patch: usize,
    /// Endmember count; the class count when absent.
    pub endmembers: Option<usize>,
    pub seed: u64,
    pub precision: Precision,
    pub fusion: bool,
    pub decoder: DecoderKind,
    pub relu: ReluPlacement,
    pub schedule: Schedule,
    /// Zero the wall-clock column of the log so reruns are byte-identical.
    pub deterministic: bool,
    pub adam: AdamConfig,
    pub batch_norm: BnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            lr0: 1e-3,
            decay_factor: 0.9,
            decay_every: 50,
            lambda: 0.5,
            decoder_layers: 2,
            patch: 7,
            endmembers: None,
            seed: 0,
            precision: Precision::F32,
            fusion: true,
            decoder: DecoderKind::Nonlinear,
            relu: ReluPlacement::Shared,
            schedule: Schedule::Blended,
            deterministic: false,
            adam: AdamConfig::default(),
            batch_norm: BnConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail(format!("decay factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if self.decay_every == 0 {
            return fail("decay interval must be positive".into());
        }
        LossConfig::new(self.lambda)?;
        let b = &self.batch_norm;
        if !(b.momentum > 0.0 && b.momentum < 1.0 && b.eps > 0.0) {
            return fail(format!("batch-norm momentum must lie in (0, 1) and eps be positive, got {b:?}"));
        }
        Ok(())
    }

    pub fn model(&self, bands: usize, classes: usize) -> DsnetConfig {
        DsnetConfig {
            bands,
            endmembers: self.endmembers.unwrap_or(classes),
            classes,
            patch: self.patch,
            decoder_layers: self.decoder_layers,
            fusion: self.fusion,
            decoder: self.decoder,
            relu: self.relu,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda: self.lambda }
    }
}

/// Shortest decimal form of `x` as `(digits, exponent)`.
fn decimal(x: f64) -> Option<(u128, i32)> {
    let s = format!("{x:e}");
    let (mantissa, exp) = s.split_once('e')?;
    let exp: i32 = exp.parse().ok()?;
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let digits: u128 = format!("{int}{frac}").parse().ok()?;
    Some((digits, exp - frac.len() as i32))
}

/// `lr0 * decay^floor(epoch / every)`, epochs counted from 0.
///
/// The product is formed on the decimal values of `lr0` and the factor and
/// rounded once, so `1e-3` decayed once by `0.9` is exactly `9e-4`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let n = epoch / cfg.decay_every;
    let exact = || -> Option<f64> {
        let (mut m, mut e) = decimal(cfg.lr0)?;
        let (dm, de) = decimal(cfg.decay_factor)?;
        for _ in 0..n {
            m = m.checked_mul(dm)?;
            e = e.checked_add(de)?;
        }
        format!("{m}e{e}").parse().ok()
    };
    exact().unwrap_or_else(|| cfg.lr0 * cfg.decay_factor.powi(n as i32))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
    cfg: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            step: 0,
            moments: BTreeMap::new(),
            cfg,
        }
    }

    /// One bias-corrected update of every parameter named in `grads`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[(String, Tensor<T>)], lr: f64) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of `{name}`"),
                });
            }
            let p = store.require(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("`{name}`: parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let c = self.cfg;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let correct1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let correct2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(lr), T::of(c.eps));
        for (name, g) in grads {
            let n = g.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let p = store.get_mut(name).expect("checked above").data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mhat = m[i] / correct1;
                let vhat = v[i] / correct2;
                p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Mini-batches of `0..n` for one epoch: a seeded permutation cut into
/// `batch`-sized runs, the last possibly shorter.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub re_loss: f64,
    pub ce_loss: f64,
    pub total_loss: f64,
    pub elapsed_s: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,re_loss,ce_loss,total_loss,elapsed_s";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{},{},{},{:.3}",
            self.epoch, self.lr, self.re_loss, self.ce_loss, self.total_loss, self.elapsed_s
        )
    }
}

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ParamStore<T>,
    pub model: DsnetConfig,
    pub log: Vec<EpochLog>,
}

/// Which loss terms one backward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Objective {
    Blend(LossConfig),
    Reconstruction(f64),
    Classification(f64),
}

struct StepLosses {
    re: f64,
    ce: f64,
}

fn loss_step<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &DsnetConfig,
    set: &PatchSet,
    idx: &[usize],
    bn: BnConfig,
    objective: Objective,
) -> Result<(StepLosses, Vec<(String, Tensor<T>)>)> {
    let labels = set.class_indices(idx)?;
    let mut s = Session::new(store, true).with_bn_config(bn);
    let x = s.input(set.batch(idx));
    let out = model::forward(&mut s, model, x, Mode::Train, true)?;
    let xhat = out.reconstruction.expect("requested");
    let re = re_loss(&mut s.tape, x, xhat)?;
    let ce = ce_loss(&mut s.tape, out.logits, &labels)?;
    let loss: Var = match objective {
        Objective::Blend(cfg) => total_loss(&mut s.tape, re, ce, cfg)?,
        Objective::Reconstruction(w) => ops::scale(&mut s.tape, re, T::of(w)),
        Objective::Classification(w) => ops::scale(&mut s.tape, ce, T::of(w)),
    };
    s.tape.backward(loss)?;
    let losses = StepLosses {
        re: s.tape.value(re).item().as_f64(),
        ce: s.tape.value(ce).item().as_f64(),
    };
    Ok((losses, s.gradients()))
}

/// Gradients of the blended objective for one batch, without updating
/// anything except batch-norm running statistics.
pub fn batch_gradients<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &DsnetConfig,
    set: &PatchSet,
    idx: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<(String, Tensor<T>)>> {
    Ok(loss_step(store, model, set, idx, cfg.batch_norm, Objective::Blend(cfg.loss()))?.1)
}

/// Trains a freshly initialized network on every sample of `set`.
///
/// `on_epoch` sees each log row and the parameters after that epoch.
pub fn train<T: Scalar>(
    set: &PatchSet,
    classes: usize,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ParamStore<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("training set has no labeled samples".into()));
    }
    if set.size() != cfg.patch {
        return Err(Error::Config(format!(
            "patch set uses size {}, configuration says {}",
            set.size(),
            cfg.patch
        )));
    }
    let model = cfg.model(set.bands(), classes);
    let mut store = model::init_params::<T>(&model, cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam);
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let (mut re_sum, mut ce_sum) = (0.0, 0.0);
        for (b, idx) in epoch_batches(set.len(), cfg.batch_size, cfg.seed, epoch).iter().enumerate() {
            let (re, ce) = match cfg.schedule {
                Schedule::Blended => {
                    let (l, g) = loss_step(&mut store, &model, set, idx, cfg.batch_norm, Objective::Blend(cfg.loss()))?;
                    adam.update(&mut store, &g, lr)?;
                    (l.re, l.ce)
                }
                Schedule::Alternating => {
                    let obj = Objective::Reconstruction(cfg.lambda);
                    let (l1, g) = loss_step(&mut store, &model, set, idx, cfg.batch_norm, obj)?;
                    adam.update(&mut store, &g, lr)?;
                    let obj = Objective::Classification(1.0 - cfg.lambda);
                    let (l2, g) = loss_step(&mut store, &model, set, idx, cfg.batch_norm, obj)?;
                    adam.update(&mut store, &g, lr)?;
                    (l1.re, l2.ce)
                }
            };
            if !(re.is_finite() && ce.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("loss at epoch {epoch}, batch {b}"),
                });
            }
            re_sum += re * idx.len() as f64;
            ce_sum += ce * idx.len() as f64;
        }
        let n = set.len() as f64;
        let (re, ce) = (re_sum / n, ce_sum / n);
        let row = EpochLog {
            epoch,
            lr,
            re_loss: re,
            ce_loss: ce,
            total_loss: crate::losses::total_loss_value(re, ce, cfg.loss()),
            elapsed_s: if cfg.deterministic { 0.0 } else { start.elapsed().as_secs_f64() },
        };
        on_epoch(&row, &store)?;
        log.push(row);
    }
    Ok(TrainOutcome {
        params: store,
        model,
        log,
    })
}

pub const EVAL_BATCH: usize = 256;

/// Per-sample outputs of an evaluation-mode forward pass over `indices`.
fn eval_batches<T: Scalar, R>(
    store: &mut ParamStore<T>,
    model: &DsnetConfig,
    set: &PatchSet,
    indices: &[usize],
    reconstruct: bool,
    mut each: impl FnMut(&Session<'_, T>, &model::Outputs, Var, &[usize]) -> Result<R>,
) -> Result<Vec<R>> {
    model::check_params(model, store)?;
    if set.bands() != model.bands || set.size() != model.patch {
        return Err(Error::Incompatible(format!(
            "data has {} bands and {}x{} patches, model expects {} bands and {}x{}",
            set.bands(),
            set.size(),
            set.size(),
            model.bands,
            model.patch,
            model.patch
        )));
    }
    let mut out = Vec::new();
    for idx in indices.chunks(EVAL_BATCH) {
        let mut s = Session::new(store, false);
        let x = s.input(set.batch(idx));
        let o = model::forward(&mut s, model, x, Mode::Eval, reconstruct)?;
        out.push(each(&s, &o, x, idx)?);
    }
    Ok(out)
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted 0-based class per sample.
pub fn predict_classes<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &DsnetConfig,
    set: &PatchSet,
    indices: &[usize],
) -> Result<Vec<usize>> {
    let parts = eval_batches(store, model, set, indices, false, |s, o, _, _| {
        Ok(s.tape.value(o.logits).data().chunks(model.classes).map(argmax).collect::<Vec<_>>())
    })?;
    Ok(parts.concat())
}

pub fn evaluate<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &DsnetConfig,
    set: &PatchSet,
    indices: &[usize],
) -> Result<ConfusionMatrix> {
    let predicted = predict_classes(store, model, set, indices)?;
    let truth = set.class_indices(indices)?;
    let mut cm = ConfusionMatrix::new(model.classes);
    for (t, p) in truth.into_iter().zip(predicted) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

/// Class features `c` per sample, for external embedding.
pub fn class_features<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &DsnetConfig,
    set: &PatchSet,
    indices: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let parts = eval_batches(store, model, set, indices, false, |s, o, _, _| {
        Ok(s.tape
            .value(o.features)
            .to_f64()
            .chunks(model.classes)
            .map(<[f64]>::to_vec)
            .collect::<Vec<_>>())
    })?;
    Ok(parts.concat())
}

/// Mean per-pixel spectral angle between patches and their reconstructions.
pub fn reconstruction_sad<T: Scalar>(
    store: &mut ParamStore<T>,
    model: &DsnetConfig,
    set: &PatchSet,
    indices: &[usize],
) -> Result<f64> {
    let parts = eval_batches(store, model, set, indices, true, |s, o, x, idx| {
        let xs = s.tape.value(x).to_f64();
        let ys = s.tape.value(o.reconstruction.expect("requested")).to_f64();
        let (l, hw) = (model.bands, model.patch * model.patch);
        let mut total = 0.0;
        for n in 0..idx.len() {
            for i in 0..hw {
                let pick = |v: &[f64]| -> Vec<f64> { (0..l).map(|b| v[(n * l + b) * hw + i]).collect() };
                total += crate::losses::sad(&pick(&xs), &pick(&ys))?;
            }
        }
        Ok(total)
    })?;
    let pixels = (indices.len() * model.patch * model.patch) as f64;
    Ok(parts.iter().sum::<f64>() / pixels)
}

/// Abundance maps of the whole scene, treating the cube as one image.
pub fn abundance_maps<T: Scalar>(store: &mut ParamStore<T>, model: &DsnetConfig, cube: &SpectralCube) -> Result<SpectralCube> {
    model::check_params(model, store)?;
    if cube.bands() != model.bands {
        return Err(Error::Incompatible(format!(
            "cube has {} bands, model expects {}",
            cube.bands(),
            model.bands
        )));
    }
    let (rows, cols) = (cube.rows(), cube.cols());
    let mut s = Session::new(store, false);
    let x = s.input(Tensor::from_f64(&[1, model.bands, rows, cols], cube.data())?);
    let h = model::encode(&mut s, x, Mode::Eval)?;
    let v = model::normalize_abundance(&mut s.tape, h)?;
    SpectralCube::new(model.endmembers, rows, cols, s.tape.value(v).to_f64())
}
