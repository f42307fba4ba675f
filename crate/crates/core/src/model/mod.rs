//! The full network: configuration, parameter layout and forward pass.

pub mod classify;
pub mod unmix;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::Mode;
use crate::tensor::{ParamStore, Scalar, Session, Tensor, Var};

pub use classify::{classifier_only_predict, classify_features, fuse, predict};
pub use unmix::{decode, encode, normalize_abundance, unmix_forward, DecoderKind, ReluPlacement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    #[default]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(Error::Config(format!("precision must be 32 or 64, got {other}"))),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DsnetConfig {
    pub bands: usize,
    pub endmembers: usize,
    pub classes: usize,
    pub patch: usize,
    pub decoder_layers: usize,
    pub fusion: bool,
    pub decoder: DecoderKind,
    pub relu: ReluPlacement,
}

pub const MAX_DECODER_LAYERS: usize = 5;

impl DsnetConfig {
    /// Defaults for a scene: endmember count equal to the class count,
    /// 7x7 patches, two decoder layers, fusion on, nonlinear decoder.
    pub fn new(bands: usize, classes: usize) -> Self {
        Self {
            bands,
            endmembers: classes,
            classes,
            patch: 7,
            decoder_layers: 2,
            fusion: true,
            decoder: DecoderKind::Nonlinear,
            relu: ReluPlacement::Shared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.bands < 2 {
            return fail(format!("need at least 2 bands, got {}", self.bands));
        }
        if self.endmembers < 1 {
            return fail("need at least one endmember".into());
        }
        if self.classes < 1 {
            return fail("need at least one class".into());
        }
        if self.patch.is_multiple_of(2) || self.patch < classify::MIN_PATCH {
            return fail(format!(
                "patch size must be odd and at least {}, got {}",
                classify::MIN_PATCH,
                self.patch
            ));
        }
        if !(1..=MAX_DECODER_LAYERS).contains(&self.decoder_layers) {
            return fail(format!(
                "decoder layers must lie in 1..={MAX_DECODER_LAYERS}, got {}",
                self.decoder_layers
            ));
        }
        Ok(())
    }

    pub fn fused_width(&self) -> usize {
        classify::fused_width(self.endmembers, self.classes, self.patch)
    }

    pub fn to_meta(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("bands".into(), self.bands.to_string()),
            ("endmembers".into(), self.endmembers.to_string()),
            ("classes".into(), self.classes.to_string()),
            ("patch".into(), self.patch.to_string()),
            ("decoder_layers".into(), self.decoder_layers.to_string()),
            ("fusion".into(), self.fusion.to_string()),
            ("decoder".into(), enum_text(&self.decoder)),
            ("relu".into(), enum_text(&self.relu)),
        ])
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Incompatible(format!("checkpoint manifest lacks `{k}`")))
        };
        let bad = |k: &str, v: &str| Error::Incompatible(format!("bad `{k}` value `{v}`"));
        let count = |k: &str| -> Result<usize> {
            let v = get(k)?;
            v.parse().map_err(|_| bad(k, v))
        };
        let fusion = get("fusion")?;
        let decoder = get("decoder")?;
        let relu = get("relu")?;
        let cfg = Self {
            bands: count("bands")?,
            endmembers: count("endmembers")?,
            classes: count("classes")?,
            patch: count("patch")?,
            decoder_layers: count("decoder_layers")?,
            fusion: fusion.parse().map_err(|_| bad("fusion", fusion))?,
            decoder: serde_json::from_value(serde_json::Value::String(decoder.clone()))
                .map_err(|_| bad("decoder", decoder))?,
            relu: serde_json::from_value(serde_json::Value::String(relu.clone())).map_err(|_| bad("relu", relu))?,
        };
        cfg.validate().map_err(|e| Error::Incompatible(e.to_string()))?;
        Ok(cfg)
    }
}

/// The serde name of a unit enum variant.
fn enum_text<S: Serialize>(v: &S) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform(usize),
    /// As `Uniform`, then clamped to be nonnegative.
    NonNegative(usize),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
    trainable: bool,
}

#[derive(Default)]
struct Layout(Vec<Slot>);

impl Layout {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init, trainable: bool) {
        self.0.push(Slot {
            name,
            shape,
            init,
            trainable,
        });
    }

    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) {
        let fan_in = cin * k * k;
        self.push(format!("{name}.weight"), vec![cout, cin, k, k], Init::Uniform(fan_in), true);
        self.push(format!("{name}.bias"), vec![cout], Init::Uniform(fan_in), true);
    }

    fn dense(&mut self, name: &str, dout: usize, din: usize) {
        self.push(format!("{name}.weight"), vec![dout, din], Init::Uniform(din), true);
        self.push(format!("{name}.bias"), vec![dout], Init::Uniform(din), true);
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.gamma"), vec![c], Init::Const(1.0), true);
        self.push(format!("{name}.beta"), vec![c], Init::Const(0.0), true);
        self.push(format!("{name}.running_mean"), vec![c], Init::Const(0.0), false);
        self.push(format!("{name}.running_var"), vec![c], Init::Const(1.0), false);
    }
}

fn layout(cfg: &DsnetConfig) -> Vec<Slot> {
    let mut out = Layout::default();
    let (l, p, k) = (cfg.bands, cfg.endmembers, cfg.decoder_layers);
    let mut cin = l;
    for (i, &w) in unmix::encoder_widths(l, p).iter().enumerate() {
        let name = format!("unmixing.encoder.block{}", i + 1);
        out.conv(&format!("{name}.conv"), w, cin, 1);
        if i < 2 {
            out.bn(&format!("{name}.bn"), w);
        }
        cin = w;
    }
    out.push("unmixing.decoder.g.weight".into(), vec![l * k, p, 1, 1], Init::NonNegative(p), true);
    if cfg.decoder == DecoderKind::Nonlinear {
        out.conv("unmixing.decoder.nonlinear1", l, l * k, 1);
        out.conv("unmixing.decoder.nonlinear2", l, l, 1);
    }
    out.conv("classifier.conv1", classify::CONV1_CHANNELS, l, 3);
    out.conv("classifier.conv2", classify::CONV2_CHANNELS, classify::CONV1_CHANNELS, 3);
    out.dense("classifier.fc1", classify::HIDDEN_UNITS, classify::flatten_width(cfg.patch));
    out.dense("classifier.fc2", cfg.classes, classify::HIDDEN_UNITS);
    if cfg.fusion {
        out.conv("fusion.conv", p, p, 3);
        out.bn("fusion.bn", p);
        out.dense("fusion.out", cfg.classes, cfg.fused_width());
    }
    out.0
}

/// Freshly initialized parameters and batch-norm buffers.
pub fn init_params<T: Scalar>(cfg: &DsnetConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for slot in layout(cfg) {
        let numel: usize = slot.shape.iter().product();
        let data: Vec<f64> = match slot.init {
            Init::Const(c) => vec![c; numel],
            Init::Uniform(fan_in) | Init::NonNegative(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let clamp = matches!(slot.init, Init::NonNegative(_));
                (0..numel)
                    .map(|_| {
                        let w = rng.gen_range(-bound..bound);
                        if clamp {
                            w.max(0.0)
                        } else {
                            w
                        }
                    })
                    .collect()
            }
        };
        let t = Tensor::from_f64(&slot.shape, &data)?;
        if slot.trainable {
            store.insert(slot.name, t);
        } else {
            store.insert_buffer(slot.name, t);
        }
    }
    Ok(store)
}

/// Checks that `store` holds exactly the entries `cfg` needs, with matching
/// shapes.
pub fn check_params<T: Scalar>(cfg: &DsnetConfig, store: &ParamStore<T>) -> Result<()> {
    cfg.validate()?;
    let slots = layout(cfg);
    for slot in &slots {
        let t = store.require(&slot.name)?;
        if t.shape() != slot.shape.as_slice() {
            return Err(Error::Incompatible(format!(
                "`{}` has shape {:?}, configuration needs {:?}",
                slot.name,
                t.shape(),
                slot.shape
            )));
        }
    }
    if let Some(extra) = store.names().find(|n| !slots.iter().any(|s| s.name == *n)) {
        return Err(Error::Incompatible(format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// Abundances `[B, P_em, H, H]`.
    pub abundances: Var,
    /// Reconstruction `[B, L, H, H]`, absent when not requested.
    pub reconstruction: Option<Var>,
    /// Class features `[B, P_cls]`.
    pub features: Var,
    pub logits: Var,
}

/// Both branches on the same patch batch. The decoder runs only when
/// `reconstruct` is set.
pub fn forward<T: Scalar>(
    s: &mut Session<'_, T>,
    cfg: &DsnetConfig,
    x: Var,
    mode: Mode,
    reconstruct: bool,
) -> Result<Outputs> {
    let shape = s.tape.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("forward", format!("expected [B, L, H, H], got {shape:?}")));
    }
    if shape[1] != cfg.bands {
        return Err(Error::Dimension {
            op: "forward",
            axis: "bands",
            expected: cfg.bands,
            actual: shape[1],
        });
    }
    if shape[2] != cfg.patch || shape[3] != cfg.patch {
        return Err(Error::Dimension {
            op: "forward",
            axis: "patch",
            expected: cfg.patch,
            actual: shape[2],
        });
    }
    let h = encode(s, x, mode)?;
    let v = normalize_abundance(&mut s.tape, h)?;
    let reconstruction = if reconstruct {
        Some(decode(s, v, cfg.decoder_layers, cfg.decoder, cfg.relu)?)
    } else {
        None
    };
    let c = classify_features(s, x)?;
    let logits = if cfg.fusion {
        let fused = fuse(s, v, c, mode)?;
        predict(s, fused)?
    } else {
        classifier_only_predict(c)
    };
    Ok(Outputs {
        abundances: v,
        reconstruction,
        features: c,
        logits,
    })
}
