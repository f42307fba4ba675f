//! C interface to the dsnet engine.
//!
//! Every fallible call returns a [`DsnetStatus`]; on failure the message is
//! available from [`dsnet_last_error`] on the same thread. Handles are opaque
//! and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dsnet::cli::RunConfig;
use dsnet::data::{generate_scene, LabelRaster, PatchSet, SceneSpec, SpectralCube};
use dsnet::experiment::{self, Dataset};
use dsnet::metrics::ConfusionMatrix;
use dsnet::model::{DsnetConfig, Precision};
use dsnet::tensor::{checkpoint, ParamStore, Scalar};
use dsnet::{losses, train, Error, ErrorKind};

/// Call outcome. The first four values match the command line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsnetStatus {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DsnetMetrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DsnetDims {
    pub bands: usize,
    pub rows: usize,
    pub cols: usize,
    /// Highest label in the scene, or the model's class count.
    pub classes: usize,
    /// Endmember count; 0 for scenes without ground truth.
    pub endmembers: usize,
}

/// A spectral cube with labels and, when synthesized, ground-truth abundances.
pub struct DsnetScene {
    data: Dataset,
    abundances: Option<Vec<f64>>,
}

enum Store {
    F32(ParamStore<f32>),
    F64(ParamStore<f64>),
}

/// Trained network parameters plus architecture.
pub struct DsnetModel {
    config: DsnetConfig,
    store: Store,
    meta: BTreeMap<String, String>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Engine(Error),
    Status(DsnetStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DsnetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            DsnetStatus::Ok
        }
        Ok(Err(Failure::Engine(e))) => {
            set_error(e.to_string());
            match e.kind() {
                ErrorKind::Usage => DsnetStatus::Usage,
                ErrorKind::Data => DsnetStatus::Data,
                ErrorKind::Numeric => DsnetStatus::Numeric,
            }
        }
        Ok(Err(Failure::Status(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DsnetStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(DsnetStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure::Status(DsnetStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    text(p, what)?.map(PathBuf::from).ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn fill<T: Copy>(values: &[T], out: *mut T, len: usize, what: &str) -> Result<(), Failure> {
    if len < values.len() {
        return Err(Failure::Status(
            DsnetStatus::BufferTooSmall,
            format!("`{what}` holds {len} values, {} needed", values.len()),
        ));
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    unsafe { out.write(value) };
    Ok(())
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dsnet_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dsnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Synthesizes a scene. `spec_json` may be null for the default scene; any
/// keys it gives override the defaults.
///
/// # Safety
/// `spec_json` must be null or a nul-terminated string; `out` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn dsnet_scene_generate(spec_json: *const c_char, seed: u64, out: *mut *mut DsnetScene) -> DsnetStatus {
    guard(|| {
        let spec = match text(spec_json, "spec_json")? {
            Some(t) => serde_json::from_str::<SceneSpec>(t).map_err(|e| Error::Scene(e.to_string()))?,
            None => SceneSpec::default(),
        };
        let scene = generate_scene(&spec, seed)?;
        let handle = DsnetScene {
            data: Dataset::new(scene.cube, scene.labels)?,
            abundances: Some(scene.abundances),
        };
        write(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// Wraps caller data: `cube` is band-sequential `[bands, rows, cols]`,
/// `labels` is `[rows, cols]` with 0 for unlabeled pixels.
///
/// # Safety
/// `cube` and `labels` must hold `bands * rows * cols` and `rows * cols`
/// values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsnet_scene_from_arrays(
    bands: usize,
    rows: usize,
    cols: usize,
    cube: *const f64,
    labels: *const u16,
    out: *mut *mut DsnetScene,
) -> DsnetStatus {
    guard(|| {
        let pixels = rows.checked_mul(cols).ok_or_else(|| Error::Config("scene size overflows".into()))?;
        let values = pixels.checked_mul(bands).ok_or_else(|| Error::Config("scene size overflows".into()))?;
        let cube = SpectralCube::new(bands, rows, cols, slice(cube, values, "cube")?.to_vec())?;
        let labels = LabelRaster::new(rows, cols, slice(labels, pixels, "labels")?.to_vec())?;
        let handle = DsnetScene {
            data: Dataset::new(cube, labels)?,
            abundances: None,
        };
        write(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// # Safety
/// `scene` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsnet_scene_free(scene: *mut DsnetScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsnet_scene_dims(scene: *const DsnetScene, out: *mut DsnetDims) -> DsnetStatus {
    guard(|| {
        let s = borrow(scene, "scene")?;
        let cube = &s.data.cube;
        let pixels = cube.rows() * cube.cols();
        let dims = DsnetDims {
            bands: cube.bands(),
            rows: cube.rows(),
            cols: cube.cols(),
            classes: s.data.classes,
            endmembers: s.abundances.as_ref().map_or(0, |a| a.len() / pixels.max(1)),
        };
        write(out, dims, "out")
    })
}

/// Copies the cube, band-sequential.
///
/// # Safety
/// `scene` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dsnet_scene_cube(scene: *const DsnetScene, out: *mut f64, len: usize) -> DsnetStatus {
    guard(|| fill(borrow(scene, "scene")?.data.cube.data(), out, len, "out"))
}

/// # Safety
/// `scene` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dsnet_scene_labels(scene: *const DsnetScene, out: *mut u16, len: usize) -> DsnetStatus {
    guard(|| fill(borrow(scene, "scene")?.data.labels.labels(), out, len, "out"))
}

/// Ground-truth abundances `[endmembers, rows, cols]`; a data error for
/// scenes built from caller arrays.
///
/// # Safety
/// `scene` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dsnet_scene_abundances(scene: *const DsnetScene, out: *mut f64, len: usize) -> DsnetStatus {
    guard(|| {
        let a = borrow(scene, "scene")?
            .abundances
            .as_ref()
            .ok_or_else(|| Error::Empty("scene has no ground-truth abundances".into()))?;
        fill(a, out, len, "out")
    })
}

fn train_model<T: Scalar>(data: &Dataset, cfg: &RunConfig) -> Result<(DsnetModel, DsnetMetrics), Error>
where
    Store: From<ParamStore<T>>,
{
    let run = experiment::run::<T>(data, &cfg.split, &cfg.train, |_, _| Ok(()))?;
    let mut meta = run.model.to_meta();
    meta.insert("precision".into(), cfg.train.precision.bits().to_string());
    meta.insert("seed".into(), cfg.train.seed.to_string());
    meta.insert("epochs".into(), cfg.train.epochs.to_string());
    let metrics = DsnetMetrics {
        oa: run.metrics.oa,
        aa: run.metrics.aa,
        kappa: run.metrics.kappa,
    };
    Ok((
        DsnetModel {
            config: run.model,
            store: run.params.into(),
            meta,
        },
        metrics,
    ))
}

impl From<ParamStore<f32>> for Store {
    fn from(s: ParamStore<f32>) -> Self {
        Store::F32(s)
    }
}

impl From<ParamStore<f64>> for Store {
    fn from(s: ParamStore<f64>) -> Self {
        Store::F64(s)
    }
}

/// Splits the scene's labeled pixels, trains, and scores the held-out part.
/// `config_json` uses the configuration file schema (`seed`, `split`,
/// `train`); null means defaults. `metrics` may be null.
///
/// # Safety
/// `scene` must be a live handle; `config_json` null or nul-terminated;
/// `out` valid for writes; `metrics` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsnet_model_train(
    scene: *const DsnetScene,
    config_json: *const c_char,
    out: *mut *mut DsnetModel,
    metrics: *mut DsnetMetrics,
) -> DsnetStatus {
    guard(|| {
        let s = borrow(scene, "scene")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = match text(config_json, "config_json")? {
            Some(t) => RunConfig::parse(t, false)?,
            None => RunConfig::default(),
        };
        let (model, m) = match cfg.train.precision {
            Precision::F32 => train_model::<f32>(&s.data, &cfg)?,
            Precision::F64 => train_model::<f64>(&s.data, &cfg)?,
        };
        if !metrics.is_null() {
            metrics.write(m);
        }
        out.write(Box::into_raw(Box::new(model)));
        Ok(())
    })
}

/// Loads a checkpoint written by the command line tool or
/// [`dsnet_model_save`], at the precision it was saved with.
///
/// # Safety
/// `path` must be nul-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsnet_model_load(path_str: *const c_char, out: *mut *mut DsnetModel) -> DsnetStatus {
    guard(|| {
        let p = path(path_str, "path")?;
        let (f32_store, meta) = checkpoint::load::<f32>(&p)?;
        let config = DsnetConfig::from_meta(&meta)?;
        let bits: u32 = meta
            .get("precision")
            .map_or(Ok(32), |b| b.parse())
            .map_err(|_| Error::Incompatible("bad `precision` value".into()))?;
        let store = match Precision::from_bits(bits)? {
            Precision::F32 => Store::F32(f32_store),
            Precision::F64 => Store::F64(checkpoint::load::<f64>(&p)?.0),
        };
        match &store {
            Store::F32(s) => dsnet::model::check_params(&config, s)?,
            Store::F64(s) => dsnet::model::check_params(&config, s)?,
        }
        write(out, Box::into_raw(Box::new(DsnetModel { config, store, meta })), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn dsnet_model_save(model: *const DsnetModel, path_str: *const c_char) -> DsnetStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let p = path(path_str, "path")?;
        match &m.store {
            Store::F32(s) => checkpoint::save(s, &m.meta, &p)?,
            Store::F64(s) => checkpoint::save(s, &m.meta, &p)?,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsnet_model_free(model: *mut DsnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input bands, classes and endmembers of the model; rows and cols are the
/// patch size.
///
/// # Safety
/// `model` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsnet_model_dims(model: *const DsnetModel, out: *mut DsnetDims) -> DsnetStatus {
    guard(|| {
        let c = &borrow(model, "model")?.config;
        let dims = DsnetDims {
            bands: c.bands,
            rows: c.patch,
            cols: c.patch,
            classes: c.classes,
            endmembers: c.endmembers,
        };
        write(out, dims, "out")
    })
}

fn check_bands(model: &DsnetModel, scene: &DsnetScene) -> Result<(), Error> {
    if model.config.bands != scene.data.cube.bands() {
        return Err(Error::Incompatible(format!(
            "scene has {} bands, model expects {}",
            scene.data.cube.bands(),
            model.config.bands
        )));
    }
    Ok(())
}

/// Predicted 1-based class of every pixel, row-major `[rows, cols]`.
///
/// # Safety
/// Both handles must be live; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dsnet_model_classify(
    model: *mut DsnetModel,
    scene: *const DsnetScene,
    out: *mut u16,
    len: usize,
) -> DsnetStatus {
    guard(|| {
        let m = borrow_mut(model, "model")?;
        let s = borrow(scene, "scene")?;
        check_bands(m, s)?;
        let set = PatchSet::all_pixels(&s.data.cube, None, m.config.patch)?;
        let all: Vec<usize> = (0..set.len()).collect();
        let predicted = match &mut m.store {
            Store::F32(p) => train::predict_classes(p, &m.config, &set, &all)?,
            Store::F64(p) => train::predict_classes(p, &m.config, &set, &all)?,
        };
        let labels: Vec<u16> = predicted.into_iter().map(|c| c as u16 + 1).collect();
        fill(&labels, out, len, "out")
    })
}

/// Estimated abundances `[endmembers, rows, cols]` over the whole scene.
///
/// # Safety
/// Both handles must be live; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dsnet_model_abundances(
    model: *mut DsnetModel,
    scene: *const DsnetScene,
    out: *mut f64,
    len: usize,
) -> DsnetStatus {
    guard(|| {
        let m = borrow_mut(model, "model")?;
        let s = borrow(scene, "scene")?;
        check_bands(m, s)?;
        let maps = match &mut m.store {
            Store::F32(p) => train::abundance_maps(p, &m.config, &s.data.cube)?,
            Store::F64(p) => train::abundance_maps(p, &m.config, &s.data.cube)?,
        };
        fill(maps.data(), out, len, "out")
    })
}

/// OA, AA and Kappa of a row-major `classes x classes` confusion matrix,
/// rows indexed by true class.
///
/// # Safety
/// `counts` must hold `classes * classes` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsnet_metrics_from_counts(counts: *const u64, classes: usize, out: *mut DsnetMetrics) -> DsnetStatus {
    guard(|| {
        let cells = classes.checked_mul(classes).ok_or_else(|| Error::Metrics("class count overflows".into()))?;
        let rows: Vec<Vec<u64>> = slice(counts, cells, "counts")?
            .chunks(classes.max(1))
            .map(<[u64]>::to_vec)
            .collect();
        let m = ConfusionMatrix::from_rows(&rows)?.metrics()?;
        write(out, DsnetMetrics { oa: m.oa, aa: m.aa, kappa: m.kappa }, "out")
    })
}

/// Spectral angle in radians between two spectra of length `len`.
///
/// # Safety
/// `u` and `w` must hold `len` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsnet_sad(u: *const f64, w: *const f64, len: usize, out: *mut f64) -> DsnetStatus {
    guard(|| {
        let angle = losses::sad(slice(u, len, "u")?, slice(w, len, "w")?)?;
        write(out, angle, "out")
    })
}

/// Learning rate at a 0-based epoch under step decay.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsnet_lr_at(epoch: usize, lr0: f64, decay_factor: f64, decay_every: usize, out: *mut f64) -> DsnetStatus {
    guard(|| {
        let cfg = train::TrainConfig {
            lr0,
            decay_factor,
            decay_every,
            ..train::TrainConfig::default()
        };
        cfg.validate()?;
        write(out, train::lr_at(epoch, &cfg), "out")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_maps_failures_and_clears_on_success() {
        assert_eq!(guard(|| Err(Error::UndefinedAngle.into())), DsnetStatus::Numeric);
        assert!(!dsnet_last_error().is_null());
        assert_eq!(guard(|| Ok(())), DsnetStatus::Ok);
        assert!(dsnet_last_error().is_null());
        let hook = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let status = guard(|| panic!("boom"));
        std::panic::set_hook(hook);
        assert_eq!(status, DsnetStatus::Panic);
    }

    #[test]
    fn messages_with_nul_bytes_survive() {
        set_error("a\0b".into());
        let msg = unsafe { CStr::from_ptr(dsnet_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "a b");
    }

    #[test]
    fn fill_checks_capacity_before_writing() {
        let mut out = [0u16; 2];
        assert!(matches!(
            unsafe { fill(&[1, 2, 3], out.as_mut_ptr(), 2, "out") },
            Err(Failure::Status(DsnetStatus::BufferTooSmall, _))
        ));
        assert_eq!(out, [0, 0]);
        assert!(unsafe { fill(&[7, 8], out.as_mut_ptr(), 2, "out") }.is_ok());
        assert_eq!(out, [7, 8]);
        assert!(unsafe { fill::<u16>(&[], ptr::null_mut(), 0, "out") }.is_ok());
    }
}
