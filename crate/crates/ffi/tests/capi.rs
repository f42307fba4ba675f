use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dsnet_ffi::*;

const TINY: &str = r#"{"bands":8,"materials":3,"rows":16,"cols":16,"smoothness":1.0,"purity_threshold":null}"#;
const QUICK: &str = r#"{"seed":4,"split":{"rule":{"per_class":10}},"train":{"epochs":6,"batch_size":16,"deterministic":true}}"#;

fn last_error() -> Option<String> {
    let p = dsnet_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn tiny_scene(seed: u64) -> *mut DsnetScene {
    let spec = CString::new(TINY).unwrap();
    let mut scene = ptr::null_mut();
    assert_eq!(unsafe { dsnet_scene_generate(spec.as_ptr(), seed, &mut scene) }, DsnetStatus::Ok);
    scene
}

fn dims(scene: *const DsnetScene) -> DsnetDims {
    let mut d = DsnetDims::default();
    assert_eq!(unsafe { dsnet_scene_dims(scene, &mut d) }, DsnetStatus::Ok);
    d
}

#[test]
fn metrics_of_a_hand_worked_matrix() {
    let counts = [40u64, 10, 20, 30];
    let mut m = DsnetMetrics::default();
    assert_eq!(unsafe { dsnet_metrics_from_counts(counts.as_ptr(), 2, &mut m) }, DsnetStatus::Ok);
    assert_eq!(m, DsnetMetrics { oa: 0.7, aa: 0.7, kappa: 0.4 });
    assert!(last_error().is_none());

    let empty_row = [5u64, 0, 0, 0];
    assert_eq!(unsafe { dsnet_metrics_from_counts(empty_row.as_ptr(), 2, &mut m) }, DsnetStatus::Data);
    assert!(last_error().unwrap().contains("class 2"));
}

#[test]
fn null_and_bad_text_arguments_are_reported() {
    let mut m = DsnetMetrics::default();
    assert_eq!(unsafe { dsnet_metrics_from_counts(ptr::null(), 2, &mut m) }, DsnetStatus::NullPointer);
    assert_eq!(last_error().unwrap(), "`counts` is null");
    assert_eq!(unsafe { dsnet_metrics_from_counts([1u64].as_ptr(), 1, ptr::null_mut()) }, DsnetStatus::NullPointer);

    let bad = [0xffu8, 0xfe, 0];
    let mut scene = ptr::null_mut();
    assert_eq!(unsafe { dsnet_scene_generate(bad.as_ptr().cast(), 0, &mut scene) }, DsnetStatus::InvalidUtf8);
    assert!(scene.is_null());
    let unknown = CString::new(r#"{"bands":"many"}"#).unwrap();
    assert_eq!(unsafe { dsnet_scene_generate(unknown.as_ptr(), 0, &mut scene) }, DsnetStatus::Usage);
    assert!(scene.is_null());

    unsafe {
        dsnet_scene_free(ptr::null_mut());
        dsnet_model_free(ptr::null_mut());
    }
}

#[test]
fn spectral_angle_and_schedule() {
    let (u, w) = ([1.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
    let mut angle = 0.0;
    assert_eq!(unsafe { dsnet_sad(u.as_ptr(), w.as_ptr(), 3, &mut angle) }, DsnetStatus::Ok);
    assert!((angle - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    let zero = [0.0; 3];
    assert_eq!(unsafe { dsnet_sad(u.as_ptr(), zero.as_ptr(), 3, &mut angle) }, DsnetStatus::Numeric);

    let mut lr = 0.0;
    for (epoch, want) in [(49, 1e-3), (50, 9e-4), (100, 8.1e-4)] {
        assert_eq!(unsafe { dsnet_lr_at(epoch, 1e-3, 0.9, 50, &mut lr) }, DsnetStatus::Ok);
        assert_eq!(lr, want);
    }
    assert_eq!(unsafe { dsnet_lr_at(0, 1e-3, 0.9, 0, &mut lr) }, DsnetStatus::Usage);
    assert!(last_error().unwrap().contains("decay interval"));

    let v = unsafe { CStr::from_ptr(dsnet_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn scene_buffers_round_trip() {
    let scene = tiny_scene(3);
    let d = dims(scene);
    assert_eq!((d.bands, d.rows, d.cols, d.classes, d.endmembers), (8, 16, 16, 3, 3));
    let pixels = d.rows * d.cols;

    let mut cube = vec![0.0; d.bands * pixels];
    let mut labels = vec![0u16; pixels];
    let mut abundances = vec![0.0; d.endmembers * pixels];
    unsafe {
        assert_eq!(dsnet_scene_cube(scene, cube.as_mut_ptr(), cube.len() - 1), DsnetStatus::BufferTooSmall);
        assert_eq!(dsnet_scene_cube(scene, cube.as_mut_ptr(), cube.len()), DsnetStatus::Ok);
        assert_eq!(dsnet_scene_labels(scene, labels.as_mut_ptr(), labels.len()), DsnetStatus::Ok);
        assert_eq!(dsnet_scene_abundances(scene, abundances.as_mut_ptr(), abundances.len()), DsnetStatus::Ok);
    }
    for i in 0..pixels {
        let sum: f64 = (0..d.endmembers).map(|p| abundances[p * pixels + i]).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    let mut copy = ptr::null_mut();
    let status = unsafe { dsnet_scene_from_arrays(d.bands, d.rows, d.cols, cube.as_ptr(), labels.as_ptr(), &mut copy) };
    assert_eq!(status, DsnetStatus::Ok);
    assert_eq!(dims(copy), DsnetDims { endmembers: 0, ..d });
    let mut back = vec![0.0; cube.len()];
    unsafe {
        assert_eq!(dsnet_scene_cube(copy, back.as_mut_ptr(), back.len()), DsnetStatus::Ok);
        assert_eq!(dsnet_scene_abundances(copy, abundances.as_mut_ptr(), abundances.len()), DsnetStatus::Data);
    }
    assert_eq!(back, cube);

    let unlabeled = vec![0u16; pixels];
    let status = unsafe { dsnet_scene_from_arrays(d.bands, d.rows, d.cols, cube.as_ptr(), unlabeled.as_ptr(), &mut copy) };
    assert_eq!(status, DsnetStatus::Data);
    unsafe {
        dsnet_scene_free(copy);
        dsnet_scene_free(scene);
    }
}

#[test]
fn train_classify_save_and_reload() {
    let scene = tiny_scene(5);
    let d = dims(scene);
    let config = CString::new(QUICK).unwrap();
    let mut model = ptr::null_mut();
    let mut metrics = DsnetMetrics::default();
    assert_eq!(unsafe { dsnet_model_train(scene, config.as_ptr(), &mut model, &mut metrics) }, DsnetStatus::Ok);
    assert!((0.0..=1.0).contains(&metrics.oa) && metrics.kappa <= metrics.oa);

    let mut md = DsnetDims::default();
    assert_eq!(unsafe { dsnet_model_dims(model, &mut md) }, DsnetStatus::Ok);
    assert_eq!((md.bands, md.classes, md.endmembers, md.rows), (8, 3, 3, 7));

    let pixels = d.rows * d.cols;
    let mut predicted = vec![0u16; pixels];
    let mut abundances = vec![0.0; md.endmembers * pixels];
    unsafe {
        assert_eq!(dsnet_model_classify(model, scene, predicted.as_mut_ptr(), pixels), DsnetStatus::Ok);
        assert_eq!(dsnet_model_abundances(model, scene, abundances.as_mut_ptr(), abundances.len()), DsnetStatus::Ok);
    }
    assert!(predicted.iter().all(|&c| (1..=3).contains(&c)));
    for i in 0..pixels {
        let column: Vec<f64> = (0..md.endmembers).map(|p| abundances[p * pixels + i]).collect();
        assert!(column.iter().all(|&a| a > 0.0));
        assert!((column.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("model").to_str().unwrap()).unwrap();
    let mut reloaded = ptr::null_mut();
    let mut again = vec![0u16; pixels];
    unsafe {
        assert_eq!(dsnet_model_save(model, path.as_ptr()), DsnetStatus::Ok);
        assert_eq!(dsnet_model_load(path.as_ptr(), &mut reloaded), DsnetStatus::Ok);
        assert_eq!(dsnet_model_classify(reloaded, scene, again.as_mut_ptr(), pixels), DsnetStatus::Ok);
    }
    assert_eq!(again, predicted);

    let other = CString::new(r#"{"bands":6,"materials":3,"rows":12,"cols":12,"purity_threshold":null}"#).unwrap();
    let mut wrong = ptr::null_mut();
    unsafe {
        assert_eq!(dsnet_scene_generate(other.as_ptr(), 0, &mut wrong), DsnetStatus::Ok);
        assert_eq!(dsnet_model_classify(model, wrong, again.as_mut_ptr(), 144), DsnetStatus::Data);
    }
    assert!(last_error().unwrap().contains("bands"));

    let missing = CString::new(dir.path().join("absent").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { dsnet_model_load(missing.as_ptr(), &mut none) }, DsnetStatus::Data);
    assert!(none.is_null());

    unsafe {
        dsnet_scene_free(wrong);
        dsnet_model_free(reloaded);
        dsnet_model_free(model);
        dsnet_scene_free(scene);
    }
}

#[test]
fn f64_models_train_and_reload() {
    let scene = tiny_scene(6);
    let config = CString::new(r#"{"train":{"epochs":2,"batch_size":16,"precision":"64"},"split":{"rule":{"per_class":5}}}"#).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dsnet_model_train(scene, config.as_ptr(), &mut model, ptr::null_mut()) }, DsnetStatus::Ok);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m64").to_str().unwrap()).unwrap();
    let mut reloaded = ptr::null_mut();
    let (mut a, mut b) = (vec![0u16; 256], vec![0u16; 256]);
    unsafe {
        assert_eq!(dsnet_model_save(model, path.as_ptr()), DsnetStatus::Ok);
        assert_eq!(dsnet_model_load(path.as_ptr(), &mut reloaded), DsnetStatus::Ok);
        assert_eq!(dsnet_model_classify(model, scene, a.as_mut_ptr(), 256), DsnetStatus::Ok);
        assert_eq!(dsnet_model_classify(reloaded, scene, b.as_mut_ptr(), 256), DsnetStatus::Ok);
        dsnet_model_free(reloaded);
        dsnet_model_free(model);
        dsnet_scene_free(scene);
    }
    assert_eq!(a, b);
}

#[test]
fn bad_training_config_is_a_usage_error() {
    let scene = tiny_scene(7);
    let mut model = ptr::null_mut();
    let config = CString::new(r#"{"train":{"lambda":2.0}}"#).unwrap();
    assert_eq!(unsafe { dsnet_model_train(scene, config.as_ptr(), &mut model, ptr::null_mut()) }, DsnetStatus::Usage);
    let config = CString::new(r#"{"train":{"learning_rate":1}}"#).unwrap();
    assert_eq!(unsafe { dsnet_model_train(scene, config.as_ptr(), &mut model, ptr::null_mut()) }, DsnetStatus::Usage);
    assert!(last_error().unwrap().contains("learning_rate"));
    assert!(model.is_null());
    unsafe { dsnet_scene_free(scene) };
}

/// Compiles a C program against the generated header and the shared library.
#[test]
fn c_program_links_against_the_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    assert!(
        lib_dir.join("libdsnet_ffi.so").exists() || lib_dir.join("libdsnet_ffi.dylib").exists(),
        "shared library missing from {}",
        lib_dir.display()
    );
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("capi_smoke");
    let build = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&out)
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-ldsnet_ffi")
        .output()
        .expect("a C compiler");
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&out).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(stdout.trim(), "oa=0.7 aa=0.7 kappa=0.4 scene=8x16x16 null=4");
}
