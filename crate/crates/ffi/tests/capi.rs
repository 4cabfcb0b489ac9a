use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use rse_core::data::{add_gaussian_noise, synthetic_image};
use rse_core::train::denoise_image;
use rse_core::{ModelCheckpoint, ModelConfig, Vae};
use rse_ffi::*;

fn saved_model(dir: &std::path::Path) -> ModelCheckpoint {
    let ck = ModelCheckpoint::new(
        Vae::new(ModelConfig { patch: 8, overlap: 2, latent_dim: 6 }, 2).unwrap(),
        2,
    );
    ck.save(dir).unwrap();
    ModelCheckpoint::load(dir).unwrap()
}

fn last_error() -> String {
    let p = rse_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn denoise_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let ck = saved_model(dir.path());
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { rse_model_load(path.as_ptr(), &mut model) }, RseStatus::Ok);
    assert!(rse_last_error().is_null());

    let (mut patch, mut overlap) = (0, 0);
    assert_eq!(unsafe { rse_model_geometry(model, &mut patch, &mut overlap) }, RseStatus::Ok);
    assert_eq!((patch, overlap), (8, 2));

    let img = add_gaussian_noise(&synthetic_image(14, 3), 0.1, 1).unwrap();
    let bytes = img.to_bytes();
    let mut out = vec![0u8; bytes.len()];
    let s = unsafe { rse_denoise_rgb8(model, bytes.as_ptr(), 14, 14, out.as_mut_ptr()) };
    assert_eq!(s, RseStatus::Ok);
    let quantized = rse_core::data::ImageBuffer::from_bytes(14, 14, &bytes).unwrap();
    assert_eq!(out, denoise_image(&quantized, &ck.model).unwrap().to_bytes());

    // 15 x 15 does not tile with D = 8, overlap 2
    let odd = vec![0u8; 15 * 15 * 3];
    let mut odd_out = vec![0u8; odd.len()];
    let s = unsafe { rse_denoise_rgb8(model, odd.as_ptr(), 15, 15, odd_out.as_mut_ptr()) };
    assert_eq!(s, RseStatus::Geometry);
    assert!(last_error().contains("14x14"));

    unsafe { rse_model_free(model) };
    unsafe { rse_model_free(ptr::null_mut()) };
}

#[test]
fn null_and_missing_inputs() {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { rse_model_load(ptr::null(), &mut model) }, RseStatus::NullPointer);
    assert!(last_error().contains("path"));
    let missing = CString::new("/nonexistent/rse-checkpoint").unwrap();
    assert_eq!(unsafe { rse_model_load(missing.as_ptr(), &mut model) }, RseStatus::Io);
    assert!(model.is_null());
    assert!(!last_error().is_empty());

    let buf = [0u8; 12];
    let mut out = [0u8; 12];
    let s = unsafe { rse_denoise_rgb8(ptr::null(), buf.as_ptr(), 2, 2, out.as_mut_ptr()) };
    assert_eq!(s, RseStatus::NullPointer);
    let mut p = 0.0;
    assert_eq!(unsafe { rse_psnr_rgb8(buf.as_ptr(), buf.as_ptr(), 0, 2, &mut p) }, RseStatus::InvalidArgument);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    saved_model(dir.path());
    let blob = dir.path().join("tensors.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&blob, bytes).unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { rse_model_load(path.as_ptr(), &mut model) }, RseStatus::Checkpoint);
    assert!(model.is_null());
}

#[test]
fn psnr_values() {
    let a = [0u8; 12];
    let b = [16u8; 12];
    let mut p = 0.0;
    assert_eq!(unsafe { rse_psnr_rgb8(a.as_ptr(), a.as_ptr(), 2, 2, &mut p) }, RseStatus::Ok);
    assert_eq!(p, f64::INFINITY);
    assert_eq!(unsafe { rse_psnr_rgb8(a.as_ptr(), b.as_ptr(), 2, 2, &mut p) }, RseStatus::Ok);
    assert!((p - 10.0 * (255.0f64 * 255.0 / 256.0).log10()).abs() < 1e-9);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(rse_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(format!("{dir}/tests/smoke.c"))
        .status()
    else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    assert!(status.success());
}
