use std::ffi::CString;
use std::ptr;

use kdgm::net::{NetworkParams, NetworkShape};
use kdgm::pde::PdeModel;
use kdgm::persistence;
use kdgm::trainer::{Provenance, TrainedModel};
use kdgm_ffi::*;

fn trained(model: PdeModel) -> TrainedModel {
    let shape = NetworkShape::new(model.input_dim(), 6, 2).unwrap();
    TrainedModel {
        params: NetworkParams::init_xavier(shape, 3),
        model,
        provenance: Provenance {
            config_hash: "test".into(),
            best_loss: None,
            best_epoch: None,
            epochs_run: 0,
        },
    }
}

fn load(tm: &TrainedModel, dir: &tempfile::TempDir) -> *mut KdgmModel {
    let path = dir.path().join("m.kdgm");
    persistence::save(tm, &path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { kdgm_model_load(c.as_ptr(), &mut handle) },
        KdgmStatus::Ok
    );
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { kdgm_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn eval_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let tm = trained(PdeModel::gbm_default());
    let h = load(&tm, &dir);
    let input = [0.5, 0.1, -0.2, 0.3];
    let mut out = f64::NAN;
    assert_eq!(
        unsafe { kdgm_model_eval(h, input.as_ptr(), 4, &mut out) },
        KdgmStatus::Ok
    );
    assert_eq!(out, tm.params.eval(&input).unwrap());
    assert_eq!(unsafe { kdgm_model_input_dim(h) }, 4);
    let mut kind = KdgmModelKind::Heston;
    assert_eq!(unsafe { kdgm_model_kind(h, &mut kind) }, KdgmStatus::Ok);
    assert_eq!(kind, KdgmModelKind::Gbm);
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(
        unsafe { kdgm_model_bounds(h, 1, &mut lo, &mut hi) },
        KdgmStatus::Ok
    );
    assert_eq!((lo, hi), (-2.3, 2.3));
    unsafe { kdgm_model_free(h) };
}

#[test]
fn out_of_domain_and_wrong_factor_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let h = load(&trained(PdeModel::gbm_default()), &dir);
    let mut out = 0.0;
    let s = unsafe { kdgm_density_1d(h, 0.5, 0.0, 5.0, 0.2, 0.005, &mut out) };
    assert_eq!(s, KdgmStatus::OutOfDomain);
    assert!(last_error().contains('y'), "{}", last_error());
    let s = unsafe { kdgm_density_2d(h, 0.5, 0.0, 0.1, 0.0, 0.1, ptr::null(), 0, 0.005, &mut out) };
    assert_eq!(s, KdgmStatus::Config);
    assert_eq!(
        unsafe { kdgm_density_1d(h, 0.5, 0.0, 0.0, 0.2, 0.005, &mut out) },
        KdgmStatus::Ok
    );
    assert!(out.is_finite());
    let s = unsafe { kdgm_price_1d(h, KdgmOptionKind::Call, 1.0, 1.0, 0.5, 0.2, 51, &mut out) };
    assert_eq!(s, KdgmStatus::Ok);
    unsafe { kdgm_model_free(h) };
}

#[test]
fn two_factor_density_takes_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let h = load(&trained(PdeModel::heston_default()), &dir);
    let params = [1.0, 0.2, 0.2, 0.0];
    let mut out = f64::NAN;
    let s = unsafe {
        kdgm_density_2d(
            h,
            0.2,
            0.0,
            0.2,
            0.1,
            0.3,
            params.as_ptr(),
            4,
            0.005,
            &mut out,
        )
    };
    assert_eq!(s, KdgmStatus::Ok);
    assert!(out >= 0.0);
    let s = unsafe {
        kdgm_density_2d(
            h,
            0.2,
            0.0,
            0.2,
            0.1,
            0.3,
            params.as_ptr(),
            3,
            0.005,
            &mut out,
        )
    };
    assert_eq!(s, KdgmStatus::Config);
    unsafe { kdgm_model_free(h) };
}

#[test]
fn load_failures_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = ptr::null_mut();
    let missing = CString::new(dir.path().join("none.kdgm").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { kdgm_model_load(missing.as_ptr(), &mut h) },
        KdgmStatus::Io
    );
    let junk = dir.path().join("junk.kdgm");
    std::fs::write(&junk, b"not a model").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { kdgm_model_load(junk.as_ptr(), &mut h) },
        KdgmStatus::Format
    );
    assert!(h.is_null());
    assert_eq!(
        unsafe { kdgm_model_load(ptr::null(), &mut h) },
        KdgmStatus::InvalidArgument
    );
    let mut out = 0.0;
    assert_eq!(
        unsafe { kdgm_model_eval(ptr::null(), ptr::null(), 0, &mut out) },
        KdgmStatus::InvalidArgument
    );
    unsafe { kdgm_model_free(ptr::null_mut()) };
}

#[test]
fn last_error_truncates_safely() {
    let mut h = ptr::null_mut();
    unsafe { kdgm_model_load(ptr::null(), &mut h) };
    let mut buf = [1 as std::ffi::c_char; 4];
    let n = unsafe { kdgm_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 3);
    assert_eq!(buf[3], 0);
    assert_eq!(unsafe { kdgm_last_error(ptr::null_mut(), 0) }, n);
}

#[test]
fn black_scholes_reference() {
    let p = kdgm_bs_price(1.0, 1.0, 0.25, 1.0, KdgmOptionKind::Call);
    assert!((p - 0.0994764497).abs() < 1e-9);
}

#[test]
fn header_declares_the_interface() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/kdgm.h")).unwrap();
    for name in [
        "kdgm_model_load",
        "kdgm_model_free",
        "kdgm_density_2d",
        "kdgm_price_2d",
        "kdgm_last_error",
    ] {
        assert!(header.contains(name), "{name} missing");
    }
}

#[test]
fn one_handle_serves_several_threads() {
    let dir = tempfile::tempdir().unwrap();
    let tm = trained(PdeModel::gbm_default());
    let h = load(&tm, &dir) as usize;
    let expected = tm.params.eval(&[0.5, 0.1, -0.2, 0.3]).unwrap();
    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| {
                let input = [0.5, 0.1, -0.2, 0.3];
                let mut out = f64::NAN;
                let status =
                    unsafe { kdgm_model_eval(h as *const KdgmModel, input.as_ptr(), 4, &mut out) };
                assert_eq!(status, KdgmStatus::Ok);
                assert_eq!(out, expected);
            });
        }
    });
    unsafe { kdgm_model_free(h as *mut KdgmModel) };
}
