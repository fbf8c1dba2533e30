use std::ffi::{CStr, CString};
use std::ptr;

use comet_ffi::*;

fn last_error() -> String {
    let p = comet_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_bank(m: usize, d: usize) -> *mut CometMechanismBank {
    let hidden = [8usize, 8];
    let mut bank = ptr::null_mut();
    let st = unsafe { comet_bank_new(m, d, hidden.as_ptr(), hidden.len(), 3, &mut bank) };
    assert_eq!(st, CometStatus::Ok);
    bank
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(comet_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn bank_shape_and_predict() {
    let bank = new_bank(3, 4);
    let (mut m, mut d) = (0, 0);
    assert_eq!(
        unsafe { comet_bank_shape(bank, &mut m, &mut d) },
        CometStatus::Ok
    );
    assert_eq!((m, d), (3, 4));
    let z = [0.1, -0.2, 0.3, 0.0];
    let mut delta = [f64::NAN; 4];
    let st =
        unsafe { comet_bank_predict_delta(bank, 1, z.as_ptr(), z.as_ptr(), 4, delta.as_mut_ptr()) };
    assert_eq!(st, CometStatus::Ok);
    assert!(delta.iter().all(|v| v.is_finite()));

    let st =
        unsafe { comet_bank_predict_delta(bank, 7, z.as_ptr(), z.as_ptr(), 4, delta.as_mut_ptr()) };
    assert_eq!(st, CometStatus::Index);
    assert!(!last_error().is_empty());
    unsafe { comet_bank_free(bank) };
}

#[test]
fn null_arguments_are_reported() {
    let st = unsafe { comet_bank_shape(ptr::null(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, CometStatus::NullPointer);
    assert!(last_error().contains("null"));
    let st = unsafe { comet_bank_load(ptr::null(), ptr::null_mut()) };
    assert_eq!(st, CometStatus::NullPointer);
    unsafe { comet_bank_free(ptr::null_mut()) };
}

#[test]
fn pair_loss_then_winners() {
    let (k, d, h) = (2, 4, 2);
    let bank = new_bank(2, d);
    let states: Vec<f64> = (0..(h + 1) * k * d)
        .map(|i| (i as f64 * 0.37).sin())
        .collect();
    let mut loss = vec![0.0; k * 2 * k];
    let st =
        unsafe { comet_bank_pair_loss(bank, states.as_ptr(), h, k, loss.as_mut_ptr(), loss.len()) };
    assert_eq!(st, CometStatus::Ok);
    assert!(loss.iter().all(|&l| l >= 0.0));

    let mut mech = [9usize; 2];
    let mut ctx = [9usize; 2];
    let st =
        unsafe { comet_select_winners(loss.as_ptr(), k, 2, mech.as_mut_ptr(), ctx.as_mut_ptr()) };
    assert_eq!(st, CometStatus::Ok);
    for i in 0..k {
        let best = loss[i * 2 * k..(i + 1) * 2 * k]
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(loss[(i * 2 + mech[i]) * k + ctx[i]], best);
    }

    let mut short = vec![0.0; 3];
    let st = unsafe {
        comet_bank_pair_loss(bank, states.as_ptr(), h, k, short.as_mut_ptr(), short.len())
    };
    assert_eq!(st, CometStatus::Shape);
    unsafe { comet_bank_free(bank) };
}

#[test]
fn winner_ties_prefer_lowest_indices() {
    let loss = [1.0, 0.5, 0.5, 0.5, 2.0, 0.0, 0.0, 0.0];
    let mut mech = [0usize; 2];
    let mut ctx = [0usize; 2];
    let st =
        unsafe { comet_select_winners(loss.as_ptr(), 2, 2, mech.as_mut_ptr(), ctx.as_mut_ptr()) };
    assert_eq!(st, CometStatus::Ok);
    assert_eq!((mech[0], ctx[0]), (0, 1));
    assert_eq!((mech[1], ctx[1]), (0, 1));
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("bank.cmt1").to_str().unwrap()).unwrap();
    let bank = new_bank(2, 3);
    assert_eq!(
        unsafe { comet_bank_save(bank, path.as_ptr()) },
        CometStatus::Ok
    );
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { comet_bank_load(path.as_ptr(), &mut loaded) },
        CometStatus::Ok
    );

    let z = [0.3, 0.1, -0.4];
    let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
    unsafe {
        comet_bank_predict_delta(bank, 1, z.as_ptr(), z.as_ptr(), 3, a.as_mut_ptr());
        comet_bank_predict_delta(loaded, 1, z.as_ptr(), z.as_ptr(), 3, b.as_mut_ptr());
    }
    assert_eq!(a, b);

    let missing = CString::new(dir.path().join("nope.cmt1").to_str().unwrap()).unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { comet_bank_load(missing.as_ptr(), &mut out) };
    assert!(matches!(st, CometStatus::Io | CometStatus::Load));
    assert!(out.is_null());
    unsafe {
        comet_bank_free(bank);
        comet_bank_free(loaded);
    }
}

#[test]
fn world_steps_and_labels() {
    let id = CString::new("particles-1").unwrap();
    let mut world = ptr::null_mut();
    assert_eq!(
        unsafe { comet_world_new(id.as_ptr(), 5, &mut world) },
        CometStatus::Ok
    );
    let (mut k, mut d) = (0, 0);
    unsafe { comet_world_shape(world, &mut k, &mut d) };
    assert_eq!((k, d), (3, 7));

    let mut before = vec![0.0; k * d];
    let mut after = vec![0.0; k * d];
    let mut modes = vec![-1i32; k];
    let mut ctx = vec![usize::MAX; k];
    unsafe {
        assert_eq!(
            comet_world_state(world, before.as_mut_ptr(), before.len()),
            CometStatus::Ok
        );
        assert_eq!(
            comet_world_step(world, modes.as_mut_ptr(), ctx.as_mut_ptr()),
            CometStatus::Ok
        );
        assert_eq!(
            comet_world_state(world, after.as_mut_ptr(), after.len()),
            CometStatus::Ok
        );
        assert_eq!(
            comet_world_step(world, ptr::null_mut(), ptr::null_mut()),
            CometStatus::Ok
        );
    }
    assert_ne!(before, after);
    assert!(modes.iter().all(|&m| m >= 0));
    assert!(ctx.iter().all(|&j| j < k));

    let bad = CString::new("no-such-env").unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(
        unsafe { comet_world_new(bad.as_ptr(), 0, &mut none) },
        CometStatus::InvalidArgument
    );
    assert!(last_error().contains("no-such-env"));
    unsafe { comet_world_free(world) };
}

#[test]
fn confidence_selects_valid_pair() {
    let hidden = [8usize];
    let mut conf = ptr::null_mut();
    assert_eq!(
        unsafe { comet_confidence_new(3, 7, hidden.as_ptr(), 1, 1, &mut conf) },
        CometStatus::Ok
    );
    let states: Vec<f64> = (0..2 * 7).map(|i| i as f64 * 0.05).collect();
    let (mut m, mut j) = (99, 99);
    let st = unsafe { comet_confidence_select_pair(conf, states.as_ptr(), 2, 1, &mut m, &mut j) };
    assert_eq!(st, CometStatus::Ok);
    assert!(m < 3 && j < 2);
    let st = unsafe { comet_confidence_select_pair(conf, states.as_ptr(), 2, 5, &mut m, &mut j) };
    assert_ne!(st, CometStatus::Ok);
    unsafe { comet_confidence_free(conf) };
}
