use std::ffi::CStr;
use std::ptr;

use nlsescat_ffi::*;

const UNIT: NlsParams = NlsParams {
    mass: 1.0,
    hbar: 1.0,
    g: 0.0,
    mu: 1.0,
};

fn well() -> *mut NlsPotential {
    let mut p = ptr::null_mut();
    assert_eq!(nls_potential_rectangular_well(50.0, 20.0, &mut p), NlsStatus::Ok);
    assert!(!p.is_null());
    p
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(nls_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn handles_round_trip() {
    let p = well();
    unsafe {
        assert_eq!(nls_potential_eval(p, 0.0), -50.0);
        assert_eq!(nls_potential_eval(p, 25.0), 0.0);
        let (mut l, mut r) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(nls_potential_split(p, -10.0, &mut l, &mut r), NlsStatus::Ok);
        assert_eq!(nls_potential_eval(l, -15.0), -50.0);
        assert_eq!(nls_potential_eval(l, 0.0), 0.0);
        assert_eq!(nls_potential_eval(r, -15.0), 0.0);
        assert_eq!(nls_potential_eval(r, 0.0), -50.0);
        nls_potential_free(l);
        nls_potential_free(r);
        nls_potential_free(p);
        nls_potential_free(ptr::null_mut());
        assert!(nls_potential_eval(ptr::null(), 0.0).is_nan());
    }
}

#[test]
fn linear_solve_matches_closed_form() {
    let p = well();
    for mu in [0.7, 1.3, 2.9] {
        let mut exact = 0.0;
        let mut r = NlsScatterResult::default();
        unsafe {
            assert_eq!(nls_rect_well_transmission(mu, 50.0, 20.0, 1.0, 1.0, &mut exact), NlsStatus::Ok);
            let params = NlsParams { mu, ..UNIT };
            assert_eq!(nls_solve_transmission(p, &params, 1.0, 0.0, NLS_LEFT_TO_RIGHT, &mut r), NlsStatus::Ok);
        }
        assert!((r.transmission - exact).abs() < 1e-8, "{mu}: {} {exact}", r.transmission);
    }
    unsafe { nls_potential_free(p) };
}

#[test]
fn resonance_and_split() {
    let p = well();
    let params = NlsParams { g: -1.0, ..UNIT };
    let mut res = NlsResonance::default();
    unsafe {
        assert_eq!(nls_find_resonance(p, &params, 1.5, 2.5, 1.0, 0.0, &mut res), NlsStatus::Ok);
    }
    assert!((res.transmission - 1.0).abs() < 1e-6);
    assert!((res.mu - 2.1345894).abs() < 1e-5);
    let mut rep = std::mem::MaybeUninit::<NlsSplitReport>::uninit();
    let rep = unsafe {
        let at = NlsParams { mu: res.mu, ..params };
        assert_eq!(nls_split_check(p, &at, -10.0, 1.0, 0.0, rep.as_mut_ptr()), NlsStatus::Ok);
        nls_potential_free(p);
        rep.assume_init()
    };
    assert!(rep.status.iter().all(|s| *s == NlsStatus::Ok));
    assert!(rep.r1 < 1e-6, "{}", rep.r1);
}

#[test]
fn errors_are_reported() {
    let mut p = ptr::null_mut();
    assert_eq!(nls_potential_rectangular_well(-1.0, 20.0, &mut p), NlsStatus::InvalidArgument);
    assert!(p.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(nls_potential_double_gaussian(1.0, 7.35, 1.47, ptr::null_mut()), NlsStatus::NullPointer);

    let w = well();
    let mut r = NlsScatterResult::default();
    unsafe {
        let bad = NlsParams { g: 2.0, ..UNIT };
        assert_eq!(nls_solve_transmission(w, &bad, 1.0, 0.0, NLS_LEFT_TO_RIGHT, &mut r), NlsStatus::NegativeRadicand);
        assert!(last_error().contains("radicand"));
        assert_eq!(nls_solve_transmission(w, &UNIT, 1.0, 0.0, 7, &mut r), NlsStatus::InvalidArgument);
        assert_eq!(nls_solve_transmission(ptr::null(), &UNIT, 1.0, 0.0, 0, &mut r), NlsStatus::NullPointer);
        let mut res = NlsResonance::default();
        assert_eq!(nls_find_resonance(w, &UNIT, 0.01, 0.02, 1.0, 0.0, &mut res), NlsStatus::NoResonance);
        nls_potential_free(w);
    }
}

#[test]
fn tabulated_from_arrays() {
    let xs: Vec<f64> = (0..=200).map(|i| -10.0 + 0.1 * i as f64).collect();
    let vs: Vec<f64> = xs.iter().map(|x| (-x * x).exp()).collect();
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(nls_potential_tabulated(xs.as_ptr(), vs.as_ptr(), xs.len(), &mut p), NlsStatus::Ok);
        assert!((nls_potential_eval(p, 0.0) - 1.0).abs() < 1e-12);
        let mut r = NlsScatterResult::default();
        assert_eq!(nls_solve_transmission(p, &UNIT, 1.0, 0.0, NLS_RIGHT_TO_LEFT, &mut r), NlsStatus::Ok);
        assert!(r.transmission > 0.0 && r.transmission < 1.0);
        assert!(r.current < 0.0);
        nls_potential_free(p);
        let desc = [1.0, 0.0];
        assert_eq!(nls_potential_tabulated(desc.as_ptr(), desc.as_ptr(), 2, &mut p), NlsStatus::InvalidArgument);
    }
}
