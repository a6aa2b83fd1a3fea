use std::ffi::{c_char, CStr};
use std::ptr;

use lilypad_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        lilypad_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

unsafe fn two_point() -> *mut LilypadSolution {
    let coords = [1.0, 4.0];
    let marks = [2.0, 8.0];
    let mut set = ptr::null_mut();
    let st = lilypad_point_set_from_points(1, 2.0, 10.0, 0.5, coords.as_ptr(), marks.as_ptr(), 2, &mut set);
    assert_eq!(st, LilypadStatus::Ok);
    assert_eq!(lilypad_point_set_len(set), 2);
    let mut sol = ptr::null_mut();
    assert_eq!(lilypad_solve(set, 0.5, 10.0, &mut sol), LilypadStatus::Ok);
    // the solution keeps the set alive
    lilypad_point_set_free(set);
    sol
}

#[test]
fn worked_example_through_the_abi() {
    unsafe {
        let sol = two_point();
        let mut h = 0.0;
        assert_eq!(lilypad_hitting_at(sol, [6.0].as_ptr(), 1, &mut h), LilypadStatus::Ok);
        assert_eq!(h, 3.75);
        let mut m = 0.0;
        assert_eq!(lilypad_particles_at(sol, [1.0].as_ptr(), 1, 4.0, &mut m), LilypadStatus::Ok);
        assert_eq!(m, 4.0);
        let mut best = LilypadMaximizer::default();
        let mut pos = [0.0];
        assert_eq!(lilypad_maximizer(sol, 4.0, &mut best, pos.as_mut_ptr(), 1), LilypadStatus::Ok);
        assert_eq!((best.found, best.index, best.xi, best.value), (1, 1, 8.0, 4.0));
        assert_eq!(pos, [4.0]);
        assert_eq!(lilypad_maximizer(sol, 1.0, &mut best, ptr::null_mut(), 0), LilypadStatus::Ok);
        assert_eq!(best.found, 0);
        lilypad_solution_free(sol);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut set = ptr::null_mut();
        let st = lilypad_sample_poisson(2, 1.5, 1.0, 0.5, 1, &mut set);
        assert_eq!(st, LilypadStatus::InvalidParameters);
        assert!(set.is_null());
        assert!(last_error().contains("alpha"));

        let sol = two_point();
        assert_eq!(last_error(), "");
        let mut h = 0.0;
        assert_eq!(lilypad_hitting_at(sol, [1.0, 2.0].as_ptr(), 2, &mut h), LilypadStatus::InvalidInput);
        assert_eq!(lilypad_hitting_at(sol, ptr::null(), 1, &mut h), LilypadStatus::NullPointer);
        assert_eq!(lilypad_particles_at(sol, [0.0].as_ptr(), 1, 11.0, &mut h), LilypadStatus::HorizonExceeded);
        assert!(last_error().contains("horizon"));
        assert_eq!(lilypad_solve(ptr::null(), 0.5, 1.0, &mut ptr::null_mut()), LilypadStatus::NullPointer);
        lilypad_solution_free(sol);
    }
}

#[test]
fn error_message_truncates_and_reports_length() {
    unsafe {
        lilypad_solve(ptr::null(), 0.5, 1.0, &mut ptr::null_mut());
        let full = lilypad_last_error_message(ptr::null_mut(), 0);
        assert_eq!(full, "null pointer: set".len());
        let mut buf = [1 as c_char; 5];
        assert_eq!(lilypad_last_error_message(buf.as_mut_ptr(), buf.len()), full);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "null");
    }
}

#[test]
fn sampling_matches_the_core_sampler() {
    use lilypad_core::env::{sample_poisson_env, ModelParams};
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(lilypad_sample_poisson(2, 4.0, 2.0, 0.3, 42, &mut set), LilypadStatus::Ok);
        let expected = sample_poisson_env(&ModelParams::new(2, 4.0).unwrap(), 2.0, 0.3, 42).unwrap();
        assert_eq!(lilypad_point_set_len(set), expected.len());
        assert_eq!(lilypad_point_set_len(ptr::null()), 0);
        lilypad_point_set_free(set);
        lilypad_point_set_free(ptr::null_mut());
    }
}
