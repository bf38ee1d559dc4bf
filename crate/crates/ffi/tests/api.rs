use std::ffi::{CStr, CString};
use std::ptr;

use basketlab_ffi::*;

#[test]
fn spec_trial_round_trips_to_a_valid_record() {
    let spec = CString::new(
        r#"{"experiment":"default","trial_index":3,"seed":11,"config":{"n_prizes":2,"n_baskets":5,"reveal_cost_default":2},"variant":"default","practice":false}"#,
    )
    .unwrap();
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(bl_trial_new_from_spec(spec.as_ptr(), &mut t), BlStatus::Ok);
        let mut phase = BlPhase::Playing;
        assert_eq!(bl_trial_phase(t, &mut phase), BlStatus::Ok);
        assert_eq!(phase, BlPhase::DefaultOffer);
        assert_eq!(bl_trial_select(t, 0), BlStatus::IllegalAction);
        assert_eq!(bl_trial_default_decision(t, true), BlStatus::Ok);

        let (run, pid) = (CString::new("r").unwrap(), CString::new("p").unwrap());
        let mut json = ptr::null_mut();
        assert_eq!(bl_trial_record_json(t, run.as_ptr(), pid.as_ptr(), &mut json), BlStatus::Ok);
        assert_eq!(bl_record_validate(json), BlStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        assert!(text.contains("\"kind\":\"human\""));
        bl_string_free(json);

        let broken = CString::new(text.replace("\"net\":", "\"net\":1")).unwrap();
        assert_eq!(bl_record_validate(broken.as_ptr()), BlStatus::InvalidArgument);
        assert!(!bl_last_error().is_null());
        bl_trial_free(t);
    }
}

#[test]
fn observation_hides_unrevealed_cells() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(bl_trial_new_control(3, 5, 2, 5, &mut t), BlStatus::Ok);
        let mut v = 0u8;
        assert_eq!(bl_trial_reveal(t, 1, 2, &mut v), BlStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(bl_trial_observation_json(t, &mut json), BlStatus::Ok);
        let obs: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        bl_string_free(json);
        let cells = obs["cells"].as_array().unwrap();
        let shown: usize = cells.iter().flat_map(|r| r.as_array().unwrap()).filter(|c| !c.is_null()).count();
        assert_eq!(shown, 1);
        assert_eq!(cells[1][2], serde_json::json!(v));
        bl_trial_free(t);
    }
}

#[test]
fn bad_arguments_are_reported_not_panicked() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(bl_trial_new_control(4, 5, 2, 0, &mut t), BlStatus::InvalidArgument);
        assert!(t.is_null());
        let bad = CString::new("{not json").unwrap();
        assert_eq!(bl_trial_new_from_spec(bad.as_ptr(), &mut t), BlStatus::InvalidArgument);
        assert_eq!(bl_trial_select(ptr::null_mut(), 0), BlStatus::NullPointer);
        let mut r = BlKsResult::default();
        assert_eq!(bl_ks_two_sample(ptr::null(), 0, [1.0].as_ptr(), 1, &mut r), BlStatus::InvalidArgument);
        let mut adj = [0.0; 1];
        assert_eq!(bl_bh_adjust([1.5].as_ptr(), 1, adj.as_mut_ptr()), BlStatus::InvalidArgument);
    }
}
