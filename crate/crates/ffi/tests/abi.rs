use smoney_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    unsafe { CStr::from_ptr(smoney_last_error_message()).to_string_lossy().into_owned() }
}

#[test]
fn experiment_robustness_exponent() {
    unsafe {
        let h = smoney_params_experiment();
        let mut ln = 0.0;
        assert_eq!(smoney_epsilon_rob_ln(h, &mut ln), SmoneyStatus::Ok);
        // -N (P_det - gamma_det)^2 / (2 P_det) at N = 4e7, P_det = 0.019, gamma_det = 0.018
        let expected = -4e7 * (0.019f64 - 0.018).powi(2) / (2.0 * 0.019);
        assert!((ln - expected).abs() < 1e-6);
        smoney_params_free(h);
    }
}

#[test]
fn bound_report_flags_violation_but_writes_json() {
    unsafe {
        let h = smoney_params_experiment();
        let mut out = ptr::null_mut();
        assert_eq!(smoney_bounds_report_json(h, &mut out), SmoneyStatus::ConstraintViolated);
        assert!(last_error().contains("beta_PS"));
        let json = CStr::from_ptr(out).to_str().unwrap();
        assert!(json.contains("eps_rob"));
        smoney_string_free(out);
        smoney_params_free(h);
    }
}

#[test]
fn params_from_json_roundtrip_and_errors() {
    unsafe {
        let good = CString::new(r#"{"params": {"N": 1000, "p_det": 0.5, "E": 0.01, "gamma_det": 0.4, "gamma_err": 0.05}}"#).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(smoney_params_from_json(good.as_ptr(), &mut h), SmoneyStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(smoney_bounds_report_json(h, &mut out), SmoneyStatus::InvalidArgument);
        assert!(last_error().contains("free"));
        smoney_params_free(h);

        let bad = CString::new("{not json").unwrap();
        assert_eq!(smoney_params_from_json(bad.as_ptr(), &mut h), SmoneyStatus::Parse);
        let out_of_range = CString::new(r#"{"params": {"N": 10, "p_det": 1.5, "E": 0.0, "gamma_det": 0.1, "gamma_err": 0.0}}"#).unwrap();
        assert_eq!(smoney_params_from_json(out_of_range.as_ptr(), &mut h), SmoneyStatus::InvalidArgument);
        assert!(last_error().contains("P_det"));
        assert_eq!(smoney_params_from_json(ptr::null(), &mut h), SmoneyStatus::NullPointer);
    }
}

#[test]
fn numeric_entry_points() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(smoney_oracle_ideal_norm(3, 0.0, &mut v), SmoneyStatus::Ok);
        let single = 0.5 + 1.0 / (2.0 * 2f64.sqrt());
        assert!((v - single.powi(3)).abs() < 1e-9);
        assert_eq!(smoney_oracle_ideal_norm(0, 0.0, &mut v), SmoneyStatus::InvalidArgument);

        assert_eq!(smoney_lambda_bound(0.0, 0.0, &mut v), SmoneyStatus::Ok);
        // ideal BB84: 1 - λ = 1/2 + 1/(2√2)
        assert!((1.0 - v - single).abs() < 1e-12);
        assert_eq!(smoney_lambda_bound(0.0, 0.6, &mut v), SmoneyStatus::InvalidArgument);
    }
}

#[test]
fn stats_from_counts() {
    unsafe {
        let counts = CString::new(
            r#"{"n_tu": [[100, 100], [100, 100]], "n_same": [[50, 50], [50, 50]], "n_err": [[5, 0], [0, 0]], "n": 400, "N": 1000}"#,
        )
        .unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(smoney_estimate_stats_json(counts.as_ptr(), &mut out), SmoneyStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        assert_eq!(v["p_det"], 0.4);
        assert_eq!(v["e"], 0.1);
        smoney_string_free(out);
    }
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(smoney_version()) };
    assert!(!v.to_str().unwrap().is_empty());
}
