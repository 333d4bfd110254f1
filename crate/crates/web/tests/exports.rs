use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.expect("export succeeds")).unwrap()
}

fn columns_agree(v: &Value) -> usize {
    let n = v["t"].as_array().unwrap().len();
    for k in ["ux", "uy", "m1", "m2"] {
        assert_eq!(v[k].as_array().unwrap().len(), n, "{k}");
    }
    n
}

#[test]
fn singular_design_reaches_target() {
    let v = parse(selpulse_web::singular_design(0.2, "excitation"));
    assert!(columns_agree(&v) > 100);
    assert!(v["J_excitation"].as_f64().unwrap() < 1e-12);
    assert!((v["info"]["t_f"].as_f64().unwrap() - 5.072464).abs() < 1e-6);
    let last = v["m1"].as_array().unwrap().last().unwrap().clone();
    assert!(last[2].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn singular_design_rejects_bad_input() {
    assert!(selpulse_web::singular_design(0.9, "excitation").is_err());
    assert!(selpulse_web::singular_design(0.2, "flip").is_err());
}

#[test]
fn extremal_stays_on_sphere() {
    let v = parse(selpulse_web::extremal(1.0, 0.58403, 2.376327, 1.9247011));
    columns_agree(&v);
    assert!(v["J_excitation"].as_f64().unwrap() < 1e-8);
    for m in v["m2"].as_array().unwrap() {
        let n: f64 = m.as_array().unwrap().iter().map(|c| c.as_f64().unwrap().powi(2)).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
    for (x, y) in v["ux"].as_array().unwrap().iter().zip(v["uy"].as_array().unwrap()) {
        assert!(x.as_f64().unwrap().hypot(y.as_f64().unwrap()) <= 1.0 + 1e-12);
    }
}

#[test]
fn grape_run_resonant() {
    let v = parse(selpulse_web::grape_run(15f64.sqrt() / 2.0, "excitation", std::f64::consts::FRAC_PI_2, 32, 2, 1));
    columns_agree(&v);
    assert!(v["info"]["J"].as_f64().unwrap() < 1e-5);
    assert!(selpulse_web::grape_run(1.0, "excitation", 1.0, 2, 1, 0).is_err());
}
