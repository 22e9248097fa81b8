use scd_web::{alpha_curve, instruction_names, signature};

#[test]
fn curve_endpoints_are_the_single_channels() {
    let c = alpha_curve("0, 1", "0.5, 0.5", "0, 2", "0.5, 0.5", 100).unwrap();
    assert_eq!(c.alpha.len(), 101);
    assert_eq!(c.mi[0], c.mi_em);
    assert_eq!(c.mi[100], c.mi_power);
    assert!(c.mi_em > c.mi_power);
    let grid_best = c.mi.iter().cloned().fold(f64::MIN, f64::max);
    assert!(c.mi_star >= grid_best - 1e-9);
}

#[test]
fn curve_rejects_bad_input() {
    assert!(alpha_curve("0, x", "1, 1", "0, 1", "1, 1", 10).is_err());
    assert!(alpha_curve("0, 1", "1, 1", "0, 1, 2", "1, 1, 1", 10).is_err());
    assert!(alpha_curve("", "", "", "", 10).is_err());
}

#[test]
fn signatures_cover_the_table() {
    let names = instruction_names();
    assert_eq!(names.len(), 86);
    let s = signature(3, 40, 1485).unwrap();
    assert_eq!(s.name, names[3]);
    assert_eq!(s.power.len(), 80);
    assert_eq!(s.em.len(), 80);
    assert_eq!(s.power, signature(3, 40, 1485).unwrap().power);
    assert!(signature(names.len(), 40, 1485).is_err());
}

#[test]
fn budget_json_reports_the_reference_total() {
    let b = scd_web::cycle_budget_js(70, 160).unwrap();
    let v: serde_json::Value = serde_json::from_str(&b).unwrap();
    assert_eq!(v["total"], 120);
    assert_eq!(v["real_time"], true);
}
