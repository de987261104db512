use std::fs;
use std::path::Path;
use std::process::Command;

use nll_core::cli::{run, CampaignConfig, CampaignKind};
use serde_json::Value;

fn config(kind: CampaignKind, extra: &str, out: &Path) -> CampaignConfig {
    let text = format!(
        "[geometry]\nn = 33\nrho = 0.2\n[campaign]\nkind = \"{kind}\"\n{extra}\n[output]\ndirectory = {:?}\n",
        out.display().to_string()
    );
    CampaignConfig::from_toml(&text).unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn csv_header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn solve_and_stability_write_figure_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("solve");
    run(&config(CampaignKind::Solve, "ic = \"bd\"", &out)).unwrap();
    for f in ["fig_BD_OR_q1.csv", "fig_BD_OR_q3.csv", "fig_BD_OR_beta2.csv", "solution/record.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(csv_header(&out.join("fig_BD_OR_q1.csv")), "x,y,value");
    let rec: Value = serde_json::from_str(&fs::read_to_string(out.join("solution/record.json")).unwrap()).unwrap();
    assert_eq!(rec["schema"], 1);
    assert_eq!(rec["label"], "BD");
    assert_eq!(rec["seed"], 1);

    let out = tmp.path().join("stab");
    run(&config(CampaignKind::Stability, "ic = \"wors\"", &out)).unwrap();
    let st: Value = serde_json::from_str(&fs::read_to_string(out.join("stability.json")).unwrap()).unwrap();
    let subs = st["subspaces"].as_array().unwrap();
    assert_eq!(subs.len(), 4);
    for s in subs {
        if s["verdict"] == "unstable" {
            for w in s["witness_files"].as_array().unwrap() {
                assert!(out.join(w.as_str().unwrap()).exists());
            }
        }
    }
    assert!(out.join("fig_C123_v13_C11.csv").exists());
}

#[test]
fn flow_records_a_decreasing_energy_and_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("flow");
    run(&config(CampaignKind::Flow, "ic = \"bd\"", &out)).unwrap();
    let s = summary(&out);
    assert_eq!(s["energy_monotone"], true);
    assert_eq!(csv_header(&out.join("fig_BD_energy.csv")), "t,energy");
    for t in ["0", "0.3", "0.4", "2"] {
        assert!(out.join(format!("fig_BD_q1_t{t}.csv")).exists());
    }
}

#[test]
fn deflation_is_reproducible_for_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("d{k}"));
        let mut c = config(CampaignKind::Deflate, "n_random = 2\nseed = 5", &out);
        c.geometry.n = 25;
        run(&c).unwrap();
        outs.push(out);
    }
    let a = fs::read_to_string(outs[0].join("fig_CP_rho_0_2.csv")).unwrap();
    let b = fs::read_to_string(outs[1].join("fig_CP_rho_0_2.csv")).unwrap();
    assert_eq!(a, b);
    assert!(a.lines().count() > 3);
    let r0 = fs::read_to_string(outs[0].join("records/000/q1.csv")).unwrap();
    let r1 = fs::read_to_string(outs[1].join("records/000/q1.csv")).unwrap();
    assert_eq!(r0, r1);
    let classes: Value = serde_json::from_str(&fs::read_to_string(outs[0].join("classes.json")).unwrap()).unwrap();
    assert!(!classes["classes"].as_array().unwrap().is_empty());
    let rec: Value =
        serde_json::from_str(&fs::read_to_string(outs[0].join("records/000/record.json")).unwrap()).unwrap();
    assert_eq!(rec["seed"], 5);
}

#[test]
fn gamma_and_geodesics_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gamma");
    run(&config(
        CampaignKind::Gamma,
        "[campaign.gamma]\ncosts = [22.3067, 34.7378, 41.6817, 60.2955]\nn_rho = 50\nn_eta = 50",
        &out,
    ))
    .unwrap();
    let text = fs::read_to_string(out.join("regime.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "rho,Jinf_wors,Jinf_bd,Jinf_esc_min_over_eta,winner");
    assert_eq!(text.lines().count(), 51);
    assert!(!text.contains("ESC\n"));
    let out = tmp.path().join("geo");
    run(&config(CampaignKind::Geodesics, "t_values = [-9.0]\n[campaign.geodesics]\nn_path = 101", &out)).unwrap();
    assert_eq!(csv_header(&out.join("fig_F2.csv")), "t,c1,c2,c3,c4,R1,R2");
    assert_eq!(csv_header(&out.join("fig_F1_o_p3.csv")), "k,q1,q3");
}

#[test]
fn sweep_and_continuation_campaigns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r0");
    run(&config(CampaignKind::SweepRho0, "[campaign.sweep]\nrho_grid = [0.125, 0.1875, 0.25, 0.3125]", &out)).unwrap();
    assert_eq!(csv_header(&out.join("fig_BD_OR-energy.csv")), "rho,J_wors,J_bd,exists_bd");
    assert!(summary(&out)["rho0"].is_number());
    let out = tmp.path().join("esc");
    let mut c = config(CampaignKind::EscapedContinuation, "[campaign.continuation]\nstep = 0.01", &out);
    c.geometry.n = 65;
    run(&c).unwrap();
    assert!(out.join("fig_ES_rho_0_02_trace.csv").exists());
    assert!(out.join("fig_ES_rho_0_02_q3.csv").exists());
}

#[test]
fn binary_prints_defaults_and_reports_errors_as_json() {
    let bin = env!("CARGO_BIN_EXE_nll");
    let o = Command::new(bin).args(["solve", "--print-defaults"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let c = CampaignConfig::from_toml(&text).unwrap();
    assert_eq!(c.geometry.n, 129);
    assert_eq!(c.material.lambda_bar_sq, 200.0);

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[geometry]\nn = 33\nrho = 1.5\n").unwrap();
    let o = Command::new(bin)
        .args(["solve", "--config", bad.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err: Value = serde_json::from_str(String::from_utf8(o.stderr).unwrap().trim()).unwrap();
    assert_eq!(err["error"]["kind"], "geometry");
}
