//! End-to-end checks of the command-line interface: artifacts, exit codes,
//! overrides, and the bundled presets.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hpkm-pinn"))
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("presets")
        .join(name)
}

#[test]
fn bundled_desk_preset_runs_and_leaves_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .arg("run")
        .arg(preset("helmholtz_w1_desk.cfg"))
        .args(["--budget", "3"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    for file in ["run_report.json", "curves.csv", "field.csv"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    // Final L2 echoed on stdout.
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("final L2"), "stdout: {stdout}");
    // The JSON artifact parses and carries the layout geometry.
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_report.json")).unwrap())
            .unwrap();
    assert_eq!(
        json["report"]["layout"]["counts"],
        serde_json::json!([5, 5])
    );
    assert_eq!(json["report"]["layout"]["delta"], serde_json::json!(2.9));
}

#[test]
fn malformed_overlap_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(
        &cfg,
        "problem.kind = helmholtz2d\nlayout.counts = 2,2\nlayout.delta = 0.5\n\
         train.residual_points = 4,4\n",
    )
    .unwrap();
    let output = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("δ > 1"), "stderr: {stderr}");
}

#[test]
fn unknown_problem_kind_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(
        &cfg,
        "problem.kind = wave9d\nlayout.counts = 2\nlayout.delta = 2.0\n\
         train.residual_points = 4\n",
    )
    .unwrap();
    let output = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_code_3_after_writing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("diverge.cfg");
    std::fs::write(
        &cfg,
        format!(
            "problem.kind = reaction_diffusion1d\nlayout.counts = 2\nlayout.delta = 1.5\n\
             train.residual_points = 6\ntrain.eval_points = 8\ntrain.hidden = 2\n\
             train.frequencies = 2\ntrain.budget = 50\ntrain.learning_rate = 1e80\n\
             output.dir = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let output = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(out.join("curves.csv").exists());
}

#[test]
fn sweep_cli_runs_selected_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .arg("sweep-sshape")
        .arg(preset("reaction_diffusion.cfg"))
        .args(["--kinds", "sigmoid,clip,none"])
        .args(["--budget", "2"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let table = std::fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    for kind in ["sigmoid", "clip", "none"] {
        assert!(dir.path().join(kind).join("curves.csv").exists());
    }
}

#[test]
fn compare_arch_cli_emits_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .arg("compare-arch")
        .arg(preset("reaction_diffusion.cfg"))
        .args(["--budget", "2"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let table = std::fs::read_to_string(dir.path().join("arch_compare.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("mlp_only,"));
    assert!(rows[2].starts_with("kan_only,"));
    assert!(rows[3].starts_with("hpkm,"));
}

/// The Poisson preset follows the refinement rule: 2^(m−1) subdomains and
/// 10·2^(m−1) points per axis at m = 2, with δ = 2.9.
#[test]
fn poisson_preset_matches_refinement_rule() {
    let cfg = hpkm_pinn::harness::load_config(&preset("poisson2d_m2.cfg")).unwrap();
    assert_eq!(cfg.train.subdomain_counts, vec![2, 2]);
    assert_eq!(cfg.train.residual_counts, vec![20, 20]);
    assert_eq!(cfg.train.delta, 2.9);
}

/// Every bundled preset parses.
#[test]
fn all_presets_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            hpkm_pinn::harness::load_config(&path)
                .unwrap_or_else(|e| panic!("{} failed to parse: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 10, "expected the full preset set, found {n}");
}
