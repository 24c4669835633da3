//! Config-driven experiment front end: single runs, S-shape sweeps, and
//! architecture comparisons, with plot-ready CSV/JSON artifacts.
//!
//! Configs are flat `key = value` files with dotted section names (see the
//! README for the full key table). Every successful run leaves exactly
//! three artifacts in the output directory — `run_report.json`,
//! `curves.csv`, `field.csv` — plus `salpha.csv` when the architecture
//! carries a trainable mixing weight. The JSON report echoes the parsed
//! config verbatim so a run is fully reconstructible from its artifacts.

use crate::networks::{Architecture, SKind};
use crate::problems::{make_problem, ProblemParams, ProblemSpec};
use crate::training::{train, RunReport, TrainConfig, TrainError};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("config line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("config key `{key}`: {msg}")]
    Field { key: String, msg: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("missing required config key `{key}`")]
    Missing { key: String },
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("training diverged; last good checkpoints written to {out_dir}")]
    Diverged { out_dir: PathBuf },
}

impl HarnessError {
    /// Process exit code: 2 for config problems, 3 for divergence,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Diverged { .. } => 3,
            _ => 1,
        }
    }
}

/// A parsed experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub train: TrainConfig,
    /// Hidden width used for the standalone branches in `compare-arch`.
    pub standalone_hidden: usize,
    /// Kinds exercised by `sweep-sshape` (defaults to all of them).
    pub sweep_kinds: Vec<SKind>,
    pub out_dir: PathBuf,
    /// The config file's key/value pairs, verbatim.
    pub raw: BTreeMap<String, String>,
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub kinds: Option<Vec<SKind>>,
}

struct RawConfig {
    map: BTreeMap<String, String>,
    consumed: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl RawConfig {
    fn parse(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut map = BTreeMap::new();
        for (ix, raw_line) in text.lines().enumerate() {
            let line = ix + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: raw_line.trim().to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Malformed {
                    line,
                    text: raw_line.trim().to_string(),
                });
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(ConfigError::Duplicate { line, key });
            }
        }
        Ok(RawConfig {
            map,
            consumed: Default::default(),
        })
    }

    fn get(&self, key: &str) -> Option<&str> {
        let v = self.map.get(key).map(|s| s.as_str());
        if v.is_some() {
            self.consumed.borrow_mut().insert(key.to_string());
        }
        v
    }

    fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::Missing {
            key: key.to_string(),
        })
    }

    fn parse_as<T: FromStr>(&self, key: &str, v: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        v.parse().map_err(|e: T::Err| ConfigError::Field {
            key: key.to_string(),
            msg: e.to_string(),
        })
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => Ok(Some(self.parse_as(key, v)?)),
        }
    }

    fn opt_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str, v: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        v.split(',').map(|s| self.parse_as(key, s.trim())).collect()
    }

    fn unknown_keys(&self) -> Vec<String> {
        let consumed = self.consumed.borrow();
        self.map
            .keys()
            .filter(|k| !consumed.contains(*k))
            .cloned()
            .collect()
    }
}

/// Parse and validate a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let raw = RawConfig::parse(path)?;

    let kind_str = raw.require("problem.kind")?.to_string();
    let kind =
        crate::problems::ProblemKind::from_str(&kind_str).map_err(|e| ConfigError::Field {
            key: "problem.kind".into(),
            msg: e.to_string(),
        })?;
    use crate::problems::ProblemKind as K;
    let params = match kind {
        K::Helmholtz2d => ProblemParams::Helmholtz2d {
            omega: raw.opt_or("problem.omega", 1.0)?,
            kappa: raw.opt_or("problem.kappa", 1.0)?,
        },
        K::Poisson2d => ProblemParams::Poisson2d {
            m: raw.opt_or("problem.m", 2)?,
        },
        K::PoissonNd => ProblemParams::PoissonNd {
            dim: raw.opt_or("problem.dim", 5)?,
        },
        K::ReactionDiffusion1d => ProblemParams::ReactionDiffusion1d {
            diffusion: raw.opt_or("problem.diffusion", 0.01)?,
            reaction_rate: raw.opt_or("problem.reaction_rate", 0.7)?,
            wavenumber: raw.opt_or("problem.wavenumber", 8)?,
        },
        K::AllenCahn1d => ProblemParams::AllenCahn1d {
            epsilon: raw.opt_or("problem.epsilon", 0.1)?,
        },
    };
    let problem = make_problem(params).map_err(|e| ConfigError::Field {
        key: "problem.kind".into(),
        msg: e.to_string(),
    })?;

    let counts_v = raw.require("layout.counts")?.to_string();
    let counts: Vec<usize> = raw.list("layout.counts", &counts_v)?;
    let delta: f64 = {
        let v = raw.require("layout.delta")?.to_string();
        raw.parse_as("layout.delta", &v)?
    };
    if delta <= 1.0 {
        return Err(ConfigError::Field {
            key: "layout.delta".into(),
            msg: format!("overlap ratio must satisfy δ > 1, got {delta}"),
        });
    }
    if counts.len() != problem.dim() || counts.contains(&0) {
        return Err(ConfigError::Field {
            key: "layout.counts".into(),
            msg: format!(
                "need {} positive per-axis counts for {}",
                problem.dim(),
                problem.name
            ),
        });
    }

    let points_v = raw.require("train.residual_points")?.to_string();
    let residual_counts: Vec<usize> = raw.list("train.residual_points", &points_v)?;
    let eval_counts: Vec<usize> = match raw.get("train.eval_points") {
        Some(v) => {
            let v = v.to_string();
            raw.list("train.eval_points", &v)?
        }
        None => Vec::new(),
    };

    let mut train = TrainConfig::new(&problem);
    train.residual_counts = residual_counts;
    train.eval_counts = eval_counts;
    train.subdomain_counts = counts;
    train.delta = delta;
    train.eta = raw.opt_or("train.learning_rate", 1e-4)?;
    train.budget = raw.opt_or("train.budget", 50_000)?;
    train.seed = raw.opt_or("train.seed", 0)?;
    train.hidden = raw.opt_or("train.hidden", 16)?;
    train.k_freq = raw.opt_or("train.frequencies", 4)?;
    train.checkpoint_stride = raw.opt_or("train.stride", 100)?;
    train.lambda_r = raw.opt_or("train.lambda_residual", 1.0)?;
    train.lambda_data = raw.opt_or("train.lambda_data", 1.0)?;
    train.lambda_ic = raw.opt_or("train.lambda_ic", 0.0)?;
    train.lambda_bc = raw.opt_or("train.lambda_bc", 0.0)?;
    train.hard_constraint = raw.opt_or("train.hard_constraint", true)?;
    train.s_kind = match raw.get("train.s_kind") {
        None => SKind::Sigmoid,
        Some(v) => SKind::from_str(v).map_err(|msg| ConfigError::Field {
            key: "train.s_kind".into(),
            msg,
        })?,
    };
    train.architecture = match raw.get("arch.kind") {
        None => Architecture::Hpkm,
        Some(v) => Architecture::from_str(v).map_err(|msg| ConfigError::Field {
            key: "arch.kind".into(),
            msg,
        })?,
    };
    let standalone_hidden = raw.opt_or("arch.standalone_hidden", 32)?;

    let sweep_kinds: Vec<SKind> = match raw.get("sweep.kinds") {
        None => SKind::ALL.to_vec(),
        Some(v) => {
            let v = v.to_string();
            let kinds: Vec<SKind> = v
                .split(',')
                .map(|s| {
                    SKind::from_str(s.trim()).map_err(|msg| ConfigError::Field {
                        key: "sweep.kinds".into(),
                        msg,
                    })
                })
                .collect::<Result<_, _>>()?;
            kinds
        }
    };

    let out_dir = PathBuf::from(raw.opt_or("output.dir", "out".to_string())?);

    let unknown = raw.unknown_keys();
    if let Some(key) = unknown.first() {
        return Err(ConfigError::UnknownKey { key: key.clone() });
    }

    Ok(ExperimentConfig {
        problem,
        train,
        standalone_hidden,
        sweep_kinds,
        out_dir,
        raw: raw.map,
    })
}

impl ExperimentConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(budget) = o.budget {
            self.train.budget = budget;
        }
        if let Some(kinds) = &o.kinds {
            self.sweep_kinds = kinds.clone();
        }
    }
}

/// The JSON artifact: verbatim config echo plus the full report.
#[derive(Debug, Serialize)]
struct ReportEnvelope<'a> {
    config_file: &'a BTreeMap<String, String>,
    overrides: BTreeMap<String, String>,
    report: &'a RunReport,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the three per-run artifacts (plus the S(α) trajectory when the
/// model has one).
pub fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    overrides: &Overrides,
    report: &RunReport,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut over = BTreeMap::new();
    if let Some(seed) = overrides.seed {
        over.insert("seed".to_string(), seed.to_string());
    }
    if let Some(budget) = overrides.budget {
        over.insert("budget".to_string(), budget.to_string());
    }
    let json_path = dir.join("run_report.json");
    let envelope = ReportEnvelope {
        config_file: &cfg.raw,
        overrides: over,
        report,
    };
    let file = std::fs::File::create(&json_path).map_err(io_err(&json_path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &envelope).map_err(|e| {
        HarnessError::Io {
            path: json_path.clone(),
            source: e.into(),
        }
    })?;

    let curves_path = dir.join("curves.csv");
    let mut curves = String::from("iteration,loss,l2,mean_s_alpha\n");
    for c in &report.checkpoints {
        writeln!(
            curves,
            "{},{},{},{}",
            c.iteration,
            c.loss,
            c.l2,
            fmt_opt(c.mean_s_alpha)
        )
        .unwrap();
    }
    std::fs::write(&curves_path, curves).map_err(io_err(&curves_path))?;

    let field_path = dir.join("field.csv");
    let mut field = String::new();
    for name in &report.problem.input_names {
        write!(field, "{name},").unwrap();
    }
    field.push_str("predicted,exact,abs_error\n");
    for row in &report.snapshot {
        for v in &row.point {
            write!(field, "{v},").unwrap();
        }
        writeln!(field, "{},{},{}", row.predicted, row.exact, row.abs_error).unwrap();
    }
    std::fs::write(&field_path, field).map_err(io_err(&field_path))?;

    let has_alpha = report.checkpoints.iter().any(|c| !c.s_alpha.is_empty());
    if has_alpha {
        let n = report
            .checkpoints
            .iter()
            .map(|c| c.s_alpha.len())
            .max()
            .unwrap_or(0);
        let salpha_path = dir.join("salpha.csv");
        let mut out = String::from("iteration");
        for i in 0..n {
            write!(out, ",s{i}").unwrap();
        }
        out.push('\n');
        for c in &report.checkpoints {
            write!(out, "{}", c.iteration).unwrap();
            for v in &c.s_alpha {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        std::fs::write(&salpha_path, out).map_err(io_err(&salpha_path))?;
    }
    Ok(())
}

/// Train one configuration and write its artifacts. Prints the final L2 to
/// standard output.
pub fn run(config_path: &Path, overrides: &Overrides) -> Result<RunReport, HarnessError> {
    let mut cfg = load_config(config_path)?;
    cfg.apply(overrides);
    let report = train(&cfg.train, &cfg.problem)?;
    write_artifacts(&cfg.out_dir, &cfg, overrides, &report)?;
    println!(
        "{} [{}] final L2: {:.6e}",
        cfg.problem.name, cfg.train.architecture, report.final_l2
    );
    if report.diverged {
        return Err(HarnessError::Diverged {
            out_dir: cfg.out_dir.clone(),
        });
    }
    Ok(report)
}

/// One row of a sweep or comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub label: String,
    pub final_l2: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub param_count: usize,
}

fn write_table(path: &Path, key_header: &str, rows: &[TableRow]) -> Result<(), HarnessError> {
    let mut out = format!("{key_header},final_l2,final_loss,iterations,param_count\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.label, r.final_l2, r.final_loss, r.iterations, r.param_count
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Train once per S-shaped kind with a shared seed; emit one summary table
/// plus full artifacts per kind under `<out>/<kind>/`.
pub fn sweep_sshape(
    config_path: &Path,
    overrides: &Overrides,
) -> Result<Vec<(SKind, RunReport)>, HarnessError> {
    let mut base = load_config(config_path)?;
    base.apply(overrides);
    if base.sweep_kinds.len() < 2 {
        return Err(HarnessError::Config(ConfigError::Field {
            key: "sweep.kinds".into(),
            msg: "a sweep needs at least two kinds".into(),
        }));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut any_diverged = false;
    for kind in base.sweep_kinds.clone() {
        let mut cfg = base.clone();
        cfg.train.s_kind = kind;
        cfg.train.architecture = Architecture::Hpkm;
        let report = train(&cfg.train, &cfg.problem)?;
        let dir = base.out_dir.join(kind.as_str());
        write_artifacts(&dir, &cfg, overrides, &report)?;
        println!(
            "s_kind {:>18}: final L2 {:.6e}{}",
            kind.as_str(),
            report.final_l2,
            if report.diverged { "  (diverged)" } else { "" }
        );
        any_diverged |= report.diverged;
        rows.push(TableRow {
            label: kind.as_str().to_string(),
            final_l2: report.final_l2,
            final_loss: report
                .checkpoints
                .last()
                .map(|c| c.loss)
                .unwrap_or(f64::NAN),
            iterations: report.checkpoints.last().map(|c| c.iteration).unwrap_or(0),
            param_count: report.param_count,
        });
        reports.push((kind, report));
    }
    write_table(&base.out_dir.join("sweep_summary.csv"), "s_kind", &rows)?;
    if any_diverged {
        return Err(HarnessError::Diverged {
            out_dir: base.out_dir.clone(),
        });
    }
    Ok(reports)
}

/// Train the two standalone branches and the weighted hybrid on identical
/// layouts, budgets and seeds; emit a comparison table.
pub fn compare_architectures(
    config_path: &Path,
    overrides: &Overrides,
) -> Result<Vec<(Architecture, RunReport)>, HarnessError> {
    let base0 = load_config(config_path)?;
    let mut base = base0;
    base.apply(overrides);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut any_diverged = false;
    for arch in [
        Architecture::MlpOnly,
        Architecture::KanOnly,
        Architecture::Hpkm,
    ] {
        let mut cfg = base.clone();
        cfg.train.architecture = arch;
        if arch != Architecture::Hpkm {
            cfg.train.hidden = base.standalone_hidden;
        }
        let report = train(&cfg.train, &cfg.problem)?;
        let dir = base.out_dir.join(arch.as_str());
        write_artifacts(&dir, &cfg, overrides, &report)?;
        println!(
            "arch {:>9} (hidden {:>2}): final L2 {:.6e}{}",
            arch.as_str(),
            cfg.train.hidden,
            report.final_l2,
            if report.diverged { "  (diverged)" } else { "" }
        );
        any_diverged |= report.diverged;
        rows.push(TableRow {
            label: arch.as_str().to_string(),
            final_l2: report.final_l2,
            final_loss: report
                .checkpoints
                .last()
                .map(|c| c.loss)
                .unwrap_or(f64::NAN),
            iterations: report.checkpoints.last().map(|c| c.iteration).unwrap_or(0),
            param_count: report.param_count,
        });
        reports.push((arch, report));
    }
    write_table(
        &base.out_dir.join("arch_compare.csv"),
        "architecture",
        &rows,
    )?;
    if any_diverged {
        return Err(HarnessError::Diverged {
            out_dir: base.out_dir.clone(),
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    const TINY: &str = "\
# tiny smoke configuration
problem.kind = reaction_diffusion1d
layout.counts = 3
layout.delta = 2.0
train.residual_points = 12
train.eval_points = 24
train.budget = 5
train.stride = 2
train.hidden = 3
train.frequencies = 2
train.seed = 7
";

    #[test]
    fn parses_a_minimal_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cfg(dir.path(), "a.cfg", TINY);
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.train.budget, 5);
        assert_eq!(cfg.train.subdomain_counts, vec![3]);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.raw.get("train.hidden").unwrap(), "3");
        assert_eq!(cfg.train.architecture, Architecture::Hpkm);
        assert_eq!(cfg.sweep_kinds.len(), 7);
    }

    #[test]
    fn rejects_low_overlap_with_requirement_message() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cfg(dir.path(), "bad.cfg", &TINY.replace("= 2.0", "= 0.5"));
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("δ > 1"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cfg(dir.path(), "u.cfg", &format!("{TINY}train.typo = 3\n"));
        assert!(matches!(
            load_config(&path),
            Err(ConfigError::UnknownKey { .. })
        ));
        let path = write_cfg(dir.path(), "m.cfg", "problem.kind helmholtz2d\n");
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn run_writes_the_declared_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let path = write_cfg(
            dir.path(),
            "run.cfg",
            &format!("{TINY}output.dir = {}\n", out.display()),
        );
        let report = run(&path, &Overrides::default()).unwrap();
        assert!(!report.diverged);
        for file in ["run_report.json", "curves.csv", "field.csv", "salpha.csv"] {
            assert!(out.join(file).exists(), "{file} missing");
        }
        // Round-trip: the JSON echo reproduces the config file verbatim.
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("run_report.json")).unwrap())
                .unwrap();
        let echo = json["config_file"].as_object().unwrap();
        let parsed = load_config(&path).unwrap();
        assert_eq!(echo.len(), parsed.raw.len());
        for (k, v) in &parsed.raw {
            assert_eq!(echo[k].as_str().unwrap(), v, "echo mismatch for {k}");
        }
        // curves.csv parses as CSV with the declared header.
        let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
        let mut lines = curves.lines();
        assert_eq!(lines.next().unwrap(), "iteration,loss,l2,mean_s_alpha");
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), 4);
        assert_eq!(first.split(',').next().unwrap(), "0");
    }

    #[test]
    fn sweep_emits_one_row_per_kind_with_identical_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep");
        let path = write_cfg(
            dir.path(),
            "sweep.cfg",
            &format!(
                "{TINY}output.dir = {}\nsweep.kinds = sigmoid,clip,none\n",
                out.display()
            ),
        );
        let reports = sweep_sshape(&path, &Overrides::default()).unwrap();
        assert_eq!(reports.len(), 3);
        let summary = std::fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 4);
        let l0: Vec<f64> = reports.iter().map(|(_, r)| r.checkpoints[0].loss).collect();
        assert!(l0.iter().all(|v| v.is_finite() && *v > 0.0));
        for (kind, report) in &reports {
            assert!(out.join(kind.as_str()).join("curves.csv").exists());
            // Sweep isolation: rows differ only through the head kind.
            assert_eq!(report.config.s_kind, *kind);
            assert_eq!(report.config.seed, reports[0].1.config.seed);
            assert_eq!(report.config.delta, reports[0].1.config.delta);
            assert_eq!(
                report.config.subdomain_counts,
                reports[0].1.config.subdomain_counts
            );
            assert_eq!(report.config.budget, reports[0].1.config.budget);
        }
    }

    #[test]
    fn compare_architectures_emits_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("cmp");
        let path = write_cfg(
            dir.path(),
            "cmp.cfg",
            &format!(
                "{TINY}output.dir = {}\narch.standalone_hidden = 5\n",
                out.display()
            ),
        );
        let reports = compare_architectures(&path, &Overrides::default()).unwrap();
        assert_eq!(reports.len(), 3);
        let table = std::fs::read_to_string(out.join("arch_compare.csv")).unwrap();
        assert!(table.starts_with("architecture,final_l2"));
        assert_eq!(table.lines().count(), 4);
        // Standalone branches use the wider layer.
        let (_, mlp_report) = &reports[0];
        assert_eq!(mlp_report.config.hidden, 5);
        let (_, hpkm_report) = &reports[2];
        assert_eq!(hpkm_report.config.hidden, 3);
    }

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let path = write_cfg(dir.path(), "o.cfg", TINY);
        let overrides = Overrides {
            out: Some(out.clone()),
            seed: Some(123),
            budget: Some(2),
            kinds: None,
        };
        let report = run(&path, &overrides).unwrap();
        assert_eq!(report.config.seed, 123);
        assert_eq!(report.config.budget, 2);
        assert!(out.join("curves.csv").exists());
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("run_report.json")).unwrap())
                .unwrap();
        assert_eq!(json["overrides"]["seed"], "123");
    }
}
