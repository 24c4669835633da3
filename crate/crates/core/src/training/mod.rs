//! Collocation sampling, loss assembly, Adam optimization, the training
//! loop, and the normalized L2 metric.
//!
//! The full loss is the mean-squared PDE residual of the hard-constrained
//! blended field over a fixed tensor-product collocation grid (plus
//! optional data and, in soft mode, boundary/initial penalty terms). Two
//! implementations of it exist on purpose: [`loss_expr`] assembles the
//! whole thing as one expression whose [`crate::expr::Expr::grad_params`]
//! is the reference gradient, and the training loop runs a specialized
//! kernel that computes exactly the same value and gradient orders of
//! magnitude faster. Tests pin the two against each other and against
//! finite differences.

mod adam;
pub(crate) mod kernel;

pub use adam::{adam_step, AdamState};

use crate::domain::{build_layout, LayoutSummary, SubdomainLayout};
use crate::expr::{Bindings, Expr};
use crate::networks::{s_shape, Architecture, LocalNet, SKind};
use crate::params::ParamStore;
use crate::problems::ProblemSpec;
use kernel::{Kernel, KernelSpec, TermPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Layout(#[from] crate::domain::LayoutError),
    #[error(transparent)]
    Network(#[from] crate::networks::NetworkError),
    #[error(transparent)]
    Eval(#[from] crate::expr::EvalError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("empty point set")]
    EmptyPoints,
    #[error("normalized L2 reference has zero norm")]
    ZeroNormReference,
    #[error("length mismatch: {predicted} predictions vs {reference} references")]
    LengthMismatch { predicted: usize, reference: usize },
    #[error("non-finite gradient in block `{0}`")]
    NonFiniteGradient(String),
}

/// Everything the training loop needs beyond the problem itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Adam learning rate.
    pub eta: f64,
    /// Number of optimizer steps.
    pub budget: usize,
    /// Collocation grid counts per axis (endpoints included).
    pub residual_counts: Vec<usize>,
    /// Evaluation grid counts per axis; empty means 100 per axis.
    pub eval_counts: Vec<usize>,
    pub lambda_r: f64,
    pub lambda_data: f64,
    pub lambda_ic: f64,
    pub lambda_bc: f64,
    pub seed: u64,
    pub s_kind: SKind,
    /// Hidden width of each branch.
    pub hidden: usize,
    /// Fourier frequency count.
    pub k_freq: usize,
    pub subdomain_counts: Vec<usize>,
    pub delta: f64,
    pub architecture: Architecture,
    /// Record a checkpoint every this many iterations.
    pub checkpoint_stride: usize,
    /// Enforce boundary/initial conditions analytically (default); when
    /// off, λ_bc/λ_ic penalties take over.
    pub hard_constraint: bool,
}

impl TrainConfig {
    /// Benchmark defaults for a given problem; grids must still be set.
    pub fn new(problem: &ProblemSpec) -> Self {
        let d = problem.dim();
        TrainConfig {
            eta: 1e-4,
            budget: 50_000,
            residual_counts: vec![20; d],
            eval_counts: Vec::new(),
            lambda_r: 1.0,
            lambda_data: 1.0,
            lambda_ic: 0.0,
            lambda_bc: 0.0,
            seed: 0,
            s_kind: SKind::Sigmoid,
            hidden: 16,
            k_freq: 4,
            subdomain_counts: vec![2; d],
            delta: 2.9,
            architecture: Architecture::Hpkm,
            checkpoint_stride: 100,
            hard_constraint: true,
        }
    }

    fn validate(&self, problem: &ProblemSpec) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.eta > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.eta));
        }
        if self.checkpoint_stride == 0 {
            return bad("checkpoint stride must be ≥ 1".into());
        }
        if self.hidden == 0 || self.k_freq == 0 {
            return bad("hidden width and frequency count must be ≥ 1".into());
        }
        let d = problem.dim();
        if self.residual_counts.len() != d {
            return bad(format!(
                "residual grid has {} axes, problem has {d}",
                self.residual_counts.len()
            ));
        }
        if self.subdomain_counts.len() != d {
            return bad(format!(
                "subdomain counts have {} axes, problem has {d}",
                self.subdomain_counts.len()
            ));
        }
        if self.residual_counts.iter().any(|&c| c < 2) {
            return bad("residual grid needs at least 2 points per axis".into());
        }
        if !self.eval_counts.is_empty()
            && (self.eval_counts.len() != d || self.eval_counts.iter().any(|&c| c < 2))
        {
            return bad("evaluation grid needs at least 2 points per axis".into());
        }
        Ok(())
    }

    fn effective_eval_counts(&self, problem: &ProblemSpec) -> Vec<usize> {
        if self.eval_counts.is_empty() {
            vec![100; problem.dim()]
        } else {
            self.eval_counts.clone()
        }
    }
}

/// A subdomain layout together with the local networks living on it.
#[derive(Debug)]
pub struct Model {
    pub layout: SubdomainLayout,
    pub locals: Vec<LocalNet>,
}

impl Model {
    /// Allocate and seed the per-subdomain networks. α weights start at 0.
    pub fn build(
        problem: &ProblemSpec,
        cfg: &TrainConfig,
        store: &mut ParamStore,
    ) -> Result<Model, TrainError> {
        let layout = build_layout(&problem.domain, &cfg.subdomain_counts, cfg.delta)?;
        let locals: Vec<LocalNet> = (0..layout.len())
            .map(|i| {
                LocalNet::allocate(
                    store,
                    &format!("sd{i}"),
                    cfg.architecture,
                    problem.dim(),
                    cfg.hidden,
                    cfg.k_freq,
                    cfg.s_kind,
                )
            })
            .collect();
        let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
        for local in &locals {
            let sub_seed = master.gen::<u64>();
            local.init(store, sub_seed);
        }
        Ok(Model { layout, locals })
    }

    /// Current S(α) per subdomain, when the architecture has a head.
    pub fn s_alpha(&self, store: &ParamStore) -> Vec<f64> {
        self.locals
            .iter()
            .filter_map(|l| l.head())
            .filter(|h| h.s_kind != SKind::None)
            .map(|h| s_shape(h.s_kind, store.get(h.alpha)))
            .collect()
    }
}

/// Tensor-product uniform grid including endpoints, row-major with the
/// first axis slowest.
pub fn sample_grid(domain: &[(f64, f64)], counts: &[usize]) -> Vec<Vec<f64>> {
    assert_eq!(domain.len(), counts.len());
    assert!(counts.iter().all(|&c| c >= 2), "need ≥ 2 points per axis");
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; counts.len()];
    for _ in 0..total {
        let p: Vec<f64> = idx
            .iter()
            .zip(domain)
            .zip(counts)
            .map(|((&i, &(lo, hi)), &c)| lo + (hi - lo) * i as f64 / (c - 1) as f64)
            .collect();
        out.push(p);
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}

/// Grid points lying on the spatial Dirichlet boundary (excluding, for a
/// time axis, the t-faces).
pub fn boundary_points(problem: &ProblemSpec, counts: &[usize]) -> Vec<Vec<f64>> {
    sample_grid(&problem.domain, counts)
        .into_iter()
        .filter(|p| {
            p.iter().enumerate().any(|(a, &v)| {
                Some(a) != problem.time_axis
                    && (v == problem.domain[a].0 || v == problem.domain[a].1)
            })
        })
        .collect()
}

/// Grid points at t = 0 for time-dependent problems.
pub fn initial_points(problem: &ProblemSpec, counts: &[usize]) -> Vec<Vec<f64>> {
    match problem.time_axis {
        None => Vec::new(),
        Some(t) => sample_grid(&problem.domain, counts)
            .into_iter()
            .filter(|p| p[t] == problem.domain[t].0)
            .collect(),
    }
}

/// `√Σ|u − ũ|² / √Σ|u|²` over an evaluation set.
pub fn normalized_l2(predicted: &[f64], reference: &[f64]) -> Result<f64, TrainError> {
    if predicted.len() != reference.len() {
        return Err(TrainError::LengthMismatch {
            predicted: predicted.len(),
            reference: reference.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, r) in predicted.iter().zip(reference) {
        num += (r - p) * (r - p);
        den += r * r;
    }
    if den == 0.0 {
        return Err(TrainError::ZeroNormReference);
    }
    Ok((num / den).sqrt())
}

/// Bindings that evaluate a loss expression: every input is bound to 0
/// because the collocation offsets are baked into the expression.
pub fn zero_bindings(problem: &ProblemSpec) -> Bindings {
    let mut b = Bindings::new();
    for n in &problem.input_names {
        b.set(n, 0.0);
    }
    b
}

/// Shifted coordinate expressions `input + point` so one expression is
/// exact at a specific collocation point while derivative nodes still see
/// unit-slope inputs.
fn shifted_inputs(problem: &ProblemSpec, point: &[f64]) -> Vec<Expr> {
    problem
        .input_names
        .iter()
        .zip(point)
        .map(|(n, &v)| Expr::input(n) + v)
        .collect()
}

/// The full training loss as a single expression (reference path).
///
/// Residual terms use the hard-constrained blended field by default; in
/// soft mode the raw field is penalized on the boundary (and at t = 0)
/// instead. Evaluate with [`zero_bindings`].
pub fn loss_expr(
    cfg: &TrainConfig,
    problem: &ProblemSpec,
    model: &Model,
    store: &ParamStore,
    residual_points: &[Vec<f64>],
    data: Option<(&[Vec<f64>], &[f64])>,
) -> Result<Expr, TrainError> {
    if residual_points.is_empty() {
        return Err(TrainError::EmptyPoints);
    }
    let constrained_field = |point: &[f64]| -> Result<(Expr, Vec<Expr>), TrainError> {
        let x = shifted_inputs(problem, point);
        let raw = model
            .layout
            .assemble_global(store, &model.locals, point, &x)?;
        let u = if cfg.hard_constraint {
            problem.apply_hard_constraint(&raw, &x)
        } else {
            raw
        };
        Ok((u, x))
    };

    let mut residual_terms = Vec::with_capacity(residual_points.len());
    for p in residual_points {
        let (u, x) = constrained_field(p)?;
        residual_terms.push(problem.residual_with(&u, &x).powi(2));
    }
    let n_r = residual_terms.len() as f64;
    let mut total = (cfg.lambda_r / n_r) * Expr::sum(residual_terms);

    if let Some((points, values)) = data {
        if !points.is_empty() {
            let mut terms = Vec::with_capacity(points.len());
            for (p, v) in points.iter().zip(values) {
                let (u, _) = constrained_field(p)?;
                terms.push((u - *v).powi(2));
            }
            total = total + (cfg.lambda_data / points.len() as f64) * Expr::sum(terms);
        }
    }

    if !cfg.hard_constraint {
        if cfg.lambda_bc > 0.0 {
            let pts = boundary_points(problem, &cfg.residual_counts);
            if !pts.is_empty() {
                let mut terms = Vec::with_capacity(pts.len());
                for p in &pts {
                    let (u, _) = constrained_field(p)?;
                    terms.push(u.powi(2));
                }
                total = total + (cfg.lambda_bc / pts.len() as f64) * Expr::sum(terms);
            }
        }
        if cfg.lambda_ic > 0.0 {
            let pts = initial_points(problem, &cfg.residual_counts);
            if !pts.is_empty() {
                let x_plain = problem.input_exprs();
                let g = problem
                    .hc_offset_expr(&x_plain)
                    .unwrap_or_else(|| Expr::constant(0.0));
                let g = g.compile()?;
                let mut terms = Vec::with_capacity(pts.len());
                for p in &pts {
                    let mut b = Bindings::new();
                    for (n, v) in problem.input_names.iter().zip(p) {
                        b.set(n, *v);
                    }
                    let target = g.eval(&b, store)?;
                    let (u, _) = constrained_field(p)?;
                    terms.push((u - target).powi(2));
                }
                total = total + (cfg.lambda_ic / pts.len() as f64) * Expr::sum(terms);
            }
        }
    }
    Ok(total)
}

/// Mean-squared residual of an arbitrary field (bypasses the model); used
/// to check that the exact solution drives the loss to zero.
pub fn loss_for_field(
    problem: &ProblemSpec,
    field: impl Fn(&[Expr]) -> Expr,
    points: &[Vec<f64>],
) -> Result<Expr, TrainError> {
    if points.is_empty() {
        return Err(TrainError::EmptyPoints);
    }
    let mut terms = Vec::with_capacity(points.len());
    for p in points {
        let x = shifted_inputs(problem, p);
        let u = field(&x);
        terms.push(problem.residual_with(&u, &x).powi(2));
    }
    Ok(Expr::sum(terms) / points.len() as f64)
}

/// One recorded training state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub loss: f64,
    pub l2: f64,
    /// Mean S(α) over subdomains, when the head carries a weight.
    pub mean_s_alpha: Option<f64>,
    /// Per-subdomain S(α) values (empty without a weighted head).
    pub s_alpha: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub point: Vec<f64>,
    pub predicted: f64,
    pub exact: f64,
    pub abs_error: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: ProblemSpec,
    pub config: TrainConfig,
    pub layout: LayoutSummary,
    pub param_count: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub final_l2: f64,
    pub diverged: bool,
    pub divergence_message: Option<String>,
    pub wall_clock_sec: f64,
    /// Predicted/exact field on the evaluation grid, row-major.
    pub snapshot: Vec<SnapshotRow>,
    pub eval_counts: Vec<usize>,
}

/// Train a model on a problem and report the trajectory.
///
/// Runs are bitwise deterministic in `(seed, config)` for any worker
/// count. A non-finite loss or gradient aborts with the checkpoints
/// recorded so far and `diverged` set.
pub fn train(cfg: &TrainConfig, problem: &ProblemSpec) -> Result<RunReport, TrainError> {
    cfg.validate(problem)?;
    let started = std::time::Instant::now();

    let mut store = ParamStore::new();
    let model = Model::build(problem, cfg, &mut store)?;
    let residual_grid = sample_grid(&problem.domain, &cfg.residual_counts);
    let eval_counts = cfg.effective_eval_counts(problem);
    let eval_grid = sample_grid(&problem.domain, &eval_counts);

    // Loss terms for the fast kernel.
    let n_r = residual_grid.len() as f64;
    let mut terms: Vec<TermPoint<'_>> = residual_grid
        .iter()
        .map(|p| TermPoint::Residual {
            point: p,
            weight: cfg.lambda_r / n_r,
        })
        .collect();
    let (bc_pts, ic_pts, ic_targets);
    if !cfg.hard_constraint {
        bc_pts = if cfg.lambda_bc > 0.0 {
            boundary_points(problem, &cfg.residual_counts)
        } else {
            Vec::new()
        };
        ic_pts = if cfg.lambda_ic > 0.0 {
            initial_points(problem, &cfg.residual_counts)
        } else {
            Vec::new()
        };
        ic_targets = {
            let x = problem.input_exprs();
            let g = problem
                .hc_offset_expr(&x)
                .unwrap_or_else(|| Expr::constant(0.0))
                .compile()?;
            ic_pts
                .iter()
                .map(|p| {
                    let mut b = Bindings::new();
                    for (n, v) in problem.input_names.iter().zip(p) {
                        b.set(n, *v);
                    }
                    g.eval(&b, &store)
                })
                .collect::<Result<Vec<f64>, _>>()?
        };
        let n_bc = bc_pts.len().max(1) as f64;
        for p in &bc_pts {
            terms.push(TermPoint::Value {
                point: p,
                target: 0.0,
                weight: cfg.lambda_bc / n_bc,
            });
        }
        let n_ic = ic_pts.len().max(1) as f64;
        for (p, &t) in ic_pts.iter().zip(&ic_targets) {
            terms.push(TermPoint::Value {
                point: p,
                target: t,
                weight: cfg.lambda_ic / n_ic,
            });
        }
    }

    let kspec = KernelSpec {
        problem,
        layout: &model.layout,
        locals: &model.locals,
        store: &store,
        hidden: cfg.hidden,
        k: cfg.k_freq,
        arch: cfg.architecture,
        s_kind: cfg.s_kind,
        hard_constraint: cfg.hard_constraint,
        derivatives: true,
    };
    let train_kernel = Kernel::new(&kspec, &terms)?;

    // Value-only kernel over the evaluation grid, plus exact references.
    let eval_terms: Vec<TermPoint<'_>> = eval_grid
        .iter()
        .map(|p| TermPoint::Value {
            point: p,
            target: 0.0,
            weight: 0.0,
        })
        .collect();
    let eval_kernel = Kernel::new(
        &KernelSpec {
            derivatives: false,
            ..kspec
        },
        &eval_terms,
    )?;
    let exact_tape = problem.exact_expr(&problem.input_exprs()).compile()?;
    let exact_vals: Vec<f64> = {
        let mut es = crate::expr::EvalScratch::default();
        eval_grid
            .iter()
            .map(|p| {
                let mut b = Bindings::new();
                for (n, v) in problem.input_names.iter().zip(p) {
                    b.set(n, *v);
                }
                exact_tape.eval_with(&mut es, &b, &store)
            })
            .collect::<Result<_, _>>()?
    };

    let eval_l2 = |store: &ParamStore| -> Result<(f64, Vec<f64>), TrainError> {
        let pred = eval_kernel.predict(store.values());
        let l2 = normalized_l2(&pred, &exact_vals)?;
        Ok((l2, pred))
    };

    let mut adam = AdamState::new(store.len());
    let mut grad = vec![0.0; store.len()];
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let mut diverged = false;
    let mut divergence_message = None;

    let checkpoint = |store: &ParamStore,
                      iteration: usize,
                      loss: f64,
                      out: &mut Vec<Checkpoint>|
     -> Result<(), TrainError> {
        let (l2, _) = eval_l2(store)?;
        let s_alpha = model.s_alpha(store);
        let mean = if s_alpha.is_empty() {
            None
        } else {
            Some(s_alpha.iter().sum::<f64>() / s_alpha.len() as f64)
        };
        out.push(Checkpoint {
            iteration,
            loss,
            l2,
            mean_s_alpha: mean,
            s_alpha,
        });
        Ok(())
    };

    for m in 0..cfg.budget {
        let loss = train_kernel.loss_grad(store.values(), &mut grad);
        if !loss.is_finite() {
            diverged = true;
            divergence_message = Some(format!("loss became non-finite at iteration {m}"));
            break;
        }
        if m % cfg.checkpoint_stride == 0 {
            checkpoint(&store, m, loss, &mut checkpoints)?;
        }
        if let Err(e) = adam_step(&mut adam, &mut store, &grad, cfg.eta) {
            diverged = true;
            divergence_message = Some(format!("at iteration {m}: {e}"));
            break;
        }
    }
    if !diverged {
        let loss = train_kernel.loss(store.values());
        if loss.is_finite() {
            checkpoint(&store, cfg.budget, loss, &mut checkpoints)?;
        } else {
            diverged = true;
            divergence_message = Some(format!(
                "loss became non-finite at iteration {}",
                cfg.budget
            ));
        }
    }

    let (final_l2, predictions) = eval_l2(&store)?;
    let snapshot: Vec<SnapshotRow> = eval_grid
        .iter()
        .zip(&predictions)
        .zip(&exact_vals)
        .map(|((p, &pred), &exact)| SnapshotRow {
            point: p.clone(),
            predicted: pred,
            exact,
            abs_error: (pred - exact).abs(),
        })
        .collect();

    Ok(RunReport {
        problem: problem.clone(),
        config: cfg.clone(),
        layout: model.layout.summary(),
        param_count: store.len(),
        checkpoints,
        final_l2,
        diverged,
        divergence_message,
        wall_clock_sec: started.elapsed().as_secs_f64(),
        snapshot,
        eval_counts,
    })
}
