//! Specialized loss/gradient evaluator for the windowed local-network
//! models the trainer optimizes.
//!
//! Training evaluates the same mathematical object as the general
//! expression engine — the mean-squared constrained residual and its
//! parameter gradient — but exploits everything that is constant over
//! training: window jets, normalized inputs, Fourier basis jets of the
//! first KAN stage, mask jets and forcing values are all evaluated once
//! per collocation point up front (through the expression engine, so the
//! geometry has a single source of truth). Per iteration only the
//! θ-dependent part runs: branch forward passes in jet arithmetic (value
//! plus pure first/second partials per axis) and a hand-derived reverse
//! sweep. Equivalence with `Expr::grad_params` on the assembled loss is
//! enforced by tests.
//!
//! Points are processed in fixed-size chunks; each chunk accumulates into
//! its own buffer and chunks are reduced in index order, so results are
//! bitwise reproducible for any worker count.

use crate::domain::SubdomainLayout;
use crate::expr::{Bindings, CompiledExpr, EvalScratch, Expr};
use crate::networks::{s_shape_grad, Architecture, LocalNet, SKind};
use crate::params::ParamStore;
use crate::problems::{ProblemParams, ProblemSpec};
use crate::training::TrainError;
use rayon::prelude::*;

const CHUNK: usize = 64;
const MAX_DIM: usize = 8;
const MAX_COMPS: usize = 2 * MAX_DIM + 1;

#[derive(Debug, Clone, Copy)]
struct JetAxis {
    /// Component offset of ∂/∂axis; ∂²/∂axis² sits one past it when carried.
    off: usize,
    second: bool,
    /// Physical axis index (into normalized inputs and scales).
    phys: usize,
}

#[derive(Debug, Clone, Copy)]
struct MlpOff {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct KanOff {
    a1: usize,
    b1: usize,
    a2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct SubOffsets {
    mlp: Option<MlpOff>,
    kan: Option<KanOff>,
    alpha: Option<usize>,
}

/// What a loss term measures.
#[derive(Debug, Clone, Copy)]
enum TermKind {
    /// PDE residual at a collocation point; carries the forcing value.
    Residual { f: f64 },
    /// Squared misfit of the (constrained) field value against a target —
    /// soft boundary/initial penalties and data terms.
    Value { target: f64 },
}

#[derive(Debug, Clone)]
struct SubPointData {
    sub: u32,
    /// Normalized window jet (comps entries).
    window: Vec<f64>,
    /// Normalized inputs (dim entries).
    xt: Vec<f64>,
    /// Fourier stage-1 basis jets in structure-of-arrays layout: six
    /// blocks of `dim*k` values — sin, sin', sin'', cos, cos', cos'' —
    /// with derivatives taken in physical coordinates. Empty when the
    /// model has no KAN branch.
    basis: Vec<f64>,
}

#[derive(Debug, Clone)]
struct TermData {
    kind: TermKind,
    weight: f64,
    c0: Vec<f64>,
    c1: Vec<f64>,
    per_sub: Vec<SubPointData>,
}

#[derive(Debug, Clone, Copy)]
enum ResidualOp {
    /// Δu + κ²u − f.
    Helmholtz { kappa2: f64 },
    /// −Δu − f.
    NegativeLaplacian,
    /// D·u″ + μ·tanh(u) − f.
    ReactionDiffusion { d: f64, mu: f64 },
    /// u_t − ε²u_xx − u + u³ − f (x is axis 0, t is axis 1).
    AllenCahn { eps2: f64 },
}

/// Precomputed evaluator for one model on one point set.
pub(crate) struct Kernel {
    comps: usize,
    dim: usize,
    hidden: usize,
    k: usize,
    arch: Architecture,
    s_kind: SKind,
    jet_axes: Vec<JetAxis>,
    scales: Vec<f64>,
    subs: Vec<SubOffsets>,
    residual: ResidualOp,
    terms: Vec<TermData>,
    n_params: usize,
    max_active: usize,
    has_kan: bool,
    has_mlp: bool,
}

/// Scratch buffers for one worker.
struct Scratch {
    u: Vec<f64>,
    ut: Vec<f64>,
    utbar: Vec<f64>,
    ubar: Vec<f64>,
    njbar: Vec<f64>,
    branch_bar: Vec<f64>,
    // Per-active-subdomain saves from the forward pass.
    nj: Vec<f64>,
    mlp_out: Vec<f64>,
    kan_out: Vec<f64>,
    mlp_t: Vec<f64>,
    mlp_zd: Vec<f64>,
    kan_h: Vec<f64>,
    kan_sc: Vec<f64>,
    head_s: Vec<f64>,
}

impl Scratch {
    fn new(k: &Kernel) -> Self {
        let (c, h, ma, d) = (k.comps, k.hidden, k.max_active, k.dim);
        Scratch {
            u: vec![0.0; c],
            ut: vec![0.0; c],
            utbar: vec![0.0; c],
            ubar: vec![0.0; c],
            njbar: vec![0.0; c],
            branch_bar: vec![0.0; c],
            nj: vec![0.0; ma * c],
            mlp_out: vec![0.0; if k.has_mlp { ma * c } else { 0 }],
            kan_out: vec![0.0; if k.has_kan { ma * c } else { 0 }],
            mlp_t: vec![0.0; if k.has_mlp { ma * h } else { 0 }],
            mlp_zd: vec![0.0; if k.has_mlp { ma * h * d } else { 0 }],
            kan_h: vec![0.0; if k.has_kan { ma * h * c } else { 0 }],
            kan_sc: vec![0.0; if k.has_kan { ma * h * k.k * 2 } else { 0 }],
            head_s: vec![0.0; ma * 2],
        }
    }
}

/// Inputs for building a kernel over a set of loss terms.
pub(crate) struct KernelSpec<'a> {
    pub problem: &'a ProblemSpec,
    pub layout: &'a SubdomainLayout,
    pub locals: &'a [LocalNet],
    pub store: &'a ParamStore,
    pub hidden: usize,
    pub k: usize,
    pub arch: Architecture,
    pub s_kind: SKind,
    pub hard_constraint: bool,
    /// Value-only mode drops all derivative axes (for field evaluation).
    pub derivatives: bool,
}

pub(crate) enum TermPoint<'a> {
    Residual {
        point: &'a [f64],
        weight: f64,
    },
    Value {
        point: &'a [f64],
        target: f64,
        weight: f64,
    },
}

impl Kernel {
    pub(crate) fn new(spec: &KernelSpec<'_>, terms: &[TermPoint<'_>]) -> Result<Self, TrainError> {
        let problem = spec.problem;
        let layout = spec.layout;
        let dim = problem.dim();
        if dim > MAX_DIM {
            return Err(TrainError::InvalidConfig(format!(
                "the training kernel supports at most {MAX_DIM} axes, problem has {dim}"
            )));
        }
        let orders = problem.axis_orders();

        let mut jet_axes = Vec::new();
        let mut comps = 1usize;
        if spec.derivatives {
            for (a, &ord) in orders.iter().enumerate() {
                jet_axes.push(JetAxis {
                    off: comps,
                    second: ord >= 2,
                    phys: a,
                });
                comps += ord as usize;
            }
        }

        let scales: Vec<f64> = (0..dim).map(|a| layout.input_scale(a)).collect();
        let subs: Vec<SubOffsets> = spec
            .locals
            .iter()
            .map(|l| resolve_offsets(l, spec.store))
            .collect();
        let has_mlp = subs.iter().any(|s| s.mlp.is_some());
        let has_kan = subs.iter().any(|s| s.kan.is_some());

        let residual = match problem.params {
            ProblemParams::Helmholtz2d { kappa, .. } => ResidualOp::Helmholtz {
                kappa2: kappa * kappa,
            },
            ProblemParams::Poisson2d { .. } | ProblemParams::PoissonNd { .. } => {
                ResidualOp::NegativeLaplacian
            }
            ProblemParams::ReactionDiffusion1d {
                diffusion,
                reaction_rate,
                ..
            } => ResidualOp::ReactionDiffusion {
                d: diffusion,
                mu: reaction_rate,
            },
            ProblemParams::AllenCahn1d { epsilon } => ResidualOp::AllenCahn {
                eps2: epsilon * epsilon,
            },
        };

        // Geometry constants are evaluated through the expression engine so
        // the trainer shares formulas with the general path.
        let axes_req: Vec<(String, u8)> = if spec.derivatives {
            problem
                .input_names
                .iter()
                .zip(&orders)
                .map(|(n, &o)| (n.clone(), o))
                .collect()
        } else {
            Vec::new()
        };
        let x_exprs = problem.input_exprs();
        let forcing = problem.forcing_expr(&x_exprs).compile()?;
        let (c1_tape, c0_tape) = if spec.hard_constraint {
            let c1 = compile_with(&problem.hc_scale_expr(&x_exprs), &axes_req)?;
            let c0 = match problem.hc_offset_expr(&x_exprs) {
                Some(e) => Some(compile_with(&e, &axes_req)?),
                None => None,
            };
            (Some(c1), c0)
        } else {
            (None, None)
        };

        // Normalized-window tapes per active pattern, compiled on demand.
        let mut window_tapes: std::collections::HashMap<Vec<usize>, Vec<CompiledExpr>> =
            Default::default();
        let mut es = EvalScratch::default();
        let mut term_data = Vec::with_capacity(terms.len());
        let mut max_active = 1;
        for term in terms {
            let (point, kind, weight) = match term {
                TermPoint::Residual { point, weight } => {
                    let mut b = Bindings::new();
                    for (n, v) in problem.input_names.iter().zip(*point) {
                        b.set(n, *v);
                    }
                    let f = forcing.eval_with(&mut es, &b, spec.store)?;
                    (*point, TermKind::Residual { f }, *weight)
                }
                TermPoint::Value {
                    point,
                    target,
                    weight,
                } => (*point, TermKind::Value { target: *target }, *weight),
            };
            let mut b = Bindings::new();
            for (n, v) in problem.input_names.iter().zip(point) {
                b.set(n, *v);
            }

            let (c0, c1) = match (&c0_tape, &c1_tape) {
                (_, None) => {
                    let mut one = vec![0.0; comps];
                    one[0] = 1.0;
                    (vec![0.0; comps], one)
                }
                (c0t, Some(c1t)) => {
                    let c1 = jet_comps(c1t, &mut es, &b, spec.store, comps, &jet_axes, problem)?;
                    let c0 = match c0t {
                        Some(t) => {
                            jet_comps(t, &mut es, &b, spec.store, comps, &jet_axes, problem)?
                        }
                        None => vec![0.0; comps],
                    };
                    (c0, c1)
                }
            };

            let active = layout.active_at(point);
            max_active = max_active.max(active.len());
            let tapes = match window_tapes.entry(active.clone()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    let exprs = layout.window_exprs(&active, &x_exprs);
                    let tapes = exprs
                        .iter()
                        .map(|w| compile_with(w, &axes_req))
                        .collect::<Result<Vec<_>, _>>()?;
                    e.insert(tapes)
                }
            };

            let mut per_sub = Vec::with_capacity(active.len());
            for (pos, &sub) in active.iter().enumerate() {
                let window = jet_comps(
                    &tapes[pos],
                    &mut es,
                    &b,
                    spec.store,
                    comps,
                    &jet_axes,
                    problem,
                )?;
                let xt = layout.normalize_input(sub, point);
                let basis = if spec.arch == Architecture::MlpOnly {
                    Vec::new()
                } else {
                    fourier_basis(&xt, &scales, spec.k, &jet_axes, dim)
                };
                per_sub.push(SubPointData {
                    sub: sub as u32,
                    window,
                    xt,
                    basis,
                });
            }
            term_data.push(TermData {
                kind,
                weight,
                c0,
                c1,
                per_sub,
            });
        }

        Ok(Kernel {
            comps,
            dim,
            hidden: spec.hidden,
            k: spec.k,
            arch: spec.arch,
            s_kind: spec.s_kind,
            jet_axes,
            scales,
            subs,
            residual,
            terms: term_data,
            n_params: spec.store.len(),
            max_active,
            has_kan,
            has_mlp,
        })
    }

    /// Total loss and its gradient over all terms. Deterministic for any
    /// rayon thread count.
    pub(crate) fn loss_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        assert_eq!(grad.len(), self.n_params);
        let chunks: Vec<(f64, Vec<f64>)> = self
            .terms
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut scratch = Scratch::new(self);
                let mut g = vec![0.0; self.n_params];
                let mut loss = 0.0;
                for term in chunk {
                    loss += self.term_grad(term, params, &mut scratch, &mut g);
                }
                (loss, g)
            })
            .collect();
        grad.fill(0.0);
        let mut loss = 0.0;
        for (l, g) in &chunks {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        loss
    }

    /// Loss only (no gradient buffers touched beyond scratch).
    pub(crate) fn loss(&self, params: &[f64]) -> f64 {
        self.terms
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut scratch = Scratch::new(self);
                chunk
                    .iter()
                    .map(|t| {
                        let r = self.term_forward(t, params, &mut scratch);
                        t.weight * r * r
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    }

    /// Field values at every term point (value-only kernels).
    pub(crate) fn predict(&self, params: &[f64]) -> Vec<f64> {
        self.terms
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| {
                let mut scratch = Scratch::new(self);
                chunk
                    .iter()
                    .map(|t| {
                        self.field_forward(t, params, &mut scratch);
                        scratch.ut[0]
                    })
                    .collect::<Vec<f64>>()
            })
            .collect()
    }

    /// Forward pass producing the constrained field jet in `scratch.ut`.
    fn field_forward(&self, term: &TermData, params: &[f64], s: &mut Scratch) {
        let c = self.comps;
        s.u.fill(0.0);
        for (slot, sp) in term.per_sub.iter().enumerate() {
            self.local_forward(slot, sp, params, s);
            let (u, nj) = (&mut s.u, &s.nj[slot * c..slot * c + c]);
            jet_mul_acc(u, &sp.window, nj, &self.jet_axes);
        }
        // ũ = c0 + c1 ⊗ u
        for j in 0..c {
            s.ut[j] = term.c0[j];
        }
        let (ut, u) = (&mut s.ut, &s.u);
        jet_mul_acc(ut, &term.c1, u, &self.jet_axes);
    }

    /// Residual (or value misfit) of one term.
    fn term_forward(&self, term: &TermData, params: &[f64], s: &mut Scratch) -> f64 {
        self.field_forward(term, params, s);
        match term.kind {
            TermKind::Residual { f } => self.residual_value(&s.ut, f),
            TermKind::Value { target } => s.ut[0] - target,
        }
    }

    /// Forward + reverse for one term; returns its weighted loss
    /// contribution and accumulates into `grad`.
    fn term_grad(&self, term: &TermData, params: &[f64], s: &mut Scratch, grad: &mut [f64]) -> f64 {
        let c = self.comps;
        let r = self.term_forward(term, params, s);
        let rbar = 2.0 * term.weight * r;

        s.utbar.fill(0.0);
        match term.kind {
            TermKind::Residual { .. } => self.residual_adjoint(rbar, &s.ut, &mut s.utbar),
            TermKind::Value { .. } => s.utbar[0] = rbar,
        }
        // ũ = c0 + c1 ⊗ u ⇒ ū = c1 ⊗ᵀ ũ̄
        s.ubar.fill(0.0);
        jet_mul_transpose(&mut s.ubar, &term.c1, &s.utbar, &self.jet_axes);

        for (slot, sp) in term.per_sub.iter().enumerate() {
            s.njbar.fill(0.0);
            {
                let (njbar, ubar) = (&mut s.njbar, &s.ubar);
                jet_mul_transpose(njbar, &sp.window, ubar, &self.jet_axes);
            }
            self.local_backward(slot, sp, params, s, grad);
        }
        let _ = c;
        term.weight * r * r
    }

    fn residual_value(&self, ut: &[f64], f: f64) -> f64 {
        let ax = &self.jet_axes;
        match self.residual {
            ResidualOp::Helmholtz { kappa2 } => {
                ut[ax[0].off + 1] + ut[ax[1].off + 1] + kappa2 * ut[0] - f
            }
            ResidualOp::NegativeLaplacian => {
                let lap: f64 = ax.iter().map(|a| ut[a.off + 1]).sum();
                -lap - f
            }
            ResidualOp::ReactionDiffusion { d, mu } => {
                d * ut[ax[0].off + 1] + mu * ut[0].tanh() - f
            }
            ResidualOp::AllenCahn { eps2 } => {
                ut[ax[1].off] - eps2 * ut[ax[0].off + 1] - ut[0] + ut[0].powi(3) - f
            }
        }
    }

    fn residual_adjoint(&self, rbar: f64, ut: &[f64], utbar: &mut [f64]) {
        let ax = &self.jet_axes;
        match self.residual {
            ResidualOp::Helmholtz { kappa2 } => {
                utbar[ax[0].off + 1] += rbar;
                utbar[ax[1].off + 1] += rbar;
                utbar[0] += kappa2 * rbar;
            }
            ResidualOp::NegativeLaplacian => {
                for a in ax {
                    utbar[a.off + 1] -= rbar;
                }
            }
            ResidualOp::ReactionDiffusion { d, mu } => {
                utbar[ax[0].off + 1] += d * rbar;
                let t = ut[0].tanh();
                utbar[0] += mu * (1.0 - t * t) * rbar;
            }
            ResidualOp::AllenCahn { eps2 } => {
                utbar[ax[1].off] += rbar;
                utbar[ax[0].off + 1] -= eps2 * rbar;
                utbar[0] += (3.0 * ut[0] * ut[0] - 1.0) * rbar;
            }
        }
    }

    fn local_forward(&self, slot: usize, sp: &SubPointData, params: &[f64], s: &mut Scratch) {
        let c = self.comps;
        let off = &self.subs[sp.sub as usize];
        match self.arch {
            Architecture::MlpOnly => {
                let out = &mut s.nj[slot * c..slot * c + c];
                self.mlp_forward(
                    off.mlp.unwrap(),
                    sp,
                    params,
                    slot,
                    out,
                    &mut s.mlp_t,
                    &mut s.mlp_zd,
                );
            }
            Architecture::KanOnly => {
                let out = &mut s.nj[slot * c..slot * c + c];
                self.kan_forward(
                    off.kan.unwrap(),
                    sp,
                    params,
                    slot,
                    out,
                    &mut s.kan_h,
                    &mut s.kan_sc,
                );
            }
            Architecture::Hpkm => {
                {
                    let out = &mut s.mlp_out[slot * c..slot * c + c];
                    self.mlp_forward(
                        off.mlp.unwrap(),
                        sp,
                        params,
                        slot,
                        out,
                        &mut s.mlp_t,
                        &mut s.mlp_zd,
                    );
                }
                {
                    let out = &mut s.kan_out[slot * c..slot * c + c];
                    self.kan_forward(
                        off.kan.unwrap(),
                        sp,
                        params,
                        slot,
                        out,
                        &mut s.kan_h,
                        &mut s.kan_sc,
                    );
                }
                let nj = &mut s.nj[slot * c..slot * c + c];
                let kan = &s.kan_out[slot * c..slot * c + c];
                let mlp = &s.mlp_out[slot * c..slot * c + c];
                if self.s_kind == SKind::None {
                    for j in 0..c {
                        nj[j] = kan[j] + mlp[j];
                    }
                } else {
                    let alpha = params[off.alpha.unwrap()];
                    let (sv, ds) = s_shape_grad(self.s_kind, alpha);
                    s.head_s[slot * 2] = sv;
                    s.head_s[slot * 2 + 1] = ds;
                    for j in 0..c {
                        nj[j] = sv * kan[j] + (1.0 - sv) * mlp[j];
                    }
                }
            }
        }
    }

    fn local_backward(
        &self,
        slot: usize,
        sp: &SubPointData,
        params: &[f64],
        s: &mut Scratch,
        grad: &mut [f64],
    ) {
        let c = self.comps;
        let off = &self.subs[sp.sub as usize];
        match self.arch {
            Architecture::MlpOnly => {
                s.branch_bar.copy_from_slice(&s.njbar);
                self.mlp_backward(off.mlp.unwrap(), sp, params, slot, s, grad);
            }
            Architecture::KanOnly => {
                s.branch_bar.copy_from_slice(&s.njbar);
                self.kan_backward(off.kan.unwrap(), sp, params, slot, s, grad);
            }
            Architecture::Hpkm => {
                let (sv, ds) = if self.s_kind == SKind::None {
                    (f64::NAN, 0.0)
                } else {
                    (s.head_s[slot * 2], s.head_s[slot * 2 + 1])
                };
                if self.s_kind == SKind::None {
                    s.branch_bar.copy_from_slice(&s.njbar);
                    self.kan_backward(off.kan.unwrap(), sp, params, slot, s, grad);
                    s.branch_bar.copy_from_slice(&s.njbar);
                    self.mlp_backward(off.mlp.unwrap(), sp, params, slot, s, grad);
                } else {
                    let kan = &s.kan_out[slot * c..slot * c + c];
                    let mlp = &s.mlp_out[slot * c..slot * c + c];
                    let mut sbar = 0.0;
                    for j in 0..c {
                        sbar += s.njbar[j] * (kan[j] - mlp[j]);
                    }
                    grad[off.alpha.unwrap()] += ds * sbar;
                    for j in 0..c {
                        s.branch_bar[j] = sv * s.njbar[j];
                    }
                    self.kan_backward(off.kan.unwrap(), sp, params, slot, s, grad);
                    for j in 0..c {
                        s.branch_bar[j] = (1.0 - sv) * s.njbar[j];
                    }
                    self.mlp_backward(off.mlp.unwrap(), sp, params, slot, s, grad);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn mlp_forward(
        &self,
        off: MlpOff,
        sp: &SubPointData,
        params: &[f64],
        slot: usize,
        out: &mut [f64],
        t_save: &mut [f64],
        zd_save: &mut [f64],
    ) {
        let (d, h_count) = (self.dim, self.hidden);
        let w1 = &params[off.w1..off.w1 + h_count * d];
        let b1 = &params[off.b1..off.b1 + h_count];
        let w2 = &params[off.w2..off.w2 + h_count];
        let axes = &self.jet_axes[..];
        out.fill(0.0);
        out[0] = params[off.b2];
        for h in 0..h_count {
            let w_row = &w1[h * d..(h + 1) * d];
            let mut z = b1[h];
            for (w, x) in w_row.iter().zip(&sp.xt) {
                z += w * x;
            }
            let t = z.tanh();
            t_save[slot * h_count + h] = t;
            let t1 = 1.0 - t * t;
            let t2 = -2.0 * t * t1;
            let w2h = w2[h];
            out[0] += w2h * t;
            for ax in axes {
                let zd = w_row[ax.phys] * self.scales[ax.phys];
                zd_save[(slot * h_count + h) * d + ax.phys] = zd;
                out[ax.off] += w2h * t1 * zd;
                if ax.second {
                    out[ax.off + 1] += w2h * t2 * zd * zd;
                }
            }
        }
    }

    fn mlp_backward(
        &self,
        off: MlpOff,
        sp: &SubPointData,
        params: &[f64],
        slot: usize,
        s: &mut Scratch,
        grad: &mut [f64],
    ) {
        let (d, h_count) = (self.dim, self.hidden);
        let axes = &self.jet_axes[..];
        let w2 = &params[off.w2..off.w2 + h_count];
        let mut outbar = [0.0f64; MAX_COMPS];
        outbar[..self.comps].copy_from_slice(&s.branch_bar[..self.comps]);
        grad[off.b2] += outbar[0];
        let mut zdbar = [0.0f64; MAX_DIM];
        for h in 0..h_count {
            let t = s.mlp_t[slot * h_count + h];
            let t1 = 1.0 - t * t;
            let t2 = -2.0 * t * t1;
            let t3 = -2.0 * t1 * t1 - 2.0 * t * t2;
            let w2h = w2[h];
            let zds = &s.mlp_zd[(slot * h_count + h) * d..(slot * h_count + h + 1) * d];
            let mut w2g = outbar[0] * t;
            let mut zbar = t1 * (w2h * outbar[0]);
            for ax in axes {
                let zd = zds[ax.phys];
                let nb1 = w2h * outbar[ax.off];
                w2g += outbar[ax.off] * t1 * zd;
                zbar += t2 * zd * nb1;
                let mut zdb = t1 * nb1;
                if ax.second {
                    let nb2 = w2h * outbar[ax.off + 1];
                    w2g += outbar[ax.off + 1] * t2 * zd * zd;
                    zbar += t3 * zd * zd * nb2;
                    zdb += 2.0 * t2 * zd * nb2;
                }
                zdbar[ax.phys] = zdb;
            }
            grad[off.w2 + h] += w2g;
            grad[off.b1 + h] += zbar;
            let w_row = &mut grad[off.w1 + h * d..off.w1 + (h + 1) * d];
            for (g, x) in w_row.iter_mut().zip(&sp.xt) {
                *g += zbar * x;
            }
            for ax in axes {
                w_row[ax.phys] += zdbar[ax.phys] * self.scales[ax.phys];
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn kan_forward(
        &self,
        off: KanOff,
        sp: &SubPointData,
        params: &[f64],
        slot: usize,
        out: &mut [f64],
        h_save: &mut [f64],
        sc_save: &mut [f64],
    ) {
        let (c, d, h_count, k) = (self.comps, self.dim, self.hidden, self.k);
        let dk = d * k;
        let a1 = &params[off.a1..off.a1 + h_count * dk];
        let b1 = &params[off.b1..off.b1 + h_count * dk];
        let axes = &self.jet_axes[..];
        let (sv, rest) = sp.basis.split_at(dk);
        let (sd1, rest) = rest.split_at(dk);
        let (sd2, rest) = rest.split_at(dk);
        let (cv, rest) = rest.split_at(dk);
        let (cd1, cd2) = rest.split_at(dk);
        // Stage 1: linear in the precomputed basis jets. Coefficient rows
        // and basis blocks share the same (axis, frequency) order, so
        // everything is contiguous dot products.
        for o in 0..h_count {
            let hj = &mut h_save[(slot * h_count + o) * c..(slot * h_count + o) * c + c];
            hj.fill(0.0);
            let arow = &a1[o * dk..(o + 1) * dk];
            let brow = &b1[o * dk..(o + 1) * dk];
            hj[0] = dot2(arow, sv, brow, cv);
            for ax in axes {
                let lo = ax.phys * k;
                let hi = lo + k;
                let (ar, br) = (&arow[lo..hi], &brow[lo..hi]);
                hj[ax.off] = dot2(ar, &sd1[lo..hi], br, &cd1[lo..hi]);
                if ax.second {
                    hj[ax.off + 1] = dot2(ar, &sd2[lo..hi], br, &cd2[lo..hi]);
                }
            }
        }
        // Stage 2: Fourier activations of the hidden jets.
        out.fill(0.0);
        let a2row = &params[off.a2..off.a2 + h_count * k];
        let b2row = &params[off.b2..off.b2 + h_count * k];
        for o in 0..h_count {
            let hj = &h_save[(slot * h_count + o) * c..(slot * h_count + o) * c + c];
            let sc = &mut sc_save[(slot * h_count + o) * k * 2..(slot * h_count + o + 1) * k * 2];
            let (s1, c1) = hj[0].sin_cos();
            let mut sj = s1;
            let mut cj = c1;
            for (j, (a2, b2)) in a2row[o * k..(o + 1) * k]
                .iter()
                .zip(&b2row[o * k..(o + 1) * k])
                .enumerate()
            {
                if j > 0 {
                    let s_next = sj * c1 + cj * s1;
                    let c_next = cj * c1 - sj * s1;
                    sj = s_next;
                    cj = c_next;
                }
                sc[2 * j] = sj;
                sc[2 * j + 1] = cj;
                let jf = (j + 1) as f64;
                out[0] += a2 * sj + b2 * cj;
                let f1 = jf * cj;
                let g1 = -jf * sj;
                let w1 = a2 * f1 + b2 * g1;
                for ax in axes {
                    let hd1 = hj[ax.off];
                    out[ax.off] += w1 * hd1;
                    if ax.second {
                        let hd2 = hj[ax.off + 1];
                        let w2 = -jf * jf * (a2 * sj + b2 * cj);
                        out[ax.off + 1] += w2 * hd1 * hd1 + w1 * hd2;
                    }
                }
            }
        }
    }

    fn kan_backward(
        &self,
        off: KanOff,
        sp: &SubPointData,
        params: &[f64],
        slot: usize,
        s: &mut Scratch,
        grad: &mut [f64],
    ) {
        let (c, d, h_count, k) = (self.comps, self.dim, self.hidden, self.k);
        let axes = &self.jet_axes[..];
        let dk = d * k;
        let (sv, rest) = sp.basis.split_at(dk);
        let (sd1, rest) = rest.split_at(dk);
        let (sd2, rest) = rest.split_at(dk);
        let (cv, rest) = rest.split_at(dk);
        let (cd1, cd2) = rest.split_at(dk);
        let mut outbar = [0.0f64; MAX_COMPS];
        outbar[..c].copy_from_slice(&s.branch_bar[..c]);
        let a2all = &params[off.a2..off.a2 + h_count * k];
        let b2all = &params[off.b2..off.b2 + h_count * k];
        for o in 0..h_count {
            let mut hj = [0.0f64; MAX_COMPS];
            hj[..c]
                .copy_from_slice(&s.kan_h[(slot * h_count + o) * c..(slot * h_count + o) * c + c]);
            let sc = &s.kan_sc[(slot * h_count + o) * k * 2..(slot * h_count + o + 1) * k * 2];
            let mut hbar = [0.0f64; MAX_COMPS];
            for (j, (a2, b2)) in a2all[o * k..(o + 1) * k]
                .iter()
                .zip(&b2all[o * k..(o + 1) * k])
                .enumerate()
            {
                let sj = sc[2 * j];
                let cj = sc[2 * j + 1];
                let jf = (j + 1) as f64;
                let f1 = jf * cj;
                let g1 = -jf * sj;
                let f2 = -jf * jf * sj;
                let g2 = -jf * jf * cj;
                // Pₙ = a₂·fₙ + b₂·gₙ: the combined weight of the n-th
                // activation derivative in this frequency's output share.
                let p1 = a2 * f1 + b2 * g1;
                let p2 = a2 * f2 + b2 * g2;
                let p3 = -jf * jf * jf * (a2 * cj - b2 * sj);
                let mut a2g = outbar[0] * sj;
                let mut b2g = outbar[0] * cj;
                hbar[0] += p1 * outbar[0];
                for ax in axes {
                    let hd1 = hj[ax.off];
                    let ob1 = outbar[ax.off];
                    a2g += ob1 * f1 * hd1;
                    b2g += ob1 * g1 * hd1;
                    hbar[0] += p2 * hd1 * ob1;
                    hbar[ax.off] += p1 * ob1;
                    if ax.second {
                        let hd2 = hj[ax.off + 1];
                        let ob2 = outbar[ax.off + 1];
                        a2g += ob2 * (f2 * hd1 * hd1 + f1 * hd2);
                        b2g += ob2 * (g2 * hd1 * hd1 + g1 * hd2);
                        hbar[0] += (p3 * hd1 * hd1 + p2 * hd2) * ob2;
                        hbar[ax.off] += 2.0 * p2 * hd1 * ob2;
                        hbar[ax.off + 1] += p1 * ob2;
                    }
                }
                grad[off.a2 + o * k + j] += a2g;
                grad[off.b2 + o * k + j] += b2g;
            }
            // Stage 1 transpose: h is linear in the coefficients, so the
            // gradients are the basis jets weighted by the hidden adjoints.
            let w0 = hbar[0];
            {
                let ga = &mut grad[off.a1 + o * dk..off.a1 + (o + 1) * dk];
                for (g, b) in ga.iter_mut().zip(sv) {
                    *g += w0 * b;
                }
                let gb = &mut grad[off.b1 + o * dk..off.b1 + (o + 1) * dk];
                for (g, b) in gb.iter_mut().zip(cv) {
                    *g += w0 * b;
                }
            }
            for ax in axes {
                let w1 = hbar[ax.off];
                let w2 = if ax.second { hbar[ax.off + 1] } else { 0.0 };
                let lo = ax.phys * k;
                let hi = lo + k;
                let base = o * dk + lo;
                let ga = &mut grad[off.a1 + base..off.a1 + base + k];
                for ((g, b1v), b2v) in ga.iter_mut().zip(&sd1[lo..hi]).zip(&sd2[lo..hi]) {
                    *g += w1 * b1v + w2 * b2v;
                }
                let gb = &mut grad[off.b1 + base..off.b1 + base + k];
                for ((g, b1v), b2v) in gb.iter_mut().zip(&cd1[lo..hi]).zip(&cd2[lo..hi]) {
                    *g += w1 * b1v + w2 * b2v;
                }
            }
        }
    }
}

/// out += a ⊗ b over jets (pure per-axis second-order products).
#[inline]
fn jet_mul_acc(out: &mut [f64], a: &[f64], b: &[f64], axes: &[JetAxis]) {
    out[0] += a[0] * b[0];
    for ax in axes {
        let o = ax.off;
        out[o] += a[o] * b[0] + a[0] * b[o];
        if ax.second {
            out[o + 1] += a[o + 1] * b[0] + 2.0 * a[o] * b[o] + a[0] * b[o + 1];
        }
    }
}

/// bbar += a ⊗ᵀ outbar: transpose of [`jet_mul_acc`] in its second jet
/// argument, with `a` constant.
#[inline]
fn jet_mul_transpose(bbar: &mut [f64], a: &[f64], outbar: &[f64], axes: &[JetAxis]) {
    let mut b0 = a[0] * outbar[0];
    for ax in axes {
        let o = ax.off;
        b0 += a[o] * outbar[o];
        bbar[o] += a[0] * outbar[o];
        if ax.second {
            b0 += a[o + 1] * outbar[o + 1];
            bbar[o] += 2.0 * a[o] * outbar[o + 1];
            bbar[o + 1] += a[0] * outbar[o + 1];
        }
    }
    bbar[0] += b0;
}

/// Two fused dot products `Σ aᵢsᵢ + Σ bᵢcᵢ` over equal-length slices.
/// Two independent accumulators keep the dependency chains short.
#[inline(always)]
fn dot2(a: &[f64], s: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let mut acc_a = 0.0;
    let mut acc_b = 0.0;
    for ((av, sv), (bv, cv)) in a.iter().zip(s).zip(b.iter().zip(c)) {
        acc_a += av * sv;
        acc_b += bv * cv;
    }
    acc_a + acc_b
}

/// Fourier stage-1 basis jets in structure-of-arrays layout: six blocks of
/// `dim*k` values (sin, sin', sin'', cos, cos', cos''), derivatives in
/// physical coordinates. Harmonics come from the same angle-addition
/// recurrence the expression builder uses.
fn fourier_basis(xt: &[f64], scales: &[f64], k: usize, axes: &[JetAxis], dim: usize) -> Vec<f64> {
    let dk = dim * k;
    let mut out = vec![0.0; dk * 6];
    for a in 0..dim {
        let (s1, c1) = xt[a].sin_cos();
        let mut sj = s1;
        let mut cj = c1;
        let scale = scales[a];
        let second = axes.iter().any(|ax| ax.phys == a && ax.second);
        let carried = axes.iter().any(|ax| ax.phys == a);
        for j in 0..k {
            if j > 0 {
                let s_next = sj * c1 + cj * s1;
                let c_next = cj * c1 - sj * s1;
                sj = s_next;
                cj = c_next;
            }
            let jf = (j + 1) as f64;
            let ix = a * k + j;
            out[ix] = sj;
            out[3 * dk + ix] = cj;
            if carried {
                out[dk + ix] = jf * cj * scale;
                out[4 * dk + ix] = -jf * sj * scale;
                if second {
                    out[2 * dk + ix] = -jf * jf * sj * scale * scale;
                    out[5 * dk + ix] = -jf * jf * cj * scale * scale;
                }
            }
        }
    }
    out
}

fn resolve_offsets(local: &LocalNet, store: &ParamStore) -> SubOffsets {
    let start = |b| store.block_range(b).start;
    match local {
        LocalNet::Hpkm { mlp, fkan, head } => SubOffsets {
            mlp: Some(MlpOff {
                w1: start(mlp.w1),
                b1: start(mlp.b1),
                w2: start(mlp.w2),
                b2: start(mlp.b2),
            }),
            kan: Some(KanOff {
                a1: start(fkan.stage1.a),
                b1: start(fkan.stage1.b),
                a2: start(fkan.stage2.a),
                b2: start(fkan.stage2.b),
            }),
            alpha: Some(head.alpha.index()),
        },
        LocalNet::MlpOnly(mlp) => SubOffsets {
            mlp: Some(MlpOff {
                w1: start(mlp.w1),
                b1: start(mlp.b1),
                w2: start(mlp.w2),
                b2: start(mlp.b2),
            }),
            kan: None,
            alpha: None,
        },
        LocalNet::KanOnly(fkan) => SubOffsets {
            mlp: None,
            kan: Some(KanOff {
                a1: start(fkan.stage1.a),
                b1: start(fkan.stage1.b),
                a2: start(fkan.stage2.a),
                b2: start(fkan.stage2.b),
            }),
            alpha: None,
        },
    }
}

fn compile_with(e: &Expr, axes: &[(String, u8)]) -> Result<CompiledExpr, crate::expr::EvalError> {
    if axes.is_empty() {
        return e.compile();
    }
    // Force the requested derivative axes into the tape through zero-weight
    // probe terms.
    let probes = axes
        .iter()
        .map(|(n, o)| e.deriv(n, *o))
        .fold(Expr::constant(0.0), |acc, d| acc + d);
    let probed = e + 0.0 * probes;
    probed.compile()
}

#[allow(clippy::too_many_arguments)]
fn jet_comps(
    tape: &CompiledExpr,
    es: &mut EvalScratch,
    b: &Bindings,
    store: &ParamStore,
    comps: usize,
    axes: &[JetAxis],
    problem: &ProblemSpec,
) -> Result<Vec<f64>, crate::expr::EvalError> {
    let jet = tape.eval_jet_with(es, b, store)?;
    let mut out = vec![0.0; comps];
    out[0] = jet.value();
    for ax in axes {
        let name = &problem.input_names[ax.phys];
        out[ax.off] = jet.d1(name);
        if ax.second {
            out[ax.off + 1] = jet.d2(name);
        }
    }
    Ok(out)
}
