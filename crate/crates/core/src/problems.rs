//! The benchmark boundary-value problems: residual operators, manufactured
//! forcing terms, exact solutions, and hard-constraint wrappers.
//!
//! Every problem is manufactured: the forcing is derived from a closed-form
//! exact solution, so `residual(exact) ≡ 0` is an identity the whole stack
//! can be validated against. Boundary (and initial) conditions are enforced
//! by construction: the raw network output is wrapped as
//! `ũ = c₀(x) + c₁(x)·raw` where the multiplicative factor vanishes on the
//! Dirichlet boundary and, for the time-dependent problem, the offset
//! reproduces the initial state at t = 0. No boundary penalty terms are
//! needed in the loss.

use crate::expr::Expr;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProblemError {
    #[error("unknown problem kind `{0}` (expected helmholtz2d, poisson2d, poisson_nd, reaction_diffusion1d or allen_cahn1d)")]
    UnknownKind(String),
    #[error("invalid problem parameter {name}: {msg}")]
    InvalidParam { name: &'static str, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Helmholtz2d,
    Poisson2d,
    PoissonNd,
    ReactionDiffusion1d,
    AllenCahn1d,
}

impl ProblemKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemKind::Helmholtz2d => "helmholtz2d",
            ProblemKind::Poisson2d => "poisson2d",
            ProblemKind::PoissonNd => "poisson_nd",
            ProblemKind::ReactionDiffusion1d => "reaction_diffusion1d",
            ProblemKind::AllenCahn1d => "allen_cahn1d",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "helmholtz2d" => Ok(ProblemKind::Helmholtz2d),
            "poisson2d" => Ok(ProblemKind::Poisson2d),
            "poisson_nd" => Ok(ProblemKind::PoissonNd),
            "reaction_diffusion1d" => Ok(ProblemKind::ReactionDiffusion1d),
            "allen_cahn1d" => Ok(ProblemKind::AllenCahn1d),
            other => Err(ProblemError::UnknownKind(other.to_string())),
        }
    }
}

/// Problem constants, one variant per kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemParams {
    /// Δu + κ²u = f on (−1,1)², u* = sin(ωπx)sin(ωπy).
    Helmholtz2d { omega: f64, kappa: f64 },
    /// −Δu = f on (0,1)², u* = (1/m)Σᵢ sin(2ⁱπx)sin(2ⁱπy), i = 1..m.
    Poisson2d { m: u32 },
    /// −Δu = f on (0,1)^dim, u* = −(1/π²)Π sin(πxᵢ).
    PoissonNd { dim: usize },
    /// D·u″ + μ·tanh(u) = f on (0,1), u* = sin³(kπx).
    ReactionDiffusion1d {
        diffusion: f64,
        reaction_rate: f64,
        wavenumber: u32,
    },
    /// u_t = ε²u_xx + u − u³ + f on (0,1)×(0,1].
    AllenCahn1d { epsilon: f64 },
}

/// A fully specified benchmark problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub kind: ProblemKind,
    pub params: ProblemParams,
    /// Per-axis (lo, hi) bounds; the temporal axis comes last when present.
    pub domain: Vec<(f64, f64)>,
    pub input_names: Vec<String>,
    /// Index of the time axis (first-order derivative in the residual).
    pub time_axis: Option<usize>,
    /// Steepness scale of the tanh boundary masks.
    pub sigma_hc: f64,
}

/// Build a problem from its kind-specific constants, validating them.
pub fn make_problem(params: ProblemParams) -> Result<ProblemSpec, ProblemError> {
    let invalid = |name: &'static str, msg: String| ProblemError::InvalidParam { name, msg };
    match params {
        ProblemParams::Helmholtz2d { omega, kappa } => Ok(ProblemSpec {
            name: format!("helmholtz2d(omega={omega}, kappa={kappa})"),
            kind: ProblemKind::Helmholtz2d,
            params,
            domain: vec![(-1.0, 1.0), (-1.0, 1.0)],
            input_names: vec!["x".into(), "y".into()],
            time_axis: None,
            sigma_hc: 0.2,
        }),
        ProblemParams::Poisson2d { m } => {
            if m < 1 {
                return Err(invalid("m", format!("must be ≥ 1, got {m}")));
            }
            Ok(ProblemSpec {
                name: format!("poisson2d(m={m})"),
                kind: ProblemKind::Poisson2d,
                params,
                domain: vec![(0.0, 1.0), (0.0, 1.0)],
                input_names: vec!["x".into(), "y".into()],
                time_axis: None,
                sigma_hc: 0.2,
            })
        }
        ProblemParams::PoissonNd { dim } => {
            if dim < 1 {
                return Err(invalid("dim", format!("must be ≥ 1, got {dim}")));
            }
            Ok(ProblemSpec {
                name: format!("poisson_nd(dim={dim})"),
                kind: ProblemKind::PoissonNd,
                params,
                domain: vec![(0.0, 1.0); dim],
                input_names: (1..=dim).map(|i| format!("x{i}")).collect(),
                time_axis: None,
                sigma_hc: 0.2,
            })
        }
        ProblemParams::ReactionDiffusion1d {
            diffusion,
            reaction_rate,
            wavenumber,
        } => {
            if !(diffusion > 0.0) {
                return Err(invalid(
                    "diffusion",
                    format!("must be > 0, got {diffusion}"),
                ));
            }
            if wavenumber < 1 {
                return Err(invalid(
                    "wavenumber",
                    format!("must be ≥ 1, got {wavenumber}"),
                ));
            }
            Ok(ProblemSpec {
                name: format!(
                    "reaction_diffusion1d(D={diffusion}, mu={reaction_rate}, k={wavenumber})"
                ),
                kind: ProblemKind::ReactionDiffusion1d,
                params,
                domain: vec![(0.0, 1.0)],
                input_names: vec!["x".into()],
                time_axis: None,
                sigma_hc: 0.2,
            })
        }
        ProblemParams::AllenCahn1d { epsilon } => {
            if !(epsilon > 0.0) {
                return Err(invalid("epsilon", format!("must be > 0, got {epsilon}")));
            }
            Ok(ProblemSpec {
                name: format!("allen_cahn1d(epsilon={epsilon})"),
                kind: ProblemKind::AllenCahn1d,
                params,
                domain: vec![(0.0, 1.0), (0.0, 1.0)],
                input_names: vec!["x".into(), "t".into()],
                time_axis: Some(1),
                sigma_hc: 0.2,
            })
        }
    }
}

impl ProblemSpec {
    /// Benchmark-default constructions.
    pub fn helmholtz2d(omega: f64) -> Self {
        make_problem(ProblemParams::Helmholtz2d { omega, kappa: 1.0 }).unwrap()
    }

    pub fn poisson2d(m: u32) -> Result<Self, ProblemError> {
        make_problem(ProblemParams::Poisson2d { m })
    }

    pub fn poisson_nd(dim: usize) -> Result<Self, ProblemError> {
        make_problem(ProblemParams::PoissonNd { dim })
    }

    pub fn reaction_diffusion1d() -> Self {
        make_problem(ProblemParams::ReactionDiffusion1d {
            diffusion: 0.01,
            reaction_rate: 0.7,
            wavenumber: 8,
        })
        .unwrap()
    }

    pub fn allen_cahn1d() -> Self {
        make_problem(ProblemParams::AllenCahn1d { epsilon: 0.1 }).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    /// Input-reference expressions in axis order.
    pub fn input_exprs(&self) -> Vec<Expr> {
        self.input_names.iter().map(|n| Expr::input(n)).collect()
    }

    /// Derivative order the residual needs per axis (2 spatial, 1 temporal).
    pub fn axis_orders(&self) -> Vec<u8> {
        (0..self.dim())
            .map(|a| if self.time_axis == Some(a) { 1 } else { 2 })
            .collect()
    }

    /// Closed-form exact solution at the coordinate expressions `x`.
    pub fn exact_expr(&self, x: &[Expr]) -> Expr {
        match self.params {
            ProblemParams::Helmholtz2d { omega, .. } => {
                (omega * PI * &x[0]).sin() * (omega * PI * &x[1]).sin()
            }
            ProblemParams::Poisson2d { m } => {
                let terms = (1..=m).map(|i| {
                    let w = (2.0f64).powi(i as i32);
                    (w * PI * &x[0]).sin() * (w * PI * &x[1]).sin()
                });
                Expr::sum(terms) / m as f64
            }
            ProblemParams::PoissonNd { dim } => {
                let mut prod = (PI * &x[0]).sin();
                for xi in x.iter().take(dim).skip(1) {
                    prod = prod * (PI * xi).sin();
                }
                -prod / (PI * PI)
            }
            ProblemParams::ReactionDiffusion1d { wavenumber, .. } => {
                (wavenumber as f64 * PI * &x[0]).sin().powi(3)
            }
            ProblemParams::AllenCahn1d { .. } => {
                (PI * &x[0]).sin() * (2.0 * PI * &x[1]).cos()
                    + 0.1 * (10.0 * PI * &x[0]).sin() * (20.0 * PI * &x[1]).cos()
            }
        }
    }

    /// Manufactured forcing at the coordinate expressions `x`.
    pub fn forcing_expr(&self, x: &[Expr]) -> Expr {
        match self.params {
            // (κ² − 2ω²π²)·sin(ωπx)sin(ωπy): plugging the product-sine
            // solution into Δu + κ²u. κ = 1 gives the usual (1 − 2ω²π²).
            ProblemParams::Helmholtz2d { omega, kappa } => {
                let c = kappa * kappa - 2.0 * omega * omega * PI * PI;
                c * (omega * PI * &x[0]).sin() * (omega * PI * &x[1]).sin()
            }
            ProblemParams::Poisson2d { m } => {
                let terms = (1..=m).map(|i| {
                    let w = (2.0f64).powi(i as i32) * PI;
                    (w * w) * (w * &x[0]).sin() * (w * &x[1]).sin()
                });
                2.0 / m as f64 * Expr::sum(terms)
            }
            ProblemParams::PoissonNd { dim } => {
                let mut prod = (PI * &x[0]).sin();
                for xi in x.iter().take(dim).skip(1) {
                    prod = prod * (PI * xi).sin();
                }
                -(dim as f64) * prod
            }
            // Derived from u* = sin³(kπx):
            // f = 3Dk²π²(2 sin cos² − sin³) + μ tanh(sin³).
            ProblemParams::ReactionDiffusion1d {
                diffusion,
                reaction_rate,
                wavenumber,
            } => {
                let kp = wavenumber as f64 * PI;
                let s = (kp * &x[0]).sin();
                let c = (kp * &x[0]).cos();
                let bend = 3.0 * diffusion * kp * kp * (2.0 * &s * c.powi(2) - s.powi(3));
                bend + reaction_rate * s.powi(3).tanh()
            }
            ProblemParams::AllenCahn1d { epsilon } => {
                let sx = (PI * &x[0]).sin();
                let sx10 = (10.0 * PI * &x[0]).sin();
                let ct = (2.0 * PI * &x[1]).cos();
                let ct20 = (20.0 * PI * &x[1]).cos();
                let st = (2.0 * PI * &x[1]).sin();
                let st20 = (20.0 * PI * &x[1]).sin();
                let u = &sx * &ct + 0.1 * &sx10 * &ct20;
                -2.0 * PI * &sx * st - 2.0 * PI * &sx10 * st20
                    + epsilon * epsilon * (PI * PI * &sx * &ct + 10.0 * PI * PI * &sx10 * &ct20)
                    + u.powi(3)
                    - u
            }
        }
    }

    /// Multiplicative hard-constraint factor c₁(x); it vanishes on the
    /// Dirichlet boundary. For the time-dependent problem it carries the
    /// extra factor t so the offset alone survives at t = 0.
    pub fn hc_scale_expr(&self, x: &[Expr]) -> Expr {
        let s = self.sigma_hc;
        match self.params {
            ProblemParams::Helmholtz2d { .. } => {
                ((&x[0] + 1.0) / s).tanh()
                    * ((1.0 - &x[0]) / s).tanh()
                    * ((&x[1] + 1.0) / s).tanh()
                    * ((1.0 - &x[1]) / s).tanh()
            }
            ProblemParams::Poisson2d { .. } => {
                (&x[0] / s).tanh()
                    * ((1.0 - &x[0]) / s).tanh()
                    * (&x[1] / s).tanh()
                    * ((1.0 - &x[1]) / s).tanh()
            }
            ProblemParams::PoissonNd { dim } => {
                let mut prod = (&x[0] / s).tanh() * ((1.0 - &x[0]) / s).tanh();
                for xi in x.iter().take(dim).skip(1) {
                    prod = prod * (xi / s).tanh() * ((1.0 - xi) / s).tanh();
                }
                prod
            }
            ProblemParams::ReactionDiffusion1d { .. } => {
                (&x[0] / s).tanh() * ((1.0 - &x[0]) / s).tanh()
            }
            ProblemParams::AllenCahn1d { .. } => {
                &x[1] * (&x[0] / s).tanh() * ((1.0 - &x[0]) / s).tanh()
            }
        }
    }

    /// Additive hard-constraint offset c₀; only the time-dependent problem
    /// has one (the initial state g(x)).
    pub fn hc_offset_expr(&self, x: &[Expr]) -> Option<Expr> {
        match self.params {
            ProblemParams::AllenCahn1d { .. } => {
                Some((PI * &x[0]).sin() + 0.1 * (10.0 * PI * &x[0]).sin())
            }
            _ => None,
        }
    }

    /// Wrap a raw network output so boundary and initial conditions hold
    /// identically: `ũ = c₀(x) + c₁(x)·raw`.
    pub fn apply_hard_constraint(&self, raw: &Expr, x: &[Expr]) -> Expr {
        let scaled = self.hc_scale_expr(x) * raw;
        match self.hc_offset_expr(x) {
            Some(offset) => offset + scaled,
            None => scaled,
        }
    }

    /// The PDE residual applied to a field expression `u` built over the
    /// same coordinates `x`. Derivatives are taken with respect to the
    /// problem's input names, so `x` may be shifted input references.
    pub fn residual_with(&self, u: &Expr, x: &[Expr]) -> Expr {
        let f = self.forcing_expr(x);
        let n = |a: usize| self.input_names[a].as_str();
        match self.params {
            ProblemParams::Helmholtz2d { kappa, .. } => {
                u.deriv(n(0), 2) + u.deriv(n(1), 2) + kappa * kappa * u - f
            }
            ProblemParams::Poisson2d { .. } => -(u.deriv(n(0), 2) + u.deriv(n(1), 2)) - f,
            ProblemParams::PoissonNd { dim } => {
                let lap = Expr::sum((0..dim).map(|a| u.deriv(n(a), 2)));
                -lap - f
            }
            ProblemParams::ReactionDiffusion1d {
                diffusion,
                reaction_rate,
                ..
            } => diffusion * u.deriv(n(0), 2) + reaction_rate * u.tanh() - f,
            ProblemParams::AllenCahn1d { epsilon } => {
                u.deriv(n(1), 1) - epsilon * epsilon * u.deriv(n(0), 2) - u + u.powi(3) - f
            }
        }
    }

    /// Residual of a field given as a builder over coordinate expressions,
    /// evaluated over the problem's own input references.
    pub fn residual_at(&self, field: impl FnOnce(&[Expr]) -> Expr) -> Expr {
        let x = self.input_exprs();
        let u = field(&x);
        self.residual_with(&u, &x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Bindings;
    use crate::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_problems() -> Vec<ProblemSpec> {
        vec![
            ProblemSpec::helmholtz2d(1.0),
            ProblemSpec::helmholtz2d(4.0),
            ProblemSpec::poisson2d(2).unwrap(),
            ProblemSpec::poisson_nd(5).unwrap(),
            ProblemSpec::reaction_diffusion1d(),
            ProblemSpec::allen_cahn1d(),
        ]
    }

    fn bind(p: &ProblemSpec, coords: &[f64]) -> Bindings {
        let mut b = Bindings::new();
        for (n, v) in p.input_names.iter().zip(coords) {
            b.set(n, *v);
        }
        b
    }

    fn random_point(p: &ProblemSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
        p.domain
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
            .collect()
    }

    #[test]
    fn helmholtz_exact_solution_values() {
        let p = ProblemSpec::helmholtz2d(1.0);
        let store = ParamStore::new();
        let u = p.exact_expr(&p.input_exprs());
        let v = u.eval(&bind(&p, &[0.5, 0.5]), &store).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn manufactured_residual_vanishes_on_exact_solution() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for p in all_problems() {
            let residual = p.residual_at(|x| p.exact_expr(x));
            let compiled = residual.compile().unwrap();
            for _ in 0..100 {
                let pt = random_point(&p, &mut rng);
                let r = compiled.eval(&bind(&p, &pt), &store).unwrap();
                assert!(r.abs() <= 1e-8, "{}: residual {r} at {pt:?}", p.name);
            }
        }
    }

    #[test]
    fn helmholtz_residual_of_exact_at_fixed_point() {
        let p = ProblemSpec::helmholtz2d(1.0);
        let store = ParamStore::new();
        let residual = p.residual_at(|x| p.exact_expr(x));
        let r = residual.eval(&bind(&p, &[0.3, -0.7]), &store).unwrap();
        assert!(r.abs() <= 1e-9, "residual {r}");
    }

    #[test]
    fn poisson_forcing_vanishes_at_midpoint() {
        // Both 2π·0.5 and 4π·0.5 are integer multiples of π.
        let p = ProblemSpec::poisson2d(2).unwrap();
        let store = ParamStore::new();
        let f = p.forcing_expr(&p.input_exprs());
        let v = f.eval(&bind(&p, &[0.5, 0.5]), &store).unwrap();
        assert!(v.abs() < 1e-12, "f = {v}");
    }

    #[test]
    fn zero_field_residual_is_minus_forcing() {
        let p = ProblemSpec::poisson2d(2).unwrap();
        let store = ParamStore::new();
        let residual = p.residual_at(|_| Expr::constant(0.0));
        let pt = [0.25, 0.25];
        let r = residual.eval(&bind(&p, &pt), &store).unwrap();
        // Independent brute-force forcing evaluation.
        let mut f = 0.0;
        for i in 1..=2u32 {
            let w = 2f64.powi(i as i32) * PI;
            f += w * w * (w * pt[0]).sin() * (w * pt[1]).sin();
        }
        f *= 2.0 / 2.0;
        assert!((r + f).abs() < 1e-10, "residual {r} vs -f {}", -f);
        // tanh(0) = 0 removes the reaction term too: check the 1D problem.
        let rd = ProblemSpec::reaction_diffusion1d();
        let r0 = rd
            .residual_at(|_| Expr::constant(0.0))
            .eval(&bind(&rd, &[0.37]), &store)
            .unwrap();
        let f_rd = rd
            .forcing_expr(&rd.input_exprs())
            .eval(&bind(&rd, &[0.37]), &store)
            .unwrap();
        assert!((r0 + f_rd).abs() < 1e-12);
    }

    #[test]
    fn helmholtz_zero_field_residual_at_origin_vanishes() {
        let p = ProblemSpec::helmholtz2d(1.0);
        let store = ParamStore::new();
        let residual = p.residual_at(|_| Expr::constant(0.0));
        let r = residual.eval(&bind(&p, &[0.0, 0.0]), &store).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn five_dimensional_solution_at_center() {
        let p = ProblemSpec::poisson_nd(5).unwrap();
        let store = ParamStore::new();
        let u = p.exact_expr(&p.input_exprs());
        let v = u.eval(&bind(&p, &[0.5; 5]), &store).unwrap();
        assert!((v + 1.0 / (PI * PI)).abs() < 1e-14);
        assert!((v - (-0.101321)).abs() < 1e-6);
    }

    #[test]
    fn poisson_forcing_matches_engine_laplacian() {
        // −Δu* computed by the differentiation engine equals the closed-form
        // forcing; cross-validates both.
        let p = ProblemSpec::poisson2d(3).unwrap();
        let store = ParamStore::new();
        let x = p.input_exprs();
        let u = p.exact_expr(&x);
        let lap = -(u.deriv("x", 2) + u.deriv("y", 2));
        let f = p.forcing_expr(&x);
        let diff = (lap - f).compile().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let pt = random_point(&p, &mut rng);
            let d = diff.eval(&bind(&p, &pt), &store).unwrap();
            assert!(d.abs() <= 1e-8, "mismatch {d} at {pt:?}");
        }
    }

    #[test]
    fn hard_constraint_kills_dirichlet_boundary() {
        let store = ParamStore::new();
        let p = ProblemSpec::helmholtz2d(1.0);
        let x = p.input_exprs();
        // Arbitrary raw field.
        let raw = (3.0 * &x[0]).sin() * (&x[1] + 2.0) + 5.0;
        let wrapped = p.apply_hard_constraint(&raw, &x);
        for y in [-1.0, -0.3, 0.8, 1.0] {
            let v = wrapped.eval(&bind(&p, &[1.0, y]), &store).unwrap();
            assert_eq!(v, 0.0, "boundary x=1, y={y}");
            let v = wrapped.eval(&bind(&p, &[-1.0, y]), &store).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn allen_cahn_initial_state_is_exact() {
        let store = ParamStore::new();
        let p = ProblemSpec::allen_cahn1d();
        let x = p.input_exprs();
        let raw = (2.0 * &x[0]).cos() * (&x[1] * 7.0).exp() - 0.3;
        let wrapped = p.apply_hard_constraint(&raw, &x);
        let g = p.hc_offset_expr(&x).unwrap();
        for xi in [0.0, 0.11, 0.5, 0.93, 1.0] {
            let b = bind(&p, &[xi, 0.0]);
            let w = wrapped.eval(&b, &store).unwrap();
            let gv = g.eval(&b, &store).unwrap();
            assert!((w - gv).abs() <= 1e-15, "t=0 mismatch at x={xi}");
        }
        // Spatial boundary at positive time.
        for t in [0.2, 1.0] {
            let v = wrapped.eval(&bind(&p, &[0.0, t]), &store).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn helmholtz_mask_value_at_origin() {
        let p = ProblemSpec::helmholtz2d(1.0);
        let store = ParamStore::new();
        let mask = p.hc_scale_expr(&p.input_exprs());
        let v = mask.eval(&bind(&p, &[0.0, 0.0]), &store).unwrap();
        let expected = 5.0f64.tanh().powi(4);
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.999636).abs() < 1e-6);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ProblemSpec::poisson2d(0).is_err());
        assert!(make_problem(ProblemParams::AllenCahn1d { epsilon: 0.0 }).is_err());
        assert!(make_problem(ProblemParams::AllenCahn1d { epsilon: -1.0 }).is_err());
        assert!(make_problem(ProblemParams::ReactionDiffusion1d {
            diffusion: 0.0,
            reaction_rate: 0.7,
            wavenumber: 8
        })
        .is_err());
        assert!("nonsense".parse::<ProblemKind>().is_err());
    }
}
