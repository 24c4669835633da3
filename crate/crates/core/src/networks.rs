//! Branch networks and the weighted head that combines them.
//!
//! Two branch families are provided: a one-hidden-layer tanh MLP and a
//! two-stage Fourier KAN whose edge activations are truncated Fourier
//! series `Σ_j a_j sin(jx) + b_j cos(jx)`. A [`HpkmHead`] blends the two
//! branch outputs through a trainable scalar α squashed by an S-shaped
//! function, `S(α)·u_kan + (1−S(α))·u_mlp`, so the mix stays a convex
//! combination while α floats freely during optimization.
//!
//! All parameters live in a shared [`ParamStore`]; forward passes build
//! [`Expr`] graphs referencing them, so the same construction serves
//! evaluation, input differentiation and parameter gradients.

use crate::expr::Expr;
use crate::params::{BlockId, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum NetworkError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// The S-shaped squashing functions for the head weight, plus `None` for
/// the unweighted sum of the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SKind {
    Sigmoid,
    TanhScaled,
    ArctanScaled,
    SoftsignScaled,
    AlgebraicSigmoid,
    Clip,
    None,
}

impl SKind {
    /// All kinds, weighting functions first.
    pub const ALL: [SKind; 7] = [
        SKind::Sigmoid,
        SKind::TanhScaled,
        SKind::ArctanScaled,
        SKind::SoftsignScaled,
        SKind::AlgebraicSigmoid,
        SKind::Clip,
        SKind::None,
    ];

    /// The bounded weighting functions (everything except `None`).
    pub const WEIGHTED: [SKind; 6] = [
        SKind::Sigmoid,
        SKind::TanhScaled,
        SKind::ArctanScaled,
        SKind::SoftsignScaled,
        SKind::AlgebraicSigmoid,
        SKind::Clip,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SKind::Sigmoid => "sigmoid",
            SKind::TanhScaled => "tanh_scaled",
            SKind::ArctanScaled => "arctan_scaled",
            SKind::SoftsignScaled => "softsign_scaled",
            SKind::AlgebraicSigmoid => "algebraic_sigmoid",
            SKind::Clip => "clip",
            SKind::None => "none",
        }
    }

    /// Smooth kinds map ℝ strictly into (0, 1); clip saturates.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, SKind::Clip | SKind::None)
    }
}

impl std::str::FromStr for SKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown s_kind `{s}` (expected one of sigmoid, tanh_scaled, arctan_scaled, softsign_scaled, algebraic_sigmoid, clip, none)"))
    }
}

impl std::fmt::Display for SKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// S(α) as a plain number. Panics for [`SKind::None`], which has no
/// weighting function.
pub fn s_shape(kind: SKind, alpha: f64) -> f64 {
    match kind {
        SKind::Sigmoid => 1.0 / (1.0 + (-alpha).exp()),
        SKind::TanhScaled => (alpha.tanh() + 1.0) / 2.0,
        SKind::ArctanScaled => alpha.atan() / std::f64::consts::PI + 0.5,
        SKind::SoftsignScaled => 0.5 * (alpha / (1.0 + alpha.abs()) + 1.0),
        SKind::AlgebraicSigmoid => 0.5 * (alpha / (1.0 + alpha * alpha).sqrt() + 1.0),
        SKind::Clip => alpha.clamp(0.0, 1.0),
        SKind::None => panic!("s_shape is undefined for kind `none`"),
    }
}

/// S(α) together with dS/dα. The clip derivative is 1 on [0, 1] (closed,
/// so α = 0 can still move) and 0 outside.
pub fn s_shape_grad(kind: SKind, alpha: f64) -> (f64, f64) {
    let s = s_shape(kind, alpha);
    let ds = match kind {
        SKind::Sigmoid => s * (1.0 - s),
        SKind::TanhScaled => {
            let t = alpha.tanh();
            (1.0 - t * t) / 2.0
        }
        SKind::ArctanScaled => 1.0 / (std::f64::consts::PI * (1.0 + alpha * alpha)),
        SKind::SoftsignScaled => {
            let d = 1.0 + alpha.abs();
            0.5 / (d * d)
        }
        SKind::AlgebraicSigmoid => 0.5 * (1.0 + alpha * alpha).powf(-1.5),
        SKind::Clip => {
            if (0.0..=1.0).contains(&alpha) {
                1.0
            } else {
                0.0
            }
        }
        SKind::None => unreachable!(),
    };
    (s, ds)
}

/// S(α) as an expression over a trainable α, so gradients flow through it.
pub fn s_expr(kind: SKind, alpha: &Expr) -> Expr {
    match kind {
        SKind::Sigmoid => 1.0 / (1.0 + (-alpha).exp()),
        SKind::TanhScaled => (alpha.tanh() + 1.0) / 2.0,
        SKind::ArctanScaled => alpha.atan() / std::f64::consts::PI + 0.5,
        SKind::SoftsignScaled => 0.5 * (alpha / (1.0 + alpha.abs()) + 1.0),
        SKind::AlgebraicSigmoid => 0.5 * (alpha * (1.0 + alpha.powi(2)).rsqrt() + 1.0),
        SKind::Clip => alpha.clip01(),
        SKind::None => panic!("s_expr is undefined for kind `none`"),
    }
}

/// One-hidden-layer tanh network `W² tanh(W¹x + b¹) + b²` with a linear
/// output.
#[derive(Debug, Clone)]
pub struct MlpNet {
    pub input_dim: usize,
    pub hidden: usize,
    pub w1: BlockId,
    pub b1: BlockId,
    pub w2: BlockId,
    pub b2: BlockId,
}

impl MlpNet {
    /// Allocate parameter blocks `<prefix>.w1/b1/w2/b2`. `w1` is stored
    /// row-major over hidden units: entry `h*input_dim + a`.
    pub fn allocate(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize) -> Self {
        MlpNet {
            input_dim,
            hidden,
            w1: store.alloc(&format!("{prefix}.w1"), input_dim * hidden),
            b1: store.alloc(&format!("{prefix}.b1"), hidden),
            w2: store.alloc(&format!("{prefix}.w2"), hidden),
            b2: store.alloc(&format!("{prefix}.b2"), 1),
        }
    }

    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        glorot_uniform(store, self.w1, self.input_dim, self.hidden, &mut rng);
        glorot_uniform(store, self.w2, self.hidden, 1, &mut rng);
        store.block_mut(self.b1).fill(0.0);
        store.block_mut(self.b2).fill(0.0);
    }

    pub fn forward(&self, store: &ParamStore, x: &[Expr]) -> Result<Expr, NetworkError> {
        if x.len() != self.input_dim {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut out = Expr::param(store.id_at(self.b2, 0));
        for h in 0..self.hidden {
            let mut z = Expr::param(store.id_at(self.b1, h));
            for (a, xa) in x.iter().enumerate() {
                z = z + Expr::param(store.id_at(self.w1, h * self.input_dim + a)) * xa;
            }
            out = out + Expr::param(store.id_at(self.w2, h)) * z.tanh();
        }
        Ok(out)
    }
}

fn glorot_uniform(
    store: &mut ParamStore,
    block: BlockId,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    for w in store.block_mut(block) {
        *w = dist.sample(rng);
    }
}

/// One Fourier-series layer: output `o` is
/// `Σ_i Σ_{j=1..k} a[o,i,j] sin(j x_i) + b[o,i,j] cos(j x_i)`.
/// No bias term; the constant component is carried by the cosine
/// coefficients at every frequency.
#[derive(Debug, Clone)]
pub struct FourierKanLayer {
    pub in_width: usize,
    pub out_width: usize,
    pub k: usize,
    pub a: BlockId,
    pub b: BlockId,
}

impl FourierKanLayer {
    /// Coefficient layout: index `(o*in_width + i)*k + (j-1)`, so the k
    /// frequencies of one edge are contiguous.
    pub fn allocate(
        store: &mut ParamStore,
        prefix: &str,
        in_width: usize,
        out_width: usize,
        k: usize,
    ) -> Self {
        assert!(k >= 1, "frequency count must be at least 1");
        let len = in_width * out_width * k;
        FourierKanLayer {
            in_width,
            out_width,
            k,
            a: store.alloc(&format!("{prefix}.a"), len),
            b: store.alloc(&format!("{prefix}.b"), len),
        }
    }

    /// Coefficients drawn from N(0, 1/(k·in_width)) — variance shrinking
    /// with fan-in and frequency count keeps the initial layer output O(1).
    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let std = (1.0 / (self.k * self.in_width) as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        for w in store.block_mut(self.a) {
            *w = dist.sample(rng);
        }
        for w in store.block_mut(self.b) {
            *w = dist.sample(rng);
        }
    }

    /// Expressions for all `out_width` outputs. `sin(jx)`/`cos(jx)` are
    /// built once per input through the angle-addition recurrence and shared
    /// across outputs.
    pub fn forward(&self, store: &ParamStore, x: &[Expr]) -> Result<Vec<Expr>, NetworkError> {
        if x.len() != self.in_width {
            return Err(NetworkError::DimensionMismatch {
                expected: self.in_width,
                got: x.len(),
            });
        }
        let mut harmonics: Vec<Vec<(Expr, Expr)>> = Vec::with_capacity(self.in_width);
        for xi in x {
            harmonics.push(fourier_harmonics(xi, self.k));
        }
        let mut outs = Vec::with_capacity(self.out_width);
        for o in 0..self.out_width {
            let mut terms = Vec::with_capacity(self.in_width * self.k * 2);
            for (i, per_input) in harmonics.iter().enumerate() {
                for (j, (s, c)) in per_input.iter().enumerate() {
                    let ix = (o * self.in_width + i) * self.k + j;
                    terms.push(Expr::param(store.id_at(self.a, ix)) * s);
                    terms.push(Expr::param(store.id_at(self.b, ix)) * c);
                }
            }
            outs.push(Expr::sum(terms));
        }
        Ok(outs)
    }
}

/// `(sin(jx), cos(jx))` for j = 1..=k via the angle-addition recurrence.
pub(crate) fn fourier_harmonics(x: &Expr, k: usize) -> Vec<(Expr, Expr)> {
    let s1 = x.sin();
    let c1 = x.cos();
    let mut out: Vec<(Expr, Expr)> = Vec::with_capacity(k);
    out.push((s1.clone(), c1.clone()));
    for _ in 1..k {
        let (sp, cp) = out.last().unwrap();
        let s = sp * &c1 + cp * &s1;
        let c = cp * &c1 - sp * &s1;
        out.push((s, c));
    }
    out
}

/// Two Fourier layers `d → hidden → 1`.
#[derive(Debug, Clone)]
pub struct FkanNet {
    pub stage1: FourierKanLayer,
    pub stage2: FourierKanLayer,
}

impl FkanNet {
    pub fn allocate(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        k: usize,
    ) -> Self {
        FkanNet {
            stage1: FourierKanLayer::allocate(store, &format!("{prefix}.s1"), input_dim, hidden, k),
            stage2: FourierKanLayer::allocate(store, &format!("{prefix}.s2"), hidden, 1, k),
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.stage1.init(store, &mut rng);
        self.stage2.init(store, &mut rng);
    }

    pub fn forward(&self, store: &ParamStore, x: &[Expr]) -> Result<Expr, NetworkError> {
        let h = self.stage1.forward(store, x)?;
        Ok(self.stage2.forward(store, &h)?.pop().unwrap())
    }
}

/// Trainable mixing head. α starts at 0, so smooth kinds open at
/// S(α) = 1/2 and clip at 0.
#[derive(Debug, Clone)]
pub struct HpkmHead {
    pub alpha: crate::params::ParamId,
    pub s_kind: SKind,
}

impl HpkmHead {
    pub fn allocate(store: &mut ParamStore, prefix: &str, s_kind: SKind) -> Self {
        let blk = store.alloc(&format!("{prefix}.alpha"), 1);
        HpkmHead {
            alpha: store.id_at(blk, 0),
            s_kind,
        }
    }
}

/// `S(α)·u_kan + (1−S(α))·u_mlp`, or the plain sum for kind `none`.
pub fn hpkm_forward(head: &HpkmHead, u_kan: &Expr, u_mlp: &Expr) -> Expr {
    if head.s_kind == SKind::None {
        return u_kan + u_mlp;
    }
    let s = s_expr(head.s_kind, &Expr::param(head.alpha));
    &s * u_kan + (1.0 - &s) * u_mlp
}

/// Which network a run trains in each subdomain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Hpkm,
    MlpOnly,
    KanOnly,
}

impl Architecture {
    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::Hpkm => "hpkm",
            Architecture::MlpOnly => "mlp_only",
            Architecture::KanOnly => "kan_only",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hpkm" => Ok(Architecture::Hpkm),
            "mlp_only" => Ok(Architecture::MlpOnly),
            "kan_only" => Ok(Architecture::KanOnly),
            other => Err(format!(
                "unknown architecture `{other}` (expected hpkm, mlp_only or kan_only)"
            )),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The local network owned by one subdomain.
#[derive(Debug, Clone)]
pub enum LocalNet {
    Hpkm {
        mlp: MlpNet,
        fkan: FkanNet,
        head: HpkmHead,
    },
    MlpOnly(MlpNet),
    KanOnly(FkanNet),
}

impl LocalNet {
    /// Allocate the parameter blocks for one subdomain under `prefix`.
    pub fn allocate(
        store: &mut ParamStore,
        prefix: &str,
        arch: Architecture,
        input_dim: usize,
        hidden: usize,
        k: usize,
        s_kind: SKind,
    ) -> Self {
        match arch {
            Architecture::Hpkm => LocalNet::Hpkm {
                mlp: MlpNet::allocate(store, &format!("{prefix}.mlp"), input_dim, hidden),
                fkan: FkanNet::allocate(store, &format!("{prefix}.kan"), input_dim, hidden, k),
                head: HpkmHead::allocate(store, prefix, s_kind),
            },
            Architecture::MlpOnly => LocalNet::MlpOnly(MlpNet::allocate(
                store,
                &format!("{prefix}.mlp"),
                input_dim,
                hidden,
            )),
            Architecture::KanOnly => LocalNet::KanOnly(FkanNet::allocate(
                store,
                &format!("{prefix}.kan"),
                input_dim,
                hidden,
                k,
            )),
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        match self {
            LocalNet::Hpkm { mlp, fkan, .. } => {
                mlp.init(store, seed);
                fkan.init(store, seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
                // α stays at its zero allocation.
            }
            LocalNet::MlpOnly(mlp) => mlp.init(store, seed),
            LocalNet::KanOnly(fkan) => fkan.init(store, seed),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &[Expr]) -> Result<Expr, NetworkError> {
        match self {
            LocalNet::Hpkm { mlp, fkan, head } => {
                let u_mlp = mlp.forward(store, x)?;
                let u_kan = fkan.forward(store, x)?;
                Ok(hpkm_forward(head, &u_kan, &u_mlp))
            }
            LocalNet::MlpOnly(mlp) => mlp.forward(store, x),
            LocalNet::KanOnly(fkan) => fkan.forward(store, x),
        }
    }

    pub fn head(&self) -> Option<&HpkmHead> {
        match self {
            LocalNet::Hpkm { head, .. } => Some(head),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{fd_oracle, Bindings, Wrt};
    use rand::Rng;
    use std::f64::consts::PI;

    fn inputs1(x: f64) -> Bindings {
        Bindings::of(&[("x", x)])
    }

    #[test]
    fn init_is_deterministic() {
        let mut s1 = ParamStore::new();
        let n1 = MlpNet::allocate(&mut s1, "m", 2, 4);
        n1.init(&mut s1, 42);
        let mut s2 = ParamStore::new();
        let n2 = MlpNet::allocate(&mut s2, "m", 2, 4);
        n2.init(&mut s2, 42);
        assert_eq!(s1.values(), s2.values());

        let mut s3 = ParamStore::new();
        let f1 = FkanNet::allocate(&mut s3, "f", 2, 4, 3);
        f1.init(&mut s3, 42);
        let mut s4 = ParamStore::new();
        let f2 = FkanNet::allocate(&mut s4, "f", 2, 4, 3);
        f2.init(&mut s4, 42);
        assert_eq!(s3.values(), s4.values());
    }

    #[test]
    fn mlp_biases_start_at_zero() {
        let mut s = ParamStore::new();
        let n = MlpNet::allocate(&mut s, "m", 3, 8);
        n.init(&mut s, 9);
        assert!(s.block(n.b1).iter().all(|&v| v == 0.0));
        assert!(s.block(n.b2).iter().all(|&v| v == 0.0));
        assert!(s.block(n.w1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn fourier_init_variance() {
        // 4·2·625 sine plus as many cosine coefficients: 10⁴ draws from
        // N(0, 1/(k·in)) with k=4, in=2 → variance 0.125 within 10%.
        let mut s = ParamStore::new();
        let layer = FourierKanLayer::allocate(&mut s, "f", 2, 625, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        layer.init(&mut s, &mut rng);
        let vals = s.values();
        assert_eq!(vals.len(), 10_000);
        let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        assert!((var - 0.125).abs() < 0.0125, "variance {var}");
    }

    #[test]
    fn mlp_zero_weights_give_output_bias() {
        let mut s = ParamStore::new();
        let n = MlpNet::allocate(&mut s, "m", 2, 4);
        let b2 = s.id_at(n.b2, 0);
        s.set(b2, -0.75);
        let e = n
            .forward(&s, &[Expr::input("x"), Expr::input("y")])
            .unwrap();
        let v = e
            .eval(&Bindings::of(&[("x", 0.3), ("y", 0.9)]), &s)
            .unwrap();
        assert_eq!(v, -0.75);
    }

    #[test]
    fn unit_mlp_is_tanh() {
        let mut s = ParamStore::new();
        let n = MlpNet::allocate(&mut s, "m", 1, 1);
        s.block_mut(n.w1)[0] = 1.0;
        s.block_mut(n.w2)[0] = 1.0;
        let e = n.forward(&s, &[Expr::input("x")]).unwrap();
        let v = e.eval(&inputs1(0.8), &s).unwrap();
        assert!((v - 0.8f64.tanh()).abs() < 1e-15);
        // Odd function: second derivative vanishes at the origin.
        let d2 = e.deriv("x", 2).eval(&inputs1(0.0), &s).unwrap();
        assert_eq!(d2, 0.0);
    }

    #[test]
    fn mlp_forward_matches_direct_reimplementation() {
        let mut s = ParamStore::new();
        let n = MlpNet::allocate(&mut s, "m", 2, 8);
        n.init(&mut s, 17);
        let e = n
            .forward(&s, &[Expr::input("x"), Expr::input("y")])
            .unwrap();
        let w1 = s.block(n.w1).to_vec();
        let b1 = s.block(n.b1).to_vec();
        let w2 = s.block(n.w2).to_vec();
        let b2 = s.block(n.b2)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (x, y) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let direct: f64 = (0..8)
                .map(|h| w2[h] * (w1[2 * h] * x + w1[2 * h + 1] * y + b1[h]).tanh())
                .sum::<f64>()
                + b2;
            let v = e.eval(&Bindings::of(&[("x", x), ("y", y)]), &s).unwrap();
            assert!((v - direct).abs() < 1e-12, "{v} vs {direct}");
        }
    }

    #[test]
    fn fkan_zero_coefficients_give_zero() {
        let mut s = ParamStore::new();
        let n = FkanNet::allocate(&mut s, "f", 2, 3, 2);
        let e = n
            .forward(&s, &[Expr::input("x"), Expr::input("y")])
            .unwrap();
        let v = e
            .eval(&Bindings::of(&[("x", 0.4), ("y", 0.6)]), &s)
            .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn minimal_fkan_composes_sines() {
        // d=1, hidden=1, k=1, all sine coefficients 1: sin(sin(x)).
        let mut s = ParamStore::new();
        let n = FkanNet::allocate(&mut s, "f", 1, 1, 1);
        s.block_mut(n.stage1.a)[0] = 1.0;
        s.block_mut(n.stage2.a)[0] = 1.0;
        let e = n.forward(&s, &[Expr::input("x")]).unwrap();
        let v = e.eval(&inputs1(PI / 2.0), &s).unwrap();
        assert!((v - 1.0f64.sin()).abs() < 1e-14, "{v} vs sin(1)");
        assert!((v - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn fkan_stage_one_at_zero_sums_cosine_coefficients() {
        let mut s = ParamStore::new();
        let layer = FourierKanLayer::allocate(&mut s, "f", 2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        layer.init(&mut s, &mut rng);
        let outs = layer
            .forward(&s, &[Expr::input("x"), Expr::input("y")])
            .unwrap();
        let b = Bindings::of(&[("x", 0.0), ("y", 0.0)]);
        for (o, e) in outs.iter().enumerate() {
            let expected: f64 = (0..2)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .map(|(i, j)| s.block(layer.b)[(o * 2 + i) * 4 + j])
                .sum();
            let v = e.eval(&b, &s).unwrap();
            assert!((v - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn fkan_stage_one_is_periodic_in_2pi() {
        // With k=1 only the fundamental frequency is present.
        let mut s = ParamStore::new();
        let layer = FourierKanLayer::allocate(&mut s, "f", 1, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        layer.init(&mut s, &mut rng);
        let outs = layer.forward(&s, &[Expr::input("x")]).unwrap();
        for e in &outs {
            let a = e.eval(&inputs1(0.37), &s).unwrap();
            let b = e.eval(&inputs1(0.37 + 2.0 * PI), &s).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn s_shapes_at_zero() {
        for kind in SKind::WEIGHTED {
            let expected = if kind == SKind::Clip { 0.0 } else { 0.5 };
            assert_eq!(s_shape(kind, 0.0), expected, "{kind}");
        }
    }

    #[test]
    fn clip_saturates() {
        assert_eq!(s_shape(SKind::Clip, 1.5), 1.0);
        assert_eq!(s_shape(SKind::Clip, -0.3), 0.0);
    }

    #[test]
    fn sigmoid_of_ln3() {
        let v = s_shape(SKind::Sigmoid, 3.0f64.ln());
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn s_shapes_bounded_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for kind in SKind::WEIGHTED {
            if kind == SKind::Clip {
                continue;
            }
            let lo = s_shape(kind, -10.0);
            let mid = s_shape(kind, 0.0);
            let hi = s_shape(kind, 10.0);
            assert!(lo < mid && mid < hi, "{kind} not increasing");
            // Stay below the f64 saturation range of the smooth kinds
            // (sigmoid rounds to exactly 1.0 past α ≈ 37, tanh past ≈ 19).
            for _ in 0..1000 {
                let a = rng.gen_range(-15.0..15.0);
                let s = s_shape(kind, a);
                assert!(s > 0.0 && s < 1.0, "{kind}({a}) = {s} out of (0,1)");
            }
        }
    }

    #[test]
    fn s_shape_grad_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kind in SKind::WEIGHTED {
            for _ in 0..50 {
                let a: f64 = rng.gen_range(-3.0..3.0);
                if kind == SKind::Clip && (a.abs() < 1e-3 || (a - 1.0).abs() < 1e-3) {
                    continue; // kink points
                }
                let (_, ds) = s_shape_grad(kind, a);
                let h = 1e-6;
                let fd = (s_shape(kind, a + h) - s_shape(kind, a - h)) / (2.0 * h);
                assert!((ds - fd).abs() < 1e-8, "{kind}({a}): {ds} vs {fd}");
            }
        }
    }

    fn constant_branch_head(
        kind: SKind,
        alpha: f64,
        kan: f64,
        mlp: f64,
    ) -> (Expr, ParamStore, HpkmHead) {
        let mut s = ParamStore::new();
        let head = HpkmHead::allocate(&mut s, "h", kind);
        s.set(head.alpha, alpha);
        let e = hpkm_forward(&head, &Expr::constant(kan), &Expr::constant(mlp));
        (e, s, head)
    }

    #[test]
    fn head_endpoints_and_midpoint() {
        // Clip with α ≥ 1 pins S(α) = 1 exactly: pure KAN branch.
        let (e, s, _) = constant_branch_head(SKind::Clip, 2.0, 5.0, -3.0);
        assert_eq!(e.eval(&Bindings::new(), &s).unwrap(), 5.0);
        // Sigmoid at α = 0 weighs both branches equally.
        let (e, s, _) = constant_branch_head(SKind::Sigmoid, 0.0, 2.0, 4.0);
        assert_eq!(e.eval(&Bindings::new(), &s).unwrap(), 3.0);
    }

    #[test]
    fn head_alpha_gradient_at_zero() {
        // d/dα [S(α)u_K + (1−S(α))u_M] = S'(α)(u_K − u_M); sigmoid S'(0) = 1/4.
        let (e, s, head) = constant_branch_head(SKind::Sigmoid, 0.0, 2.0, 4.0);
        let (_, g) = e.grad_params(&Bindings::new(), &s).unwrap();
        assert!((g[head.alpha.index()] - 0.25 * (2.0 - 4.0)).abs() < 1e-14);
        let fd = fd_oracle(&e, &Bindings::new(), &s, Wrt::Param(head.alpha), 1e-6).unwrap();
        assert!((g[head.alpha.index()] - fd).abs() < 1e-9);
    }

    #[test]
    fn head_output_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for kind in SKind::WEIGHTED {
            for _ in 0..100 {
                let kan = rng.gen_range(-5.0..5.0);
                let mlp = rng.gen_range(-5.0..5.0);
                let alpha = rng.gen_range(-4.0..4.0);
                let (e, s, _) = constant_branch_head(kind, alpha, kan, mlp);
                let v = e.eval(&Bindings::new(), &s).unwrap();
                let (lo, hi) = (kan.min(mlp), kan.max(mlp));
                assert!(
                    v >= lo - 1e-12 && v <= hi + 1e-12,
                    "{kind}: {v} outside [{lo}, {hi}]"
                );
            }
        }
    }

    #[test]
    fn clip_head_gradient_matches_fd_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let alpha: f64 = rng.gen_range(-2.0..3.0);
            if alpha.abs() < 1e-2 || (alpha - 1.0).abs() < 1e-2 {
                continue;
            }
            let (e, s, head) = constant_branch_head(SKind::Clip, alpha, 1.7, -0.4);
            let (_, g) = e.grad_params(&Bindings::new(), &s).unwrap();
            let fd = fd_oracle(&e, &Bindings::new(), &s, Wrt::Param(head.alpha), 1e-6).unwrap();
            assert!((g[head.alpha.index()] - fd).abs() < 1e-8);
            let inside = (0.0..=1.0).contains(&alpha);
            let expected = if inside { 1.7 - (-0.4) } else { 0.0 };
            assert!((g[head.alpha.index()] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut s = ParamStore::new();
        let n = MlpNet::allocate(&mut s, "m", 2, 2);
        let err = n.forward(&s, &[Expr::input("x")]).unwrap_err();
        assert!(matches!(
            err,
            NetworkError::DimensionMismatch {
                expected: 2,
                got: 1
            }
        ));
    }
}
