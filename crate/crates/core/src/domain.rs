//! Overlapping tensor-product subdomain lattice with cosine-squared window
//! functions.
//!
//! Every axis of the box domain is split by equally spaced centers
//! `μ_i = lo + spacing·i` with a shared half-width `σ = δ·spacing/2`; the
//! overlap ratio δ > 1 guarantees neighbouring supports overlap. A raw
//! window `ŵ_i(x) = Π_j (1 + cos(π(x_j − μ_ij)/σ_j))²` lives on each
//! subdomain and vanishes together with its first derivative at the support
//! edge; normalizing by the sum of raw windows turns the family into a
//! partition of unity, so blending per-subdomain networks with these
//! weights produces a globally C¹ field.
//!
//! Supports are clipped to the domain, but the center and half-width used
//! inside the cosine and in the input normalization stay unclipped, which
//! keeps boundary subdomains smooth. An axis with a single subdomain is not
//! decomposed: its window factor is identically 1.

use crate::expr::Expr;
use crate::networks::LocalNet;
use crate::params::ParamStore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum LayoutError {
    #[error("overlap ratio must satisfy δ > 1, got δ = {0}")]
    InvalidOverlap(f64),
    #[error("subdomain counts must be ≥ 1, got {0}")]
    InvalidCount(usize),
    #[error("axis {axis} has non-positive extent {extent}")]
    InvalidExtent { axis: usize, extent: f64 },
    #[error("domain has {domain} axes but counts give {counts}")]
    DimensionMismatch { domain: usize, counts: usize },
}

#[derive(Debug, Clone)]
struct AxisLayout {
    lo: f64,
    extent: f64,
    count: usize,
    /// Center spacing; equals `extent` when the axis is undecomposed.
    spacing: f64,
    /// Unclipped half-width shared by all subdomains on this axis.
    sigma: f64,
}

impl AxisLayout {
    fn center(&self, i: usize) -> f64 {
        if self.count == 1 {
            self.lo + self.extent / 2.0
        } else {
            self.lo + self.spacing * i as f64
        }
    }

    /// Support interval clipped to the domain (closed).
    fn support(&self, i: usize) -> (f64, f64) {
        let c = self.center(i);
        (
            (c - self.sigma).max(self.lo),
            (c + self.sigma).min(self.lo + self.extent),
        )
    }

    /// Indices whose support contains `x`, via interval arithmetic.
    fn active_range(&self, x: f64) -> std::ops::RangeInclusive<usize> {
        if self.count == 1 {
            return 0..=0;
        }
        let t = (x - self.lo) / self.spacing;
        let r = self.sigma / self.spacing;
        let lo = ((t - r).ceil().max(0.0)) as usize;
        let hi = ((t + r).floor().min((self.count - 1) as f64)).max(0.0) as usize;
        lo..=hi.max(lo.min(self.count - 1))
    }
}

/// Overlapping subdomain lattice over a box domain.
#[derive(Debug, Clone)]
pub struct SubdomainLayout {
    axes: Vec<AxisLayout>,
    delta: f64,
    /// Row-major strides: the first axis varies slowest.
    strides: Vec<usize>,
    n: usize,
}

/// Build the lattice. `domain` lists per-axis `(lo, hi)` bounds, `counts`
/// the per-axis subdomain counts; the overlap ratio δ must exceed 1.
pub fn build_layout(
    domain: &[(f64, f64)],
    counts: &[usize],
    delta: f64,
) -> Result<SubdomainLayout, LayoutError> {
    if domain.len() != counts.len() {
        return Err(LayoutError::DimensionMismatch {
            domain: domain.len(),
            counts: counts.len(),
        });
    }
    if delta <= 1.0 {
        return Err(LayoutError::InvalidOverlap(delta));
    }
    let mut axes = Vec::with_capacity(domain.len());
    for (axis, (&(lo, hi), &count)) in domain.iter().zip(counts).enumerate() {
        if count == 0 {
            return Err(LayoutError::InvalidCount(count));
        }
        let extent = hi - lo;
        if !(extent > 0.0) {
            return Err(LayoutError::InvalidExtent { axis, extent });
        }
        let (spacing, sigma) = if count == 1 {
            (extent, extent / 2.0)
        } else {
            let spacing = extent / (count - 1) as f64;
            (spacing, delta * spacing / 2.0)
        };
        axes.push(AxisLayout {
            lo,
            extent,
            count,
            spacing,
            sigma,
        });
    }
    let mut strides = vec![1usize; axes.len()];
    for k in (0..axes.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * axes[k + 1].count;
    }
    let n = axes.iter().map(|a| a.count).product();
    Ok(SubdomainLayout {
        axes,
        delta,
        strides,
        n,
    })
}

impl SubdomainLayout {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Total number of subdomains.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    pub fn domain(&self) -> Vec<(f64, f64)> {
        self.axes.iter().map(|a| (a.lo, a.lo + a.extent)).collect()
    }

    /// Per-axis multi-index of subdomain `i` (row-major, first axis slowest).
    pub fn multi_index(&self, i: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(s, a)| i / s % a.count)
            .collect()
    }

    /// Unclipped center of subdomain `i` on `axis`.
    pub fn center(&self, i: usize, axis: usize) -> f64 {
        self.axes[axis].center(i / self.strides[axis] % self.axes[axis].count)
    }

    /// Unclipped half-width on `axis` (uniform over subdomains).
    pub fn sigma(&self, axis: usize) -> f64 {
        self.axes[axis].sigma
    }

    /// Support of subdomain `i` on `axis`, clipped to the domain.
    pub fn support(&self, i: usize, axis: usize) -> (f64, f64) {
        self.axes[axis].support(i / self.strides[axis] % self.axes[axis].count)
    }

    /// Whether `x` lies in the (closed) support of subdomain `i`.
    pub fn contains(&self, i: usize, x: &[f64]) -> bool {
        (0..self.dim()).all(|a| {
            let (lo, hi) = self.support(i, a);
            x[a] >= lo && x[a] <= hi
        })
    }

    /// Subdomains whose support contains `x`, in increasing index order.
    /// Per-axis interval arithmetic, O(d + |result|).
    pub fn active_at(&self, x: &[f64]) -> Vec<usize> {
        assert_eq!(x.len(), self.dim());
        let ranges: Vec<_> = self
            .axes
            .iter()
            .zip(x)
            .map(|(a, &xa)| a.active_range(xa))
            .collect();
        let mut out = Vec::new();
        let mut idx: Vec<usize> = ranges.iter().map(|r| *r.start()).collect();
        'outer: loop {
            let flat: usize = idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum();
            out.push(flat);
            for k in (0..idx.len()).rev() {
                if idx[k] < *ranges[k].end() {
                    idx[k] += 1;
                    for r in idx.iter_mut().skip(k + 1).zip(ranges.iter().skip(k + 1)) {
                        *r.0 = *r.1.start();
                    }
                    continue 'outer;
                }
            }
            break;
        }
        out
    }

    /// Raw (unnormalized) window of subdomain `i` at `x`:
    /// `Π_j (1 + cos(π(x_j − μ_ij)/σ_j))²` inside the support, 0 outside.
    pub fn window_raw(&self, i: usize, x: &[f64]) -> f64 {
        if !self.contains(i, x) {
            return 0.0;
        }
        let mut w = 1.0;
        for (a, axis) in self.axes.iter().enumerate() {
            if axis.count == 1 {
                continue;
            }
            let mu = self.center(i, a);
            let c = 1.0 + (std::f64::consts::PI * (x[a] - mu) / axis.sigma).cos();
            w *= c * c;
        }
        w
    }

    /// Normalized window `ω_i(x) = ŵ_i(x) / Σ_j ŵ_j(x)`; the family sums
    /// to 1 everywhere in the domain.
    pub fn window(&self, i: usize, x: &[f64]) -> f64 {
        let num = self.window_raw(i, x);
        if num == 0.0 {
            return 0.0;
        }
        let denom: f64 = self
            .active_at(x)
            .iter()
            .map(|&j| self.window_raw(j, x))
            .sum();
        assert!(
            denom > 0.0,
            "window normalization degenerate at {x:?}; no raw window is positive"
        );
        num / denom
    }

    /// Map `x` into the unit cube of subdomain `i` using the unclipped
    /// bounds: `x̃_j = (x_j − (μ_ij − σ_j)) / (2σ_j)`.
    pub fn normalize_input(&self, i: usize, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|a| {
                let mu = self.center(i, a);
                let s = self.axes[a].sigma;
                (x[a] - (mu - s)) / (2.0 * s)
            })
            .collect()
    }

    /// Derivative of the normalized coordinate with respect to the physical
    /// one, `1/(2σ_a)`; the map is affine so this is exact and constant.
    pub fn input_scale(&self, axis: usize) -> f64 {
        1.0 / (2.0 * self.axes[axis].sigma)
    }

    /// Expression form of [`SubdomainLayout::normalize_input`].
    pub fn normalize_input_expr(&self, i: usize, x: &[Expr]) -> Vec<Expr> {
        (0..self.dim())
            .map(|a| {
                let mu = self.center(i, a);
                let s = self.axes[a].sigma;
                (&x[a] - (mu - s)) / (2.0 * s)
            })
            .collect()
    }

    /// Expression for the raw window of subdomain `i`. Only valid where the
    /// active set containing `i` applies: the cosine formula is periodic, so
    /// the support cutoff must come from the caller's choice of active set.
    pub fn window_raw_expr(&self, i: usize, x: &[Expr]) -> Expr {
        let mut factors = Vec::new();
        for (a, axis) in self.axes.iter().enumerate() {
            if axis.count == 1 {
                continue;
            }
            let mu = self.center(i, a);
            let arg = std::f64::consts::PI * (&x[a] - mu) / axis.sigma;
            factors.push((arg.cos() + 1.0).powi(2));
        }
        match factors.len() {
            0 => Expr::constant(1.0),
            _ => {
                let mut it = factors.into_iter();
                let first = it.next().unwrap();
                it.fold(first, |acc, f| acc * f)
            }
        }
    }

    /// Normalized window expressions for an active set, sharing one
    /// denominator. Aligned with `active`.
    pub fn window_exprs(&self, active: &[usize], x: &[Expr]) -> Vec<Expr> {
        let raws: Vec<Expr> = active.iter().map(|&i| self.window_raw_expr(i, x)).collect();
        if active.len() == 1 {
            return vec![Expr::constant(1.0)];
        }
        let denom = Expr::sum(raws.clone());
        raws.into_iter().map(|r| r / &denom).collect()
    }

    /// Global blended field `Σ_i ω_i(x)·net_i(x̃_i)` over the subdomains
    /// active at `anchor`. The expression is valid on the cell of the
    /// lattice where that active set holds; `x` are the coordinate
    /// expressions the field is built over (typically input refs, possibly
    /// shifted).
    pub fn assemble_global(
        &self,
        store: &ParamStore,
        locals: &[LocalNet],
        anchor: &[f64],
        x: &[Expr],
    ) -> Result<Expr, crate::networks::NetworkError> {
        assert_eq!(locals.len(), self.len(), "one local network per subdomain");
        let active = self.active_at(anchor);
        let windows = self.window_exprs(&active, x);
        let mut terms = Vec::with_capacity(active.len());
        for (w, &i) in windows.iter().zip(&active) {
            let xt = self.normalize_input_expr(i, x);
            let net = locals[i].forward(store, &xt)?;
            terms.push(w * &net);
        }
        Ok(Expr::sum(terms))
    }

    pub fn summary(&self) -> LayoutSummary {
        LayoutSummary {
            origins: self.axes.iter().map(|a| a.lo).collect(),
            extents: self.axes.iter().map(|a| a.extent).collect(),
            counts: self.counts(),
            delta: self.delta,
            centers: self
                .axes
                .iter()
                .map(|a| (0..a.count).map(|i| a.center(i)).collect())
                .collect(),
            half_widths: self.axes.iter().map(|a| a.sigma).collect(),
        }
    }
}

/// Geometry echo for run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutSummary {
    pub origins: Vec<f64>,
    pub extents: Vec<f64>,
    pub counts: Vec<usize>,
    pub delta: f64,
    /// Per-axis center coordinates.
    pub centers: Vec<Vec<f64>>,
    /// Per-axis unclipped half-widths.
    pub half_widths: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{fd_oracle, Bindings, Wrt};
    use crate::networks::{Architecture, SKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout_1d5() -> SubdomainLayout {
        build_layout(&[(0.0, 1.0)], &[5], 1.2).unwrap()
    }

    #[test]
    fn five_subdomain_line() {
        let l = layout_1d5();
        let centers: Vec<f64> = (0..5).map(|i| l.center(i, 0)).collect();
        assert_eq!(centers, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!((l.sigma(0) - 0.15).abs() < 1e-15);
        let (lo, hi) = l.support(1, 0);
        assert!((lo - 0.10).abs() < 1e-15 && (hi - 0.40).abs() < 1e-15);
    }

    #[test]
    fn single_subdomain_covers_everything() {
        let l = build_layout(&[(0.0, 2.0)], &[1], 2.0).unwrap();
        assert_eq!(l.support(0, 0), (0.0, 2.0));
        for x in [0.0, 0.3, 1.7, 2.0] {
            assert_eq!(l.window(0, &[x]), 1.0);
            assert_eq!(l.window_raw(0, &[x]), 1.0);
        }
    }

    #[test]
    fn two_by_two_lattice_covers_domain() {
        let l = build_layout(&[(0.0, 1.0), (0.0, 1.0)], &[2, 2], 1.5).unwrap();
        assert_eq!(l.len(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = [rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)];
            assert!(!l.active_at(&p).is_empty(), "{p:?} uncovered");
        }
    }

    #[test]
    fn raw_window_values() {
        let l = layout_1d5();
        // Center of any subdomain: (1 + cos 0)² = 4 per axis.
        assert!((l.window_raw(2, &[0.5]) - 4.0).abs() < 1e-15);
        let l2 = build_layout(&[(0.0, 1.0), (0.0, 1.0)], &[3, 3], 1.4).unwrap();
        let c = [l2.center(4, 0), l2.center(4, 1)];
        assert!((l2.window_raw(4, &c) - 16.0).abs() < 1e-12);
        // Support edge interior to the domain: 1 + cos(π) = 0.
        assert_eq!(l.window_raw(1, &[0.40]), 0.0);
        // Outside the support entirely.
        assert_eq!(l.window_raw(1, &[0.45]), 0.0);
        // Quarter-width offset: (1 + cos(π/2))² = 1.
        assert!((l.window_raw(2, &[0.575]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn windows_form_partition_of_unity() {
        let l = layout_1d5();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = [rng.gen_range(0.0..=1.0)];
            let total: f64 = (0..l.len()).map(|i| l.window(i, &x)).sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
        // Interior of exactly one support.
        assert_eq!(l.active_at(&[0.5]), vec![2]);
        assert_eq!(l.window(2, &[0.5]), 1.0);
        // Midpoint between two centers splits evenly by symmetry.
        let w0 = l.window(0, &[0.125]);
        let w1 = l.window(1, &[0.125]);
        assert!((w0 - 0.5).abs() < 1e-13 && (w1 - 0.5).abs() < 1e-13);
    }

    #[test]
    fn partition_of_unity_on_random_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let d = rng.gen_range(1..=3);
            let domain: Vec<(f64, f64)> = (0..d)
                .map(|_| {
                    let lo = rng.gen_range(-2.0..1.0);
                    (lo, lo + rng.gen_range(0.5..3.0))
                })
                .collect();
            let counts: Vec<usize> = (0..d).map(|_| rng.gen_range(1..=6)).collect();
            let delta = rng.gen_range(1.05..4.0);
            let l = build_layout(&domain, &counts, delta).unwrap();
            for _ in 0..300 {
                let x: Vec<f64> = domain
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(lo..=hi))
                    .collect();
                let total: f64 = l.active_at(&x).iter().map(|&i| l.window(i, &x)).sum();
                assert!(
                    (total - 1.0).abs() <= 1e-12,
                    "PU violated: {total} at {x:?} (counts {counts:?}, δ={delta})"
                );
            }
        }
    }

    #[test]
    fn active_lookup_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let d = rng.gen_range(1..=3);
            let domain: Vec<(f64, f64)> = (0..d).map(|_| (0.0, rng.gen_range(0.5..2.0))).collect();
            let counts: Vec<usize> = (0..d).map(|_| rng.gen_range(1..=5)).collect();
            let l = build_layout(&domain, &counts, rng.gen_range(1.1..3.5)).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = domain
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(lo..=hi))
                    .collect();
                let fast = l.active_at(&x);
                let brute: Vec<usize> = (0..l.len()).filter(|&i| l.contains(i, &x)).collect();
                assert_eq!(fast, brute, "at {x:?}");
            }
        }
    }

    #[test]
    fn window_is_c1_at_support_edge() {
        let l = layout_1d5();
        // Right support edge of subdomain 1 sits at 0.40, interior to the
        // domain. One-sided slopes from both sides tend to zero.
        for h in [1e-3, 1e-4, 1e-5] {
            let inside = (l.window_raw(1, &[0.40]) - l.window_raw(1, &[0.40 - h])) / h;
            assert!(inside.abs() < 40.0 * h, "slope {inside} at h={h}");
        }
        assert_eq!(l.window_raw(1, &[0.40 + 1e-9]), 0.0);
    }

    #[test]
    fn normalization_is_affine_and_invertible() {
        let l = layout_1d5();
        // Subdomain 1: unclipped bounds (0.10, 0.40).
        assert!((l.normalize_input(1, &[0.10])[0] - 0.0).abs() < 1e-15);
        assert!((l.normalize_input(1, &[0.25])[0] - 0.5).abs() < 1e-15);
        assert!((l.normalize_input(1, &[0.40])[0] - 1.0).abs() < 1e-15);
        assert!((l.normalize_input(1, &[0.34])[0] - 0.8).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = rng.gen_range(0.10..0.40);
            let t = l.normalize_input(1, &[x])[0];
            let back = (l.center(1, 0) - l.sigma(0)) + 2.0 * l.sigma(0) * t;
            assert!((back - x).abs() < 1e-15);
        }
    }

    fn tiny_models(l: &SubdomainLayout, seed: u64) -> (ParamStore, Vec<LocalNet>) {
        let mut store = ParamStore::new();
        let locals: Vec<LocalNet> = (0..l.len())
            .map(|i| {
                LocalNet::allocate(
                    &mut store,
                    &format!("sd{i}"),
                    Architecture::Hpkm,
                    l.dim(),
                    3,
                    2,
                    SKind::Sigmoid,
                )
            })
            .collect();
        for (i, net) in locals.iter().enumerate() {
            net.init(&mut store, seed + i as u64);
        }
        (store, locals)
    }

    #[test]
    fn assembly_with_single_subdomain_is_the_local_net() {
        let l = build_layout(&[(0.0, 1.0)], &[1], 2.0).unwrap();
        let (store, locals) = tiny_models(&l, 3);
        let x = [Expr::input("x")];
        let global = l.assemble_global(&store, &locals, &[0.3], &x).unwrap();
        let local = locals[0]
            .forward(&store, &l.normalize_input_expr(0, &x))
            .unwrap();
        for p in [0.0, 0.3, 0.99] {
            let b = Bindings::of(&[("x", p)]);
            let g = global.eval(&b, &store).unwrap();
            let lv = local.eval(&b, &store).unwrap();
            assert!((g - lv).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_locals_blend_to_the_constant() {
        // Zero out every branch and set the MLP output bias so that each
        // local network is the constant c; partition of unity then forces
        // the blended field to c everywhere.
        let l = layout_1d5();
        let mut store = ParamStore::new();
        let locals: Vec<LocalNet> = (0..l.len())
            .map(|i| {
                LocalNet::allocate(
                    &mut store,
                    &format!("sd{i}"),
                    Architecture::MlpOnly,
                    1,
                    2,
                    2,
                    SKind::None,
                )
            })
            .collect();
        let c = -1.37;
        for net in &locals {
            if let LocalNet::MlpOnly(mlp) = net {
                store.block_mut(mlp.b2)[0] = c;
            }
        }
        let xs = [Expr::input("x")];
        for p in [0.05, 0.125, 0.5, 0.77, 1.0] {
            let global = l.assemble_global(&store, &locals, &[p], &xs).unwrap();
            let v = global.eval(&Bindings::of(&[("x", p)]), &store).unwrap();
            assert!((v - c).abs() < 1e-13, "{v} at {p}");
        }
    }

    #[test]
    fn blended_field_is_continuous_across_support_edges() {
        // The active set changes at the right support edge of subdomain 1
        // (x = 0.40). The expressions assembled for both neighbouring cells
        // must agree at the edge because the leaving window vanishes there.
        let l = layout_1d5();
        let (store, locals) = tiny_models(&l, 11);
        let xs = [Expr::input("x")];
        let edge = 0.40;
        let left = l
            .assemble_global(&store, &locals, &[edge - 1e-9], &xs)
            .unwrap();
        let right = l
            .assemble_global(&store, &locals, &[edge + 1e-9], &xs)
            .unwrap();
        let b = Bindings::of(&[("x", edge)]);
        let lv = left.eval(&b, &store).unwrap();
        let rv = right.eval(&b, &store).unwrap();
        assert!((lv - rv).abs() < 1e-10, "{lv} vs {rv}");
    }

    #[test]
    fn perturbing_one_subdomain_is_local() {
        let l = layout_1d5();
        let (mut store, locals) = tiny_models(&l, 19);
        let xs = [Expr::input("x")];
        // Points inside and outside the support of subdomain 0 ([0, 0.15]).
        let inside = 0.08;
        let outside = 0.60;
        let e_in = l.assemble_global(&store, &locals, &[inside], &xs).unwrap();
        let e_out = l.assemble_global(&store, &locals, &[outside], &xs).unwrap();
        let before_in = e_in.eval(&Bindings::of(&[("x", inside)]), &store).unwrap();
        let before_out = e_out
            .eval(&Bindings::of(&[("x", outside)]), &store)
            .unwrap();
        let blk = store.find_block("sd0.mlp.w2").unwrap();
        store.block_mut(blk)[0] += 0.5;
        let after_in = e_in.eval(&Bindings::of(&[("x", inside)]), &store).unwrap();
        let after_out = e_out
            .eval(&Bindings::of(&[("x", outside)]), &store)
            .unwrap();
        assert!(
            (after_in - before_in).abs() > 1e-6,
            "no effect inside support"
        );
        assert_eq!(after_out, before_out, "effect leaked outside support");
    }

    #[test]
    fn assembled_derivatives_match_finite_differences() {
        let l = layout_1d5();
        let (store, locals) = tiny_models(&l, 23);
        let xs = [Expr::input("x")];
        // Overlap region of subdomains 1 and 2.
        for p in [0.36, 0.5, 0.125] {
            let u = l.assemble_global(&store, &locals, &[p], &xs).unwrap();
            let b = Bindings::of(&[("x", p)]);
            let d1 = u.deriv("x", 1).eval(&b, &store).unwrap();
            let fd = fd_oracle(&u, &b, &store, Wrt::Input("x"), 1e-6).unwrap();
            let scale = d1.abs().max(fd.abs()).max(1e-8);
            assert!((d1 - fd).abs() / scale < 1e-5, "{d1} vs {fd} at {p}");
        }
    }

    #[test]
    fn invalid_overlap_rejected() {
        let err = build_layout(&[(0.0, 1.0)], &[4], 0.5).unwrap_err();
        assert!(err.to_string().contains("δ > 1"), "{err}");
        assert!(build_layout(&[(0.0, 1.0)], &[4], 1.0).is_err());
    }

    #[test]
    fn summary_round_trips_geometry() {
        let l = build_layout(&[(-1.0, 1.0), (0.0, 1.0)], &[3, 2], 2.9).unwrap();
        let s = l.summary();
        assert_eq!(s.counts, vec![3, 2]);
        assert_eq!(s.origins, vec![-1.0, 0.0]);
        assert_eq!(s.extents, vec![2.0, 1.0]);
        assert_eq!(s.centers[0], vec![-1.0, 0.0, 1.0]);
        let json = serde_json::to_string(&s).unwrap();
        let back: LayoutSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.delta, 2.9);
    }
}
