//! Physics-informed solver for multiscale PDE benchmarks, built from three
//! ingredients:
//!
//! * **Hybrid local networks** — each subdomain owns a one-hidden-layer
//!   tanh MLP and a two-stage Fourier KAN whose outputs are blended by a
//!   trainable convex weight `S(α)` ([`networks`]);
//! * **Overlapping domain decomposition** — cosine-squared windows over a
//!   tensor-product subdomain lattice form a partition of unity that glues
//!   the local networks into one globally smooth field ([`domain`]);
//! * **Residual training** — boundary and initial conditions are enforced
//!   analytically by hard-constraint wrappers, so optimization minimizes
//!   only the mean-squared PDE residual over a collocation grid
//!   ([`problems`], [`training`]).
//!
//! Everything differentiable is expressed through a scalar expression
//! graph ([`expr`]) that evaluates exact first/second input derivatives
//! and parameter gradients; the training loop runs an equivalent
//! specialized kernel validated against that engine.
//!
//! # Quick start
//!
//! ```
//! use hpkm_pinn::problems::ProblemSpec;
//! use hpkm_pinn::training::{train, TrainConfig};
//!
//! let problem = ProblemSpec::reaction_diffusion1d();
//! let mut cfg = TrainConfig::new(&problem);
//! cfg.subdomain_counts = vec![3];
//! cfg.residual_counts = vec![24];
//! cfg.eval_counts = vec![64];
//! cfg.hidden = 4;
//! cfg.k_freq = 2;
//! cfg.budget = 50;
//! let report = train(&cfg, &problem).unwrap();
//! assert!(!report.diverged);
//! assert!(report.checkpoints.last().unwrap().loss.is_finite());
//! ```
//!
//! The `hpkm-pinn` binary drives the same machinery from config files; see
//! the README and the book under `book/` for the full tour.

pub mod domain;
pub mod expr;
pub mod harness;
pub mod networks;
pub mod params;
pub mod problems;
pub mod training;

// The book's code blocks double as doctests so the guide can never drift
// from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/expressions.md")]
    mod expressions {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    mod decomposition {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
