//! Bayesian random-effect functional time-series models for size-resolved
//! ultrafine particle (UFP) counts.
//!
//! The observation model for log particle count `y[i,s,t]` (run `i`, size bin
//! `s`, minute `t`, window position `z`) is
//!
//! ```text
//! y[i,s,t] = alpha' B(s) + gamma_i' B(s) + f(t)' Delta_z B(s) + g(t)' Upsilon_i B(s) + u[i,s,t]
//! u[i,s,t] = theta * u[i,s,t-1] + eps[i,s,t],    eps ~ N(0, sigma_s^2)
//! log sigma_s^2 = eta' B_err(s) + w_s,           w_s ~ N(0, tau_eta^2)
//! gamma_i ~ N(0, D),   vec(Upsilon_i) ~ N(0, W)
//! ```
//!
//! `B(s)` is a cubic B-spline basis over the size-bin index, `B_err(s)` a
//! quadratic one, `f(t)` a parametric engine-on trend (zero before engine-on
//! at t = 0) and `g(t)` an optional run-level random jump. Fitting is by a
//! block Gibbs sampler with conjugate Gaussian, truncated-normal and
//! inverse-Wishart updates plus slice sampling for the log-variance spline.
//!
//! The crate is `no_std`-compatible (with `alloc`); file formats, CSV
//! ingestion and the command-line driver live in the companion `ufts-cli`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub(crate) mod linalg;
pub mod math;
pub mod mcmc;
pub mod model;
pub mod posterior;
pub mod splines;
pub mod synthetic;

pub use data::{Dataset, ObsRecord, RunData, ValidationReport, Window};
pub use mcmc::{ChainDraws, ChainState, FirstObs, PriorConfig, SamplerSettings};
pub use model::{ModelSpec, RandomTrend, Trend};
pub use posterior::{DicReport, ModeTrajectory};
pub use splines::BSplineBasis;
pub use synthetic::TruthConfig;
