//! Operator networks for parametric elliptic interface problems.
//!
//! The library trains a level-set-augmented operator network: the solution of
//! an interface problem is represented as a smooth function `U(x, z)` of the
//! spatial coordinate `x` and an extra coordinate `z = Φ(x)` built from the
//! interface's level-set function. Because both sides of the interface share
//! the trunk input `(x, 0)` there, the solution jump vanishes exactly, and the
//! remaining PDE data (residual, flux jump, boundary values) are enforced
//! either through a physics loss or a data loss.
//!
//! Module map:
//! - [`diffcore`]: second-order forward jets and a reverse-mode tape.
//! - [`geom`]: level-set families, augmentations, domains, and samplers.
//! - [`fieldgen`]: input-function generation (GRFs and parametric sources),
//!   problem assembly, exact solutions, and jump homogenization.
//! - [`refsolve`]: second-order 1D reference solver for the interval problem.
//! - [`opnet`]: branch/trunk networks and the product-form operator.
//! - [`physres`]: extended-coordinate PDE operators and the losses.
//! - [`trainer`]: Adam loop, learning-rate decay, checkpoints.
//! - [`report`]: relative L² evaluation on test grids, CSV exports.
//! - [`dataset`]: on-disk dataset directories produced by the CLI.

pub mod dataset;
pub mod diffcore;
pub mod fieldgen;
pub mod geom;
pub mod opnet;
pub mod physres;
pub mod refsolve;
pub mod report;
pub mod trainer;
