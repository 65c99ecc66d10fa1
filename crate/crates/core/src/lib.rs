//! Simulation and hypoellipticity analysis for ODE systems driven by random
//! switching.
//!
//! The model is a Markov process (X, A) on M x S: X follows the flow of one
//! vector field out of a finite family, and A is the index of the driving
//! field, re-drawn at exponential switching times from a jump matrix. The
//! crate checks the Lie-algebraic rank conditions under which such a process
//! has a unique, absolutely continuous invariant measure, and provides the
//! samplers and estimators to probe those conclusions empirically.
//!
//! - [`expr`]: vector-field expression trees (parsing, evaluation, exact
//!   symbolic derivatives)
//! - [`lie`]: iterated Lie brackets and pointwise rank checks for
//!   hypoellipticity conditions A and B
//! - [`flow`]: single and composite flows, variational Jacobians, endpoint
//!   regularity
//! - [`pdmp`]: the switched-process sampler (paths, fixed-time endpoints,
//!   resolvent draws)
//! - [`density`]: occupation histograms and total-variation diagnostics
//! - [`reach`]: empirical reachable-set exploration
//! - [`config`] and [`cli`]: run configuration and the command-line front end
//!
//! ```
//! use std::collections::BTreeMap;
//! use switchode::expr::parse_field;
//! use switchode::lie::{bracket, check_condition_a, CheckOptions};
//!
//! let params = BTreeMap::from([("r".to_string(), 28.0)]);
//! let u1 = parse_field("10*(x2-x1); r*x1-x2-x1*x3; x1*x2-(8/3)*x3", 3, &params).unwrap();
//! let params = BTreeMap::from([("r".to_string(), 27.0)]);
//! let u2 = parse_field("10*(x2-x1); r*x1-x2-x1*x3; x1*x2-(8/3)*x3", 3, &params).unwrap();
//!
//! // The commutator is a genuine new direction away from the z-axis...
//! let b = bracket(&u1, &u2).unwrap();
//! assert!(!b.is_syntactically_zero());
//!
//! // ...and together the brackets span all of R^3 at (1, 1, 1).
//! let report = check_condition_a(&[u1, u2], &[1.0, 1.0, 1.0], &CheckOptions::default()).unwrap();
//! assert!(report.holds());
//! assert_eq!(report.rank, 3);
//! ```

pub mod cli;
pub mod config;
pub mod density;
pub mod expr;
pub mod flow;
mod fmt;
pub mod lie;
pub mod pdmp;
pub mod reach;
