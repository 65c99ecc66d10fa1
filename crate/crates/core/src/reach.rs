//! Empirical exploration of reachable sets.
//!
//! A point is reachable from `origin` if some finite concatenation of
//! positive-time flows of the family lands on it; the fixed-time variant
//! constrains the leg durations to sum to a given `t`. Exact reachable-set
//! computation is out of scope: this module draws random admissible state
//! sequences (uniform over next states different from the current one) and
//! uniform simplex splits of the time budget, and stores each endpoint with
//! the witness that produced it. Approachability of a target is then simply
//! the minimum distance to the cloud.
//!
//! Zero durations are excluded; each leg gets at least `1e-6` of the time
//! horizon.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::FieldExpr;
use crate::flow::{self, IntegratorOptions, Manifold};

const MIN_LEG_FRACTION: f64 = 1e-6;
const SPLIT_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReachError {
    #[error("reach sampling needs at least one field")]
    NoFields,
    #[error("n_samples and max_switches must be at least 1")]
    BadBudget,
    #[error("the reach time horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("dimension mismatch: {what}")]
    Dimension { what: String },
}

/// Time budget for reachability sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReachMode {
    /// Leg durations sum exactly to the given time.
    FixedTime(f64),
    /// Total duration is drawn below the given bound.
    AnyTime(f64),
}

/// An endpoint together with the state sequence and leg durations that
/// produced it.
#[derive(Debug, Clone)]
pub struct ReachWitness {
    pub point: Vec<f64>,
    pub states: Vec<usize>,
    pub times: Vec<f64>,
}

impl ReachWitness {
    pub fn total_time(&self) -> f64 {
        self.times.iter().sum()
    }
}

/// A sampled cloud of reachable points.
#[derive(Debug, Clone)]
pub struct ReachCloud {
    pub origin: Vec<f64>,
    pub mode: ReachMode,
    pub witnesses: Vec<ReachWitness>,
    /// Draws dropped because their integration failed (suspected blow-up).
    pub skipped: usize,
}

/// Splits `total` into `m` positive legs, uniformly on the simplex, with the
/// last leg taking the exact remainder so the parts sum to `total` exactly.
fn split_times(rng: &mut ChaCha8Rng, total: f64, m: usize, min_leg: f64) -> Vec<f64> {
    if m == 1 {
        return vec![total];
    }
    let mut best = Vec::new();
    for _ in 0..SPLIT_ATTEMPTS {
        let mut cuts: Vec<f64> = (0..m - 1).map(|_| rng.random::<f64>()).collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("uniform draws are finite"));
        let mut times = Vec::with_capacity(m);
        let mut prev = 0.0;
        for &c in &cuts {
            times.push((c - prev) * total);
            prev = c;
        }
        let partial: f64 = times.iter().sum();
        times.push(total - partial);
        if times.iter().all(|&t| t >= min_leg) {
            return times;
        }
        best = times;
    }
    best
}

fn draw_states(rng: &mut ChaCha8Rng, k: usize, m: usize) -> Vec<usize> {
    let mut states = Vec::with_capacity(m);
    let mut current = rng.random_range(0..k);
    states.push(current);
    for _ in 1..m {
        if k > 1 {
            let mut next = rng.random_range(0..k - 1);
            if next >= current {
                next += 1;
            }
            current = next;
        }
        states.push(current);
    }
    states
}

/// Samples `n_samples` reachable points from `origin` under random admissible
/// switching sequences with at most `max_switches` legs.
#[allow(clippy::too_many_arguments)]
pub fn sample_reachable(
    fields: &[FieldExpr],
    origin: &[f64],
    mode: ReachMode,
    n_samples: usize,
    max_switches: usize,
    seed: u64,
    manifold: &Manifold,
    opts: &IntegratorOptions,
) -> Result<ReachCloud, ReachError> {
    if fields.is_empty() {
        return Err(ReachError::NoFields);
    }
    if n_samples < 1 || max_switches < 1 {
        return Err(ReachError::BadBudget);
    }
    let horizon = match mode {
        ReachMode::FixedTime(t) | ReachMode::AnyTime(t) => t,
    };
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ReachError::BadHorizon(horizon));
    }
    let n = manifold.dim();
    if origin.len() != n || fields.iter().any(|f| f.dim() != n) {
        return Err(ReachError::Dimension {
            what: format!(
                "origin dim {}, manifold dim {}, field dims {:?}",
                origin.len(),
                n,
                fields.iter().map(|f| f.dim()).collect::<Vec<_>>()
            ),
        });
    }

    let k = fields.len();
    let min_leg = MIN_LEG_FRACTION * horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = manifold.canonical(origin);
    let mut witnesses = Vec::with_capacity(n_samples);
    let mut skipped = 0usize;
    for _ in 0..n_samples {
        let m = rng.random_range(1..=max_switches);
        let states = draw_states(&mut rng, k, m);
        let total = match mode {
            ReachMode::FixedTime(t) => t,
            ReachMode::AnyTime(max_total) => {
                let u: f64 = rng.random();
                max_total * (1e-3 + (1.0 - 1e-3) * u)
            }
        };
        let times = split_times(&mut rng, total, m, min_leg);
        match flow::composite_flow(fields, &states, &times, &origin, manifold, opts) {
            Ok(point) => witnesses.push(ReachWitness {
                point,
                states,
                times,
            }),
            Err(_) => skipped += 1,
        }
    }
    Ok(ReachCloud {
        origin,
        mode,
        witnesses,
        skipped,
    })
}

/// Minimum manifold distance from `target` to the cloud, with the witness
/// achieving it. Panics on an empty cloud.
pub fn approachable_distance<'a>(
    cloud: &'a ReachCloud,
    target: &[f64],
    manifold: &Manifold,
) -> (f64, &'a ReachWitness) {
    assert!(
        !cloud.witnesses.is_empty(),
        "approachable distance needs a nonempty cloud"
    );
    let target = manifold.canonical(target);
    cloud
        .witnesses
        .iter()
        .map(|w| (manifold.distance(&w.point, &target), w))
        .min_by(|a, b| a.0.partial_cmp(&b.0).expect("distances are finite"))
        .expect("cloud is nonempty")
}

#[derive(Serialize)]
struct WitnessRecord<'a> {
    point: &'a [f64],
    states: Vec<usize>,
    times: &'a [f64],
}

impl ReachCloud {
    /// CSV export: `x1..xn,switches,total_time`.
    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        let dim = self.origin.len();
        for i in 1..=dim {
            if i > 1 {
                write!(w, ",")?;
            }
            write!(w, "x{i}")?;
        }
        writeln!(w, ",switches,total_time")?;
        for wit in &self.witnesses {
            for (i, v) in wit.point.iter().enumerate() {
                if i > 0 {
                    write!(w, ",")?;
                }
                write!(w, "{}", crate::fmt::f64_17(*v))?;
            }
            writeln!(
                w,
                ",{},{}",
                wit.states.len(),
                crate::fmt::f64_17(wit.total_time())
            )?;
        }
        Ok(())
    }

    /// JSON-lines export of the witnesses, states 1-based.
    pub fn write_witnesses_jsonl<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        for wit in &self.witnesses {
            let record = WitnessRecord {
                point: &wit.point,
                states: wit.states.iter().map(|s| s + 1).collect(),
                times: &wit.times,
            };
            serde_json::to_writer(&mut w, &record)?;
            writeln!(w)?;
        }
        Ok(())
    }
}
