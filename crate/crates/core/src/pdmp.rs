//! Sampler for the switched Markov process (X, A).
//!
//! X follows the flow of the current field `u_i`; after an exponential
//! holding time with rate `lambda_i` a new state is drawn from row `i` of the
//! jump matrix (zero diagonal, strictly positive off-diagonal entries), and
//! the flow continues with the new field. The pair (X, A) is Markov even
//! though X alone is not.
//!
//! Randomness contract: every sampler call owns a `ChaCha8Rng` seeded from a
//! `u64`, holding times are drawn by inversion (`-ln(U)/lambda`), and jump
//! targets by cumulative-sum inversion over the jump row. One seed therefore
//! fixes the entire event sequence bit-for-bit, and distinct seeds give
//! independent streams that may run in parallel. The generator name is
//! exported as [`RNG_ID`] so output metadata can pin it.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::FieldExpr;
use crate::flow::{self, FlowError, IntegratorOptions, Manifold};

/// Identifier of the random number generator, for output metadata.
pub const RNG_ID: &str = "chacha8/u64-seed";

/// (sample times, flattened sample points, endpoint) of one segment.
type SegmentSamples = (Vec<f64>, Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdmpError {
    #[error(
        "switching needs at least two fields: with one state there is no other state to jump to"
    )]
    TooFewFields,
    #[error("rates: expected {k} entries, got {got}")]
    RateCount { k: usize, got: usize },
    #[error("rates[{index}] must be positive and finite, got {value}")]
    BadRate { index: usize, value: f64 },
    #[error("jump matrix must be {k}x{k}")]
    JumpShape { k: usize },
    #[error("jump[{i}][{i}] must be 0 (no self-jumps), got {value}")]
    JumpDiagonal { i: usize, value: f64 },
    #[error("jump[{i}][{j}] must be strictly positive, got {value}")]
    JumpOffDiagonal { i: usize, j: usize, value: f64 },
    #[error("jump matrix row {row} sums to {sum:.17e}, expected 1 within 1e-12")]
    JumpRowSum { row: usize, sum: f64 },
    #[error("fields[{index}] has dimension {got}, manifold has dimension {expected}")]
    FieldDimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("initial state {state} out of range for {k} states")]
    BadInitialState { state: usize, k: usize },
    #[error("expected a positive value, got {0}")]
    BadArgument(f64),
    #[error("start point has dimension {got}, manifold has dimension {expected}")]
    StartDimension { expected: usize, got: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// A validated switching system: manifold, k fields, per-state rates, and a
/// row-stochastic jump matrix with zero diagonal.
#[derive(Debug, Clone)]
pub struct SwitchingSystem {
    manifold: Manifold,
    fields: Vec<FieldExpr>,
    rates: Vec<f64>,
    jump: Vec<Vec<f64>>,
    integrator: IntegratorOptions,
}

impl SwitchingSystem {
    pub fn new(
        manifold: Manifold,
        fields: Vec<FieldExpr>,
        rates: Vec<f64>,
        jump: Vec<Vec<f64>>,
    ) -> Result<Self, PdmpError> {
        let k = fields.len();
        if k < 2 {
            return Err(PdmpError::TooFewFields);
        }
        let n = manifold.dim();
        for (index, f) in fields.iter().enumerate() {
            if f.dim() != n {
                return Err(PdmpError::FieldDimension {
                    index,
                    expected: n,
                    got: f.dim(),
                });
            }
        }
        if rates.len() != k {
            return Err(PdmpError::RateCount {
                k,
                got: rates.len(),
            });
        }
        for (index, &value) in rates.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PdmpError::BadRate { index, value });
            }
        }
        if jump.len() != k || jump.iter().any(|row| row.len() != k) {
            return Err(PdmpError::JumpShape { k });
        }
        for (i, row) in jump.iter().enumerate() {
            if row[i] != 0.0 {
                return Err(PdmpError::JumpDiagonal { i, value: row[i] });
            }
            for (j, &p) in row.iter().enumerate() {
                let positive = p.is_finite() && p > 0.0;
                if j != i && !positive {
                    return Err(PdmpError::JumpOffDiagonal { i, j, value: p });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(PdmpError::JumpRowSum { row: i, sum });
            }
        }
        // Simplified fields let constant ones take the exact-translation path.
        let fields = fields.iter().map(|f| f.simplify()).collect();
        Ok(SwitchingSystem {
            manifold,
            fields,
            rates,
            jump,
            integrator: IntegratorOptions::default(),
        })
    }

    /// Uniform off-diagonal jump matrix for `k` states.
    pub fn uniform_jump(k: usize) -> Vec<Vec<f64>> {
        let p = 1.0 / (k.max(2) as f64 - 1.0);
        (0..k)
            .map(|i| (0..k).map(|j| if i == j { 0.0 } else { p }).collect())
            .collect()
    }

    pub fn with_integrator(mut self, opts: IntegratorOptions) -> Self {
        self.integrator = opts;
        self
    }

    pub fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    pub fn fields(&self) -> &[FieldExpr] {
        &self.fields
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn jump(&self) -> &[Vec<f64>] {
        &self.jump
    }

    pub fn state_count(&self) -> usize {
        self.fields.len()
    }

    pub fn integrator(&self) -> &IntegratorOptions {
        &self.integrator
    }

    fn check_start(&self, start: &[f64], state: usize) -> Result<(), PdmpError> {
        if start.len() != self.manifold.dim() {
            return Err(PdmpError::StartDimension {
                expected: self.manifold.dim(),
                got: start.len(),
            });
        }
        if state >= self.state_count() {
            return Err(PdmpError::BadInitialState {
                state,
                k: self.state_count(),
            });
        }
        Ok(())
    }

    /// Samples one realization of (X, A) on `[0, horizon]`, recording points
    /// every `sample_dt` within each inter-jump segment plus both segment
    /// endpoints. The same seed reproduces the trajectory exactly.
    pub fn sample_path(
        &self,
        start: &[f64],
        initial_state: usize,
        horizon: f64,
        seed: u64,
        sample_dt: f64,
    ) -> Result<Trajectory, PdmpError> {
        self.check_start(start, initial_state)?;
        for v in [horizon, sample_dt] {
            let positive = v.is_finite() && v > 0.0;
            if !positive {
                return Err(PdmpError::BadArgument(v));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = self.manifold.canonical(start);
        let mut state = initial_state;
        let mut elapsed = 0.0;
        let mut segments = Vec::new();
        loop {
            let holding = draw_exponential(&mut rng, self.rates[state]);
            let jumps = elapsed + holding < horizon;
            let duration = if jumps { holding } else { horizon - elapsed };
            let (times, points, x_end) =
                self.flow_segment(state, &x, duration, elapsed, sample_dt)?;
            segments.push(Segment {
                state,
                duration,
                times,
                points,
            });
            x = x_end;
            elapsed += duration;
            if !jumps {
                break;
            }
            state = draw_next_state(&mut rng, &self.jump[state]);
        }
        let total_time = segments.iter().map(|s| s.duration).sum();
        Ok(Trajectory {
            dim: self.manifold.dim(),
            initial_point: self.manifold.canonical(start),
            initial_state,
            sample_dt,
            total_time,
            segments,
        })
    }

    /// One draw of (X_t, A_t).
    pub fn sample_endpoint(
        &self,
        start: &[f64],
        initial_state: usize,
        t: f64,
        seed: u64,
    ) -> Result<(Vec<f64>, usize), PdmpError> {
        self.check_start(start, initial_state)?;
        if t < 0.0 {
            return Err(PdmpError::BadArgument(t));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.endpoint_with_rng(&mut rng, start, initial_state, t)
    }

    /// One draw from the resolvent kernel: the endpoint at an independent
    /// Exp(1) time.
    pub fn sample_resolvent(
        &self,
        start: &[f64],
        initial_state: usize,
        seed: u64,
    ) -> Result<(Vec<f64>, usize), PdmpError> {
        self.check_start(start, initial_state)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = draw_exponential(&mut rng, 1.0);
        self.endpoint_with_rng(&mut rng, start, initial_state, t)
    }

    fn endpoint_with_rng(
        &self,
        rng: &mut ChaCha8Rng,
        start: &[f64],
        initial_state: usize,
        t: f64,
    ) -> Result<(Vec<f64>, usize), PdmpError> {
        let mut x = self.manifold.canonical(start);
        let mut state = initial_state;
        let mut elapsed = 0.0;
        loop {
            let holding = draw_exponential(rng, self.rates[state]);
            if elapsed + holding < t {
                x = flow::integrate(
                    &self.fields[state],
                    &x,
                    holding,
                    &self.manifold,
                    &self.integrator,
                )?;
                elapsed += holding;
                state = draw_next_state(rng, &self.jump[state]);
            } else {
                let x = flow::integrate(
                    &self.fields[state],
                    &x,
                    t - elapsed,
                    &self.manifold,
                    &self.integrator,
                )?;
                return Ok((x, state));
            }
        }
    }

    /// Integrates one inter-jump segment in covering coordinates, recording
    /// canonicalized samples at the `sample_dt` grid plus both endpoints.
    /// Returns (sample times, flattened sample points, endpoint).
    fn flow_segment(
        &self,
        state: usize,
        start: &[f64],
        duration: f64,
        t0: f64,
        sample_dt: f64,
    ) -> Result<SegmentSamples, PdmpError> {
        let field = &self.fields[state];
        let n = self.manifold.dim();
        let covering = Manifold::Euclidean(n);
        let mut times = Vec::new();
        let mut points = Vec::new();
        let mut push = |t: f64, x: &[f64], manifold: &Manifold| {
            times.push(t);
            let mut p = x.to_vec();
            manifold.canonicalize(&mut p);
            points.extend_from_slice(&p);
        };
        push(t0, start, &self.manifold);
        let mut x = start.to_vec();
        let mut prev = 0.0;
        let mut j = 1u64;
        loop {
            let target = j as f64 * sample_dt;
            if target >= duration {
                break;
            }
            x = flow::integrate(field, &x, target - prev, &covering, &self.integrator)?;
            push(t0 + target, &x, &self.manifold);
            prev = target;
            j += 1;
        }
        if duration > prev {
            x = flow::integrate(field, &x, duration - prev, &covering, &self.integrator)?;
        }
        push(t0 + duration, &x, &self.manifold);
        let end = self.manifold.canonical(&x);
        Ok((times, points, end))
    }
}

fn draw_exponential(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    // Inversion keeps the event sequence identical across platforms.
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    (-u.ln() / rate).max(f64::MIN_POSITIVE)
}

fn draw_next_state(rng: &mut ChaCha8Rng, row: &[f64]) -> usize {
    let v: f64 = rng.random();
    let mut cum = 0.0;
    for (j, &p) in row.iter().enumerate() {
        cum += p;
        if v < cum {
            return j;
        }
    }
    row.iter()
        .rposition(|&p| p > 0.0)
        .expect("jump row has positive entries")
}

/// One inter-jump piece of a trajectory.
#[derive(Debug, Clone)]
pub struct Segment {
    pub state: usize,
    pub duration: f64,
    times: Vec<f64>,
    points: Vec<f64>,
}

impl Segment {
    /// Recorded (time, point) samples, endpoints included.
    pub fn samples(&self) -> impl Iterator<Item = (f64, &[f64])> {
        let n = if self.times.is_empty() {
            1
        } else {
            self.points.len() / self.times.len()
        };
        self.times.iter().copied().zip(self.points.chunks_exact(n))
    }

    pub fn start_point(&self) -> &[f64] {
        let n = self.points.len() / self.times.len();
        &self.points[..n]
    }

    pub fn end_point(&self) -> &[f64] {
        let n = self.points.len() / self.times.len();
        &self.points[self.points.len() - n..]
    }
}

/// A state-change event, for the JSON-lines log.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    pub from_state: usize,
    pub to_state: usize,
    pub point: Vec<f64>,
}

/// One realization of (X, A) with its recorded samples.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dim: usize,
    pub initial_point: Vec<f64>,
    pub initial_state: usize,
    pub sample_dt: f64,
    pub total_time: f64,
    pub segments: Vec<Segment>,
}

#[derive(Serialize)]
struct EventRecord<'a> {
    t: f64,
    from_state: usize,
    to_state: usize,
    point: &'a [f64],
}

impl Trajectory {
    /// State-change events derived from the segment sequence.
    pub fn jump_events(&self) -> Vec<JumpEvent> {
        let mut events = Vec::new();
        let mut t = 0.0;
        for pair in self.segments.windows(2) {
            t += pair[0].duration;
            events.push(JumpEvent {
                t,
                from_state: pair[0].state,
                to_state: pair[1].state,
                point: pair[0].end_point().to_vec(),
            });
        }
        events
    }

    /// Total time spent in each of `k` states.
    pub fn state_durations(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; k];
        for s in &self.segments {
            out[s.state] += s.duration;
        }
        out
    }

    /// All samples in time order as (time, state, point).
    pub fn samples(&self) -> impl Iterator<Item = (f64, usize, &[f64])> {
        self.segments
            .iter()
            .flat_map(|s| s.samples().map(move |(t, p)| (t, s.state, p)))
    }

    /// CSV export: header `t,state,x1..xn`, one row per sample, states
    /// 1-based, numbers with 17 significant digits.
    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t,state")?;
        for i in 1..=self.dim {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for (t, state, p) in self.samples() {
            write!(w, "{},{}", crate::fmt::f64_17(t), state + 1)?;
            for v in p {
                write!(w, ",{}", crate::fmt::f64_17(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// JSON-lines export of the samples, states 1-based.
    pub fn write_samples_jsonl<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        #[derive(Serialize)]
        struct SampleRecord<'a> {
            t: f64,
            state: usize,
            point: &'a [f64],
        }
        for (t, state, point) in self.samples() {
            serde_json::to_writer(
                &mut w,
                &SampleRecord {
                    t,
                    state: state + 1,
                    point,
                },
            )?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// JSON-lines export of the jump events, states 1-based.
    pub fn write_events_jsonl<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        for e in self.jump_events() {
            let record = EventRecord {
                t: e.t,
                from_state: e.from_state + 1,
                to_state: e.to_state + 1,
                point: &e.point,
            };
            serde_json::to_writer(&mut w, &record)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    fn torus2_system() -> SwitchingSystem {
        SwitchingSystem::new(
            Manifold::Torus(2),
            vec![
                FieldExpr::constant(&[1.0, 0.0]),
                FieldExpr::constant(&[0.0, 1.0]),
            ],
            vec![1.0, 1.0],
            SwitchingSystem::uniform_jump(2),
        )
        .unwrap()
    }

    #[test]
    fn single_field_rejected() {
        let err = SwitchingSystem::new(
            Manifold::Torus(1),
            vec![FieldExpr::constant(&[1.0])],
            vec![1.0],
            vec![vec![0.0]],
        );
        assert!(matches!(err, Err(PdmpError::TooFewFields)));
    }

    #[test]
    fn jump_matrix_validation() {
        let fields = vec![
            FieldExpr::constant(&[1.0, 0.0]),
            FieldExpr::constant(&[0.0, 1.0]),
        ];
        let m = Manifold::Torus(2);
        let bad_diag = SwitchingSystem::new(
            m.clone(),
            fields.clone(),
            vec![1.0, 1.0],
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
        );
        assert!(matches!(bad_diag, Err(PdmpError::JumpDiagonal { .. })));
        let bad_sum = SwitchingSystem::new(
            m.clone(),
            fields.clone(),
            vec![1.0, 1.0],
            vec![vec![0.0, 0.5], vec![1.0, 0.0]],
        );
        assert!(matches!(bad_sum, Err(PdmpError::JumpRowSum { .. })));
        let bad_rate =
            SwitchingSystem::new(m, fields, vec![1.0, 0.0], SwitchingSystem::uniform_jump(2));
        assert!(matches!(bad_rate, Err(PdmpError::BadRate { .. })));
    }

    #[test]
    fn path_is_reproducible() {
        let sys = torus2_system();
        let a = sys.sample_path(&[0.0, 0.0], 0, 50.0, 7, 0.01).unwrap();
        let b = sys.sample_path(&[0.0, 0.0], 0, 50.0, 7, 0.01).unwrap();
        assert_eq!(a.segments.len(), b.segments.len());
        for (sa, sb) in a.segments.iter().zip(&b.segments) {
            assert_eq!(sa.state, sb.state);
            assert_eq!(sa.duration.to_bits(), sb.duration.to_bits());
            assert_eq!(sa.end_point(), sb.end_point());
        }
    }

    #[test]
    fn durations_sum_to_total_time_and_states_alternate() {
        let sys = torus2_system();
        let traj = sys.sample_path(&[0.2, 0.8], 1, 100.0, 3, 0.05).unwrap();
        let sum: f64 = traj.segments.iter().map(|s| s.duration).sum();
        assert_eq!(sum, traj.total_time);
        assert!((traj.total_time - 100.0).abs() < 1e-9);
        for pair in traj.segments.windows(2) {
            assert_ne!(pair[0].state, pair[1].state);
        }
    }

    #[test]
    fn torus_samples_stay_canonical() {
        let sys = torus2_system();
        let traj = sys.sample_path(&[0.9, 0.9], 0, 200.0, 11, 0.01).unwrap();
        for (_, _, p) in traj.samples() {
            for &v in p {
                assert!((0.0..1.0).contains(&v), "sample {v} out of [0,1)");
            }
        }
    }

    #[test]
    fn mean_jump_count_matches_renewal_theory() {
        // k=2, rates (1,2): mean cycle 1 + 1/2, two jumps per cycle, so
        // about T / 0.75 jumps over horizon T.
        let sys = SwitchingSystem::new(
            Manifold::Torus(2),
            vec![
                FieldExpr::constant(&[1.0, 0.0]),
                FieldExpr::constant(&[0.0, 1.0]),
            ],
            vec![1.0, 2.0],
            SwitchingSystem::uniform_jump(2),
        )
        .unwrap();
        let horizon = 1000.0;
        let mut total_jumps = 0usize;
        let seeds = 20;
        for seed in 0..seeds {
            let traj = sys.sample_path(&[0.0, 0.0], 0, horizon, seed, 1.0).unwrap();
            total_jumps += traj.segments.len() - 1;
        }
        let mean = total_jumps as f64 / seeds as f64;
        let expected = 2.0 * horizon / 1.5;
        assert!(
            (mean - expected).abs() / expected < 0.05,
            "mean jumps {mean}, expected about {expected}"
        );
    }

    #[test]
    fn endpoint_near_start_for_tiny_time() {
        let sys = torus2_system();
        let (x, state) = sys.sample_endpoint(&[0.5, 0.5], 0, 1e-9, 5).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-8 && (x[1] - 0.5).abs() < 1e-8);
        assert_eq!(state, 0);
    }

    #[test]
    fn torus_endpoint_coordinate_sum_is_t_mod_one() {
        let sys = torus2_system();
        for seed in 0..50 {
            let (x, _) = sys.sample_endpoint(&[0.0, 0.0], 0, 0.7, seed).unwrap();
            let s = (x[0] + x[1]).rem_euclid(1.0);
            let d = (s - 0.7).abs();
            assert!(d.min(1.0 - d) < 1e-12, "sum {s}");
        }
    }

    #[test]
    fn resolvent_on_zero_fields_stays_put() {
        let sys = SwitchingSystem::new(
            Manifold::Euclidean(2),
            vec![FieldExpr::zero(2), FieldExpr::zero(2)],
            vec![1.0, 1.0],
            SwitchingSystem::uniform_jump(2),
        )
        .unwrap();
        for seed in 0..20 {
            let (x, _) = sys.sample_resolvent(&[0.3, -0.4], 0, seed).unwrap();
            assert_eq!(x, vec![0.3, -0.4]);
        }
    }

    #[test]
    fn resolvent_coordinate_sum_is_nondegenerate_on_torus() {
        let sys = torus2_system();
        let mut values = Vec::new();
        for seed in 0..1000 {
            let (x, _) = sys.sample_resolvent(&[0.0, 0.0], 0, seed).unwrap();
            values.push((x[0] + x[1]).rem_euclid(1.0));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        assert!(var > 0.0, "resolvent endpoint statistic should spread out");
    }

    #[test]
    fn empirical_state_marginal_two_rates() {
        // Detailed balance for the two-state chain: pi_1 lambda_1 = pi_2
        // lambda_2, so rates (1,2) give (2/3, 1/3).
        let sys = SwitchingSystem::new(
            Manifold::Torus(2),
            vec![
                FieldExpr::constant(&[1.0, 0.0]),
                FieldExpr::constant(&[0.0, 1.0]),
            ],
            vec![1.0, 2.0],
            SwitchingSystem::uniform_jump(2),
        )
        .unwrap();
        let t = 40.0;
        let mut in_state_1 = 0usize;
        let trials = 10_000;
        for seed in 0..trials {
            let (_, a) = sys.sample_endpoint(&[0.0, 0.0], 0, t, seed).unwrap();
            if a == 0 {
                in_state_1 += 1;
            }
        }
        let frac = in_state_1 as f64 / trials as f64;
        assert!((frac - 2.0 / 3.0).abs() < 0.02, "fraction {frac}");
    }

    #[test]
    fn event_log_matches_segments() {
        let sys = torus2_system();
        let traj = sys.sample_path(&[0.0, 0.0], 0, 20.0, 9, 0.1).unwrap();
        let events = traj.jump_events();
        assert_eq!(events.len(), traj.segments.len() - 1);
        let mut buf = Vec::new();
        traj.write_events_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), events.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(first["from_state"].as_u64().unwrap() >= 1);
    }

    #[test]
    fn csv_has_expected_header_and_rows() {
        let sys = torus2_system();
        let traj = sys.sample_path(&[0.0, 0.0], 0, 1.0, 2, 0.25).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,state,x1,x2");
        assert!(lines.next().unwrap().starts_with("0.0000000000000000e0,"));
    }
}
