//! Flows of vector fields: single-leg and composite integration, variational
//! Jacobians, and regularity of the endpoint maps obtained by varying
//! switching times.
//!
//! Torus dynamics are integrated in the covering space ℝⁿ (fields are assumed
//! 1-periodic there) and reduced mod 1 only at leg boundaries, so variational
//! Jacobians stay smooth. Integration is adaptive embedded Runge-Kutta 5(4)
//! by default with tight tolerances: the rank checks differentiate through
//! flows, and integration error has to sit well below the rank tolerance.
//! Blow-up in finite time (the model assumes forward-complete fields) is
//! detected as step-size underflow and reported, not assumed away.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{ExprError, FieldExpr};
use crate::lie;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("step size underflow at t={time:.6e}; the field may blow up in finite time (last state {state:?})")]
    StepSizeUnderflow { time: f64, state: Vec<f64> },
    #[error("flow duration must be nonnegative, got {0}")]
    NegativeDuration(f64),
    #[error("leg durations must be positive, got {0}")]
    NonPositiveLegDuration(f64),
    #[error("switching times must sum below the total time (sum {sum}, total {total})")]
    DomainViolation { sum: f64, total: f64 },
    #[error("dimension mismatch: {what}")]
    Dimension { what: String },
    #[error("state index {index} out of range for {count} fields")]
    BadStateIndex { index: usize, count: usize },
    #[error("integrator tolerances and steps must be positive")]
    BadOptions,
    #[error(transparent)]
    Eval(#[from] ExprError),
}

/// The phase space: plain ℝⁿ or the flat torus ℝⁿ/ℤⁿ with points kept in
/// `[0,1)ⁿ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Manifold {
    Euclidean(usize),
    Torus(usize),
}

impl Manifold {
    pub fn dim(&self) -> usize {
        match self {
            Manifold::Euclidean(n) | Manifold::Torus(n) => *n,
        }
    }

    pub fn canonicalize(&self, x: &mut [f64]) {
        if let Manifold::Torus(_) = self {
            for v in x.iter_mut() {
                *v = v.rem_euclid(1.0);
                if *v == 1.0 {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn canonical(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.canonicalize(&mut y);
        y
    }

    /// Euclidean distance, wrapped per axis on the torus.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Manifold::Euclidean(_) => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Manifold::Torus(_) => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = (x - y).rem_euclid(1.0);
                    let d = d.min(1.0 - d);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrationMethod {
    /// Embedded Dormand-Prince 5(4) with step adaptation.
    AdaptiveRk54,
    /// Classical fourth-order Runge-Kutta with a fixed step.
    FixedRk4,
}

#[derive(Debug, Clone)]
pub struct IntegratorOptions {
    pub method: IntegrationMethod,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: Option<f64>,
    /// Step for [`IntegrationMethod::FixedRk4`] (the duration is split into
    /// equal steps no longer than this).
    pub fixed_dt: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            method: IntegrationMethod::AdaptiveRk54,
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_step: None,
            fixed_dt: 1e-3,
        }
    }
}

impl IntegratorOptions {
    fn validate(&self) -> Result<(), FlowError> {
        let ok = self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.fixed_dt > 0.0
            && self.max_step.is_none_or(|h| h > 0.0);
        if ok {
            Ok(())
        } else {
            Err(FlowError::BadOptions)
        }
    }
}

// Dormand-Prince 5(4) tableau.
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `dy/dt = rhs(y)` for duration `t` in place.
fn rk54_adaptive<F>(
    rhs: &mut F,
    y: &mut [f64],
    t_total: f64,
    opts: &IntegratorOptions,
) -> Result<(), FlowError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), FlowError>,
{
    let n = y.len();
    let mut k = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    rhs(y, &mut k[0])?;

    let min_step = 1e-14 * t_total.max(1.0);
    let ynorm = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let fnorm = k[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut h = (1e-2 * (1.0 + ynorm) / (1.0 + fnorm)).min(t_total);
    if let Some(hmax) = opts.max_step {
        h = h.min(hmax);
    }

    let mut t = 0.0;
    while t < t_total {
        h = h.min(t_total - t);
        if let Some(hmax) = opts.max_step {
            h = h.min(hmax);
        }

        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += DP_A[s - 1][j] * kj[i];
                }
                ytmp[i] = y[i] + h * acc;
            }
            rhs(&ytmp, &mut k[s])?;
        }
        // Stage 7's argument is the fifth-order solution itself (FSAL).
        let ynew = &ytmp;

        let mut err_sq = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += (DP_B5[j] - DP_B4[j]) * kj[i];
            }
            e *= h;
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(ynew[i].abs());
            err_sq += (e / scale) * (e / scale);
        }
        let err = (err_sq / n as f64).sqrt();

        if !err.is_finite() {
            h *= 0.2;
            if h < min_step {
                return Err(FlowError::StepSizeUnderflow {
                    time: t,
                    state: y.to_vec(),
                });
            }
            continue;
        }

        if err <= 1.0 {
            t += h;
            y.copy_from_slice(ynew);
            k.swap(0, 6);
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            if h < min_step {
                return Err(FlowError::StepSizeUnderflow {
                    time: t,
                    state: y.to_vec(),
                });
            }
        }
    }
    Ok(())
}

fn rk4_fixed<F>(rhs: &mut F, y: &mut [f64], t_total: f64, dt: f64) -> Result<(), FlowError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), FlowError>,
{
    if t_total == 0.0 {
        return Ok(());
    }
    let steps = (t_total / dt).ceil().max(1.0) as usize;
    let h = t_total / steps as f64;
    let n = y.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut ytmp = vec![0.0; n];
    for _ in 0..steps {
        rhs(y, &mut k1)?;
        for i in 0..n {
            ytmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(&ytmp, &mut k2)?;
        for i in 0..n {
            ytmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(&ytmp, &mut k3)?;
        for i in 0..n {
            ytmp[i] = y[i] + h * k3[i];
        }
        rhs(&ytmp, &mut k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(())
}

fn run_integrator<F>(
    rhs: &mut F,
    y: &mut [f64],
    t: f64,
    opts: &IntegratorOptions,
) -> Result<(), FlowError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), FlowError>,
{
    match opts.method {
        IntegrationMethod::AdaptiveRk54 => rk54_adaptive(rhs, y, t, opts),
        IntegrationMethod::FixedRk4 => rk4_fixed(rhs, y, t, opts.fixed_dt),
    }
}

fn check_point_dim(field: &FieldExpr, start: &[f64], manifold: &Manifold) -> Result<(), FlowError> {
    if field.dim() != manifold.dim() || start.len() != manifold.dim() {
        return Err(FlowError::Dimension {
            what: format!(
                "field dim {}, start dim {}, manifold dim {}",
                field.dim(),
                start.len(),
                manifold.dim()
            ),
        });
    }
    Ok(())
}

/// Flows `start` along `field` for duration `t >= 0`. Constant fields
/// short-circuit to an exact translation. Torus results are reduced to
/// `[0,1)ⁿ`.
pub fn integrate(
    field: &FieldExpr,
    start: &[f64],
    t: f64,
    manifold: &Manifold,
    opts: &IntegratorOptions,
) -> Result<Vec<f64>, FlowError> {
    check_point_dim(field, start, manifold)?;
    opts.validate()?;
    if t < 0.0 {
        return Err(FlowError::NegativeDuration(t));
    }
    let mut y = manifold.canonical(start);
    if t == 0.0 {
        return Ok(y);
    }
    if let Some(c) = field.as_constant() {
        for (yi, ci) in y.iter_mut().zip(&c) {
            *yi += t * ci;
        }
    } else {
        let mut rhs = |x: &[f64], out: &mut [f64]| field.eval_into(x, out).map_err(FlowError::from);
        run_integrator(&mut rhs, &mut y, t, opts)?;
    }
    manifold.canonicalize(&mut y);
    Ok(y)
}

/// Sequential composition of flows: leg `l` follows `fields[states[l]]` for
/// `durations[l]`. Zero durations are no-ops.
pub fn composite_flow(
    fields: &[FieldExpr],
    states: &[usize],
    durations: &[f64],
    start: &[f64],
    manifold: &Manifold,
    opts: &IntegratorOptions,
) -> Result<Vec<f64>, FlowError> {
    if states.len() != durations.len() {
        return Err(FlowError::Dimension {
            what: format!("{} states vs {} durations", states.len(), durations.len()),
        });
    }
    let mut x = manifold.canonical(start);
    for (&s, &d) in states.iter().zip(durations) {
        let field = fields.get(s).ok_or(FlowError::BadStateIndex {
            index: s,
            count: fields.len(),
        })?;
        x = integrate(field, &x, d, manifold, opts)?;
    }
    Ok(x)
}

/// Flows the state and the Jacobian of the flow map with respect to the
/// initial condition, via the variational equation `dJ/dt = Du(x(t)) J`,
/// `J(0) = I`.
pub fn flow_with_jacobian(
    field: &FieldExpr,
    start: &[f64],
    t: f64,
    manifold: &Manifold,
    opts: &IntegratorOptions,
) -> Result<(Vec<f64>, DMatrix<f64>), FlowError> {
    check_point_dim(field, start, manifold)?;
    opts.validate()?;
    if t < 0.0 {
        return Err(FlowError::NegativeDuration(t));
    }
    let n = manifold.dim();
    let start = manifold.canonical(start);
    if let Some(c) = field.as_constant() {
        let mut y = start;
        for (yi, ci) in y.iter_mut().zip(&c) {
            *yi += t * ci;
        }
        manifold.canonicalize(&mut y);
        return Ok((y, DMatrix::identity(n, n)));
    }

    let sym_jac = field.symbolic_jacobian();
    let mut jac_buf = vec![0.0; n * n];
    let mut aug = vec![0.0; n + n * n];
    aug[..n].copy_from_slice(&start);
    for i in 0..n {
        aug[n + i * n + i] = 1.0;
    }

    let mut rhs = |y: &[f64], out: &mut [f64]| -> Result<(), FlowError> {
        let (x, j) = y.split_at(n);
        field.eval_into(x, &mut out[..n])?;
        sym_jac.eval_into(x, &mut jac_buf)?;
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for s in 0..n {
                    acc += jac_buf[r * n + s] * j[s * n + c];
                }
                out[n + r * n + c] = acc;
            }
        }
        Ok(())
    };
    run_integrator(&mut rhs, &mut aug, t, opts)?;

    let mut x = aug[..n].to_vec();
    manifold.canonicalize(&mut x);
    let jac = DMatrix::from_fn(n, n, |r, c| aug[n + r * n + c]);
    Ok((x, jac))
}

/// Jacobian of `start -> flow(t, start)`.
pub fn flow_jacobian_ic(
    field: &FieldExpr,
    start: &[f64],
    t: f64,
    manifold: &Manifold,
    opts: &IntegratorOptions,
) -> Result<DMatrix<f64>, FlowError> {
    flow_with_jacobian(field, start, t, manifold, opts).map(|(_, j)| j)
}

/// Jacobian of the fixed-total-time endpoint map with respect to the `m`
/// free switching times.
///
/// With legs `l = 1..m` driven by `states[l]` for `times[l]` and a final leg
/// driven by `states[m+1]` for the remaining `total_time - sum(times)`,
/// column `l` is `J_(l->end) u_(i_l)(x_l) - u_(i_(m+1))(endpoint)`, where
/// `x_l` is the state at the end of leg `l` and `J_(l->end)` chains the
/// per-leg variational Jacobians of all later legs.
///
/// The Jacobian of the unconstrained map with `m + 1` free times is the same
/// computation on an `(m + 1)`-leg instance whose total time exceeds the leg
/// sum by the intended last-leg duration.
pub fn endpoint_time_jacobian(
    fields: &[FieldExpr],
    states: &[usize],
    times: &[f64],
    total_time: f64,
    start: &[f64],
    manifold: &Manifold,
    opts: &IntegratorOptions,
) -> Result<DMatrix<f64>, FlowError> {
    let m = times.len();
    if states.len() != m + 1 {
        return Err(FlowError::Dimension {
            what: format!("need {} states for {} free times", m + 1, m),
        });
    }
    for &s in states {
        if s >= fields.len() {
            return Err(FlowError::BadStateIndex {
                index: s,
                count: fields.len(),
            });
        }
    }
    for &tl in times {
        if tl <= 0.0 {
            return Err(FlowError::NonPositiveLegDuration(tl));
        }
    }
    let sum: f64 = times.iter().sum();
    if sum >= total_time {
        return Err(FlowError::DomainViolation {
            sum,
            total: total_time,
        });
    }
    let n = manifold.dim();

    let mut x = manifold.canonical(start);
    let mut leg_jacs = Vec::with_capacity(m);
    let mut u_at_end = Vec::with_capacity(m);
    for l in 0..m {
        let (x_next, jac) = flow_with_jacobian(&fields[states[l]], &x, times[l], manifold, opts)?;
        u_at_end.push(DVector::from_vec(fields[states[l]].eval(&x_next)?));
        leg_jacs.push(jac);
        x = x_next;
    }
    let (endpoint, j_last) =
        flow_with_jacobian(&fields[states[m]], &x, total_time - sum, manifold, opts)?;
    let u_last = DVector::from_vec(fields[states[m]].eval(&endpoint)?);

    let mut cols = DMatrix::zeros(n, m);
    let mut chain = j_last;
    for l in (0..m).rev() {
        let col = &chain * &u_at_end[l] - &u_last;
        cols.set_column(l, &col);
        if l > 0 {
            chain *= &leg_jacs[l];
        }
    }
    Ok(cols)
}

/// Whether the endpoint map is regular (full-rank differential in the
/// switching times) at the given leg times. Returns the flag and the rank.
#[allow(clippy::too_many_arguments)]
pub fn is_regular_point(
    fields: &[FieldExpr],
    states: &[usize],
    times: &[f64],
    total_time: f64,
    start: &[f64],
    manifold: &Manifold,
    tol: f64,
    opts: &IntegratorOptions,
) -> Result<(bool, usize), FlowError> {
    let jac = endpoint_time_jacobian(fields, states, times, total_time, start, manifold, opts)?;
    let cols: Vec<Vec<f64>> = (0..jac.ncols())
        .map(|c| jac.column(c).iter().copied().collect())
        .collect();
    let (rank, _) = lie::span_rank(&cols, tol);
    Ok((rank == manifold.dim(), rank))
}
