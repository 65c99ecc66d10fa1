//! Shared helpers for the integration suites: seeded random fields, points,
//! and independent finite-difference oracles. The oracles use only
//! `FieldExpr::eval` and `flow::composite_flow`, so they stay independent of
//! the symbolic-derivative and variational code paths they check.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchode::expr::{Expr, FieldExpr};
use switchode::flow::{self, IntegratorOptions, Manifold};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn c(v: f64) -> Expr {
    Expr::Const(v)
}

fn add(a: Expr, b: Expr) -> Expr {
    Expr::Add(Box::new(a), Box::new(b))
}

fn mul(a: Expr, b: Expr) -> Expr {
    Expr::Mul(Box::new(a), Box::new(b))
}

/// Bounded smooth field: constants plus sin/cos of single coordinates with
/// coefficients in [-1, 1]. Globally bounded, hence forward complete.
pub fn random_trig_field(rng: &mut ChaCha8Rng, n: usize) -> FieldExpr {
    let mut components = Vec::with_capacity(n);
    for _ in 0..n {
        let mut e = c(rng.random_range(-1.0..1.0));
        for j in 0..n {
            let trig = if rng.random::<bool>() {
                Expr::Sin(Box::new(Expr::Coord(j)))
            } else {
                Expr::Cos(Box::new(Expr::Coord(j)))
            };
            e = add(e, mul(c(rng.random_range(-1.0..1.0)), trig));
        }
        components.push(e);
    }
    FieldExpr::from_components(components, n).unwrap()
}

/// Polynomial (degree <= 2) plus optional trig terms, coefficients in
/// [-1, 1]; well scaled on points in [-1, 1]^n.
pub fn random_poly_trig_field(rng: &mut ChaCha8Rng, n: usize) -> FieldExpr {
    let mut components = Vec::with_capacity(n);
    for _ in 0..n {
        let mut e = c(rng.random_range(-1.0..1.0));
        for j in 0..n {
            e = add(e, mul(c(rng.random_range(-1.0..1.0)), Expr::Coord(j)));
            if rng.random::<f64>() < 0.5 {
                let k = rng.random_range(0..n);
                e = add(
                    e,
                    mul(
                        c(rng.random_range(-1.0..1.0)),
                        mul(Expr::Coord(j), Expr::Coord(k)),
                    ),
                );
            }
        }
        if rng.random::<f64>() < 0.5 {
            let j = rng.random_range(0..n);
            e = add(
                e,
                mul(
                    c(rng.random_range(-1.0..1.0)),
                    Expr::Sin(Box::new(Expr::Coord(j))),
                ),
            );
        }
        components.push(e);
    }
    FieldExpr::from_components(components, n).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn lorenz_field(r: f64) -> FieldExpr {
    let mut params = std::collections::BTreeMap::new();
    params.insert("r".to_string(), r);
    switchode::expr::parse_field("10*(x2-x1); r*x1-x2-x1*x3; x1*x2-(8/3)*x3", 3, &params).unwrap()
}

pub fn lorenz_pair() -> Vec<FieldExpr> {
    vec![lorenz_field(28.0), lorenz_field(27.0)]
}

/// Central finite-difference Jacobian built from `eval` alone.
pub fn fd_jacobian(f: &FieldExpr, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = f.dim();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = f.eval(&xp).unwrap();
        let fm = f.eval(&xm).unwrap();
        for k in 0..n {
            m[(k, j)] = (fp[k] - fm[k]) / (2.0 * h);
        }
    }
    m
}

/// Finite-difference bracket oracle: `Dv u - Du v` with both Jacobians from
/// central differences.
pub fn fd_bracket(u: &FieldExpr, v: &FieldExpr, x: &[f64], h: f64) -> Vec<f64> {
    let du = fd_jacobian(u, x, h);
    let dv = fd_jacobian(v, x, h);
    let ux = u.eval(x).unwrap();
    let vx = v.eval(x).unwrap();
    let n = u.dim();
    (0..n)
        .map(|k| {
            (0..n)
                .map(|j| dv[(k, j)] * ux[j] - du[(k, j)] * vx[j])
                .sum()
        })
        .collect()
}

/// Central finite differences of the fixed-total-time endpoint map in the
/// free switching times, built from `composite_flow` alone. Column `l`
/// perturbs `times[l]` and compensates on the dependent last leg.
#[allow(clippy::too_many_arguments)]
pub fn fd_endpoint_time_jacobian(
    fields: &[FieldExpr],
    states: &[usize],
    times: &[f64],
    total_time: f64,
    start: &[f64],
    manifold: &Manifold,
    opts: &IntegratorOptions,
    h: f64,
) -> DMatrix<f64> {
    let m = times.len();
    let n = manifold.dim();
    let sum: f64 = times.iter().sum();
    let mut base: Vec<f64> = times.to_vec();
    base.push(total_time - sum);
    let mut out = DMatrix::zeros(n, m);
    for l in 0..m {
        let mut dp = base.clone();
        let mut dm = base.clone();
        dp[l] += h;
        dp[m] -= h;
        dm[l] -= h;
        dm[m] += h;
        let fp = flow::composite_flow(fields, states, &dp, start, manifold, opts).unwrap();
        let fm = flow::composite_flow(fields, states, &dm, start, manifold, opts).unwrap();
        for k in 0..n {
            out[(k, l)] = (fp[k] - fm[k]) / (2.0 * h);
        }
    }
    out
}

/// Kolmogorov-Smirnov statistic of `samples` against the Exp(rate) law.
pub fn ks_exponential(samples: &mut [f64], rate: f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let cdf = 1.0 - (-rate * x).exp();
        let hi = (i as f64 + 1.0) / n;
        let lo = i as f64 / n;
        ks = ks.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    ks
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
