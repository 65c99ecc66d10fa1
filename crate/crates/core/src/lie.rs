//! Iterated Lie brackets of a vector-field family and pointwise rank checks
//! for the two hypoellipticity conditions.
//!
//! Condition B asks whether the evaluations at a point of the Lie algebra
//! generated by the family span the whole tangent space. Condition A asks the
//! same for the smaller algebra built from the derived algebra (brackets of
//! depth at least two) plus zero-sum combinations of the generators, i.e.
//! spans of the pairwise differences `u_i - u_1`.
//!
//! Generation is right-normed: every new element has the shape `[u_j, B]`
//! with `u_j` a generator and `B` a previously produced element. By the
//! Jacobi identity these span the generated algebra linearly, and the ones of
//! depth >= 2 span the derived algebra, so nothing is lost relative to
//! all-pairs bracketing while the element count stays small. Elements whose
//! bracket simplifies to the literal zero field are kept for auditing but
//! marked dead and never re-bracketed.
//!
//! A rank plateau below full dimension does not certify failure: pointwise
//! dimensions can still grow at higher depth. The checks therefore return a
//! tri-state verdict, and report exact failure only when generation
//! saturated: some depth produced no live element, so every deeper bracket is
//! identically zero and the evaluated spanning set is complete.

use std::fmt;

use nalgebra::DMatrix;
use serde::ser::{Serialize, SerializeStruct, Serializer};
use thiserror::Error;

use crate::expr::{ExprError, FieldExpr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("fields have mismatched dimensions: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("bracket family must be nonempty")]
    EmptyFamily,
    #[error("depth cap must be at least 1")]
    BadDepthCap,
    #[error("point has dimension {got}, fields expect {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] ExprError),
}

/// The Lie bracket `[u, v]`, computed symbolically in coordinates as
/// `[u,v]^k = sum_j (u^j d_j v^k - v^j d_j u^k)`, then simplified.
pub fn bracket(u: &FieldExpr, v: &FieldExpr) -> Result<FieldExpr, LieError> {
    use crate::expr::Expr;
    if u.dim() != v.dim() {
        return Err(LieError::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let n = u.dim();
    let du: Vec<FieldExpr> = (0..n).map(|j| u.partial(j)).collect();
    let dv: Vec<FieldExpr> = (0..n).map(|j| v.partial(j)).collect();
    let mut components = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Expr::Const(0.0);
        for j in 0..n {
            let push = Expr::Mul(
                Box::new(u.components()[j].clone()),
                Box::new(dv[j].components()[k].clone()),
            );
            let pull = Expr::Mul(
                Box::new(v.components()[j].clone()),
                Box::new(du[j].components()[k].clone()),
            );
            acc = Expr::Add(
                Box::new(acc),
                Box::new(Expr::Sub(Box::new(push), Box::new(pull))),
            );
        }
        components.push(acc);
    }
    Ok(FieldExpr::from_components(components, n)
        .expect("bracket components match input dimension")
        .simplify())
}

/// Shape of an iterated bracket over generator indices (0-based leaves).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BracketTree {
    Leaf(usize),
    Node(Box<BracketTree>, Box<BracketTree>),
}

impl fmt::Display for BracketTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BracketTree::Leaf(i) => write!(f, "u{}", i + 1),
            BracketTree::Node(a, b) => write!(f, "[{a},{b}]"),
        }
    }
}

/// One iterated bracket: its shape, depth (leaf = 1), symbolic field, and
/// whether that field is syntactically nonzero.
#[derive(Debug, Clone)]
pub struct BracketElement {
    pub tree: BracketTree,
    pub depth: usize,
    pub expr: FieldExpr,
    pub live: bool,
}

#[derive(Debug, Clone)]
pub struct BracketGenOptions {
    pub depth_cap: usize,
    pub element_cap: usize,
}

impl Default for BracketGenOptions {
    fn default() -> Self {
        BracketGenOptions {
            depth_cap: 4,
            element_cap: 5000,
        }
    }
}

/// Output of [`generate_brackets`]: the elements plus generation audit data.
#[derive(Debug, Clone)]
pub struct BracketFamily {
    pub elements: Vec<BracketElement>,
    /// First depth at which no live element exists. When set (and generation
    /// was not truncated) every bracket of any higher depth is identically
    /// zero, so the family is complete.
    pub saturation_depth: Option<usize>,
    /// True when the element cap stopped generation early.
    pub truncated: bool,
    /// Deepest depth actually generated.
    pub max_depth: usize,
}

impl BracketFamily {
    pub fn live(&self) -> impl Iterator<Item = &BracketElement> {
        self.elements.iter().filter(|e| e.live)
    }
}

/// Generates leaves plus all right-normed brackets `[u_j, B]` up to
/// `depth_cap`, skipping dead (syntactically zero) elements as bracket
/// operands.
pub fn generate_brackets(
    family: &[FieldExpr],
    opts: &BracketGenOptions,
) -> Result<BracketFamily, LieError> {
    if family.is_empty() {
        return Err(LieError::EmptyFamily);
    }
    if opts.depth_cap < 1 {
        return Err(LieError::BadDepthCap);
    }
    let n = family[0].dim();
    for f in family {
        if f.dim() != n {
            return Err(LieError::DimensionMismatch {
                left: n,
                right: f.dim(),
            });
        }
    }

    let generators: Vec<FieldExpr> = family.iter().map(|f| f.simplify()).collect();
    let mut elements: Vec<BracketElement> = generators
        .iter()
        .enumerate()
        .map(|(i, g)| BracketElement {
            tree: BracketTree::Leaf(i),
            depth: 1,
            expr: g.clone(),
            live: !g.is_syntactically_zero(),
        })
        .collect();

    let mut truncated = false;
    let mut saturation_depth = None;
    let mut max_depth = 1;

    if !elements.iter().any(|e| e.live) {
        saturation_depth = Some(1);
    } else {
        'depths: for d in 2..=opts.depth_cap {
            let frontier: Vec<(BracketTree, FieldExpr)> = elements
                .iter()
                .filter(|e| e.live && e.depth == d - 1)
                .map(|e| (e.tree.clone(), e.expr.clone()))
                .collect();
            if frontier.is_empty() {
                break;
            }
            let mut any_live = false;
            for (tree, expr) in &frontier {
                for (j, g) in generators.iter().enumerate() {
                    if elements.len() >= opts.element_cap {
                        log::warn!(
                            "bracket generation stopped at {} elements (cap {})",
                            elements.len(),
                            opts.element_cap
                        );
                        truncated = true;
                        max_depth = d;
                        break 'depths;
                    }
                    let b = bracket(g, expr)?;
                    let live = !b.is_syntactically_zero();
                    any_live |= live;
                    elements.push(BracketElement {
                        tree: BracketTree::Node(
                            Box::new(BracketTree::Leaf(j)),
                            Box::new(tree.clone()),
                        ),
                        depth: d,
                        expr: b,
                        live,
                    });
                }
            }
            max_depth = d;
            if !any_live {
                saturation_depth = Some(d);
                break;
            }
        }
    }

    Ok(BracketFamily {
        elements,
        saturation_depth,
        truncated,
        max_depth,
    })
}

/// Numerical rank of a list of vectors: the count of singular values above
/// `tol` times the largest one. Returns the singular values in descending
/// order. An empty or all-zero input has rank 0.
pub fn span_rank(vectors: &[Vec<f64>], tol: f64) -> (usize, Vec<f64>) {
    assert!(tol > 0.0, "rank tolerance must be positive");
    if vectors.is_empty() {
        return (0, Vec::new());
    }
    let n = vectors[0].len();
    assert!(
        vectors.iter().all(|v| v.len() == n),
        "rank vectors must share one dimension"
    );
    let m = DMatrix::from_fn(n, vectors.len(), |r, c| vectors[c][r]);
    let mut sv: Vec<f64> = m
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    let smax = sv[0];
    let rank = if smax > 0.0 {
        sv.iter().filter(|&&s| s > tol * smax).count()
    } else {
        0
    };
    (rank, sv)
}

/// Which hypoellipticity condition a report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    A,
    B,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::A => f.write_str("A"),
            Condition::B => f.write_str("B"),
        }
    }
}

/// Tri-state outcome of a condition check at one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Full rank reached; `at_depth` is the smallest depth where it happens.
    Holds { at_depth: usize },
    /// Rank still deficient at the cap, with live elements left unexplored.
    NotVerified { up_to_depth: usize },
    /// Rank deficient and the bracket family saturated exactly: every
    /// omitted element is syntactically zero.
    FailsExactly,
}

#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub condition: Condition,
    pub point: Vec<f64>,
    pub verdict: Verdict,
    /// Depth relevant to the verdict: first full-rank depth for `Holds`, the
    /// explored cap for `NotVerified`, the saturation depth for `FailsExactly`.
    pub depth: usize,
    pub rank: usize,
    /// Descending singular values of the spanning set behind `rank`.
    pub singular_values: Vec<f64>,
    /// Descriptors (e.g. `[u1,[u1,u2]]` or `u2-u1`) of a subset whose
    /// evaluations achieve `rank`.
    pub spanning_certificate: Vec<String>,
}

impl ConditionReport {
    pub fn holds(&self) -> bool {
        matches!(self.verdict, Verdict::Holds { .. })
    }
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.verdict {
            Verdict::Holds { at_depth } => write!(
                f,
                "condition {} holds at depth {} (rank {})",
                self.condition, at_depth, self.rank
            ),
            Verdict::NotVerified { up_to_depth } => write!(
                f,
                "condition {} not verified up to depth {} (rank {})",
                self.condition, up_to_depth, self.rank
            ),
            Verdict::FailsExactly => write!(
                f,
                "condition {} fails exactly (rank {})",
                self.condition, self.rank
            ),
        }
    }
}

impl Serialize for ConditionReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ConditionReport", 7)?;
        st.serialize_field("condition", &self.condition.to_string())?;
        st.serialize_field("point", &self.point)?;
        let verdict = match self.verdict {
            Verdict::Holds { .. } => "holds",
            Verdict::NotVerified { .. } => "not_verified",
            Verdict::FailsExactly => "fails_exactly",
        };
        st.serialize_field("verdict", verdict)?;
        st.serialize_field("depth", &self.depth)?;
        st.serialize_field("rank", &self.rank)?;
        st.serialize_field("singular_values", &self.singular_values)?;
        st.serialize_field("certificate", &self.spanning_certificate)?;
        st.end()
    }
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub depth_cap: usize,
    pub tol: f64,
    pub element_cap: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            depth_cap: 4,
            tol: 1e-9,
            element_cap: 5000,
        }
    }
}

struct Candidate {
    label: String,
    depth: usize,
    vector: Vec<f64>,
}

fn candidates_for(
    condition: Condition,
    family: &[FieldExpr],
    brackets: &BracketFamily,
    point: &[f64],
) -> Result<Vec<Candidate>, LieError> {
    let mut cands = Vec::new();
    if condition == Condition::A {
        // Zero-sum generator combinations are spanned by pairwise differences.
        let base = family[0].eval(point)?;
        for (i, f) in family.iter().enumerate().skip(1) {
            let v = f.eval(point)?;
            cands.push(Candidate {
                label: format!("u{}-u1", i + 1),
                depth: 1,
                vector: v.iter().zip(&base).map(|(a, b)| a - b).collect(),
            });
        }
    }
    let min_depth = match condition {
        Condition::A => 2,
        Condition::B => 1,
    };
    for el in brackets.live().filter(|e| e.depth >= min_depth) {
        cands.push(Candidate {
            label: el.tree.to_string(),
            depth: el.depth,
            vector: el.expr.eval(point)?,
        });
    }
    Ok(cands)
}

fn check_condition(
    condition: Condition,
    family: &[FieldExpr],
    point: &[f64],
    opts: &CheckOptions,
) -> Result<ConditionReport, LieError> {
    if family.is_empty() {
        return Err(LieError::EmptyFamily);
    }
    let n = family[0].dim();
    if point.len() != n {
        return Err(LieError::PointDimension {
            expected: n,
            got: point.len(),
        });
    }
    let brackets = generate_brackets(
        family,
        &BracketGenOptions {
            depth_cap: opts.depth_cap,
            element_cap: opts.element_cap,
        },
    )?;
    let cands = candidates_for(condition, family, &brackets, point)?;

    let mut verdict = None;
    let mut final_rank = 0;
    let mut final_sv = Vec::new();
    let mut final_depth = brackets.max_depth;
    for d in 1..=brackets.max_depth {
        let vectors: Vec<Vec<f64>> = cands
            .iter()
            .filter(|c| c.depth <= d)
            .map(|c| c.vector.clone())
            .collect();
        let (rank, sv) = span_rank(&vectors, opts.tol);
        final_rank = rank;
        final_sv = sv;
        if rank == n {
            verdict = Some(Verdict::Holds { at_depth: d });
            final_depth = d;
            break;
        }
    }
    let verdict = verdict.unwrap_or_else(|| {
        match brackets.saturation_depth {
            Some(d) if !brackets.truncated => {
                final_depth = d;
                Verdict::FailsExactly
            }
            _ => {
                // On cap truncation only max_depth was (partially) explored.
                final_depth = if brackets.truncated {
                    brackets.max_depth
                } else {
                    opts.depth_cap
                };
                Verdict::NotVerified {
                    up_to_depth: final_depth,
                }
            }
        }
    });

    // Greedy certificate: keep a candidate iff it raises the rank.
    let mut certificate = Vec::new();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for c in cands.iter().filter(|c| c.depth <= final_depth) {
        kept.push(c.vector.clone());
        let (r, _) = span_rank(&kept, opts.tol);
        if r > certificate.len() {
            certificate.push(c.label.clone());
        } else {
            kept.pop();
        }
        if certificate.len() == final_rank {
            break;
        }
    }

    Ok(ConditionReport {
        condition,
        point: point.to_vec(),
        verdict,
        depth: final_depth,
        rank: final_rank,
        singular_values: final_sv,
        spanning_certificate: certificate,
    })
}

/// Checks whether the zero-sum algebra (derived algebra plus zero-sum
/// generator combinations) spans the tangent space at `point`.
pub fn check_condition_a(
    family: &[FieldExpr],
    point: &[f64],
    opts: &CheckOptions,
) -> Result<ConditionReport, LieError> {
    check_condition(Condition::A, family, point, opts)
}

/// Checks whether the full generated Lie algebra spans the tangent space at
/// `point`.
pub fn check_condition_b(
    family: &[FieldExpr],
    point: &[f64],
    opts: &CheckOptions,
) -> Result<ConditionReport, LieError> {
    check_condition(Condition::B, family, point, opts)
}

/// Largest deviation of `f` from 1-periodicity, sampled on a uniform grid
/// with `grid_per_axis` points per axis: `max |f(x + e_j) - f(x)|` over grid
/// points and axes. Intended as a torus sanity warning, not a proof.
pub fn periodicity_defect(f: &FieldExpr, grid_per_axis: usize) -> Result<f64, ExprError> {
    let n = f.dim();
    assert!(grid_per_axis >= 1);
    let total = (grid_per_axis as u64)
        .checked_pow(n as u32)
        .unwrap_or(u64::MAX);
    assert!(total <= 1_000_000, "periodicity grid too large");
    let mut idx = vec![0usize; n];
    let mut defect: f64 = 0.0;
    loop {
        let x: Vec<f64> = idx
            .iter()
            .map(|&i| i as f64 / grid_per_axis as f64)
            .collect();
        let fx = f.eval(&x)?;
        for j in 0..n {
            let mut y = x.clone();
            y[j] += 1.0;
            let fy = f.eval(&y)?;
            for (a, b) in fx.iter().zip(&fy) {
                defect = defect.max((a - b).abs());
            }
        }
        // advance multi-index
        let mut carry = true;
        for slot in idx.iter_mut() {
            if carry {
                *slot += 1;
                if *slot == grid_per_axis {
                    *slot = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }
    Ok(defect)
}
