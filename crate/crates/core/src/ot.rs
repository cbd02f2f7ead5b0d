//! Empirical distributions over support points and entropic-regularized
//! optimal transport between them.
//!
//! The ground cost is `d(z, z') = 0.5 * |z - z'|^2`. [`sinkhorn`] runs
//! log-domain iterations and reports the unregularized transport cost
//! `<C, plan>` of the regularized plan.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoders::EncoderOutput;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DocDistribution {
    pub doc_id: String,
    /// `N x d`, one support point per row.
    pub support: Array2<f64>,
    pub weights: Array1<f64>,
}

impl DocDistribution {
    /// Uniform weights over the given points.
    pub fn uniform(doc_id: impl Into<String>, support: Array2<f64>) -> Result<Self> {
        let n = support.nrows();
        if n == 0 {
            return Err(Error::Internal(
                "distribution needs at least one support point".into(),
            ));
        }
        Ok(DocDistribution {
            doc_id: doc_id.into(),
            support,
            weights: Array1::from_elem(n, 1.0 / n as f64),
        })
    }

    pub fn len(&self) -> usize {
        self.support.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.support.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    /// Compensated (Neumaier) sum of the weights.
    pub fn total_weight(&self) -> f64 {
        neumaier_sum(self.weights.iter().copied())
    }
}

pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn make_distribution(enc: &EncoderOutput) -> Result<DocDistribution> {
    DocDistribution::uniform(enc.doc_id.clone(), enc.support.clone())
}

/// Pairwise `0.5 * |a_i - b_j|^2`.
pub fn pairwise_cost(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Validation(format!(
            "support dimensions differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    // direct differences: exact zeros on coincident points and exact symmetry
    Ok(Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        0.5 * a
            .row(i)
            .iter()
            .zip(b.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    }))
}

pub fn cost_matrix(mu: &DocDistribution, nu: &DocDistribution) -> Result<Array2<f64>> {
    pairwise_cost(mu.support.view(), nu.support.view())
}

/// How the entropic regularization strength is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Epsilon {
    /// A fixed value.
    Absolute(f64),
    /// `scale * mean(C)` per pair.
    MeanScaled(f64),
    /// `scale * max(C)` per pair.
    MaxScaled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: Epsilon,
    pub max_iters: usize,
    /// Stop once the largest marginal violation falls below this.
    pub tolerance: f64,
}

pub const DEFAULT_EPSILON_SCALE: f64 = 0.1;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: Epsilon::MeanScaled(DEFAULT_EPSILON_SCALE),
            max_iters: DEFAULT_MAX_ITERS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        let eps = match self.epsilon {
            Epsilon::Absolute(v) | Epsilon::MeanScaled(v) | Epsilon::MaxScaled(v) => v,
        };
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!(
                "Sinkhorn epsilon must be positive, got {eps}"
            )));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("Sinkhorn tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("Sinkhorn max_iters must be positive".into()));
        }
        Ok(())
    }

    /// Resolve the regularization strength for a cost matrix. A zero cost
    /// matrix falls back to the raw scale so the kernel stays defined.
    pub fn resolve_epsilon(&self, cost: &Array2<f64>) -> f64 {
        let eps = match self.epsilon {
            Epsilon::Absolute(v) => v,
            Epsilon::MeanScaled(s) => s * cost.mean().unwrap_or(0.0),
            Epsilon::MaxScaled(s) => s * cost.iter().cloned().fold(0.0, f64::max),
        };
        if eps > 0.0 {
            eps
        } else {
            match self.epsilon {
                Epsilon::Absolute(v) | Epsilon::MeanScaled(v) | Epsilon::MaxScaled(v) => v,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub plan: Array2<f64>,
    /// `<C, plan>`, without the entropy term.
    pub cost: f64,
    pub epsilon: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Largest row- or column-marginal deviation of the returned plan.
    pub marginal_violation: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn sinkhorn(
    mu: &DocDistribution,
    nu: &DocDistribution,
    cfg: &SinkhornConfig,
) -> Result<TransportResult> {
    let cost = cost_matrix(mu, nu)?;
    sinkhorn_with_cost(&cost, &mu.weights, &nu.weights, cfg)
}

/// Log-domain Sinkhorn on an explicit cost matrix.
pub fn sinkhorn_with_cost(
    cost: &Array2<f64>,
    u: &Array1<f64>,
    v: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportResult> {
    cfg.validate()?;
    let (n1, n2) = cost.dim();
    if u.len() != n1 || v.len() != n2 {
        return Err(Error::Validation(format!(
            "weights ({}, {}) do not match cost matrix {n1}x{n2}",
            u.len(),
            v.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical(
            "cost matrix contains non-finite entries".into(),
        ));
    }
    // Solve in one fixed orientation of the pair so swapping the arguments
    // replays the same arithmetic and only transposes the plan.
    if transpose_first(cost, u, v) {
        let mut r = solve(&cost.t().to_owned(), v, u, cfg)?;
        r.plan = r.plan.reversed_axes();
        return Ok(r);
    }
    solve(cost, u, v, cfg)
}

fn transpose_first(cost: &Array2<f64>, u: &Array1<f64>, v: &Array1<f64>) -> bool {
    let (n1, n2) = cost.dim();
    if n1 != n2 {
        return n1 > n2;
    }
    let ordering = cost
        .iter()
        .zip(cost.t().iter())
        .chain(u.iter().zip(v.iter()))
        .map(|(a, b)| a.total_cmp(b))
        .find(|o| o.is_ne());
    ordering == Some(std::cmp::Ordering::Greater)
}

fn solve(
    cost: &Array2<f64>,
    u: &Array1<f64>,
    v: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<TransportResult> {
    let (n1, n2) = cost.dim();
    let eps = cfg.resolve_epsilon(cost);
    // dual potentials in cost units, carried across the epsilon stages
    let mut f = Array1::<f64>::zeros(n1);
    let mut g = Array1::<f64>::zeros(n2);
    let mut iterations = 0;
    let mut converged = false;
    let mut scratch = (Array2::zeros((n1, n2)), Array2::zeros((n2, n1)));
    let schedule = epsilon_schedule(cost, eps);
    for (s, &stage_eps) in schedule.iter().enumerate() {
        let last = s + 1 == schedule.len();
        let tol = if last {
            cfg.tolerance
        } else {
            cfg.tolerance.max(STAGE_TOLERANCE)
        };
        let budget = cfg.max_iters - iterations;
        let (used, ok) = sinkhorn_stage(
            cost,
            stage_eps,
            (u, v),
            (&mut f, &mut g),
            tol,
            budget,
            (&mut scratch.0, &mut scratch.1),
        );
        iterations += used;
        if last {
            converged = ok;
        }
        if iterations >= cfg.max_iters && !last {
            // out of budget before reaching the target: finish with one
            // pass at the target so the plan has the requested marginals
            let (_, ok) = sinkhorn_stage(
                cost,
                eps,
                (u, v),
                (&mut f, &mut g),
                cfg.tolerance,
                1,
                (&mut scratch.0, &mut scratch.1),
            );
            converged = ok;
            break;
        }
    }

    let mut plan = Array2::zeros((n1, n2));
    for ((i, j), p) in plan.indexed_iter_mut() {
        *p = ((f[i] + g[j] - cost[[i, j]]) / eps).exp();
    }
    let total: f64 = neumaier_sum(plan.iter().zip(cost.iter()).map(|(p, c)| p * c));
    let col_violation = plan
        .sum_axis(Axis(0))
        .iter()
        .zip(v)
        .map(|(s, vj)| (s - vj).abs())
        .fold(0.0, f64::max);
    let row_violation = plan
        .sum_axis(Axis(1))
        .iter()
        .zip(u)
        .map(|(s, ui)| (s - ui).abs())
        .fold(0.0, f64::max);
    if !total.is_finite() {
        return Err(Error::Numerical("transport cost is not finite".into()));
    }
    Ok(TransportResult {
        plan,
        cost: total.max(0.0),
        epsilon: eps,
        iterations_used: iterations,
        converged,
        marginal_violation: row_violation.max(col_violation),
    })
}

/// Regularization strengths visited before `eps` itself: halving from the
/// largest cost so small targets start from a warm, well-conditioned plan.
fn epsilon_schedule(cost: &Array2<f64>, eps: f64) -> Vec<f64> {
    let top = cost.iter().cloned().fold(0.0, f64::max);
    let mut stages = Vec::new();
    let mut e = top;
    while e > eps * (1.0 / EPSILON_DECAY) {
        stages.push(e);
        e *= EPSILON_DECAY;
    }
    stages.push(eps);
    stages
}

const EPSILON_DECAY: f64 = 0.5;
/// Intermediate stages only need a rough plan.
const STAGE_TOLERANCE: f64 = 1e-3;

/// Scalings beyond this magnitude are folded back into the potentials.
const ABSORB_LIMIT: f64 = 1e100;

/// Sinkhorn updates at a fixed `eps`, starting from the given potentials.
/// Iterates on multiplicative scalings of the kernel `exp((f + g - C) / eps)`
/// and folds them into the log potentials when they grow large, falling back
/// to a log-domain update if a marginal underflows. Returns the updates spent
/// and whether the row marginals met `tol`; column marginals are exact after
/// every column update.
fn sinkhorn_stage(
    cost: &Array2<f64>,
    eps: f64,
    (u, v): (&Array1<f64>, &Array1<f64>),
    (f, g): (&mut Array1<f64>, &mut Array1<f64>),
    tol: f64,
    budget: usize,
    (k, kt): (&mut Array2<f64>, &mut Array2<f64>),
) -> (usize, bool) {
    let (n1, n2) = cost.dim();
    let rebuild = |k: &mut Array2<f64>, kt: &mut Array2<f64>, f: &Array1<f64>, g: &Array1<f64>| {
        for ((i, j), kij) in k.indexed_iter_mut() {
            *kij = ((f[i] + g[j] - cost[[i, j]]) / eps).exp();
        }
        kt.assign(&k.t());
    };
    let absorb =
        |f: &mut Array1<f64>, g: &mut Array1<f64>, a: &mut Array1<f64>, b: &mut Array1<f64>| {
            f.zip_mut_with(a, |fi, ai| *fi += eps * ai.ln());
            g.zip_mut_with(b, |gj, bj| *gj += eps * bj.ln());
            a.fill(1.0);
            b.fill(1.0);
        };
    let usable = |x: &Array1<f64>| x.iter().all(|&s| s > 0.0 && s.is_finite());
    rebuild(k, kt, f, g);
    let mut a = Array1::<f64>::ones(n1);
    let mut b = Array1::<f64>::ones(n2);
    let mut used = 0;
    loop {
        let rows = k.dot(&b);
        let violation = (0..n1)
            .map(|i| (a[i] * rows[i] - u[i]).abs())
            .fold(0.0, f64::max);
        if used > 0 && violation < tol {
            absorb(f, g, &mut a, &mut b);
            return (used, true);
        }
        if used >= budget {
            absorb(f, g, &mut a, &mut b);
            return (used, false);
        }
        used += 1;
        if usable(&rows) {
            a = u / &rows;
            let cols = kt.dot(&a);
            if usable(&cols) {
                b = v / &cols;
                if a.iter()
                    .chain(b.iter())
                    .all(|&s| s < ABSORB_LIMIT && s > 1.0 / ABSORB_LIMIT)
                {
                    continue;
                }
                absorb(f, g, &mut a, &mut b);
                rebuild(k, kt, f, g);
                continue;
            }
        }
        // a marginal underflowed: redo this update in the log domain
        a.fill(1.0);
        b.fill(1.0);
        log_update(cost, eps, (u, v), (f, g));
        rebuild(k, kt, f, g);
    }
}

/// One alternating update of the potentials, entirely in the log domain.
fn log_update(
    cost: &Array2<f64>,
    eps: f64,
    (u, v): (&Array1<f64>, &Array1<f64>),
    (f, g): (&mut Array1<f64>, &mut Array1<f64>),
) {
    for (i, row) in cost.rows().into_iter().enumerate() {
        f[i] =
            eps * (u[i].ln() - log_sum_exp(row.iter().zip(g.iter()).map(|(c, gj)| (gj - c) / eps)));
    }
    for (j, col) in cost.columns().into_iter().enumerate() {
        g[j] =
            eps * (v[j].ln() - log_sum_exp(col.iter().zip(f.iter()).map(|(c, fi)| (fi - c) / eps)));
    }
}

/// Gradients of the transport cost with respect to both supports, holding
/// the plan fixed: `dW/dz1_i = sum_j P_ij (z1_i - z2_j)` and symmetrically.
pub fn wasserstein_grad(
    result: &TransportResult,
    mu: &DocDistribution,
    nu: &DocDistribution,
) -> (Array2<f64>, Array2<f64>) {
    support_grads(&result.plan, mu.support.view(), nu.support.view())
}

pub fn support_grads(
    plan: &Array2<f64>,
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let row_mass = plan.sum_axis(Axis(1)).insert_axis(Axis(1));
    let col_mass = plan.sum_axis(Axis(0)).insert_axis(Axis(1));
    let ga = &a * &row_mass - plan.dot(&b);
    let gb = &b * &col_mass - plan.t().dot(&a);
    (ga, gb)
}
