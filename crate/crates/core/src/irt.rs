//! Unidimensional 3PL kernel: response curves, item information, likelihoods
//! and the two ability estimators (EAP for adaptive updates, WLE for
//! reference scoring).
//!
//! Everything here is a pure function of its inputs.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::ItemBank;

/// Bracket used by the WLE solver and the default quadrature range.
pub const THETA_MIN: f64 = -6.0;
pub const THETA_MAX: f64 = 6.0;

/// Default number of equally spaced quadrature nodes on [`THETA_MIN`, `THETA_MAX`].
pub const DEFAULT_QUADRATURE_NODES: usize = 81;

const WLE_TOLERANCE: f64 = 1e-8;
const WLE_MAX_ITERATIONS: usize = 100;
const WLE_SCAN_STEP: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrtError {
    #[error("unknown item identifier `{0}`")]
    UnknownItem(String),
    #[error("item `{0}` administered twice")]
    DuplicateItem(String),
    #[error("invalid item parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid quadrature grid: {0}")]
    InvalidGrid(String),
    #[error("posterior is numerically zero at every quadrature node")]
    DegeneratePosterior,
    #[error("ability estimation needs at least one response")]
    EmptyRecord,
    #[error("administered items carry no information")]
    NoInformation,
}

/// Discrimination `a`, difficulty `b` and guessing floor `c` of one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemParameters {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ItemParameters {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, IrtError> {
        let params = Self { a, b, c };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), IrtError> {
        if !(self.a.is_finite() && self.b.is_finite() && self.c.is_finite()) {
            return Err(IrtError::InvalidParameters(format!(
                "non-finite parameter in {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.c) {
            return Err(IrtError::InvalidParameters(format!(
                "guessing c = {} outside [0, 1)",
                self.c
            )));
        }
        Ok(())
    }

    /// Operational-bank rule: positive discrimination, |b| ≤ 4 and c ≤ 0.5.
    pub fn is_operational(&self) -> bool {
        self.a > 0.0 && self.b.abs() <= 4.0 && self.c <= 0.5
    }
}

/// Which Fisher information expression drives selection and standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoForm {
    /// `a² p (1 − p)` evaluated with the 3PL probability.
    #[default]
    Paper,
    /// Exact 3PL information `a² (q/p) ((p − c)/(1 − c))²`.
    Exact3pl,
}

impl std::str::FromStr for InfoForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Self::Paper),
            "exact3pl" => Ok(Self::Exact3pl),
            other => Err(format!("unknown information form `{other}` (paper|exact3pl)")),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Intermediate quantities of the 3PL at one ability value.
#[derive(Debug, Clone, Copy)]
struct Curve {
    /// logistic part σ(a(θ − b))
    s: f64,
    p: f64,
    q: f64,
    /// dp/dθ
    dp: f64,
}

#[inline]
fn curve(params: &ItemParameters, theta: f64) -> Curve {
    let z = params.a * (theta - params.b);
    let s = sigmoid(z);
    let s_comp = sigmoid(-z);
    let p = params.c + (1.0 - params.c) * s;
    let q = (1.0 - params.c) * s_comp;
    let dp = params.a * (1.0 - params.c) * s * s_comp;
    Curve { s, p, q, dp }
}

/// Item characteristic curve `c + (1 − c) / (1 + exp(−a(θ − b)))`.
pub fn icc_3pl(params: &ItemParameters, theta: f64) -> f64 {
    curve(params, theta).p
}

/// `(ln p, ln(1 − p))`, stable in both tails.
pub fn log_probs(params: &ItemParameters, theta: f64) -> (f64, f64) {
    let z = params.a * (theta - params.b);
    let ln_q = (1.0 - params.c).ln() - softplus(z);
    let ln_p = if params.c == 0.0 {
        -softplus(-z)
    } else {
        (params.c + (1.0 - params.c) * sigmoid(z)).ln()
    };
    (ln_p, ln_q)
}

pub fn fisher_info(params: &ItemParameters, theta: f64, form: InfoForm) -> f64 {
    if params.a == 0.0 {
        return 0.0;
    }
    let k = curve(params, theta);
    let a2 = params.a * params.a;
    match form {
        InfoForm::Paper => a2 * k.p * k.q,
        InfoForm::Exact3pl => {
            if k.p <= 0.0 {
                return 0.0;
            }
            a2 * (k.q / k.p) * k.s * k.s
        }
    }
}

/// Analytic `∂I/∂θ` for the selected information form.
pub fn info_derivative(params: &ItemParameters, theta: f64, form: InfoForm) -> f64 {
    if params.a == 0.0 {
        return 0.0;
    }
    let k = curve(params, theta);
    let a2 = params.a * params.a;
    match form {
        InfoForm::Paper => a2 * (1.0 - 2.0 * k.p) * k.dp,
        InfoForm::Exact3pl => {
            if k.p <= 0.0 {
                return 0.0;
            }
            // I = a² s² q / p with s' = a s (1 − s), q' = −p'
            let ds = params.a * k.s * (1.0 - k.s);
            a2 * (2.0 * k.s * ds * k.q / k.p - k.s * k.s * k.dp / k.p
                - k.s * k.s * k.q * k.dp / (k.p * k.p))
        }
    }
}

/// Discrete ability grid with a normalized prior.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self, IrtError> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(IrtError::InvalidGrid(format!(
                "{} nodes vs {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IrtError::InvalidGrid("nodes must be finite and strictly increasing".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(IrtError::InvalidGrid("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(IrtError::InvalidGrid("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { nodes, weights })
    }

    /// Equally spaced nodes on `[lo, hi]` weighted by the standard normal density.
    pub fn standard_normal(n: usize, lo: f64, hi: f64) -> Result<Self, IrtError> {
        if n < 2 || !(lo < hi) {
            return Err(IrtError::InvalidGrid(format!("need n ≥ 2 and lo < hi, got {n} on [{lo}, {hi}]")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        let weights = nodes.iter().map(|x| (-0.5 * x * x).exp()).collect();
        Self::new(nodes, weights)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self::standard_normal(DEFAULT_QUADRATURE_NODES, THETA_MIN, THETA_MAX)
            .expect("default grid is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimator {
    Eap,
    Wle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    pub theta: f64,
    /// Information-based standard error; `f64::INFINITY` when nothing informative was seen.
    pub se: f64,
    pub estimator: Estimator,
    pub items_used: usize,
    /// EAP only: standard deviation of the discrete posterior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior_sd: Option<f64>,
    /// WLE only: no interior root on the bracket, theta sits on an endpoint.
    #[serde(default)]
    pub saturated: bool,
}

impl AbilityEstimate {
    pub fn prior() -> Self {
        Self {
            theta: 0.0,
            se: f64::INFINITY,
            estimator: Estimator::Eap,
            items_used: 0,
            posterior_sd: Some(1.0),
            saturated: false,
        }
    }
}

/// Administered items in order, with the ability trajectory after each step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TestRecord {
    entries: Vec<(String, bool)>,
    trajectory: Vec<(f64, f64)>,
    #[serde(skip)]
    seen: HashSet<String>,
}

impl TestRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a record of responses without a trajectory (scoring use).
    pub fn from_responses<I, S>(responses: I) -> Result<Self, IrtError>
    where
        I: IntoIterator<Item = (S, bool)>,
        S: Into<String>,
    {
        let mut record = Self::new();
        for (id, y) in responses {
            record.push_response(id.into(), y)?;
        }
        Ok(record)
    }

    fn push_response(&mut self, item_id: String, response: bool) -> Result<(), IrtError> {
        if !self.seen.insert(item_id.clone()) {
            return Err(IrtError::DuplicateItem(item_id));
        }
        self.entries.push((item_id, response));
        Ok(())
    }

    /// Appends one administered item together with the estimate it produced.
    pub fn push(&mut self, item_id: impl Into<String>, response: bool, theta: f64, se: f64) -> Result<(), IrtError> {
        if self.trajectory.len() != self.entries.len() {
            return Err(IrtError::InvalidParameters(
                "record built without a trajectory cannot be extended step-wise".into(),
            ));
        }
        self.push_response(item_id.into(), response)?;
        self.trajectory.push((theta, se));
        Ok(())
    }

    pub fn entries(&self) -> &[(String, bool)] {
        &self.entries
    }

    pub fn trajectory(&self) -> &[(f64, f64)] {
        &self.trajectory
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.seen.contains(item_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    /// Resolves item identifiers against `bank`.
    pub fn resolve(&self, bank: &ItemBank) -> Result<Vec<(ItemParameters, bool)>, IrtError> {
        self.entries
            .iter()
            .map(|(id, y)| {
                bank.params(id)
                    .map(|p| (*p, *y))
                    .ok_or_else(|| IrtError::UnknownItem(id.clone()))
            })
            .collect()
    }
}

/// Bernoulli log-likelihood of a set of scored responses.
pub fn log_likelihood_of(responses: &[(ItemParameters, bool)], theta: f64) -> f64 {
    responses
        .iter()
        .map(|(params, y)| {
            let (lp, lq) = log_probs(params, theta);
            if *y {
                lp
            } else {
                lq
            }
        })
        .sum()
}

pub fn log_likelihood(record: &TestRecord, bank: &ItemBank, theta: f64) -> Result<f64, IrtError> {
    Ok(log_likelihood_of(&record.resolve(bank)?, theta))
}

pub fn total_info(responses: &[(ItemParameters, bool)], theta: f64, form: InfoForm) -> f64 {
    responses.iter().map(|(p, _)| fisher_info(p, theta, form)).sum()
}

/// `1/√ΣI`, or `f64::INFINITY` when the total information is zero.
pub fn se_of(responses: &[(ItemParameters, bool)], theta: f64, form: InfoForm) -> f64 {
    let info = total_info(responses, theta, form);
    if info > 0.0 {
        1.0 / info.sqrt()
    } else {
        f64::INFINITY
    }
}

pub fn se_from_info(record: &TestRecord, bank: &ItemBank, theta: f64, form: InfoForm) -> Result<f64, IrtError> {
    Ok(se_of(&record.resolve(bank)?, theta, form))
}

/// Posterior-mean ability on `grid`; `se` is the information-based standard error
/// at the posterior mean, the posterior SD is reported separately.
pub fn eap_of(
    responses: &[(ItemParameters, bool)],
    grid: &QuadratureGrid,
    form: InfoForm,
) -> Result<AbilityEstimate, IrtError> {
    let log_post: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(grid.weights())
        .map(|(&theta, &w)| {
            if w == 0.0 {
                f64::NEG_INFINITY
            } else {
                w.ln() + log_likelihood_of(responses, theta)
            }
        })
        .collect();
    let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(IrtError::DegeneratePosterior);
    }
    let mut mass = 0.0;
    let mut first = 0.0;
    let mut second = 0.0;
    for (&theta, &lp) in grid.nodes().iter().zip(&log_post) {
        let w = (lp - max).exp();
        mass += w;
        first += w * theta;
        second += w * theta * theta;
    }
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(IrtError::DegeneratePosterior);
    }
    let theta = first / mass;
    let var = (second / mass - theta * theta).max(0.0);
    Ok(AbilityEstimate {
        theta,
        se: se_of(responses, theta, form),
        estimator: Estimator::Eap,
        items_used: responses.len(),
        posterior_sd: Some(var.sqrt()),
        saturated: false,
    })
}

pub fn eap_estimate(
    record: &TestRecord,
    bank: &ItemBank,
    grid: &QuadratureGrid,
    form: InfoForm,
) -> Result<AbilityEstimate, IrtError> {
    eap_of(&record.resolve(bank)?, grid, form)
}

/// Log of the weighted likelihood `L(θ)·√I(θ)` maximized by WLE.
pub fn weighted_log_likelihood(responses: &[(ItemParameters, bool)], theta: f64, form: InfoForm) -> f64 {
    let info = total_info(responses, theta, form);
    log_likelihood_of(responses, theta) + 0.5 * info.ln()
}

/// Score of the log-likelihood plus the `J/(2I)` correction.
pub fn weighted_score(responses: &[(ItemParameters, bool)], theta: f64, form: InfoForm) -> f64 {
    let mut score = 0.0;
    let mut info = 0.0;
    let mut jacobian = 0.0;
    for (params, y) in responses {
        let k = curve(params, theta);
        let pq = k.p * k.q;
        if pq > 0.0 {
            let y = if *y { 1.0 } else { 0.0 };
            score += (y - k.p) * k.dp / pq;
        }
        info += fisher_info(params, theta, form);
        jacobian += info_derivative(params, theta, form);
    }
    if info > 0.0 {
        score + jacobian / (2.0 * info)
    } else {
        score
    }
}

/// Safeguarded Newton on a bracket `[lo, hi]` with `f(lo) > 0 > f(hi)`.
fn refine_root(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..WLE_MAX_ITERATIONS {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let h = 1e-6;
        let slope = (f(x + h) - f(x - h)) / (2.0 * h);
        let newton = x - fx / slope;
        let next = if slope.is_finite() && slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        if step < WLE_TOLERANCE || hi - lo < WLE_TOLERANCE {
            break;
        }
    }
    x
}

/// Warm's weighted likelihood estimate on `[THETA_MIN, THETA_MAX]`.
///
/// Every maximum of the weighted likelihood inside the bracket is located, the
/// highest one wins. When the weighted score keeps one sign toward an endpoint
/// that endpoint is also a candidate and, if chosen, the estimate is flagged
/// `saturated`.
pub fn wle_of(responses: &[(ItemParameters, bool)], form: InfoForm) -> Result<AbilityEstimate, IrtError> {
    if responses.is_empty() {
        return Err(IrtError::EmptyRecord);
    }
    if responses.iter().all(|(p, _)| p.a == 0.0) {
        return Err(IrtError::NoInformation);
    }
    let score = |t: f64| weighted_score(responses, t, form);
    let objective = |t: f64| weighted_log_likelihood(responses, t, form);

    let steps = ((THETA_MAX - THETA_MIN) / WLE_SCAN_STEP).round() as usize;
    let knots: Vec<f64> = (0..=steps)
        .map(|i| THETA_MIN + (THETA_MAX - THETA_MIN) * i as f64 / steps as f64)
        .collect();
    let values: Vec<f64> = knots.iter().map(|&t| score(t)).collect();

    let mut candidates: Vec<(f64, bool)> = Vec::new();
    for i in 0..steps {
        let (f0, f1) = (values[i], values[i + 1]);
        if f0 > 0.0 && f1 <= 0.0 {
            let root = if f1 == 0.0 { knots[i + 1] } else { refine_root(&score, knots[i], knots[i + 1]) };
            candidates.push((root, false));
        }
    }
    if values[0] < 0.0 {
        candidates.push((THETA_MIN, true));
    }
    if values[steps] > 0.0 {
        candidates.push((THETA_MAX, true));
    }
    if candidates.is_empty() {
        // score identically zero at the knots: fall back to the best knot
        let best = knots
            .iter()
            .cloned()
            .max_by(|x, y| objective(*x).total_cmp(&objective(*y)))
            .unwrap_or(0.0);
        candidates.push((best, false));
    }
    let (theta, saturated) = candidates
        .into_iter()
        .max_by(|x, y| objective(x.0).total_cmp(&objective(y.0)))
        .expect("at least one candidate");
    Ok(AbilityEstimate {
        theta,
        se: se_of(responses, theta, form),
        estimator: Estimator::Wle,
        items_used: responses.len(),
        posterior_sd: None,
        saturated,
    })
}

pub fn wle_estimate(record: &TestRecord, bank: &ItemBank, form: InfoForm) -> Result<AbilityEstimate, IrtError> {
    wle_of(&record.resolve(bank)?, form)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn item(a: f64, b: f64, c: f64) -> ItemParameters {
        ItemParameters::new(a, b, c).unwrap()
    }

    #[test]
    fn icc_examples() {
        assert_abs_diff_eq!(icc_3pl(&item(1.0, 0.0, 0.0), 0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(icc_3pl(&item(2.0, 1.0, 0.25), 1.0), 0.625, epsilon = 1e-15);
        // 0.2 + 0.8 / (1 + e^{-1.5})
        let oracle = 0.2 + 0.8 / (1.0 + (-1.5f64).exp());
        assert_abs_diff_eq!(icc_3pl(&item(1.5, -0.5, 0.2), 0.5), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(oracle, 0.85406, epsilon = 1e-5);
    }

    #[test]
    fn info_examples() {
        assert_eq!(fisher_info(&item(0.0, 3.0, 0.0), -1.3, InfoForm::Paper), 0.0);
        assert_eq!(fisher_info(&item(0.0, 3.0, 0.2), -1.3, InfoForm::Exact3pl), 0.0);
        assert_abs_diff_eq!(fisher_info(&item(1.0, 0.0, 0.0), 0.0, InfoForm::Paper), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(fisher_info(&item(2.0, 1.0, 0.25), 1.0, InfoForm::Paper), 0.9375, epsilon = 1e-15);
        // exact form at θ=b: a² (q/p) (1/2)² with p = 0.625
        let exact = 4.0 * (0.375 / 0.625) * 0.25;
        assert_abs_diff_eq!(fisher_info(&item(2.0, 1.0, 0.25), 1.0, InfoForm::Exact3pl), exact, epsilon = 1e-15);
        // the two forms agree when c = 0
        let p = item(1.3, 0.4, 0.0);
        for t in [-2.0, 0.0, 1.7] {
            assert_abs_diff_eq!(
                fisher_info(&p, t, InfoForm::Paper),
                fisher_info(&p, t, InfoForm::Exact3pl),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn info_derivative_examples() {
        assert_abs_diff_eq!(info_derivative(&item(1.0, 0.0, 0.0), 0.0, InfoForm::Paper), 0.0, epsilon = 1e-15);
        assert_eq!(info_derivative(&item(0.0, 0.0, 0.1), 0.7, InfoForm::Paper), 0.0);
        assert_eq!(info_derivative(&item(0.0, 0.0, 0.1), 0.7, InfoForm::Exact3pl), 0.0);
    }

    #[test]
    fn info_derivative_matches_central_difference() {
        let h = 1e-5;
        for form in [InfoForm::Paper, InfoForm::Exact3pl] {
            for i in 0..100 {
                let f = i as f64 / 99.0;
                let p = item(0.3 + 2.2 * f, -3.0 + 6.0 * ((i * 37) % 100) as f64 / 99.0, 0.45 * ((i * 13) % 100) as f64 / 99.0);
                let theta = -4.0 + 8.0 * ((i * 71) % 100) as f64 / 99.0;
                let fd = (fisher_info(&p, theta + h, form) - fisher_info(&p, theta - h, form)) / (2.0 * h);
                assert_abs_diff_eq!(info_derivative(&p, theta, form), fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn log_probs_are_stable_in_tails() {
        let p = item(2.5, 0.0, 0.0);
        let (lp, lq) = log_probs(&p, 400.0);
        assert!(lp.is_finite() && lq.is_finite());
        assert!(lq < -900.0);
        let (lp, _) = log_probs(&p, -400.0);
        assert!(lp < -900.0);
        let (lp, lq) = log_probs(&item(1.0, 0.5, 0.2), 0.1);
        let prob = icc_3pl(&item(1.0, 0.5, 0.2), 0.1);
        assert_abs_diff_eq!(lp, prob.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(lq, (1.0 - prob).ln(), epsilon = 1e-14);
    }

    #[test]
    fn invalid_guessing_rejected() {
        assert!(ItemParameters::new(1.0, 0.0, 1.0).is_err());
        assert!(ItemParameters::new(1.0, 0.0, -0.1).is_err());
        assert!(ItemParameters::new(f64::NAN, 0.0, 0.1).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(QuadratureGrid::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(QuadratureGrid::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        let g = QuadratureGrid::default();
        assert_eq!(g.len(), 81);
        assert_abs_diff_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.nodes()[0], -6.0);
        assert_abs_diff_eq!(g.nodes()[80], 6.0);
    }

    #[test]
    fn eap_empty_and_symmetric() {
        let grid = QuadratureGrid::default();
        let empty = eap_of(&[], &grid, InfoForm::Paper).unwrap();
        assert_abs_diff_eq!(empty.theta, 0.0, epsilon = 1e-14);
        assert!(empty.se.is_infinite());
        let p = item(1.0, 0.0, 0.0);
        let up = eap_of(&[(p, true)], &grid, InfoForm::Paper).unwrap();
        let down = eap_of(&[(p, false)], &grid, InfoForm::Paper).unwrap();
        assert!(up.theta > 0.0);
        assert_abs_diff_eq!(up.theta, -down.theta, epsilon = 1e-12);
    }

    #[test]
    fn wle_all_correct_is_finite() {
        let items: Vec<_> = (0..30).map(|i| (item(1.2, -2.0 + 4.0 * i as f64 / 29.0, 0.2), true)).collect();
        let est = wle_of(&items, InfoForm::Paper).unwrap();
        assert!(est.theta.is_finite() && est.se.is_finite());
        assert!(est.theta > 2.0);
    }

    #[test]
    fn wle_symmetric_balanced_is_zero() {
        let bs = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let items: Vec<_> = bs.iter().map(|&b| (item(1.0, b, 0.0), b > 0.0)).collect();
        // correct on the hard half: reflect responses for a balanced, symmetric pattern
        let items: Vec<_> = items.into_iter().map(|(p, y)| (p, !y)).collect();
        let est = wle_of(&items, InfoForm::Paper).unwrap();
        assert_abs_diff_eq!(est.theta, 0.0, epsilon = 1e-7);
        assert!(!est.saturated);
    }

    #[test]
    fn wle_empty_or_uninformative_errors() {
        assert_eq!(wle_of(&[], InfoForm::Paper), Err(IrtError::EmptyRecord));
        let zero = [(item(0.0, 0.0, 0.0), true)];
        assert_eq!(wle_of(&zero, InfoForm::Paper), Err(IrtError::NoInformation));
    }

    #[test]
    fn se_examples() {
        let p = item(1.0, 0.0, 0.0);
        assert_abs_diff_eq!(se_of(&[(p, true)], 0.0, InfoForm::Paper), 2.0, epsilon = 1e-14);
        let four = [(p, true), (p, false), (p, true), (p, false)];
        assert_abs_diff_eq!(se_of(&four, 0.0, InfoForm::Paper), 1.0, epsilon = 1e-14);
        assert!(se_of(&[(item(0.0, 0.0, 0.0), true)], 0.0, InfoForm::Paper).is_infinite());
    }

    #[test]
    fn record_rejects_duplicates() {
        let mut r = TestRecord::new();
        r.push("x", true, 0.1, 1.0).unwrap();
        assert_eq!(r.push("x", false, 0.0, 1.0), Err(IrtError::DuplicateItem("x".into())));
        assert_eq!(r.len(), r.trajectory().len());
    }

    proptest! {
        #[test]
        fn icc_monotone_and_bounded(a in 0.01f64..4.0, b in -4.0f64..4.0, c in 0.0f64..0.6, t1 in -8.0f64..8.0, t2 in -8.0f64..8.0) {
            let p = item(a, b, c);
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(icc_3pl(&p, lo) <= icc_3pl(&p, hi));
            let v = icc_3pl(&p, t1);
            prop_assert!(v >= c && v <= 1.0);
        }

        #[test]
        fn default_info_peaks_at_difficulty(a in 0.1f64..4.0, b in -4.0f64..4.0, t in -8.0f64..8.0) {
            let p = item(a, b, 0.0);
            let at_b = fisher_info(&p, b, InfoForm::Paper);
            prop_assert!(fisher_info(&p, t, InfoForm::Paper) <= at_b + 1e-15);
            prop_assert!(fisher_info(&p, t, InfoForm::Exact3pl) >= 0.0);
        }

        #[test]
        fn eap_increases_when_a_response_flips_to_correct(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..20);
            let mut items: Vec<_> = (0..n)
                .map(|_| (item(rng.gen_range(0.5..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..0.3)), rng.gen_bool(0.5)))
                .collect();
            items[0].1 = false;
            let grid = QuadratureGrid::default();
            let before = eap_of(&items, &grid, InfoForm::Paper).unwrap();
            items[0].1 = true;
            let after = eap_of(&items, &grid, InfoForm::Paper).unwrap();
            prop_assert!(after.theta > before.theta);
            prop_assert!(after.theta.abs() < 6.0 && before.theta.abs() < 6.0);
        }
    }
}
