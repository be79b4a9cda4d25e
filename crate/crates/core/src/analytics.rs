//! Batch evaluation metrics: MAE, exposure, test overlap, rank agreement.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cat::{SessionLog, SessionOutcome, SessionStatus};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SHIFT_THRESHOLD: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("need at least {needed} sessions, got {got}")]
    TooFewSessions { needed: usize, got: usize },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub respondent_id: String,
    pub theta: f64,
    pub se: Option<f64>,
    pub n_items: usize,
    pub status: SessionStatus,
    pub items: Vec<String>,
}

/// Per-session results plus the item universe used for exposure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchSummary {
    pub sessions: Vec<SessionSummary>,
    /// Denominator `I` of the exposure average (full operational bank).
    pub bank_items: Vec<String>,
}

impl BatchSummary {
    pub fn from_outcomes(outcomes: &[SessionOutcome], bank_items: Vec<String>) -> Self {
        let sessions = outcomes
            .iter()
            .map(|o| SessionSummary {
                respondent_id: o.respondent_id.clone(),
                theta: o.estimate.theta,
                se: o.estimate.se.is_finite().then_some(o.estimate.se),
                n_items: o.record.len(),
                status: o.status,
                items: o.item_ids(),
            })
            .collect();
        Self::new(sessions, Some(bank_items))
    }

    pub fn from_logs(logs: &[SessionLog], bank_items: Option<Vec<String>>) -> Self {
        let sessions = logs
            .iter()
            .map(|l| SessionSummary {
                respondent_id: l.respondent_id.clone(),
                theta: l.terminal.theta,
                se: l.terminal.se,
                n_items: l.terminal.n_items,
                status: l.terminal.status,
                items: l.item_ids(),
            })
            .collect();
        Self::new(sessions, bank_items)
    }

    /// Without an explicit bank, the universe is every administered item.
    pub fn new(sessions: Vec<SessionSummary>, bank_items: Option<Vec<String>>) -> Self {
        let mut universe: BTreeSet<String> = bank_items.unwrap_or_default().into_iter().collect();
        for s in &sessions {
            universe.extend(s.items.iter().cloned());
        }
        Self { sessions, bank_items: universe.into_iter().collect() }
    }

    /// `h_i` for every item in the universe.
    pub fn exposure_counts(&self) -> BTreeMap<String, usize> {
        let mut h: BTreeMap<String, usize> = self.bank_items.iter().map(|i| (i.clone(), 0)).collect();
        for s in &self.sessions {
            for item in &s.items {
                *h.entry(item.clone()).or_default() += 1;
            }
        }
        h
    }

    pub fn thetas(&self) -> BTreeMap<String, f64> {
        self.sessions.iter().map(|s| (s.respondent_id.clone(), s.theta)).collect()
    }

    pub fn mean_length(&self) -> f64 {
        if self.sessions.is_empty() {
            return 0.0;
        }
        self.sessions.iter().map(|s| s.n_items).sum::<usize>() as f64 / self.sessions.len() as f64
    }

    pub fn converged_fraction(&self) -> f64 {
        if self.sessions.is_empty() {
            return 0.0;
        }
        self.sessions.iter().filter(|s| s.status == SessionStatus::Converged).count() as f64 / self.sessions.len() as f64
    }
}

fn paired(x: &BTreeMap<String, f64>, y: &BTreeMap<String, f64>) -> Result<(Vec<f64>, Vec<f64>), AnalyticsError> {
    if x.len() != y.len() || x.keys().any(|k| !y.contains_key(k)) {
        let only_x: Vec<&String> = x.keys().filter(|k| !y.contains_key(*k)).take(3).collect();
        let only_y: Vec<&String> = y.keys().filter(|k| !x.contains_key(*k)).take(3).collect();
        return Err(AnalyticsError::Pairing(format!(
            "key sets differ (e.g. only left: {only_x:?}, only right: {only_y:?})"
        )));
    }
    Ok(x.iter().map(|(k, v)| (*v, y[k])).unzip())
}

/// Mean absolute difference over identical key sets.
pub fn mae(estimates: &BTreeMap<String, f64>, references: &BTreeMap<String, f64>) -> Result<f64, AnalyticsError> {
    let (x, y) = paired(estimates, references)?;
    if x.is_empty() {
        return Err(AnalyticsError::Undefined("MAE of an empty set".into()));
    }
    let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).collect();
    Ok(mean(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub avg: f64,
    pub per_item: BTreeMap<String, f64>,
}

/// `P(A_i) = h_i / |L|`; the average runs over the whole item universe.
pub fn exposure_rates(batch: &BatchSummary) -> Result<Exposure, AnalyticsError> {
    let n = batch.sessions.len();
    if n == 0 {
        return Err(AnalyticsError::TooFewSessions { needed: 1, got: 0 });
    }
    let counts = batch.exposure_counts();
    // mean of h_i/|L| over items, summed in integers so the result is order-free
    let total: usize = counts.values().sum();
    let avg = if counts.is_empty() { 0.0 } else { total as f64 / (counts.len() * n) as f64 };
    let per_item: BTreeMap<String, f64> = counts.into_iter().map(|(i, h)| (i, h as f64 / n as f64)).collect();
    Ok(Exposure { avg, per_item })
}

/// Expected proportion of common items, `N·ΣP² / (L̄(N−1)) − 1/(N−1)`.
pub fn overlap_chen(batch: &BatchSummary) -> Result<f64, AnalyticsError> {
    let n = batch.sessions.len();
    if n < 2 {
        return Err(AnalyticsError::TooFewSessions { needed: 2, got: n });
    }
    let mean_len = batch.mean_length();
    if !(mean_len > 0.0) {
        return Err(AnalyticsError::Undefined("overlap with zero mean test length".into()));
    }
    let nf = n as f64;
    let sum_sq = compensated_sum(batch.exposure_counts().values().map(|&h| (h as f64 / nf).powi(2)));
    Ok(nf * sum_sq / (mean_len * (nf - 1.0)) - 1.0 / (nf - 1.0))
}

/// Mean Jaccard similarity over unordered session pairs.
pub fn overlap_jaccard(batch: &BatchSummary) -> Result<f64, AnalyticsError> {
    let n = batch.sessions.len();
    if n < 2 {
        return Err(AnalyticsError::TooFewSessions { needed: 2, got: n });
    }
    let sets: Vec<BTreeSet<&str>> =
        batch.sessions.iter().map(|s| s.items.iter().map(String::as_str).collect()).collect();
    let mut sims = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let inter = sets[i].intersection(&sets[j]).count();
            let union = sets[i].len() + sets[j].len() - inter;
            // two empty forms are identical
            sims.push(if union == 0 { 1.0 } else { inter as f64 / union as f64 });
        }
    }
    Ok(mean(&sims))
}

/// Ascending average ranks (1-based).
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    let (mx, my) = (mean(x), mean(y));
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = compensated_sum(x.iter().map(|a| (a - mx).powi(2)));
    let syy = compensated_sum(y.iter().map(|b| (b - my).powi(2)));
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(AnalyticsError::Undefined("zero rank variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<(), AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalyticsError::Undefined(format!("correlation of {} points", x.len())));
    }
    Ok(())
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    check_lengths(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// τ-a: (concordant − discordant) / (n(n−1)/2); tied pairs count as neither.
pub fn kendall(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    check_lengths(x, y)?;
    let n = x.len();
    let mut score: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let s = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
            if x[i] != x[j] && y[i] != y[j] {
                score += s as i64;
            }
        }
    }
    Ok(score as f64 / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualAccuracyPair {
    pub first: String,
    pub second: String,
    pub accuracy: f64,
    pub theta_first: f64,
    pub theta_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankShiftReport {
    pub threshold: f64,
    /// Fraction of respondents whose rank moves by more than `threshold`.
    pub fraction: f64,
    pub shifted: usize,
    pub unshifted: usize,
    /// Accuracy rank minus ability rank (rank 1 = best).
    pub deltas: BTreeMap<String, f64>,
    /// Equal accuracy, different ability.
    pub pairs: Vec<EqualAccuracyPair>,
}

fn descending_ranks(xs: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
    average_ranks(&neg)
}

pub fn rank_shift_report(
    accuracy: &BTreeMap<String, f64>,
    thetas: &BTreeMap<String, f64>,
    threshold: f64,
) -> Result<RankShiftReport, AnalyticsError> {
    let (acc, th) = paired(accuracy, thetas)?;
    if acc.len() < 2 {
        return Err(AnalyticsError::Undefined(format!("rank shift of {} respondents", acc.len())));
    }
    let ids: Vec<&String> = accuracy.keys().collect();
    let (ra, rt) = (descending_ranks(&acc), descending_ranks(&th));
    let deltas: BTreeMap<String, f64> = ids.iter().zip(ra.iter().zip(&rt)).map(|(id, (a, t))| ((*id).clone(), a - t)).collect();
    let shifted = deltas.values().filter(|d| d.abs() > threshold).count();

    let mut by_acc: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, a) in acc.iter().enumerate() {
        by_acc.entry(a.to_bits()).or_default().push(i);
    }
    let mut pairs = Vec::new();
    let mut groups: Vec<&Vec<usize>> = by_acc.values().filter(|g| g.len() > 1).collect();
    groups.sort();
    for g in groups {
        for (x, &i) in g.iter().enumerate() {
            for &j in &g[x + 1..] {
                if th[i] != th[j] {
                    pairs.push(EqualAccuracyPair {
                        first: ids[i].clone(),
                        second: ids[j].clone(),
                        accuracy: acc[i],
                        theta_first: th[i],
                        theta_second: th[j],
                    });
                }
            }
        }
    }
    Ok(RankShiftReport {
        threshold,
        fraction: shifted as f64 / acc.len() as f64,
        shifted,
        unshifted: acc.len() - shifted,
        deltas,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub chen: Option<f64>,
    pub jaccard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub n_sessions: usize,
    /// Against the reference abilities; `null` without references.
    pub mae: Option<f64>,
    pub avg_items: f64,
    pub converged_fraction: f64,
    pub exposure: Option<Exposure>,
    pub overlap: Overlap,
    /// CAT abilities against reference abilities.
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
    /// Accuracy ranks against CAT ability ranks.
    pub rank_shift: Option<RankShiftReport>,
}

/// Computes every metric that the inputs allow; undefined ones become `null`.
pub fn metrics_report(
    batch: &BatchSummary,
    references: Option<&BTreeMap<String, f64>>,
    accuracy: Option<&BTreeMap<String, f64>>,
    shift_threshold: f64,
) -> Result<MetricsReport, AnalyticsError> {
    let thetas = batch.thetas();
    let restrict = |m: &BTreeMap<String, f64>| -> BTreeMap<String, f64> {
        m.iter().filter(|(k, _)| thetas.contains_key(*k)).map(|(k, v)| (k.clone(), *v)).collect()
    };
    let (mut mae_v, mut rho, mut tau) = (None, None, None);
    if let Some(refs) = references {
        let refs = restrict(refs);
        let missing: Vec<&String> = thetas.keys().filter(|k| !refs.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(AnalyticsError::Pairing(format!("{} sessions lack a reference ability", missing.len())));
        }
        if !refs.is_empty() {
            mae_v = Some(mae(&thetas, &refs)?);
            let (x, y) = paired(&thetas, &refs)?;
            rho = spearman(&x, &y).ok();
            tau = kendall(&x, &y).ok();
        }
    }
    let rank_shift = match accuracy {
        Some(acc) => {
            let acc = restrict(acc);
            rank_shift_report(&acc, &thetas, shift_threshold).ok()
        }
        None => None,
    };
    Ok(MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        n_sessions: batch.sessions.len(),
        mae: mae_v,
        avg_items: batch.mean_length(),
        converged_fraction: batch.converged_fraction(),
        exposure: exposure_rates(batch).ok(),
        overlap: Overlap { chen: overlap_chen(batch).ok(), jaccard: overlap_jaccard(batch).ok() },
        spearman: rho,
        kendall: tau,
        rank_shift,
    })
}

impl MetricsReport {
    /// Flat `metric,value` export; per-item exposure rows are `exposure:<item>`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "value"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let rows = [
            ("n_sessions", self.n_sessions.to_string()),
            ("mae", opt(self.mae)),
            ("avg_items", self.avg_items.to_string()),
            ("converged_fraction", self.converged_fraction.to_string()),
            ("exposure_avg", opt(self.exposure.as_ref().map(|e| e.avg))),
            ("overlap_chen", opt(self.overlap.chen)),
            ("overlap_jaccard", opt(self.overlap.jaccard)),
            ("spearman", opt(self.spearman)),
            ("kendall", opt(self.kendall)),
            ("rank_shift_fraction", opt(self.rank_shift.as_ref().map(|r| r.fraction))),
        ];
        for (k, v) in rows {
            out.write_record([k, v.as_str()])?;
        }
        if let Some(e) = &self.exposure {
            for (item, p) in &e.per_item {
                out.write_record([format!("exposure:{item}"), p.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
