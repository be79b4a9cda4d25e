use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, ResponseMatrix};

/// Screening thresholds. Defaults: 0.1st-percentile score floor, SD < 0.01,
/// accuracy > 0.95, point-biserial < 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub percentile_floor: f64,
    pub sd_floor: f64,
    pub acc_ceiling: f64,
    pub rpb_floor: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { percentile_floor: 0.001, sd_floor: 0.01, acc_ceiling: 0.95, rpb_floor: 0.1 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..1.0).contains(&self.percentile_floor) {
            return Err(DataError::Config(format!("percentile_floor {} outside [0, 1)", self.percentile_floor)));
        }
        for (name, v) in [("sd_floor", self.sd_floor), ("acc_ceiling", self.acc_ceiling), ("rpb_floor", self.rpb_floor)] {
            if !v.is_finite() {
                return Err(DataError::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_models: usize,
    pub input_items: usize,
    pub models_removed_incomplete: usize,
    pub models_removed_extreme: usize,
    pub items_removed_low_variance: usize,
    pub items_removed_ceiling: usize,
    pub items_removed_discrimination: usize,
    pub retained_models: usize,
    pub retained_items: usize,
    /// Point-biserial of every item entering the discrimination stage; `null` when undefined.
    pub per_item_rpb: BTreeMap<String, Option<f64>>,
    pub removed_models: Vec<String>,
    pub removed_items: Vec<String>,
}

impl FilterReport {
    fn start(m: &ResponseMatrix) -> Self {
        Self { input_models: m.n_models(), input_items: m.n_items(), ..Default::default() }
    }

    fn finish(mut self, m: &ResponseMatrix) -> Self {
        self.retained_models = m.n_models();
        self.retained_items = m.n_items();
        self
    }

    /// `self` followed by `next`, which must have consumed `self`'s output.
    fn then(mut self, next: FilterReport) -> Self {
        self.models_removed_incomplete += next.models_removed_incomplete;
        self.models_removed_extreme += next.models_removed_extreme;
        self.items_removed_low_variance += next.items_removed_low_variance;
        self.items_removed_ceiling += next.items_removed_ceiling;
        self.items_removed_discrimination += next.items_removed_discrimination;
        self.retained_models = next.retained_models;
        self.retained_items = next.retained_items;
        self.per_item_rpb.extend(next.per_item_rpb);
        self.removed_models.extend(next.removed_models);
        self.removed_items.extend(next.removed_items);
        self
    }
}

/// Drops models with any missing response, then the lowest ⌊floor·n⌋ total
/// scores (nearest-rank, ties broken by model identifier).
pub fn filter_models(matrix: &ResponseMatrix, percentile_floor: f64) -> Result<(ResponseMatrix, FilterReport), DataError> {
    if !(0.0..1.0).contains(&percentile_floor) {
        return Err(DataError::Config(format!("percentile_floor {percentile_floor} outside [0, 1)")));
    }
    let mut report = FilterReport::start(matrix);
    let mut complete = Vec::with_capacity(matrix.n_models());
    for m in 0..matrix.n_models() {
        if matrix.row(m).iter().all(Option::is_some) {
            complete.push(m);
        } else {
            report.removed_models.push(matrix.model_ids()[m].clone());
        }
    }
    report.models_removed_incomplete = matrix.n_models() - complete.len();

    let totals = matrix.totals();
    let drop = (percentile_floor * complete.len() as f64).floor() as usize;
    let mut ranked = complete.clone();
    ranked.sort_by(|&x, &y| totals[x].total_cmp(&totals[y]).then_with(|| matrix.model_ids()[x].cmp(&matrix.model_ids()[y])));
    let dropped: std::collections::HashSet<usize> = ranked.into_iter().take(drop).collect();
    let kept: Vec<usize> = complete.into_iter().filter(|m| !dropped.contains(m)).collect();
    report.models_removed_extreme = dropped.len();
    let mut dropped: Vec<usize> = dropped.into_iter().collect();
    dropped.sort_unstable();
    report.removed_models.extend(dropped.into_iter().map(|m| matrix.model_ids()[m].clone()));

    if kept.is_empty() {
        return Err(DataError::EmptyPopulation);
    }
    let out = matrix.select_models(&kept);
    let report = report.finish(&out);
    Ok((out, report))
}

fn item_accuracy(matrix: &ResponseMatrix, item: usize) -> (f64, usize) {
    let (mut correct, mut seen) = (0usize, 0usize);
    for v in matrix.column(item).flatten() {
        seen += 1;
        correct += usize::from(v);
    }
    if seen == 0 {
        (0.0, 0)
    } else {
        (correct as f64 / seen as f64, seen)
    }
}

/// Drops items whose population SD is below `sd_floor` or whose accuracy exceeds `acc_ceiling`.
pub fn filter_items_variance(
    matrix: &ResponseMatrix,
    sd_floor: f64,
    acc_ceiling: f64,
) -> Result<(ResponseMatrix, FilterReport), DataError> {
    let mut report = FilterReport::start(matrix);
    let mut kept = Vec::with_capacity(matrix.n_items());
    for i in 0..matrix.n_items() {
        let (p, seen) = item_accuracy(matrix, i);
        let sd = (p * (1.0 - p)).max(0.0).sqrt();
        if seen == 0 || sd < sd_floor {
            report.items_removed_low_variance += 1;
        } else if p > acc_ceiling {
            report.items_removed_ceiling += 1;
        } else {
            kept.push(i);
            continue;
        }
        report.removed_items.push(matrix.item_ids()[i].clone());
    }
    if kept.is_empty() {
        return Err(DataError::EmptyBank);
    }
    let out = matrix.select_items(&kept);
    let report = report.finish(&out);
    Ok((out, report))
}

/// `((T̄₁ − T̄₀)/s_T)·√(pq)` with the population SD of the totals.
pub fn point_biserial(item: &[bool], totals: &[f64]) -> Result<f64, DataError> {
    if item.len() != totals.len() || item.len() < 2 {
        return Err(DataError::UndefinedCorrelation("need two or more paired observations"));
    }
    let n = item.len() as f64;
    let (mut sum1, mut n1, mut sum0) = (0.0, 0usize, 0.0);
    for (&y, &t) in item.iter().zip(totals) {
        if y {
            sum1 += t;
            n1 += 1;
        } else {
            sum0 += t;
        }
    }
    let n0 = item.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(DataError::UndefinedCorrelation("constant item column"));
    }
    let mean = totals.iter().sum::<f64>() / n;
    let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(DataError::UndefinedCorrelation("constant total scores"));
    }
    let p = n1 as f64 / n;
    let diff = sum1 / n1 as f64 - sum0 / n0 as f64;
    Ok(diff / var.sqrt() * (p * (1.0 - p)).sqrt())
}

/// Drops items whose point-biserial against the current total scores is below
/// `rpb_floor` or undefined.
pub fn filter_items_discrimination(
    matrix: &ResponseMatrix,
    rpb_floor: f64,
) -> Result<(ResponseMatrix, FilterReport), DataError> {
    if matrix.n_models() < 2 {
        return Err(DataError::UndefinedCorrelation("need two or more models"));
    }
    let mut report = FilterReport::start(matrix);
    let totals = matrix.totals();
    let mut kept = Vec::with_capacity(matrix.n_items());
    for i in 0..matrix.n_items() {
        let column: Vec<bool> = matrix.column(i).map(|v| v.unwrap_or(false)).collect();
        let rpb = point_biserial(&column, &totals).ok();
        let id = matrix.item_ids()[i].clone();
        report.per_item_rpb.insert(id.clone(), rpb);
        match rpb {
            Some(r) if r >= rpb_floor => kept.push(i),
            _ => {
                report.items_removed_discrimination += 1;
                report.removed_items.push(id);
            }
        }
    }
    if kept.is_empty() {
        return Err(DataError::EmptyBank);
    }
    let out = matrix.select_items(&kept);
    let report = report.finish(&out);
    Ok((out, report))
}

/// Model filters, then variance/ceiling, then point-biserial on the surviving items.
pub fn preprocess(matrix: &ResponseMatrix, config: &FilterConfig) -> Result<(ResponseMatrix, FilterReport), DataError> {
    config.validate()?;
    let (m1, r1) = filter_models(matrix, config.percentile_floor)?;
    let (m2, r2) = filter_items_variance(&m1, config.sd_floor, config.acc_ceiling)?;
    let (m3, r3) = filter_items_discrimination(&m2, config.rpb_floor)?;
    Ok((m3, r1.then(r2).then(r3)))
}
