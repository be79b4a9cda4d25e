//! Partitioned 3PL calibration with common-person mean-sigma linking.

mod em;
mod link;

pub use em::{calibrate_partition, BetaPrior, PartitionFit};
pub use link::{apply_link, mean_sigma_link, LinkTransform};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{BankError, BankItem, BankMetadata, ItemBank, LinkRecord, Scale};
use crate::data::ResponseMatrix;
use crate::irt::{wle_of, AbilityEstimate, InfoForm, IrtError, ItemParameters, QuadratureGrid, THETA_MAX, THETA_MIN};

/// Smallest partition the calibration is willing to fit.
pub const MIN_PARTITION_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("nothing to calibrate")]
    EmptyInput,
    #[error("invalid calibration configuration: {0}")]
    Config(String),
    #[error("degenerate link: {0}")]
    DegenerateLink(String),
    #[error("partition {partition}: {message}")]
    Partition { partition: usize, message: String },
    #[error(transparent)]
    Irt(#[from] IrtError),
    #[error(transparent)]
    Bank(#[from] BankError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub partition_min_size: usize,
    pub quadrature_nodes: usize,
    pub max_em_iterations: usize,
    pub em_tolerance: f64,
    /// Weak prior on guessing; `null` disables it.
    pub c_prior: Option<BetaPrior>,
    /// Discrimination range `(lo, hi]`.
    pub a_bounds: (f64, f64),
    pub b_bounds: (f64, f64),
    pub c_max: f64,
    /// Information form used by the WLE bias correction.
    pub info_form: InfoForm,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            partition_min_size: MIN_PARTITION_SIZE,
            quadrature_nodes: crate::irt::DEFAULT_QUADRATURE_NODES,
            max_em_iterations: 500,
            em_tolerance: 1e-3,
            c_prior: Some(BetaPrior { alpha: 2.0, beta: 8.0 }),
            a_bounds: (0.05, 5.0),
            b_bounds: (-6.0, 6.0),
            c_max: 0.5,
            info_form: InfoForm::Paper,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: String| Err(CalibrationError::Config(m));
        if self.partition_min_size < MIN_PARTITION_SIZE {
            return bad(format!("partition_min_size must be ≥ {MIN_PARTITION_SIZE}, got {}", self.partition_min_size));
        }
        if self.max_em_iterations == 0 || !(self.em_tolerance > 0.0) {
            return bad("max_em_iterations and em_tolerance must be positive".into());
        }
        if !(self.a_bounds.0 > 0.0 && self.a_bounds.0 < self.a_bounds.1) || !(self.b_bounds.0 < self.b_bounds.1) {
            return bad(format!("invalid bounds a {:?}, b {:?}", self.a_bounds, self.b_bounds));
        }
        if !(self.c_max > 0.0 && self.c_max < 1.0) {
            return bad(format!("c_max {} outside (0, 1)", self.c_max));
        }
        if let Some(p) = self.c_prior {
            if !(p.alpha >= 1.0 && p.beta >= 1.0) {
                return bad("c_prior needs alpha, beta ≥ 1".into());
            }
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<QuadratureGrid, CalibrationError> {
        Ok(QuadratureGrid::standard_normal(self.quadrature_nodes, THETA_MIN, THETA_MAX)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    pub parts: Vec<Vec<String>>,
    /// Fewer items than `partition_min_size`: one undersized partition.
    pub undersized: bool,
}

/// ⌊N / min⌋ contiguous partitions; the remainder joins the last one.
pub fn partition_items(item_ids: &[String], partition_min_size: usize) -> Partitioning {
    let n = item_ids.len();
    let min = partition_min_size.max(1);
    if n < min {
        return Partitioning { parts: vec![item_ids.to_vec()], undersized: true };
    }
    let k = n / min;
    let mut parts: Vec<Vec<String>> = item_ids.chunks(min).take(k).map(<[String]>::to_vec).collect();
    if let Some(last) = parts.last_mut() {
        last.extend_from_slice(&item_ids[k * min..]);
    }
    Partitioning { parts, undersized: false }
}

/// Full output of [`calibrate_bank`].
#[derive(Debug, Clone)]
pub struct Calibration {
    pub bank: ItemBank,
    /// Whole-bank WLE reference ability per model.
    pub references: BTreeMap<String, AbilityEstimate>,
    pub fits: Vec<PartitionFit>,
    pub links: Vec<LinkTransform>,
}

fn person_wle(
    matrix: &ResponseMatrix,
    columns: &[(usize, ItemParameters)],
    form: InfoForm,
) -> Vec<Option<AbilityEstimate>> {
    (0..matrix.n_models())
        .into_par_iter()
        .map(|m| {
            let responses: Vec<(ItemParameters, bool)> =
                columns.iter().filter_map(|&(j, p)| matrix.get(m, j).map(|y| (p, y))).collect();
            wle_of(&responses, form).ok()
        })
        .collect()
}

/// Partition, calibrate, link every partition onto partition 0's metric, screen
/// items, and score every model on the resulting operational bank.
pub fn calibrate_bank(matrix: &ResponseMatrix, config: &CalibrationConfig) -> Result<Calibration, CalibrationError> {
    config.validate()?;
    if matrix.n_items() == 0 || matrix.n_models() == 0 {
        return Err(CalibrationError::EmptyInput);
    }
    let partitioning = partition_items(matrix.item_ids(), config.partition_min_size);
    let mut metadata = BankMetadata {
        partitions: partitioning.parts.len(),
        partition_sizes: partitioning.parts.iter().map(Vec::len).collect(),
        ..Default::default()
    };
    if partitioning.undersized {
        metadata.warnings.push(format!(
            "only {} items: single partition below the {} item minimum",
            matrix.n_items(),
            config.partition_min_size
        ));
    }

    let columns_of = |part: &[String]| -> Vec<usize> {
        part.iter().map(|id| matrix.item_index(id).expect("partition ids come from the matrix")).collect()
    };

    let mut fits = Vec::with_capacity(partitioning.parts.len());
    for (k, part) in partitioning.parts.iter().enumerate() {
        let sub = matrix.select_items(&columns_of(part));
        let fit = calibrate_partition(&sub, config)
            .map_err(|e| CalibrationError::Partition { partition: k, message: e.to_string() })?;
        log::info!("partition {k}: {} items, {} EM iterations, converged={}", part.len(), fit.iterations, fit.converged);
        if !fit.converged {
            metadata.non_converged_partitions.push(k);
            metadata.warnings.push(format!("partition {k}: EM hit the iteration cap ({})", fit.iterations));
        }
        fits.push(fit);
    }

    // per-partition WLE abilities for linking, excluding pinned degenerate items
    let abilities: Vec<Vec<Option<f64>>> = partitioning
        .parts
        .iter()
        .zip(&fits)
        .map(|(part, fit)| {
            let cols: Vec<(usize, ItemParameters)> = columns_of(part)
                .into_iter()
                .zip(fit.iter())
                .filter(|(_, (id, _))| !fit.degenerate_items.iter().any(|d| d == id))
                .map(|(j, (_, p))| (j, *p))
                .collect();
            person_wle(matrix, &cols, config.info_form).into_iter().map(|e| e.map(|e| e.theta)).collect()
        })
        .collect();

    let mut links = vec![LinkTransform::IDENTITY];
    for (k, theta_k) in abilities.iter().enumerate().skip(1) {
        let (reference, partition): (Vec<f64>, Vec<f64>) = abilities[0]
            .iter()
            .zip(theta_k)
            .filter_map(|(r, t)| Some(((*r)?, (*t)?)))
            .unzip();
        let link = mean_sigma_link(&reference, &partition).map_err(|e| CalibrationError::Partition {
            partition: k,
            message: format!("{e} ({} common persons)", reference.len()),
        })?;
        metadata.links.push(LinkRecord { partition: k, scale: link.scale, shift: link.shift });
        links.push(link);
    }

    let mut items = Vec::with_capacity(matrix.n_items());
    for (k, fit) in fits.iter().enumerate() {
        for (id, params) in fit.iter() {
            let linked = apply_link(params, &links[k]);
            let mut notes = Vec::new();
            if k > 0 {
                notes.push(format!("linked A={:.6} B={:.6}", links[k].scale, links[k].shift));
            }
            let degenerate = fit.degenerate_items.iter().any(|d| d == id);
            if degenerate {
                notes.push("constant response column".to_string());
            }
            // the M-step keeps a above its lower bound, so an estimate resting on
            // that bound stands for a ≤ 0
            let at_floor = params.a <= config.a_bounds.0 * (1.0 + 1e-6);
            if linked.a <= 0.0 || (at_floor && !degenerate) {
                notes.push("non-positive discrimination".to_string());
            }
            if linked.b.abs() > 4.0 {
                notes.push("extreme difficulty".to_string());
            }
            if linked.c > 0.5 {
                notes.push("guessing above 0.5".to_string());
            }
            items.push(BankItem {
                item_id: id.to_owned(),
                params: linked,
                partition: k,
                filtered: degenerate || at_floor || !linked.is_operational(),
                notes: notes.join("; "),
            });
        }
    }
    let mut bank = ItemBank::new(items)?;
    bank.metadata = metadata;

    let operational: Vec<(usize, ItemParameters)> = bank
        .operational()
        .map(|item| (matrix.item_index(&item.item_id).expect("bank ids come from the matrix"), item.params))
        .collect();
    if operational.is_empty() {
        return Err(CalibrationError::Config("no operational items survived the post-calibration screen".into()));
    }
    let whole = person_wle(matrix, &operational, config.info_form);
    let mut references = BTreeMap::new();
    for (m, est) in whole.into_iter().enumerate() {
        if let Some(est) = est {
            references.insert(matrix.model_ids()[m].clone(), est);
        }
    }
    let thetas: Vec<f64> = references.values().map(|e| e.theta).collect();
    if !thetas.is_empty() {
        let n = thetas.len() as f64;
        let mean = thetas.iter().sum::<f64>() / n;
        let sd = (thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        bank.scale = Scale { mean, sd };
    }
    Ok(Calibration { bank, references, fits, links })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i:03}")).collect()
    }

    #[test]
    fn partition_sizes() {
        let p = partition_items(&ids(250), 100);
        assert_eq!(p.parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![100, 150]);
        assert!(!p.undersized);
        let p = partition_items(&ids(100), 100);
        assert_eq!(p.parts.len(), 1);
        let p = partition_items(&ids(99), 100);
        assert_eq!(p.parts[0].len(), 99);
        assert!(p.undersized);
    }

    #[test]
    fn partitions_cover_input_disjointly() {
        for n in [100, 137, 299, 300, 1046] {
            let all = ids(n);
            let p = partition_items(&all, 100);
            assert_eq!(p.parts.len(), n / 100);
            let flat: Vec<String> = p.parts.concat();
            assert_eq!(flat, all);
        }
    }

    #[test]
    fn config_rejects_small_partitions() {
        let cfg = CalibrationConfig { partition_min_size: 50, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(CalibrationConfig::default().validate().is_ok());
    }
}
