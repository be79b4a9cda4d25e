mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use adaptest::analytics::{self, BatchSummary};
use adaptest::bank::{import_calibration, export_calibration};
use adaptest::calibration::{calibrate_bank, CalibrationConfig, LinkTransform};
use adaptest::cat::{batch_run, CatConfig};
use adaptest::data::{preprocess, FilterConfig, ResponseMatrix};
use adaptest::irt::{wle_of, ItemParameters};
use adaptest::respondents::{MatrixResponder, Responder, SimulatedResponder};
use common::*;

#[test]
fn three_partitions_recover_difficulty() {
    let items = random_items(300, 31);
    let thetas = normal_thetas(2000, 32);
    let matrix = simulate_matrix(&items, &thetas, 33);
    let cal = calibrate_bank(&matrix, &CalibrationConfig::default()).unwrap();
    assert_eq!(cal.bank.metadata.partitions, 3);
    assert_eq!(cal.bank.metadata.partition_sizes, vec![100, 100, 100]);
    assert_eq!(cal.bank.metadata.links.len(), 2);
    let b_hat: Vec<f64> = item_ids(300).iter().map(|id| cal.bank.get(id).unwrap().params.b).collect();
    let b: Vec<f64> = items.iter().map(|p| p.b).collect();
    assert!(pearson(&b_hat, &b) >= 0.95);
    for fit in &cal.fits {
        assert!(fit.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    }
}

fn small_calibration(n_items: usize, n_models: usize, seed: u64) -> (Vec<ItemParameters>, ResponseMatrix) {
    let items = random_items(n_items, seed);
    let matrix = simulate_matrix(&items, &normal_thetas(n_models, seed + 1), seed + 2);
    (items, matrix)
}

#[test]
fn single_partition_is_not_linked() {
    let (_, matrix) = small_calibration(120, 600, 40);
    let cal = calibrate_bank(&matrix, &CalibrationConfig::default()).unwrap();
    assert_eq!(cal.links, vec![LinkTransform::IDENTITY]);
    assert!(cal.bank.metadata.links.is_empty());
    assert!(!cal.bank.metadata.restandardized);
    assert_eq!(cal.bank.metadata.partitions, 1);
}

#[test]
fn fewer_items_than_partition_minimum_warns() {
    let (_, matrix) = small_calibration(60, 500, 45);
    let cal = calibrate_bank(&matrix, &CalibrationConfig::default()).unwrap();
    assert_eq!(cal.bank.metadata.partition_sizes, vec![60]);
    assert!(!cal.bank.metadata.warnings.is_empty());
}

#[test]
fn anti_discriminating_items_are_filtered() {
    let items = random_items(150, 50);
    let anti = [3usize, 40, 77, 101, 149];
    let thetas = normal_thetas(1500, 51);
    let mut matrix_rows = Vec::new();
    let mut r = rng(52);
    for &t in &thetas {
        let row: Vec<bool> = items
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let prob = if anti.contains(&j) {
                    1.0 / (1.0 + (1.8 * (t - p.b)).exp())
                } else {
                    adaptest::irt::icc_3pl(p, t)
                };
                rand::Rng::gen::<f64>(&mut r) < prob
            })
            .collect();
        matrix_rows.push(row);
    }
    let matrix = ResponseMatrix::from_rows(model_ids(thetas.len()), item_ids(150), &matrix_rows).unwrap();
    let cal = calibrate_bank(&matrix, &CalibrationConfig::default()).unwrap();
    for &j in &anti {
        let item = cal.bank.get(&item_ids(150)[j]).unwrap();
        assert!(item.filtered, "{} {:?}", item.item_id, item.params);
    }
    for item in cal.bank.operational() {
        assert!(item.params.a > 0.0 && item.params.b.abs() <= 4.0 && item.params.c <= 0.5);
    }
    // the same items are caught earlier by the point-biserial screen
    let (_, report) = preprocess(&matrix, &FilterConfig::default()).unwrap();
    for &j in &anti {
        assert!(report.removed_items.contains(&item_ids(150)[j]));
    }
}

#[test]
fn linked_abilities_are_equivariant() {
    let (_, matrix) = small_calibration(200, 1200, 60);
    let cal = calibrate_bank(&matrix, &CalibrationConfig::default()).unwrap();
    let link = cal.links[1];
    let fit = &cal.fits[1];
    let cols: Vec<usize> = fit.item_ids.iter().map(|id| matrix.item_index(id).unwrap()).collect();
    let mut deltas = Vec::new();
    for m in 0..matrix.n_models() {
        let raw: Vec<(ItemParameters, bool)> = cols.iter().zip(&fit.params).filter_map(|(&j, p)| matrix.get(m, j).map(|y| (*p, y))).collect();
        let linked: Vec<(ItemParameters, bool)> =
            raw.iter().map(|(p, y)| (adaptest::calibration::apply_link(p, &link), *y)).collect();
        let (e_raw, e_linked) = (wle_of(&raw, Default::default()).unwrap(), wle_of(&linked, Default::default()).unwrap());
        if !e_raw.saturated && !e_linked.saturated {
            deltas.push((e_linked.theta - link.apply_theta(e_raw.theta)).abs());
        }
    }
    let mean_delta = deltas.iter().sum::<f64>() / deltas.len() as f64;
    assert!(mean_delta < 0.05, "{mean_delta}");
}

#[test]
fn bank_and_references_round_trip() {
    let (_, matrix) = small_calibration(100, 400, 70);
    let cal = calibrate_bank(&matrix, &CalibrationConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.json");
    export_calibration(&cal.bank, &path).unwrap();
    let back = import_calibration(&path).unwrap();
    assert_eq!(back.items(), cal.bank.items());
    assert_eq!(back.scale, cal.bank.scale);
    assert_eq!(back.metadata, cal.bank.metadata);
    assert_eq!(cal.references.len(), matrix.n_models());
}

#[test]
fn matrix_replay_tracks_whole_bank_abilities() {
    let (_, matrix) = small_calibration(200, 300, 80);
    let cal = calibrate_bank(&matrix, &CalibrationConfig::default()).unwrap();
    let bank = Arc::new(cal.bank);
    let matrix = Arc::new(matrix);
    let responders: Vec<Box<dyn Responder>> = matrix
        .model_ids()
        .iter()
        .map(|m| Box::new(MatrixResponder::new(Arc::clone(&matrix), m).unwrap()) as Box<dyn Responder>)
        .collect();
    let result = batch_run(Arc::clone(&bank), &CatConfig { se_threshold: 0.2, ..Default::default() }, responders).unwrap();
    assert_eq!(result.completed(), matrix.n_models());
    let est: BTreeMap<String, f64> = result.outcomes.iter().map(|o| (o.respondent_id.clone(), o.estimate.theta)).collect();
    let refs: BTreeMap<String, f64> = cal.references.iter().map(|(k, v)| (k.clone(), v.theta)).collect();
    let refs: BTreeMap<String, f64> = refs.into_iter().filter(|(k, _)| est.contains_key(k)).collect();
    let mae = analytics::mae(&est, &refs).unwrap();
    assert!(mae < 0.4, "{mae}");
}

#[test]
fn simulated_batch_feeds_analytics() {
    let items = random_items(200, 90);
    let bank = Arc::new(bank_of(&items));
    let thetas = normal_thetas(100, 91);
    let responders: Vec<Box<dyn Responder>> = thetas
        .iter()
        .enumerate()
        .map(|(i, &t)| Box::new(SimulatedResponder::new(format!("s{i:03}"), t, Arc::clone(&bank), 3)) as Box<dyn Responder>)
        .collect();
    let result = batch_run(Arc::clone(&bank), &CatConfig::default(), responders).unwrap();
    let universe: Vec<String> = bank.operational().map(|i| i.item_id.clone()).collect();
    let batch = BatchSummary::from_outcomes(&result.outcomes, universe);
    let total: usize = result.outcomes.iter().map(|o| o.record.len()).sum();
    assert_eq!(batch.exposure_counts().values().sum::<usize>(), total);
    let report = analytics::metrics_report(&batch, None, None, 10.0).unwrap();
    assert!(report.exposure.is_some() && report.overlap.chen.is_some() && report.overlap.jaccard.is_some());
    assert_eq!(result.manifest.sessions.len(), 100);
}
