#![allow(dead_code)]

use adaptest::bank::ItemBank;
use adaptest::data::ResponseMatrix;
use adaptest::irt::{icc_3pl, ItemParameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// a ~ U[0.5, 2.5], b ~ U[−2.5, 2.5], c ~ U[0, 0.3].
pub fn random_items(n: usize, seed: u64) -> Vec<ItemParameters> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| ItemParameters::new(r.gen_range(0.5..2.5), r.gen_range(-2.5..2.5), r.gen_range(0.0..0.3)).unwrap())
        .collect()
}

pub fn item_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("item{i:04}")).collect()
}

pub fn model_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("model{i:04}")).collect()
}

pub fn bank_of(items: &[ItemParameters]) -> ItemBank {
    ItemBank::from_parameters(item_ids(items.len()).into_iter().zip(items.iter().copied())).unwrap()
}

pub fn normal_thetas(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

pub fn simulate_matrix(items: &[ItemParameters], thetas: &[f64], seed: u64) -> ResponseMatrix {
    let mut r = rng(seed);
    let rows: Vec<Vec<bool>> =
        thetas.iter().map(|&t| items.iter().map(|p| r.gen::<f64>() < icc_3pl(p, t)).collect()).collect();
    ResponseMatrix::from_rows(model_ids(thetas.len()), item_ids(items.len()), &rows).unwrap()
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}
