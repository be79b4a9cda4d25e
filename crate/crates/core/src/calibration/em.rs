//! Bock–Aitkin marginal maximum likelihood for the 3PL.
//!
//! The E-step integrates each respondent over the quadrature grid under a
//! standard normal population; the M-step is an independent bounded
//! Fisher-scoring ascent per item in `(ln a, b, logit(c / c_max))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CalibrationConfig, CalibrationError};
use crate::data::ResponseMatrix;
use crate::irt::{log_probs, ItemParameters, QuadratureGrid};

const PERSON_CHUNK: usize = 64;
const MSTEP_ITERATIONS: usize = 25;
const LOGIT_C_BOUND: f64 = 20.0;

/// Result of calibrating one partition on its provisional N(0, 1) scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFit {
    pub item_ids: Vec<String>,
    pub params: Vec<ItemParameters>,
    pub converged: bool,
    pub iterations: usize,
    /// Marginal log-likelihood plus guessing log-prior, evaluated at the start of each iteration.
    pub objective_trace: Vec<f64>,
    /// Marginal log-likelihood alone, same evaluation points.
    pub log_likelihood_trace: Vec<f64>,
    /// Items whose column is constant; their parameters are pinned to bounds.
    pub degenerate_items: Vec<String>,
}

impl PartitionFit {
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ItemParameters)> {
        self.item_ids.iter().map(String::as_str).zip(&self.params)
    }
}

/// Beta(α, β) log-prior on the guessing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPrior {
    fn log_density(&self, c: f64) -> f64 {
        (self.alpha - 1.0) * c.ln() + (self.beta - 1.0) * (1.0 - c).ln()
    }

    fn gradient(&self, c: f64) -> f64 {
        (self.alpha - 1.0) / c - (self.beta - 1.0) / (1.0 - c)
    }

    fn curvature(&self, c: f64) -> f64 {
        ((self.alpha - 1.0) / (c * c) + (self.beta - 1.0) / ((1.0 - c) * (1.0 - c))).max(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    ln_a: (f64, f64),
    b: (f64, f64),
    c_max: f64,
}

impl Bounds {
    fn from(config: &CalibrationConfig) -> Self {
        Self {
            ln_a: (config.a_bounds.0.ln(), config.a_bounds.1.ln()),
            b: config.b_bounds,
            c_max: config.c_max,
        }
    }

    fn clamp(&self, x: [f64; 3]) -> [f64; 3] {
        [
            // open lower bound on a
            x[0].clamp(self.ln_a.0 + 1e-9, self.ln_a.1),
            x[1].clamp(self.b.0, self.b.1),
            x[2].clamp(-LOGIT_C_BOUND, LOGIT_C_BOUND),
        ]
    }

    fn decode(&self, x: [f64; 3]) -> ItemParameters {
        ItemParameters { a: x[0].exp(), b: x[1], c: self.c_max * sigmoid(x[2]) }
    }

    fn encode(&self, p: &ItemParameters) -> [f64; 3] {
        let r = (p.c / self.c_max).clamp(1e-9, 1.0 - 1e-9);
        self.clamp([p.a.ln(), p.b, (r / (1.0 - r)).ln()])
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Expected counts for one item: correct and incorrect posterior mass per node.
struct ItemCounts<'a> {
    right: &'a [f64],
    wrong: &'a [f64],
}

fn item_objective(x: [f64; 3], counts: &ItemCounts, nodes: &[f64], bounds: &Bounds, prior: Option<BetaPrior>) -> f64 {
    let p = bounds.decode(x);
    let mut total = 0.0;
    for (q, &theta) in nodes.iter().enumerate() {
        let (lp, lq) = log_probs(&p, theta);
        if counts.right[q] > 0.0 {
            total += counts.right[q] * lp;
        }
        if counts.wrong[q] > 0.0 {
            total += counts.wrong[q] * lq;
        }
    }
    if let Some(prior) = prior {
        total += prior.log_density(p.c);
    }
    total
}

/// Gradient and expected-information matrix of the item objective.
fn item_derivatives(
    x: [f64; 3],
    counts: &ItemCounts,
    nodes: &[f64],
    bounds: &Bounds,
    prior: Option<BetaPrior>,
) -> ([f64; 3], [[f64; 3]; 3]) {
    let p = bounds.decode(x);
    let dc_dx = p.c * (1.0 - p.c / bounds.c_max);
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    for (q, &theta) in nodes.iter().enumerate() {
        let n = counts.right[q] + counts.wrong[q];
        if n <= 0.0 {
            continue;
        }
        let z = p.a * (theta - p.b);
        let s = sigmoid(z);
        let prob = (p.c + (1.0 - p.c) * s).clamp(1e-300, 1.0 - 1e-16);
        let slope = (1.0 - p.c) * s * (1.0 - s);
        let dp = [slope * p.a * (theta - p.b), -slope * p.a, (1.0 - s) * dc_dx];
        let w = counts.right[q] / prob - counts.wrong[q] / (1.0 - prob);
        let info = n / (prob * (1.0 - prob));
        for i in 0..3 {
            g[i] += w * dp[i];
            for j in 0..3 {
                h[i][j] += info * dp[i] * dp[j];
            }
        }
    }
    if let Some(prior) = prior {
        g[2] += prior.gradient(p.c) * dc_dx;
        h[2][2] += prior.curvature(p.c) * dc_dx * dc_dx;
    }
    (g, h)
}

/// Solves the 3×3 system `h · d = g` by Gaussian elimination with partial pivoting.
fn solve3(mut h: [[f64; 3]; 3], mut g: [f64; 3]) -> Option<[f64; 3]> {
    for i in 0..3 {
        h[i][i] += 1e-10 * (1.0 + h[i][i].abs());
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| h[a][col].abs().total_cmp(&h[b][col].abs()))?;
        if h[pivot][col].abs() < 1e-300 {
            return None;
        }
        h.swap(col, pivot);
        g.swap(col, pivot);
        for row in col + 1..3 {
            let f = h[row][col] / h[col][col];
            for k in col..3 {
                h[row][k] -= f * h[col][k];
            }
            g[row] -= f * g[col];
        }
    }
    let mut d = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = g[row];
        for k in row + 1..3 {
            acc -= h[row][k] * d[k];
        }
        d[row] = acc / h[row][row];
    }
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Bounded Fisher-scoring ascent; never returns a point worse than `start`.
fn maximize_item(
    start: [f64; 3],
    counts: &ItemCounts,
    nodes: &[f64],
    bounds: &Bounds,
    prior: Option<BetaPrior>,
) -> [f64; 3] {
    let mut x = bounds.clamp(start);
    let mut fx = item_objective(x, counts, nodes, bounds, prior);
    for _ in 0..MSTEP_ITERATIONS {
        let (g, h) = item_derivatives(x, counts, nodes, bounds, prior);
        let Some(mut d) = solve3(h, g) else { break };
        // cap the step in transformed space
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 2.0 {
            d.iter_mut().for_each(|v| *v *= 2.0 / norm);
        }
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = bounds.clamp([x[0] + step * d[0], x[1] + step * d[1], x[2] + step * d[2]]);
            let fc = item_objective(cand, counts, nodes, bounds, prior);
            if fc > fx {
                let moved = cand.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let gain = fc - fx;
                x = cand;
                fx = fc;
                improved = moved > 1e-9 && gain > 1e-12;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    x
}

struct Accumulator {
    right: Vec<f64>,
    wrong: Vec<f64>,
    log_likelihood: f64,
}

/// Deterministic E-step: fixed person chunks, reduced in order.
fn e_step(
    responses: &[Option<bool>],
    n_persons: usize,
    n_items: usize,
    active: &[usize],
    log_p: &[f64],
    log_q: &[f64],
    log_w: &[f64],
) -> Accumulator {
    let nq = log_w.len();
    let chunks: Vec<Accumulator> = (0..n_persons.div_ceil(PERSON_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Accumulator {
                right: vec![0.0; n_items * nq],
                wrong: vec![0.0; n_items * nq],
                log_likelihood: 0.0,
            };
            let mut post = vec![0.0; nq];
            let lo = chunk * PERSON_CHUNK;
            let hi = (lo + PERSON_CHUNK).min(n_persons);
            for person in lo..hi {
                let row = &responses[person * n_items..(person + 1) * n_items];
                post.copy_from_slice(log_w);
                for &j in active {
                    let table = match row[j] {
                        Some(true) => &log_p[j * nq..(j + 1) * nq],
                        Some(false) => &log_q[j * nq..(j + 1) * nq],
                        None => continue,
                    };
                    post.iter_mut().zip(table).for_each(|(a, b)| *a += b);
                }
                let max = post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut mass = 0.0;
                for v in post.iter_mut() {
                    *v = (*v - max).exp();
                    mass += *v;
                }
                acc.log_likelihood += max + mass.ln();
                post.iter_mut().for_each(|v| *v /= mass);
                for &j in active {
                    let target = match row[j] {
                        Some(true) => &mut acc.right[j * nq..(j + 1) * nq],
                        Some(false) => &mut acc.wrong[j * nq..(j + 1) * nq],
                        None => continue,
                    };
                    target.iter_mut().zip(&post).for_each(|(a, b)| *a += b);
                }
            }
            acc
        })
        .collect();
    let mut total = Accumulator {
        right: vec![0.0; n_items * nq],
        wrong: vec![0.0; n_items * nq],
        log_likelihood: 0.0,
    };
    for acc in chunks {
        total.log_likelihood += acc.log_likelihood;
        total.right.iter_mut().zip(&acc.right).for_each(|(a, b)| *a += b);
        total.wrong.iter_mut().zip(&acc.wrong).for_each(|(a, b)| *a += b);
    }
    total
}

fn starting_values(p_correct: f64, c0: f64, bounds: &Bounds) -> ItemParameters {
    let adjusted = ((p_correct - c0) / (1.0 - c0)).clamp(0.02, 0.98);
    let b = (-1.16 * (adjusted / (1.0 - adjusted)).ln()).clamp(bounds.b.0, bounds.b.1);
    ItemParameters { a: 1.0, b, c: c0 }
}

/// MML-EM fit of every item in `matrix` (one partition).
pub fn calibrate_partition(matrix: &ResponseMatrix, config: &CalibrationConfig) -> Result<PartitionFit, CalibrationError> {
    let n_persons = matrix.n_models();
    let n_items = matrix.n_items();
    if n_items == 0 || n_persons == 0 {
        return Err(CalibrationError::EmptyInput);
    }
    if n_persons < 100 {
        log::warn!("calibrating {n_items} items on only {n_persons} respondents");
    }
    let grid: QuadratureGrid = config.grid()?;
    let nodes = grid.nodes().to_vec();
    let nq = nodes.len();
    let log_w: Vec<f64> = grid.weights().iter().map(|w| w.ln()).collect();
    let bounds = Bounds::from(config);
    let prior = config.c_prior;

    let mut responses = Vec::with_capacity(n_persons * n_items);
    for m in 0..n_persons {
        responses.extend_from_slice(matrix.row(m));
    }

    let c0 = prior.map(|p| p.alpha / (p.alpha + p.beta)).unwrap_or(0.1).min(0.5 * config.c_max);
    let mut params = Vec::with_capacity(n_items);
    let mut active = Vec::with_capacity(n_items);
    let mut degenerate = Vec::new();
    for j in 0..n_items {
        let observed: Vec<bool> = matrix.column(j).flatten().collect();
        let right = observed.iter().filter(|v| **v).count();
        if right == 0 || right == observed.len() {
            let b = if right == 0 { bounds.b.1 } else { bounds.b.0 };
            params.push(ItemParameters { a: config.a_bounds.0, b, c: 0.0 });
            degenerate.push(matrix.item_ids()[j].clone());
        } else {
            params.push(starting_values(right as f64 / observed.len() as f64, c0, &bounds));
            active.push(j);
        }
    }
    let mut x: Vec<[f64; 3]> = params.iter().map(|p| bounds.encode(p)).collect();
    for &j in &active {
        params[j] = bounds.decode(x[j]);
    }

    let penalty = |params: &[ItemParameters]| -> f64 {
        prior.map_or(0.0, |pr| active.iter().map(|&j| pr.log_density(params[j].c)).sum())
    };

    let mut log_p = vec![0.0; n_items * nq];
    let mut log_q = vec![0.0; n_items * nq];
    let mut objective_trace = Vec::new();
    let mut log_likelihood_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_em_iterations {
        iterations += 1;
        for &j in &active {
            for (q, &theta) in nodes.iter().enumerate() {
                let (lp, lq) = log_probs(&params[j], theta);
                log_p[j * nq + q] = lp;
                log_q[j * nq + q] = lq;
            }
        }
        let acc = e_step(&responses, n_persons, n_items, &active, &log_p, &log_q, &log_w);
        log_likelihood_trace.push(acc.log_likelihood);
        objective_trace.push(acc.log_likelihood + penalty(&params));

        let updated: Vec<(usize, [f64; 3])> = active
            .par_iter()
            .map(|&j| {
                let counts = ItemCounts {
                    right: &acc.right[j * nq..(j + 1) * nq],
                    wrong: &acc.wrong[j * nq..(j + 1) * nq],
                };
                (j, maximize_item(x[j], &counts, &nodes, &bounds, prior))
            })
            .collect();
        let mut change: f64 = 0.0;
        for (j, xj) in updated {
            let new = bounds.decode(xj);
            let old = params[j];
            change = change.max((new.a - old.a).abs()).max((new.b - old.b).abs()).max((new.c - old.c).abs());
            x[j] = xj;
            params[j] = new;
        }
        if change < config.em_tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("EM stopped after {iterations} iterations without meeting tolerance {}", config.em_tolerance);
    }

    Ok(PartitionFit {
        item_ids: matrix.item_ids().to_vec(),
        params,
        converged,
        iterations,
        objective_trace,
        log_likelihood_trace,
        degenerate_items: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::icc_3pl;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn simulate(items: &[ItemParameters], n: usize, seed: u64) -> ResponseMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<bool>> = (0..n)
            .map(|_| {
                let theta: f64 = StandardNormal.sample(&mut rng);
                items.iter().map(|p| rng.gen_bool(icc_3pl(p, theta))).collect()
            })
            .collect();
        ResponseMatrix::from_rows(
            (0..n).map(|i| format!("m{i}")).collect(),
            (0..items.len()).map(|i| format!("i{i}")).collect(),
            &rows,
        )
        .unwrap()
    }

    #[test]
    fn solve3_matches_known_system() {
        let h = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let x = [1.0, -2.0, 0.5];
        let g = [4.0 - 2.0, 1.0 - 6.0 + 0.5, -2.0 + 1.0];
        let d = solve3(h, g).unwrap();
        for i in 0..3 {
            assert!((d[i] - x[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn recovers_single_item_difficulty() {
        let target = ItemParameters::new(1.5, 0.5, 0.2).unwrap();
        // companions give the E-step something to sort respondents with
        let mut items = vec![target];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..19 {
            items.push(ItemParameters::new(rng.gen_range(0.8..2.0), rng.gen_range(-2.0..2.0), 0.15).unwrap());
        }
        let m = simulate(&items, 5000, 7);
        let fit = calibrate_partition(&m, &CalibrationConfig::default()).unwrap();
        assert!((fit.params[0].b - 0.5).abs() <= 0.1, "b̂ = {}", fit.params[0].b);
    }

    #[test]
    fn objective_is_nondecreasing() {
        let items: Vec<_> = (0..15)
            .map(|i| ItemParameters::new(0.8 + 0.1 * i as f64, -1.5 + 0.2 * i as f64, 0.1).unwrap())
            .collect();
        let m = simulate(&items, 800, 3);
        for prior in [CalibrationConfig::default().c_prior, None] {
            let cfg = CalibrationConfig { c_prior: prior, ..Default::default() };
            let fit = calibrate_partition(&m, &cfg).unwrap();
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn identical_columns_get_identical_parameters() {
        let items: Vec<_> = (0..10).map(|i| ItemParameters::new(1.2, -1.0 + 0.2 * i as f64, 0.1).unwrap()).collect();
        let base = simulate(&items, 600, 5);
        let mut rows: Vec<Vec<bool>> = (0..600).map(|r| base.row(r).iter().map(|v| v.unwrap()).collect()).collect();
        for row in rows.iter_mut() {
            let dup = row[3];
            row.push(dup);
        }
        let mut ids: Vec<String> = base.item_ids().to_vec();
        ids.push("dup".into());
        let m = ResponseMatrix::from_rows(base.model_ids().to_vec(), ids, &rows).unwrap();
        let cfg = CalibrationConfig::default();
        let fit = calibrate_partition(&m, &cfg).unwrap();
        let (p, q) = (fit.params[3], fit.params[10]);
        assert!((p.a - q.a).abs() < cfg.em_tolerance && (p.b - q.b).abs() < cfg.em_tolerance && (p.c - q.c).abs() < cfg.em_tolerance);
    }

    #[test]
    fn constant_column_pinned_to_bounds() {
        let items: Vec<_> = (0..6).map(|i| ItemParameters::new(1.0, -1.0 + 0.4 * i as f64, 0.0).unwrap()).collect();
        let base = simulate(&items, 300, 8);
        let mut rows: Vec<Vec<bool>> = (0..300).map(|r| base.row(r).iter().map(|v| v.unwrap()).collect()).collect();
        rows.iter_mut().for_each(|r| r.push(true));
        let mut ids: Vec<String> = base.item_ids().to_vec();
        ids.push("easy".into());
        let m = ResponseMatrix::from_rows(base.model_ids().to_vec(), ids, &rows).unwrap();
        let fit = calibrate_partition(&m, &CalibrationConfig::default()).unwrap();
        assert_eq!(fit.degenerate_items, vec!["easy".to_string()]);
        assert_eq!(fit.params[6].b, -6.0);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let items: Vec<_> = (0..8).map(|i| ItemParameters::new(1.0, -1.0 + 0.3 * i as f64, 0.2).unwrap()).collect();
        let m = simulate(&items, 300, 1);
        let cfg = CalibrationConfig { max_em_iterations: 2, em_tolerance: 1e-12, ..Default::default() };
        let fit = calibrate_partition(&m, &cfg).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 2);
    }
}
