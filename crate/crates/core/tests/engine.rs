mod common;

use std::collections::HashSet;
use std::sync::Arc;

use adaptest::analytics::spearman;
use adaptest::bank::ItemBank;
use adaptest::cat::{batch_run, run_session, CatConfig, SessionStatus};
use adaptest::respondents::{Responder, SimulatedResponder};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn rich_bank() -> Arc<ItemBank> {
    Arc::new(bank_of(&random_items(300, 11)))
}

fn sim(id: &str, theta: f64, bank: &Arc<ItemBank>, seed: u64) -> Box<dyn Responder> {
    Box::new(SimulatedResponder::new(id, theta, Arc::clone(bank), seed))
}

#[test]
fn seeded_run_at_average_ability_converges() {
    let bank = rich_bank();
    let mut r = SimulatedResponder::new("avg", 0.0, Arc::clone(&bank), 1);
    let out = run_session(Arc::clone(&bank), &CatConfig { se_threshold: 0.3, ..Default::default() }, &mut r).unwrap();
    assert_eq!(out.status, SessionStatus::Converged);
    assert!(out.record.len() >= 30);
    assert!(out.estimate.se <= 0.3);
}

#[test]
fn substreams_replay_independently() {
    let bank = rich_bank();
    let cfg = CatConfig { rng_seed: 42, ..Default::default() };
    let both = batch_run(Arc::clone(&bank), &cfg, vec![sim("a", 0.5, &bank, 42), sim("b", -1.0, &bank, 42)]).unwrap();
    let alone = batch_run(Arc::clone(&bank), &cfg, vec![sim("b", -1.0, &bank, 42)]).unwrap();
    assert_eq!(both.outcomes[1].to_jsonl(), alone.outcomes[0].to_jsonl());
    assert_ne!(both.outcomes[0].stream, both.outcomes[1].stream);
    let again = batch_run(Arc::clone(&bank), &cfg, vec![sim("a", 0.5, &bank, 42), sim("b", -1.0, &bank, 42)]).unwrap();
    assert_eq!(both.manifest, again.manifest);
}

#[test]
fn randomesque_covers_more_items_than_greedy() {
    let bank = rich_bank();
    let distinct = |top_k| {
        let responders: Vec<Box<dyn Responder>> = (0..1000).map(|i| sim(&format!("r{i}"), 0.7, &bank, 5)).collect();
        let cfg = CatConfig { top_k, min_items: 30, max_items: 30, rng_seed: 5, ..Default::default() };
        let out = batch_run(Arc::clone(&bank), &cfg, responders).unwrap();
        out.outcomes.iter().flat_map(|o| o.item_ids()).collect::<HashSet<_>>().len()
    };
    let (five, one) = (distinct(5), distinct(1));
    assert!(five > one, "{five} vs {one}");
}

#[test]
fn administered_difficulty_tracks_ability() {
    let bank = rich_bank();
    let mut r = rng(12);
    let thetas: Vec<f64> = (0..200).map(|_| r.gen_range(-3.0..3.0)).collect();
    let responders: Vec<Box<dyn Responder>> = thetas.iter().enumerate().map(|(i, &t)| sim(&format!("r{i}"), t, &bank, 12)).collect();
    let out = batch_run(Arc::clone(&bank), &CatConfig { rng_seed: 12, ..Default::default() }, responders).unwrap();
    let mean_b: Vec<f64> = out
        .outcomes
        .iter()
        .map(|o| o.record.item_ids().map(|id| bank.params(id).unwrap().b).sum::<f64>() / o.record.len() as f64)
        .collect();
    let rho = spearman(&mean_b, &thetas).unwrap();
    assert!(rho > 0.5, "{rho}");
}

#[test]
fn responder_failure_keeps_partial_record() {
    struct Flaky(usize);
    impl Responder for Flaky {
        fn respondent_id(&self) -> &str {
            "flaky"
        }
        fn respond(&mut self, item: &str) -> Result<bool, adaptest::respondents::ResponderError> {
            self.0 += 1;
            if self.0 > 7 {
                Err(adaptest::respondents::ResponderError::MissingResponse { respondent: "flaky".into(), item: item.into() })
            } else {
                Ok(self.0 % 2 == 0)
            }
        }
    }
    let bank = rich_bank();
    let out = run_session(Arc::clone(&bank), &CatConfig::default(), &mut Flaky(0)).unwrap();
    assert_eq!(out.status, SessionStatus::Aborted);
    assert_eq!(out.record.len(), 7);
    assert!(out.error.is_some());
    let batch = batch_run(bank, &CatConfig::default(), vec![Box::new(Flaky(0)), sim("ok", 0.0, &rich_bank(), 1)]).unwrap();
    assert_eq!(batch.completed(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn sessions_are_sound(seed in any::<u64>(), theta in -3.5f64..3.5, tau in 0.15f64..0.5, top_k in 1usize..8, min_items in 5usize..40) {
        let bank = Arc::new(bank_of(&random_items(80, seed % 1000)));
        let cfg = CatConfig { se_threshold: tau, top_k, min_items, max_items: 60, rng_seed: seed, ..Default::default() };
        let mut r = SimulatedResponder::new("p", theta, Arc::clone(&bank), seed);
        let out = run_session(Arc::clone(&bank), &cfg, &mut r).unwrap();
        let ids: Vec<&str> = out.record.item_ids().collect();
        let unique: HashSet<&str> = ids.iter().copied().collect();
        prop_assert_eq!(unique.len(), ids.len());
        prop_assert!(ids.iter().all(|id| bank.get(id).unwrap().is_operational()));
        prop_assert_eq!(out.record.trajectory().len(), out.record.len());
        match out.status {
            SessionStatus::Converged => prop_assert!(out.record.len() >= min_items && out.estimate.se <= tau),
            SessionStatus::ExhaustedMax => prop_assert_eq!(out.record.len(), 60),
            SessionStatus::BankExhausted => prop_assert_eq!(out.record.len(), bank.operational_count()),
            other => prop_assert!(false, "unexpected status {:?}", other),
        }
    }

    #[test]
    fn item_sequence_is_determined_by_inputs(seed in any::<u64>(), pattern in prop::collection::vec(any::<bool>(), 60)) {
        struct Scripted(Vec<bool>, usize);
        impl Responder for Scripted {
            fn respondent_id(&self) -> &str { "s" }
            fn respond(&mut self, _: &str) -> Result<bool, adaptest::respondents::ResponderError> {
                self.1 += 1;
                Ok(self.0[(self.1 - 1) % self.0.len()])
            }
        }
        let bank = Arc::new(bank_of(&random_items(80, 3)));
        let cfg = CatConfig { rng_seed: seed, max_items: 60, ..Default::default() };
        let a = run_session(Arc::clone(&bank), &cfg, &mut Scripted(pattern.clone(), 0)).unwrap();
        let b = run_session(Arc::clone(&bank), &cfg, &mut Scripted(pattern, 0)).unwrap();
        prop_assert_eq!(a.to_jsonl(), b.to_jsonl());
    }
}
