//! Online selection loop: a max-priority queue over candidate policies keyed
//! by (priority, OPE tie rank), a transition-budget ledger, and the
//! pop → fine-tune → evaluate → forecast → push cycle with final selection
//! from the policy store.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::envsim::FineTuneEnv;
use crate::error::{Error, Result};
use crate::rngutil::mix_seed2;
use crate::valuemodel::{forecast_ucb, ValueSeries};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Scheduling priority of one candidate. Ordering: higher priority first; on
/// ties, lower tie rank first; then lower insertion sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeapEntry {
    pub policy_id: usize,
    pub priority: f64,
    /// OPE rank for never-fine-tuned policies; 0 once fine-tuned.
    pub tie_rank: usize,
    pub seq: u64,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tie_rank.cmp(&self.tie_rank))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Transition-level accounting of the online interaction budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub total_transitions: u64,
    pub consumed: u64,
    pub finetune_cost: u64,
    pub eval_cost: u64,
}

impl BudgetLedger {
    pub fn new(total_transitions: u64, finetune_cost: u64, eval_cost: u64) -> Result<Self> {
        if finetune_cost == 0 || eval_cost == 0 {
            return Err(Error::Input("per-iteration costs must be positive".into()));
        }
        Ok(Self {
            total_transitions,
            consumed: 0,
            finetune_cost,
            eval_cost,
        })
    }

    pub fn iteration_cost(&self) -> u64 {
        self.finetune_cost + self.eval_cost
    }

    pub fn max_iterations(&self) -> usize {
        (self.total_transitions / self.iteration_cost()) as usize
    }

    pub fn remaining_iterations(&self) -> usize {
        ((self.total_transitions - self.consumed) / self.iteration_cost()) as usize
    }

    fn charge_iteration(&mut self) -> Result<()> {
        let next = self.consumed + self.iteration_cost();
        if next > self.total_transitions {
            return Err(Error::Invariant(format!(
                "budget overrun: consuming {} of {} transitions",
                next, self.total_transitions
            )));
        }
        self.consumed = next;
        Ok(())
    }
}

/// Whole iterations still affordable: `floor(remaining / per-iteration cost)`.
pub fn remaining_iterations(ledger: &BudgetLedger) -> usize {
    ledger.remaining_iterations()
}

/// One element of the policy store: a fine-tuned checkpoint with its
/// estimated value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub policy_id: usize,
    pub iteration: usize,
    pub est_value: f64,
}

/// Per-iteration log record, emitted as JSON lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub policy_id: usize,
    pub popped_priority: f64,
    pub eval_value: f64,
    pub pushed_priority: f64,
    pub consumed_transitions: u64,
}

/// Mutable state of the online selection loop.
#[derive(Debug, Clone)]
pub struct SelectorState {
    heap: BinaryHeap<HeapEntry>,
    series: Vec<ValueSeries>,
    store: Vec<PolicyRecord>,
    ledger: BudgetLedger,
    iter_counts: Vec<usize>,
    pseudo_count: usize,
    seq_counter: u64,
}

impl SelectorState {
    pub fn heap_len(&self) -> usize {
        self.heap.len()
    }

    pub fn series(&self, policy_id: usize) -> &ValueSeries {
        &self.series[policy_id]
    }

    pub fn store(&self) -> &[PolicyRecord] {
        &self.store
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    pub fn iter_count(&self, policy_id: usize) -> usize {
        self.iter_counts[policy_id]
    }

    /// Pops the top entry. Exposed for tests of the queue ordering.
    pub fn pop(&mut self) -> Option<HeapEntry> {
        self.heap.pop()
    }
}

/// Builds the initial state: every policy's series holds the pseudo prefix
/// plus the iteration-0 anchor, all set to `behavior_value`, and the heap
/// holds one entry per policy at priority `behavior_value` with its OPE rank
/// as tie rank.
pub fn init_state(
    num_policies: usize,
    ope_ranks: &[usize],
    behavior_value: f64,
    pseudo_count: usize,
    ledger: BudgetLedger,
) -> Result<SelectorState> {
    if ope_ranks.len() != num_policies || !is_permutation_1_to_k(ope_ranks) {
        return Err(Error::Input(format!(
            "ope_ranks must be a permutation of 1..={num_policies}, got {ope_ranks:?}"
        )));
    }
    let mut series = Vec::with_capacity(num_policies);
    let mut heap = BinaryHeap::with_capacity(num_policies);
    for (i, &rank) in ope_ranks.iter().enumerate() {
        series.push(ValueSeries::with_pseudo(i, behavior_value, pseudo_count)?);
        heap.push(HeapEntry {
            policy_id: i,
            priority: behavior_value,
            tie_rank: rank,
            seq: i as u64,
        });
    }
    Ok(SelectorState {
        heap,
        series,
        store: Vec::new(),
        ledger,
        iter_counts: vec![0; num_policies],
        pseudo_count,
        seq_counter: num_policies as u64,
    })
}

fn is_permutation_1_to_k(ranks: &[usize]) -> bool {
    let k = ranks.len();
    let mut seen = vec![false; k + 1];
    for &r in ranks {
        if r == 0 || r > k || seen[r] {
            return false;
        }
        seen[r] = true;
    }
    true
}

/// Converts OPE estimates to ranks: rank 1 for the highest estimate. Ties go
/// to the lower policy id.
pub fn ope_ranks_from_estimates(estimates: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..estimates.len()).collect();
    idx.sort_by(|&a, &b| estimates[b].total_cmp(&estimates[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; estimates.len()];
    for (r, &i) in idx.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Runs the online loop for exactly `max_iterations` iterations: pop, one
/// fine-tuning step, one evaluation, model refit and UCB forecast over the
/// remaining horizon, push at tie rank 0. Returns the best stored record and
/// the per-iteration history.
///
/// Forecast randomness is drawn from a child seed per (iteration, policy)
/// derived from `master_seed`, so simulations are order-stable.
pub fn run(
    state: &mut SelectorState,
    env: &mut FineTuneEnv,
    num_paths: usize,
    quantile: f64,
    master_seed: u64,
) -> Result<(PolicyRecord, Vec<IterationLog>)> {
    let max_iterations = state.ledger.remaining_iterations();
    if max_iterations == 0 {
        return Err(Error::Precondition(
            "budget admits no iterations".into(),
        ));
    }
    let num_policies = state.series.len();
    let mut history = Vec::with_capacity(max_iterations);

    for j in 1..=max_iterations {
        let entry = state
            .heap
            .pop()
            .ok_or_else(|| Error::Invariant("heap empty during run".into()))?;
        let i = entry.policy_id;

        env.fine_tune(i)?;
        let value = env.evaluate(i)?;
        state.ledger.charge_iteration()?;

        state.series[i].push(value)?;
        state.iter_counts[i] += 1;
        state.store.push(PolicyRecord {
            policy_id: i,
            iteration: state.iter_counts[i],
            est_value: value,
        });
        if state.series[i].len() != state.pseudo_count + 1 + state.iter_counts[i] {
            return Err(Error::Invariant(format!(
                "series bookkeeping broken for policy {i}"
            )));
        }

        let horizon = state.ledger.remaining_iterations();
        debug_assert_eq!(horizon, max_iterations - j);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed2(master_seed, j as u64, i as u64));
        let forecast = forecast_ucb(&state.series[i], horizon, num_paths, quantile, &mut rng)?;

        state.seq_counter += 1;
        state.heap.push(HeapEntry {
            policy_id: i,
            priority: forecast.max_ucb,
            tie_rank: 0,
            seq: state.seq_counter,
        });
        if state.heap.len() != num_policies {
            return Err(Error::Invariant("heap size drifted from K".into()));
        }

        history.push(IterationLog {
            iter: j,
            policy_id: i,
            popped_priority: entry.priority,
            eval_value: value,
            pushed_priority: forecast.max_ucb,
            consumed_transitions: state.ledger.consumed,
        });
    }

    let best = final_select(&state.store)?;
    Ok((best, history))
}

/// Returns the stored record with the highest estimated value; ties break to
/// the earliest iteration, then the lowest policy id.
pub fn final_select(store: &[PolicyRecord]) -> Result<PolicyRecord> {
    store
        .iter()
        .copied()
        .max_by(|a, b| {
            a.est_value
                .total_cmp(&b.est_value)
                .then_with(|| b.iteration.cmp(&a.iteration))
                .then_with(|| b.policy_id.cmp(&a.policy_id))
        })
        .ok_or_else(|| Error::Precondition("final selection from empty store".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{EnvConfig, TrueCurve};
    use proptest::prelude::*;

    fn env_from_curves(curves: Vec<Vec<f64>>, behavior_value: f64) -> FineTuneEnv {
        let config = EnvConfig {
            curves: curves
                .into_iter()
                .enumerate()
                .map(|(i, v)| TrueCurve::new(i, v).unwrap())
                .collect(),
            eval_noise_std: 0.0,
            ope_noise_std: 0.0,
            ope_bias: 0.0,
            random_policy_value: 0.0,
            behavior_value,
            seed: 0,
        };
        FineTuneEnv::new(config).unwrap()
    }

    fn ledger(iterations: u64) -> BudgetLedger {
        BudgetLedger::new(iterations * 20_000, 10_000, 10_000).unwrap()
    }

    #[test]
    fn equal_priorities_pop_in_rank_order() {
        let mut state = init_state(3, &[2, 1, 3], 0.4, 5, ledger(4)).unwrap();
        // Policy ids are 0-based; ranks (2, 1, 3) mean policy 1 leads.
        assert_eq!(state.pop().unwrap().policy_id, 1);
        assert_eq!(state.pop().unwrap().policy_id, 0);
        assert_eq!(state.pop().unwrap().policy_id, 2);
    }

    #[test]
    fn single_policy_init_shapes() {
        let state = init_state(1, &[1], 0.0, 5, ledger(1)).unwrap();
        assert_eq!(state.heap_len(), 1);
        assert_eq!(state.series(0).len(), 6);
    }

    #[test]
    fn identity_ranks_pop_in_id_order() {
        let ranks: Vec<usize> = (1..=16).collect();
        let mut state = init_state(16, &ranks, 0.0, 5, ledger(8)).unwrap();
        for expected in 0..16 {
            assert_eq!(state.pop().unwrap().policy_id, expected);
        }
    }

    #[test]
    fn bad_ranks_rejected() {
        assert!(init_state(3, &[1, 1, 2], 0.0, 5, ledger(1)).is_err());
        assert!(init_state(3, &[0, 1, 2], 0.0, 5, ledger(1)).is_err());
        assert!(init_state(3, &[1, 2], 0.0, 5, ledger(1)).is_err());
    }

    #[test]
    fn improving_policy_dominates_regressing_one() {
        let mut env = env_from_curves(
            vec![vec![0.5, 0.6, 0.7, 0.8, 0.85], vec![0.5, 0.3, 0.2, 0.1, 0.05]],
            0.5,
        );
        let mut state = init_state(2, &[1, 2], 0.5, 5, ledger(4)).unwrap();
        let (best, history) = run(&mut state, &mut env, 100, 0.95, 0).unwrap();
        let good_count = history.iter().filter(|h| h.policy_id == 0).count();
        assert!(good_count >= 3, "history: {history:?}");
        assert_eq!(best.policy_id, 0);
    }

    #[test]
    fn single_iteration_budget() {
        let mut env = env_from_curves(vec![vec![0.5, 0.6, 0.7], vec![0.5, 0.4, 0.3]], 0.5);
        let mut state = init_state(2, &[1, 2], 0.5, 5, ledger(1)).unwrap();
        let (best, history) = run(&mut state, &mut env, 100, 0.95, 0).unwrap();
        assert_eq!(history.len(), 1);
        assert_eq!(env.fine_tune_calls(), 1);
        assert_eq!(env.evaluate_calls(), 1);
        assert_eq!(best.est_value, history[0].eval_value);
    }

    #[test]
    fn rank_tie_break_at_equal_initial_priorities() {
        let mut env = env_from_curves(vec![vec![0.5; 8], vec![0.5; 8]], 0.5);
        let mut state = init_state(2, &[1, 2], 0.5, 5, ledger(2)).unwrap();
        let (_, history) = run(&mut state, &mut env, 50, 0.95, 0).unwrap();
        assert_eq!(history[0].policy_id, 0);
    }

    #[test]
    fn budget_conservation_and_iteration_count() {
        let mut env = env_from_curves(vec![vec![0.5; 10], vec![0.4; 10]], 0.5);
        let led = BudgetLedger::new(95_000, 10_000, 10_000).unwrap();
        assert_eq!(led.max_iterations(), 4);
        let mut state = init_state(2, &[1, 2], 0.5, 5, led).unwrap();
        let (_, history) = run(&mut state, &mut env, 20, 0.95, 0).unwrap();
        assert_eq!(history.len(), 4);
        assert_eq!(state.ledger().consumed, 80_000);
        assert!(state.ledger().consumed <= state.ledger().total_transitions);
        assert_eq!(env.fine_tune_calls(), 4);
        assert_eq!(env.evaluate_calls(), 4);
    }

    #[test]
    fn popped_policies_are_promoted_to_rank_zero() {
        let mut env = env_from_curves(vec![vec![0.5; 10], vec![0.4; 10]], 0.5);
        let mut state = init_state(2, &[1, 2], 0.5, 5, ledger(3)).unwrap();
        let (_, history) = run(&mut state, &mut env, 20, 0.95, 0).unwrap();
        // After the run, drain the heap: any policy that appeared in history
        // must carry tie_rank 0.
        let touched: Vec<usize> = history.iter().map(|h| h.policy_id).collect();
        while let Some(entry) = state.pop() {
            if touched.contains(&entry.policy_id) {
                assert_eq!(entry.tie_rank, 0);
            }
        }
    }

    #[test]
    fn series_bookkeeping_holds_after_run() {
        let mut env = env_from_curves(vec![vec![0.5; 10], vec![0.6; 10]], 0.5);
        let mut state = init_state(2, &[2, 1], 0.5, 5, ledger(5)).unwrap();
        run(&mut state, &mut env, 20, 0.95, 3).unwrap();
        for i in 0..2 {
            assert_eq!(state.series(i).len(), 5 + 1 + state.iter_count(i));
        }
    }

    #[test]
    fn run_is_reproducible() {
        let curves = vec![vec![0.5, 0.55, 0.6, 0.62, 0.61, 0.6], vec![0.5, 0.45, 0.5, 0.55, 0.6, 0.65]];
        let mut a_env = env_from_curves(curves.clone(), 0.5);
        let mut b_env = env_from_curves(curves, 0.5);
        let mut a = init_state(2, &[1, 2], 0.5, 5, ledger(5)).unwrap();
        let mut b = init_state(2, &[1, 2], 0.5, 5, ledger(5)).unwrap();
        let ra = run(&mut a, &mut a_env, 100, 0.95, 42).unwrap();
        let rb = run(&mut b, &mut b_env, 100, 0.95, 42).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn final_select_examples() {
        let rec = |p, i, v| PolicyRecord {
            policy_id: p,
            iteration: i,
            est_value: v,
        };
        let store = [rec(0, 1, 0.5), rec(1, 1, 0.9), rec(0, 2, 0.7)];
        assert_eq!(final_select(&store).unwrap(), rec(1, 1, 0.9));

        let tied = [rec(0, 3, 0.9), rec(1, 1, 0.9)];
        assert_eq!(final_select(&tied).unwrap(), rec(1, 1, 0.9));

        let single = [rec(4, 2, 0.1)];
        assert_eq!(final_select(&single).unwrap(), rec(4, 2, 0.1));

        assert!(final_select(&[]).is_err());
    }

    #[test]
    fn remaining_iterations_paper_parameters() {
        let mut led = BudgetLedger::new(160_000, 10_000, 10_000).unwrap();
        assert_eq!(remaining_iterations(&led), 8);
        led.consumed = 140_000;
        assert_eq!(remaining_iterations(&led), 1);
        let led2 = BudgetLedger::new(320_000, 10_000, 10_000).unwrap();
        assert_eq!(remaining_iterations(&led2), 16);
    }

    proptest! {
        #[test]
        fn heap_pop_order_matches_brute_force_sort(
            entries in proptest::collection::vec(
                (0usize..8, -10.0..10.0f64, 0usize..9, 0u64..100),
                1..32,
            )
        ) {
            let entries: Vec<HeapEntry> = entries
                .into_iter()
                .map(|(policy_id, priority, tie_rank, seq)| HeapEntry {
                    policy_id, priority, tie_rank, seq,
                })
                .collect();
            let mut heap = BinaryHeap::new();
            for e in &entries {
                heap.push(*e);
            }
            let mut expected = entries.clone();
            expected.sort_by(|a, b| {
                b.priority
                    .total_cmp(&a.priority)
                    .then_with(|| a.tie_rank.cmp(&b.tie_rank))
                    .then_with(|| a.seq.cmp(&b.seq))
            });
            let mut popped = Vec::new();
            while let Some(e) = heap.pop() {
                popped.push(e);
            }
            prop_assert_eq!(popped, expected);
        }
    }
}
