//! Comparison strategies (OPE, Best, OE, FT), the budget-constrained oracle,
//! and min-max score normalization.

use serde::{Deserialize, Serialize};

use crate::envsim::FineTuneEnv;
use crate::error::{Error, Result};
use crate::selector::BudgetLedger;

/// Strategy identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Strategy {
    /// Select the pretrained policy with the highest OPE estimate.
    Ope,
    /// Select the pretrained policy with the highest true value.
    Best,
    /// Online evaluation: split the budget equally, evaluate, select.
    Oe,
    /// Fine-tune the OPE pick with the whole budget.
    Ft,
    /// The adaptive UCB-scheduled selector.
    Ours,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Ope,
        Strategy::Best,
        Strategy::Oe,
        Strategy::Ft,
        Strategy::Ours,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ope => "OPE",
            Strategy::Best => "BEST",
            Strategy::Oe => "OE",
            Strategy::Ft => "FT",
            Strategy::Ours => "OURS",
        }
    }
}

/// Outcome of running one strategy: the chosen checkpoint and its true value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub policy_id: usize,
    pub iteration: usize,
    pub true_value: f64,
}

/// Strategy outcome with its min-max normalized score, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub selected_policy: usize,
    pub selected_iteration: usize,
    pub true_value: f64,
    pub normalized_score: f64,
}

/// Best (policy, iteration, value) achievable with full knowledge of the
/// true curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_policy: usize,
    pub best_iteration: usize,
    pub best_value: f64,
}

fn argmax_lowest_id(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Selects the pretrained policy with the highest OPE estimate; no budget is
/// consumed and no fine-tuning happens.
pub fn run_ope_baseline(env: &FineTuneEnv) -> Result<Selection> {
    let policy_id = argmax_lowest_id(env.ope_estimates());
    Ok(Selection {
        policy_id,
        iteration: 0,
        true_value: env.true_value(policy_id, 0)?,
    })
}

/// Hypothetical upper bound for no-fine-tuning selection: the pretrained
/// policy with the highest true value.
pub fn run_best_baseline(env: &FineTuneEnv) -> Result<Selection> {
    let pretrained: Vec<f64> = (0..env.num_policies())
        .map(|i| env.true_value(i, 0))
        .collect::<Result<_>>()?;
    let policy_id = argmax_lowest_id(&pretrained);
    Ok(Selection {
        policy_id,
        iteration: 0,
        true_value: pretrained[policy_id],
    })
}

/// Online evaluation: each policy receives an equal share of the budget as
/// repeated iteration-0 evaluations; the highest sample mean wins. Leftover
/// transitions below one per-policy round are discarded.
pub fn run_oe_baseline(env: &mut FineTuneEnv, ledger: &BudgetLedger) -> Result<Selection> {
    let k = env.num_policies() as u64;
    let evals_per_policy = ledger.total_transitions / (k * ledger.eval_cost);
    if evals_per_policy == 0 {
        return Err(Error::Precondition(format!(
            "budget {} admits no evaluation per policy (K={k}, eval_cost={})",
            ledger.total_transitions, ledger.eval_cost
        )));
    }
    let mut means = Vec::with_capacity(env.num_policies());
    for i in 0..env.num_policies() {
        let mut sum = 0.0;
        for _ in 0..evals_per_policy {
            sum += env.evaluate(i)?;
        }
        means.push(sum / evals_per_policy as f64);
    }
    let policy_id = argmax_lowest_id(&means);
    Ok(Selection {
        policy_id,
        iteration: 0,
        true_value: env.true_value(policy_id, 0)?,
    })
}

/// Fine-tunes the OPE-selected policy with the entire budget, evaluating
/// after each iteration, and returns the best evaluated checkpoint.
pub fn run_ft_baseline(env: &mut FineTuneEnv, ledger: &BudgetLedger) -> Result<Selection> {
    let max_iterations = ledger.max_iterations();
    if max_iterations == 0 {
        return Err(Error::Precondition("budget admits no iterations".into()));
    }
    let policy_id = argmax_lowest_id(env.ope_estimates());
    let mut best_est = f64::NEG_INFINITY;
    let mut best_iter = 0;
    for j in 1..=max_iterations {
        env.fine_tune(policy_id)?;
        let est = env.evaluate(policy_id)?;
        if est > best_est {
            best_est = est;
            best_iter = j;
        }
    }
    Ok(Selection {
        policy_id,
        iteration: best_iter,
        true_value: env.true_value(policy_id, best_iter)?,
    })
}

/// Exhaustive scan of every policy's true curve over iterations
/// `0..=max_iterations`, granting the full budget to each policy
/// independently. Ties break to the earliest iteration, then the lowest
/// policy id.
pub fn compute_oracle(env: &FineTuneEnv, ledger: &BudgetLedger) -> Result<OracleResult> {
    let max_iterations = ledger.max_iterations();
    let mut best: Option<OracleResult> = None;
    for i in 0..env.num_policies() {
        let curve_len = env.config().curves[i].len();
        for j in 0..=max_iterations.min(curve_len - 1) {
            let v = env.true_value(i, j)?;
            let better = match &best {
                None => true,
                Some(b) => {
                    v > b.best_value
                        || (v == b.best_value
                            && (j < b.best_iteration
                                || (j == b.best_iteration && i < b.best_policy)))
                }
            };
            if better {
                best = Some(OracleResult {
                    best_policy: i,
                    best_iteration: j,
                    best_value: v,
                });
            }
        }
    }
    best.ok_or_else(|| Error::Input("environment has no curves".into()))
}

/// Min-max normalization to percent; not clipped below zero.
pub fn normalize_score(value: f64, v_min: f64, v_oracle: f64) -> Result<f64> {
    if v_oracle <= v_min {
        return Err(Error::DegenerateNormalization {
            oracle: v_oracle,
            min: v_min,
        });
    }
    Ok(100.0 * (value - v_min) / (v_oracle - v_min))
}
