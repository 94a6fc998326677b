//! Experiment harness: config ingestion, seeded multi-run execution across
//! strategies and environments, aggregation, and report emission.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    compute_oracle, normalize_score, run_best_baseline, run_ft_baseline, run_oe_baseline,
    run_ope_baseline, OracleResult, Selection, Strategy, StrategyResult,
};
use crate::envsim::{load_traces, synth_curve, CurveFamily, EnvConfig, FineTuneEnv};
use crate::error::{Error, Result};
use crate::rngutil::{mix_seed, mix_seed2};
use crate::selector::{self, BudgetLedger, IterationLog};

// Stream tags for the per-cell seed derivation.
const STREAM_ENV: u64 = 0x11;
const STREAM_SELECTOR: u64 = 0x22;

/// A batch of synthetic curves from one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyBatch {
    pub count: usize,
    #[serde(flatten)]
    pub curve: CurveFamily,
}

/// Inline declaration of a synthetic environment: family batches expanded
/// deterministically from the suite seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSuite {
    pub suite_seed: u64,
    pub curve_length: usize,
    pub families: Vec<FamilyBatch>,
    pub eval_noise_std: f64,
    pub ope_noise_std: f64,
    #[serde(default)]
    pub ope_bias: f64,
    pub random_policy_value: f64,
    pub behavior_value: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSuite {
    /// Expands the declared batches into a full environment config. Curve
    /// seeds derive from the suite seed and the policy index only.
    pub fn expand(&self) -> Result<EnvConfig> {
        let mut curves = Vec::new();
        for batch in &self.families {
            for _ in 0..batch.count {
                let policy_id = curves.len();
                let seed = mix_seed(self.suite_seed, policy_id as u64);
                curves.push(synth_curve(&batch.curve, policy_id, self.curve_length, seed)?);
            }
        }
        let config = EnvConfig {
            curves,
            eval_noise_std: self.eval_noise_std,
            ope_noise_std: self.ope_noise_std,
            ope_bias: self.ope_bias,
            random_policy_value: self.random_policy_value,
            behavior_value: self.behavior_value,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// One environment under test: a trace file or an inline synthetic suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSuite>,
}

impl EnvSpec {
    fn resolve(&self) -> Result<EnvConfig> {
        match (&self.traces, &self.synthetic) {
            (Some(path), None) => load_traces(path),
            (None, Some(suite)) => suite.expand(),
            _ => Err(Error::Input(format!(
                "env '{}' must declare exactly one of traces or synthetic",
                self.name
            ))),
        }
    }
}

fn default_pseudo_count() -> usize {
    5
}
fn default_num_paths() -> usize {
    100
}
fn default_quantile() -> f64 {
    0.95
}
fn default_cost() -> u64 {
    10_000
}
fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

/// Top-level experiment description, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub envs: Vec<EnvSpec>,
    pub budgets: Vec<u64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_pseudo_count")]
    pub pseudo_count: usize,
    #[serde(default = "default_num_paths")]
    pub num_paths: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default = "default_cost")]
    pub finetune_cost: u64,
    #[serde(default = "default_cost")]
    pub eval_cost: u64,
}

impl ExperimentConfig {
    pub fn from_json(raw: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(raw)?;
        config.validate()?;
        Ok(config)
    }

    /// Collects every violation rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.envs.is_empty() {
            violations.push("envs must be non-empty".to_string());
        }
        if self.seeds.is_empty() {
            violations.push("seeds must be non-empty".to_string());
        }
        if self.budgets.is_empty() {
            violations.push("budgets must be non-empty".to_string());
        }
        for &b in &self.budgets {
            if b == 0 {
                violations.push("budgets must be positive".to_string());
                break;
            }
        }
        if self.strategies.is_empty() {
            violations.push("strategies must be non-empty".to_string());
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            violations.push(format!("quantile must be in (0, 1), got {}", self.quantile));
        }
        if self.pseudo_count < 3 {
            violations.push(format!(
                "pseudo_count must be >= 3, got {}",
                self.pseudo_count
            ));
        }
        if self.num_paths == 0 {
            violations.push("num_paths must be >= 1".to_string());
        }
        if self.finetune_cost == 0 || self.eval_cost == 0 {
            violations.push("per-iteration costs must be positive".to_string());
        }
        for spec in &self.envs {
            if spec.traces.is_some() == spec.synthetic.is_some() {
                violations.push(format!(
                    "env '{}' must declare exactly one of traces or synthetic",
                    spec.name
                ));
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }
}

/// One (env, budget, seed, strategy) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub env: String,
    pub budget: u64,
    pub strategy: Strategy,
    pub seed: u64,
    pub selected_policy: usize,
    pub selected_iteration: usize,
    pub true_value: f64,
    pub normalized_score: f64,
}

/// Mean and sample standard deviation of one (env, budget, strategy) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub env: String,
    pub budget: u64,
    pub strategy: Strategy,
    pub mean: f64,
    pub std: f64,
    /// Set when only one seed contributed; the std is then reported as 0.
    pub single_seed: bool,
    pub scores: Vec<f64>,
}

/// Selector history of one OURS run, for JSON-lines emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryCell {
    pub env: String,
    pub budget: u64,
    pub seed: u64,
    pub iterations: Vec<IterationLog>,
}

/// Full experiment output: raw per-seed rows, per-group statistics, oracle
/// values, and the OURS iteration histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<RawRow>,
    pub groups: Vec<GroupStat>,
    pub oracles: Vec<(String, u64, OracleResult)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub histories: Vec<HistoryCell>,
}

/// Per-group mean and sample std (n-1 denominator), grouped by
/// (env, budget, strategy) in first-appearance order.
pub fn aggregate(rows: &[RawRow]) -> Result<Vec<GroupStat>> {
    let mut order: Vec<(String, u64, Strategy)> = Vec::new();
    for row in rows {
        let key = (row.env.clone(), row.budget, row.strategy);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    let mut groups = Vec::with_capacity(order.len());
    for (env, budget, strategy) in order {
        let scores: Vec<f64> = rows
            .iter()
            .filter(|r| r.env == env && r.budget == budget && r.strategy == strategy)
            .map(|r| r.normalized_score)
            .collect();
        if scores.is_empty() {
            return Err(Error::Input("empty aggregation group".into()));
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let (std, single_seed) = if scores.len() < 2 {
            (0.0, true)
        } else {
            let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
            (var.sqrt(), false)
        };
        groups.push(GroupStat {
            env,
            budget,
            strategy,
            mean,
            std,
            single_seed,
            scores,
        });
    }
    Ok(groups)
}

fn run_strategy(
    strategy: Strategy,
    config: &EnvConfig,
    ledger: BudgetLedger,
    pseudo_count: usize,
    num_paths: usize,
    quantile: f64,
    env_seed: u64,
    selector_seed: u64,
) -> Result<(Selection, Option<Vec<IterationLog>>)> {
    let mut env = FineTuneEnv::new(config.with_seed(env_seed))?;
    match strategy {
        Strategy::Ope => Ok((run_ope_baseline(&env)?, None)),
        Strategy::Best => Ok((run_best_baseline(&env)?, None)),
        Strategy::Oe => Ok((run_oe_baseline(&mut env, &ledger)?, None)),
        Strategy::Ft => Ok((run_ft_baseline(&mut env, &ledger)?, None)),
        Strategy::Ours => {
            let ranks = selector::ope_ranks_from_estimates(env.ope_estimates());
            let mut state = selector::init_state(
                env.num_policies(),
                &ranks,
                config.behavior_value,
                pseudo_count,
                ledger,
            )?;
            let (best, history) =
                selector::run(&mut state, &mut env, num_paths, quantile, selector_seed)?;
            let selection = Selection {
                policy_id: best.policy_id,
                iteration: best.iteration,
                true_value: env.true_value(best.policy_id, best.iteration)?,
            };
            Ok((selection, Some(history)))
        }
    }
}

/// Runs every (env, budget, seed, strategy) cell on a fresh environment
/// clone, normalizes against the per-(env, budget) oracle, and aggregates.
/// Fully deterministic for a fixed config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateReport> {
    config.validate()?;
    let mut resolved = Vec::with_capacity(config.envs.len());
    for spec in &config.envs {
        resolved.push((spec.name.clone(), spec.resolve()?));
    }

    let mut rows = Vec::new();
    let mut oracles = Vec::new();
    let mut histories = Vec::new();

    for (name, env_config) in &resolved {
        for &budget in &config.budgets {
            let ledger = BudgetLedger::new(budget, config.finetune_cost, config.eval_cost)?;
            env_config.validate_budget(ledger.max_iterations())?;
            let probe = FineTuneEnv::new(env_config.clone())?;
            let oracle = compute_oracle(&probe, &ledger)?;
            oracles.push((name.clone(), budget, oracle));
            let v_min = env_config.random_policy_value;

            for &seed in &config.seeds {
                let env_seed = mix_seed2(env_config.seed, seed, STREAM_ENV);
                let selector_seed = mix_seed2(env_config.seed, seed, STREAM_SELECTOR);
                for &strategy in &config.strategies {
                    let (selection, history) = run_strategy(
                        strategy,
                        env_config,
                        ledger,
                        config.pseudo_count,
                        config.num_paths,
                        config.quantile,
                        env_seed,
                        selector_seed,
                    )?;
                    let score = normalize_score(selection.true_value, v_min, oracle.best_value)?;
                    rows.push(RawRow {
                        env: name.clone(),
                        budget,
                        strategy,
                        seed,
                        selected_policy: selection.policy_id,
                        selected_iteration: selection.iteration,
                        true_value: selection.true_value,
                        normalized_score: score,
                    });
                    if let Some(iterations) = history {
                        histories.push(HistoryCell {
                            env: name.clone(),
                            budget,
                            seed,
                            iterations,
                        });
                    }
                }
            }
        }
    }

    let groups = aggregate(&rows)?;
    Ok(AggregateReport {
        rows,
        groups,
        oracles,
        histories,
    })
}

/// Strategy results of one group row, for JSON emission.
pub fn strategy_results(report: &AggregateReport) -> Vec<StrategyResult> {
    report
        .rows
        .iter()
        .map(|r| StrategyResult {
            strategy: r.strategy,
            selected_policy: r.selected_policy,
            selected_iteration: r.selected_iteration,
            true_value: r.true_value,
            normalized_score: r.normalized_score,
        })
        .collect()
}

/// Oracle results per (env, budget) for a config, without running strategies.
pub fn oracles_for_config(config: &ExperimentConfig) -> Result<Vec<(String, u64, OracleResult)>> {
    config.validate()?;
    let mut out = Vec::new();
    for spec in &config.envs {
        let env_config = spec.resolve()?;
        for &budget in &config.budgets {
            let ledger = BudgetLedger::new(budget, config.finetune_cost, config.eval_cost)?;
            let env = FineTuneEnv::new(env_config.clone())?;
            out.push((spec.name.clone(), budget, compute_oracle(&env, &ledger)?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Input(format!("unknown report format '{other}'"))),
        }
    }
}

fn strategy_order(report: &AggregateReport) -> Vec<Strategy> {
    let mut order = Vec::new();
    for g in &report.groups {
        if !order.contains(&g.strategy) {
            order.push(g.strategy);
        }
    }
    order
}

fn env_order(report: &AggregateReport) -> Vec<String> {
    let mut order = Vec::new();
    for g in &report.groups {
        if !order.contains(&g.env) {
            order.push(g.env.clone());
        }
    }
    order
}

/// Mean score per (env, strategy) over budgets, then the overall average as
/// the unweighted mean of per-env averages.
pub fn per_env_and_overall_averages(
    report: &AggregateReport,
) -> (Vec<(String, Vec<(Strategy, f64)>)>, Vec<(Strategy, f64)>) {
    let strategies = strategy_order(report);
    let envs = env_order(report);
    let mut per_env = Vec::new();
    for env in &envs {
        let mut avgs = Vec::new();
        for &s in &strategies {
            let means: Vec<f64> = report
                .groups
                .iter()
                .filter(|g| &g.env == env && g.strategy == s)
                .map(|g| g.mean)
                .collect();
            if !means.is_empty() {
                avgs.push((s, means.iter().sum::<f64>() / means.len() as f64));
            }
        }
        per_env.push((env.clone(), avgs));
    }
    let mut overall = Vec::new();
    for &s in &strategies {
        let env_means: Vec<f64> = per_env
            .iter()
            .filter_map(|(_, avgs)| avgs.iter().find(|(st, _)| *st == s).map(|(_, m)| *m))
            .collect();
        if !env_means.is_empty() {
            overall.push((s, env_means.iter().sum::<f64>() / env_means.len() as f64));
        }
    }
    (per_env, overall)
}

/// Renders the report. Markdown groups by environment with per-env average
/// and overall-average rows; CSV and JSON are flat. Byte-stable for a fixed
/// report.
pub fn emit_report(report: &AggregateReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut out = String::from(
                "env,budget,strategy,seed,selected_policy,selected_iteration,true_value,normalized_score\n",
            );
            for r in &report.rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.env,
                    r.budget,
                    r.strategy.name(),
                    r.seed,
                    r.selected_policy,
                    r.selected_iteration,
                    r.true_value,
                    r.normalized_score
                )
                .expect("string write");
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let strategies = strategy_order(report);
            let envs = env_order(report);
            let mut out = String::from("# Normalized scores (percent)\n");
            for env in &envs {
                writeln!(out, "\n## {env}\n").expect("string write");
                let mut header = String::from("| budget |");
                let mut rule = String::from("| --- |");
                for s in &strategies {
                    write!(header, " {} |", s.name()).expect("string write");
                    rule.push_str(" --- |");
                }
                out.push_str(&header);
                out.push('\n');
                out.push_str(&rule);
                out.push('\n');
                let mut budgets = Vec::new();
                for g in report.groups.iter().filter(|g| &g.env == env) {
                    if !budgets.contains(&g.budget) {
                        budgets.push(g.budget);
                    }
                }
                for budget in budgets {
                    let mut line = format!("| {budget} |");
                    for &s in &strategies {
                        match report
                            .groups
                            .iter()
                            .find(|g| &g.env == env && g.budget == budget && g.strategy == s)
                        {
                            Some(g) => write!(line, " {:.2} ± {:.2} |", g.mean, g.std)
                                .expect("string write"),
                            None => line.push_str(" - |"),
                        }
                    }
                    out.push_str(&line);
                    out.push('\n');
                }
                let (per_env, _) = per_env_and_overall_averages(report);
                if let Some((_, avgs)) = per_env.iter().find(|(e, _)| e == env) {
                    let mut line = String::from("| Average |");
                    for &s in &strategies {
                        match avgs.iter().find(|(st, _)| *st == s) {
                            Some((_, m)) => {
                                write!(line, " {m:.2} |").expect("string write")
                            }
                            None => line.push_str(" - |"),
                        }
                    }
                    out.push_str(&line);
                    out.push('\n');
                }
            }
            let (_, overall) = per_env_and_overall_averages(report);
            if !overall.is_empty() {
                out.push_str("\n## Overall Average\n\n");
                let mut header = String::from("|");
                let mut rule = String::from("|");
                let mut line = String::from("|");
                for (s, m) in &overall {
                    write!(header, " {} |", s.name()).expect("string write");
                    rule.push_str(" --- |");
                    write!(line, " {m:.2} |").expect("string write");
                }
                out.push_str(&header);
                out.push('\n');
                out.push_str(&rule);
                out.push('\n');
                out.push_str(&line);
                out.push('\n');
            }
            Ok(out)
        }
    }
}

/// JSON-lines rendering of the OURS iteration histories, one record per
/// iteration with its (env, budget, seed) cell.
pub fn emit_histories(report: &AggregateReport) -> Result<String> {
    let mut out = String::new();
    for cell in &report.histories {
        for log in &cell.iterations {
            #[derive(Serialize)]
            struct Line<'a> {
                env: &'a str,
                budget: u64,
                seed: u64,
                #[serde(flatten)]
                log: &'a IterationLog,
            }
            let line = serde_json::to_string(&Line {
                env: &cell.env,
                budget: cell.budget,
                seed: cell.seed,
                log,
            })?;
            out.push_str(&line);
            out.push('\n');
        }
    }
    Ok(out)
}
