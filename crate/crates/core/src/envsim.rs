//! Simulated fine-tuning environments: trace replay of recorded value
//! curves, synthetic curve families, noisy online evaluation, and simulated
//! OPE estimates.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rngutil::mix_seed;

// Stream tags keeping evaluation, OPE, and curve-generation noise on
// disjoint seeded sub-streams.
const STREAM_EVAL: u64 = 0x45;
const STREAM_OPE: u64 = 0x4f;

/// Ground-truth value curve of one policy, indexed by fine-tuning iterations
/// applied. Index 0 is the pretrained value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCurve {
    pub policy_id: usize,
    pub values: Vec<f64>,
}

impl TrueCurve {
    pub fn new(policy_id: usize, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input(format!("curve for policy {policy_id} is empty")));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "curve for policy {policy_id} contains non-finite value {bad}"
            )));
        }
        Ok(Self { policy_id, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Full environment description: true curves plus noise and scalar knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub curves: Vec<TrueCurve>,
    pub eval_noise_std: f64,
    pub ope_noise_std: f64,
    pub ope_bias: f64,
    /// Normalization minimum: the value of a random policy.
    pub random_policy_value: f64,
    /// Behavior-policy value estimate, used as pseudo-observation fill and
    /// initial heap priority.
    pub behavior_value: f64,
    pub seed: u64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.curves.is_empty() {
            return Err(Error::Input("environment has no curves".into()));
        }
        for (i, c) in self.curves.iter().enumerate() {
            if c.policy_id != i {
                return Err(Error::Input(format!(
                    "curve at position {i} has policy_id {}; expected dense ids 0..K",
                    c.policy_id
                )));
            }
            if c.values.is_empty() {
                return Err(Error::Input(format!("curve for policy {i} is empty")));
            }
        }
        if self.eval_noise_std < 0.0 || self.ope_noise_std < 0.0 {
            return Err(Error::Input("noise std must be >= 0".into()));
        }
        Ok(())
    }

    /// Fails when any curve cannot cover `max_iterations` fine-tuning steps.
    pub fn validate_budget(&self, max_iterations: usize) -> Result<()> {
        for c in &self.curves {
            if c.len() <= max_iterations {
                return Err(Error::Input(format!(
                    "curve for policy {} has length {} but the budget admits {} iterations",
                    c.policy_id,
                    c.len(),
                    max_iterations
                )));
            }
        }
        Ok(())
    }

    /// Same curves and knobs under a different noise seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn num_policies(&self) -> usize {
        self.curves.len()
    }
}

/// Simulated stand-in for online fine-tuning and evaluation. Single-owner;
/// clones for parallel strategies are built fresh from the config.
#[derive(Debug, Clone)]
pub struct FineTuneEnv {
    config: EnvConfig,
    cursor: Vec<usize>,
    eval_rng: ChaCha8Rng,
    ope: Vec<f64>,
    fine_tune_calls: usize,
    evaluate_calls: usize,
}

impl FineTuneEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let k = config.num_policies();
        // OPE estimates are drawn once per env from their own sub-stream, so
        // evaluation draws never perturb them.
        let mut ope_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, STREAM_OPE));
        let ope = config
            .curves
            .iter()
            .map(|c| {
                let eta: f64 = StandardNormal.sample(&mut ope_rng);
                c.values[0] + config.ope_bias + config.ope_noise_std * eta
            })
            .collect();
        let eval_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, STREAM_EVAL));
        Ok(Self {
            config,
            cursor: vec![0; k],
            eval_rng,
            ope,
            fine_tune_calls: 0,
            evaluate_calls: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn num_policies(&self) -> usize {
        self.config.num_policies()
    }

    pub fn cursor(&self, policy_id: usize) -> usize {
        self.cursor[policy_id]
    }

    pub fn fine_tune_calls(&self) -> usize {
        self.fine_tune_calls
    }

    pub fn evaluate_calls(&self) -> usize {
        self.evaluate_calls
    }

    fn check_policy(&self, policy_id: usize) -> Result<()> {
        if policy_id >= self.config.num_policies() {
            return Err(Error::Input(format!("unknown policy id {policy_id}")));
        }
        Ok(())
    }

    /// Applies one fine-tuning iteration: advances the policy's cursor by 1.
    pub fn fine_tune(&mut self, policy_id: usize) -> Result<()> {
        self.check_policy(policy_id)?;
        let curve = &self.config.curves[policy_id];
        if self.cursor[policy_id] + 1 >= curve.len() {
            return Err(Error::Env(format!(
                "curve for policy {policy_id} exhausted at iteration {}",
                self.cursor[policy_id]
            )));
        }
        self.cursor[policy_id] += 1;
        self.fine_tune_calls += 1;
        Ok(())
    }

    /// Noisy evaluation at the policy's current cursor. A normal draw is
    /// consumed even at zero noise so call sequences stay stream-aligned.
    pub fn evaluate(&mut self, policy_id: usize) -> Result<f64> {
        self.check_policy(policy_id)?;
        let truth = self.config.curves[policy_id].values[self.cursor[policy_id]];
        let eta: f64 = StandardNormal.sample(&mut self.eval_rng);
        self.evaluate_calls += 1;
        Ok(truth + self.config.eval_noise_std * eta)
    }

    /// Simulated OPE estimates, one per policy, fixed for the env's lifetime.
    pub fn ope_estimates(&self) -> &[f64] {
        &self.ope
    }

    /// Ground-truth curve value, for oracle computation and scoring.
    pub fn true_value(&self, policy_id: usize, iteration: usize) -> Result<f64> {
        self.check_policy(policy_id)?;
        let curve = &self.config.curves[policy_id];
        curve.values.get(iteration).copied().ok_or_else(|| {
            Error::Input(format!(
                "iteration {iteration} out of range for policy {policy_id} (curve length {})",
                curve.len()
            ))
        })
    }
}

/// Synthetic curve family with its shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CurveFamily {
    /// Saturating rise from `floor` toward `ceiling`.
    LogisticImprove {
        floor: f64,
        ceiling: f64,
        rate: f64,
        midpoint: f64,
        #[serde(default)]
        noise_std: f64,
    },
    /// Linear rise to `peak` at `peak_index`, then linear decay to `end`.
    RiseThenCollapse {
        start: f64,
        peak: f64,
        peak_index: usize,
        end: f64,
        #[serde(default)]
        noise_std: f64,
    },
    /// Constant at `level`.
    Plateau {
        level: f64,
        #[serde(default)]
        noise_std: f64,
    },
    /// Gaussian random walk from `start`.
    RandomWalk { start: f64, step_std: f64 },
}

/// Deterministic synthetic curve for a (family, length, seed) triple.
/// Observation noise is drawn from a curve-local seeded stream.
pub fn synth_curve(
    family: &CurveFamily,
    policy_id: usize,
    length: usize,
    seed: u64,
) -> Result<TrueCurve> {
    if length < 2 {
        return Err(Error::Precondition(format!(
            "curve length must be >= 2, got {length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(length);
    match *family {
        CurveFamily::LogisticImprove {
            floor,
            ceiling,
            rate,
            midpoint,
            noise_std,
        } => {
            if ceiling <= floor || rate <= 0.0 {
                return Err(Error::Input(
                    "logistic curve requires ceiling > floor and rate > 0".into(),
                ));
            }
            for t in 0..length {
                let z = rate * (t as f64 - midpoint);
                let base = floor + (ceiling - floor) / (1.0 + (-z).exp());
                values.push(base + draw_noise(&mut rng, noise_std));
            }
        }
        CurveFamily::RiseThenCollapse {
            start,
            peak,
            peak_index,
            end,
            noise_std,
        } => {
            let p = peak_index.clamp(1, length - 2);
            if peak <= start || peak <= end {
                return Err(Error::Input(
                    "rise-then-collapse requires peak above both start and end".into(),
                ));
            }
            for t in 0..length {
                let base = if t <= p {
                    start + (peak - start) * t as f64 / p as f64
                } else {
                    peak + (end - peak) * (t - p) as f64 / (length - 1 - p) as f64
                };
                values.push(base + draw_noise(&mut rng, noise_std));
            }
        }
        CurveFamily::Plateau { level, noise_std } => {
            for _ in 0..length {
                values.push(level + draw_noise(&mut rng, noise_std));
            }
        }
        CurveFamily::RandomWalk { start, step_std } => {
            let mut v = start;
            values.push(v);
            for _ in 1..length {
                v += draw_noise(&mut rng, step_std);
                values.push(v);
            }
        }
    }
    TrueCurve::new(policy_id, values)
}

fn draw_noise<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let eta: f64 = StandardNormal.sample(rng);
    std * eta
}

/// Reads an [`EnvConfig`] from a trace CSV (`policy_id,iteration,value`,
/// dense in iteration per policy, starting at 0) plus a JSON sidecar with the
/// scalar fields, located at the same path with a `.json` extension.
pub fn load_traces<P: AsRef<Path>>(path: P) -> Result<EnvConfig> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("cannot open trace CSV {}: {e}", path.display())))?;

    let mut per_policy: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 2; // 1-based, after the header
        let record =
            record.map_err(|e| Error::Format(format!("row {row}: unreadable record: {e}")))?;
        if record.len() != 3 {
            return Err(Error::Format(format!(
                "row {row}: expected 3 fields policy_id,iteration,value, got {}",
                record.len()
            )));
        }
        let policy_id: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("row {row}: bad policy_id '{}'", &record[0])))?;
        let iteration: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("row {row}: bad iteration '{}'", &record[1])))?;
        let value: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("row {row}: bad value '{}'", &record[2])))?;
        if !value.is_finite() {
            return Err(Error::Format(format!("row {row}: non-finite value")));
        }
        if policy_id >= per_policy.len() {
            per_policy.resize_with(policy_id + 1, Vec::new);
        }
        if iteration != per_policy[policy_id].len() {
            return Err(Error::Format(format!(
                "row {row}: policy {policy_id} expects iteration {}, got {iteration}",
                per_policy[policy_id].len()
            )));
        }
        per_policy[policy_id].push(value);
    }
    if per_policy.is_empty() {
        return Err(Error::Format(format!(
            "trace CSV {} contains no data rows",
            path.display()
        )));
    }
    let expected_len = per_policy[0].len();
    let mut curves = Vec::with_capacity(per_policy.len());
    for (policy_id, values) in per_policy.into_iter().enumerate() {
        if values.is_empty() {
            return Err(Error::Format(format!("policy {policy_id} has no rows")));
        }
        if values.len() != expected_len {
            return Err(Error::Format(format!(
                "policy {policy_id} has {} iterations but policy 0 has {expected_len}",
                values.len()
            )));
        }
        curves.push(TrueCurve::new(policy_id, values)?);
    }

    let sidecar = path.with_extension("json");
    let raw = std::fs::read_to_string(&sidecar).map_err(|e| {
        Error::Format(format!("cannot read sidecar {}: {e}", sidecar.display()))
    })?;
    #[derive(Deserialize)]
    struct Sidecar {
        eval_noise_std: f64,
        ope_noise_std: f64,
        ope_bias: f64,
        random_policy_value: f64,
        behavior_value: f64,
        seed: u64,
    }
    let sc: Sidecar = serde_json::from_str(&raw)
        .map_err(|e| Error::Format(format!("sidecar {}: {e}", sidecar.display())))?;

    let config = EnvConfig {
        curves,
        eval_noise_std: sc.eval_noise_std,
        ope_noise_std: sc.ope_noise_std,
        ope_bias: sc.ope_bias,
        random_policy_value: sc.random_policy_value,
        behavior_value: sc.behavior_value,
        seed: sc.seed,
    };
    config.validate()?;
    Ok(config)
}
