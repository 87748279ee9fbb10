//! Round-by-round simulation of a parameter server and `n` workers.
//!
//! Each round every worker finishes at
//! `time_per_sample · (samples it holds) + delay`, with the delay drawn from
//! the configured [`StragglerModel`]. The server waits according to the scheme,
//! forms the gradient sum, and takes one NAG step. Equal finish times are
//! broken by lower worker id.

use std::ops::Range;
use std::path::PathBuf;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codes::{CodeSpec, LinearCode};
use crate::coding::{
    aggregate, decode_group, encode_group, fractional_repetition_placement, GradientBatch, PlacementPlan,
};
use crate::error::{param, Error, Result};

use super::model::{logistic_gradient, make_synthetic_dataset, SyntheticDataset};
use super::straggler::{straggler_sample, StragglerModel};

fn default_momentum() -> f64 {
    0.9
}

/// Everything except the aggregation scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    /// Training samples `M`.
    pub samples: usize,
    #[serde(default)]
    pub validation_samples: usize,
    #[serde(default = "StragglerModel::none")]
    pub stragglers: StragglerModel,
    pub iterations: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Compute time charged per held sample. Zero makes finish times pure delays.
    #[serde(default)]
    pub time_per_sample: f64,
    pub seed: u64,
    /// Features-plus-label CSV used instead of synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_csv: Option<PathBuf>,
}

impl StragglerModel {
    fn none() -> Self {
        StragglerModel::None
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SchemeConfig {
    /// Wait for every worker; `n` partitions, one per worker.
    Naive,
    /// Wait until `n − s` workers are in; later arrivals are dropped from the sum.
    IgnoreStragglers { s: usize },
    /// Fractional-repetition placement coded with `code`; `k` partitions.
    CommfrGc { code: CodeSpec },
}

impl SchemeConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeConfig::Naive => "naive",
            SchemeConfig::IgnoreStragglers { .. } => "ignore-stragglers",
            SchemeConfig::CommfrGc { .. } => "commfr-gc",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(flatten)]
    pub settings: SimSettings,
    pub scheme: SchemeConfig,
}

/// Several schemes run against the same data and delays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub settings: SimSettings,
    pub schemes: Vec<SchemeConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parameter(format!("simulation config: {e}")))
    }

    pub fn configs(&self) -> Vec<SimConfig> {
        self.schemes
            .iter()
            .map(|scheme| SimConfig { settings: self.settings.clone(), scheme: scheme.clone() })
            .collect()
    }
}

/// Model and momentum carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub weights: DVector<f64>,
    pub velocity: DVector<f64>,
    pub clock: f64,
}

impl TrainingState {
    pub fn zeros(d: usize) -> Self {
        TrainingState { weights: DVector::zeros(d), velocity: DVector::zeros(d), clock: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean training loss after the update.
    pub loss: f64,
    pub validation_loss: Option<f64>,
    /// `‖ĝ − g‖₂` between the gradient sum used and the exact one.
    pub gradient_error: f64,
    pub iteration_time: f64,
    /// Simulated clock after this round.
    pub sim_time: f64,
    /// Workers the server waited for, per group (a single group for uncoded schemes).
    pub waited: Vec<usize>,
    pub decode_dim: usize,
    pub multiply_adds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub scheme: String,
    pub iterations: usize,
    pub mean_iteration_time: f64,
    pub total_sim_time: f64,
    pub final_loss: f64,
    pub max_gradient_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub summary: TraceSummary,
    pub records: Vec<IterationRecord>,
    pub final_weights: Vec<f64>,
}

#[derive(Serialize)]
struct CsvRow {
    iteration: usize,
    loss: f64,
    sim_time: f64,
    decode_dim: usize,
    validation_loss: Option<f64>,
    iteration_time: f64,
    gradient_error: f64,
}

impl TrainingTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(CsvRow {
                iteration: r.iteration,
                loss: r.loss,
                sim_time: r.sim_time,
                decode_dim: r.decode_dim,
                validation_loss: r.validation_loss,
                iteration_time: r.iteration_time,
                gradient_error: r.gradient_error,
            })
            .expect("in-memory CSV write");
        }
        if self.records.is_empty() {
            return "iteration,loss,sim_time,decode_dim,validation_loss,iteration_time,gradient_error\n".into();
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Seed for round `round`, derived from the master seed.
pub fn round_seed(master: u64, round: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(round as u64 + 1);
    rng.next_u64()
}

/// Contiguous, near-equal split of `0..len` into `parts` ranges.
pub fn partition(len: usize, parts: usize) -> Vec<Range<usize>> {
    (0..parts).map(|i| i * len / parts..(i + 1) * len / parts).collect()
}

enum Aggregation {
    Uncoded { drop: usize },
    Coded { code: LinearCode, plan: PlacementPlan, tolerance: usize },
}

/// A configured run: data, partitions, and wait policy.
pub struct Simulator {
    settings: SimSettings,
    scheme: &'static str,
    aggregation: Aggregation,
    train: SyntheticDataset,
    validation: Option<SyntheticDataset>,
    partitions: Vec<Range<usize>>,
    /// Samples held by each worker.
    loads: Vec<usize>,
}

fn load_data(s: &SimSettings) -> Result<(SyntheticDataset, Option<SyntheticDataset>)> {
    let total = s.samples + s.validation_samples;
    let data = match &s.dataset_csv {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Parameter(format!("dataset {}: {e}", path.display())))?;
            let data = SyntheticDataset::from_csv(file)?;
            if data.dim() != s.d || data.len() < total {
                return param(format!(
                    "dataset {} has {} rows of width {}, need {total} rows of width {}",
                    path.display(),
                    data.len(),
                    data.dim(),
                    s.d
                ));
            }
            data.split(total).0
        }
        None => make_synthetic_dataset(total, s.d, s.seed)?,
    };
    let (train, validation) = data.split(s.samples);
    Ok((train, (s.validation_samples > 0).then_some(validation)))
}

impl Simulator {
    pub fn new(config: &SimConfig) -> Result<Self> {
        let s = &config.settings;
        if s.n == 0 || s.k == 0 || s.d == 0 || s.samples == 0 {
            return param("n, k, d and samples must all be positive");
        }
        if !(s.learning_rate.is_finite() && s.learning_rate > 0.0) {
            return param(format!("learning_rate must be positive, got {}", s.learning_rate));
        }
        if !(0.0..1.0).contains(&s.momentum) {
            return param(format!("momentum must lie in [0, 1), got {}", s.momentum));
        }
        if !(s.time_per_sample.is_finite() && s.time_per_sample >= 0.0) {
            return param("time_per_sample must be finite and nonnegative");
        }
        s.stragglers.validate(s.n)?;

        let (aggregation, parts) = match &config.scheme {
            SchemeConfig::Naive => (Aggregation::Uncoded { drop: 0 }, s.n),
            SchemeConfig::IgnoreStragglers { s: drop } => {
                if *drop >= s.n {
                    return param(format!("ignore-stragglers needs s < n, got s = {drop}, n = {}", s.n));
                }
                (Aggregation::Uncoded { drop: *drop }, s.n)
            }
            SchemeConfig::CommfrGc { code } => {
                let code = code.build()?;
                let plan = fractional_repetition_placement(s.n, s.k, code.block_length())?;
                let tolerance = code.straggler_tolerance()?;
                (Aggregation::Coded { code, plan, tolerance }, s.k)
            }
        };
        if s.samples < parts {
            return param(format!("{} samples cannot fill {parts} partitions", s.samples));
        }
        let partitions = partition(s.samples, parts);
        let loads = match &aggregation {
            Aggregation::Uncoded { .. } => partitions.iter().map(|r| r.len()).collect(),
            Aggregation::Coded { plan, .. } => plan
                .assignment
                .iter()
                .map(|held| held.iter().map(|&i| partitions[i].len()).sum())
                .collect(),
        };
        let (train, validation) = load_data(s)?;
        Ok(Simulator {
            settings: s.clone(),
            scheme: config.scheme.name(),
            aggregation,
            train,
            validation,
            partitions,
            loads,
        })
    }

    pub fn settings(&self) -> &SimSettings {
        &self.settings
    }

    pub fn train(&self) -> &SyntheticDataset {
        &self.train
    }

    pub fn validation(&self) -> Option<&SyntheticDataset> {
        self.validation.as_ref()
    }

    pub fn partitions(&self) -> &[Range<usize>] {
        &self.partitions
    }

    /// Samples held by each worker.
    pub fn worker_loads(&self) -> &[usize] {
        &self.loads
    }

    fn partial_gradients(&self, w: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        self.partitions
            .iter()
            .map(|r| {
                let (x, y) = self.train.rows(r.clone());
                logistic_gradient(w, &x, &y)
            })
            .collect()
    }

    /// Fastest `keep` of `workers`, returned in ascending id order.
    fn fastest(finish: &[f64], workers: &[usize], keep: usize) -> Vec<usize> {
        let mut order = workers.to_vec();
        order.sort_by(|&a, &b| finish[a].total_cmp(&finish[b]).then(a.cmp(&b)));
        order.truncate(keep);
        order.sort_unstable();
        order
    }

    /// Gradient sum the server forms at `w` for the given delays, with the
    /// iteration time and per-group wait counts.
    pub fn server_gradient(&self, w: &DVector<f64>, delays: &[f64]) -> Result<RoundOutcome> {
        let n = self.settings.n;
        if delays.len() != n {
            return param(format!("{} delays for {n} workers", delays.len()));
        }
        let finish: Vec<f64> = self
            .loads
            .iter()
            .zip(delays)
            .map(|(&load, &delay)| self.settings.time_per_sample * load as f64 + delay)
            .collect();
        let partials = self.partial_gradients(w)?;
        let d = self.settings.d;
        let span = |ws: &[usize]| ws.iter().map(|&i| finish[i]).fold(0.0, f64::max);
        match &self.aggregation {
            Aggregation::Uncoded { drop } => {
                let all: Vec<usize> = (0..n).collect();
                let cutoff = span(&Self::fastest(&finish, &all, n - drop));
                // Anything already in when the wait ends is used too.
                let waited: Vec<usize> = all.into_iter().filter(|&i| finish[i] <= cutoff).collect();
                let gradient = waited.iter().fold(DVector::zeros(d), |acc, &i| acc + &partials[i]);
                Ok(RoundOutcome {
                    gradient,
                    iteration_time: span(&waited),
                    waited: vec![waited.len()],
                    decode_dim: 0,
                    multiply_adds: 0,
                })
            }
            Aggregation::Coded { code, plan, tolerance } => {
                let batch = GradientBatch::new(partials)?;
                let mut group_sums = Vec::with_capacity(plan.group_count());
                let mut time: f64 = 0.0;
                let mut waited = Vec::with_capacity(plan.group_count());
                let (mut decode_dim, mut multiply_adds) = (0, 0);
                for (g, members) in plan.groups.iter().enumerate() {
                    let chosen = Self::fastest(&finish, members, members.len() - tolerance);
                    time = time.max(span(&chosen));
                    let all = encode_group(plan, code, &batch, g)?;
                    let chunks = chosen
                        .iter()
                        .map(|&w| plan.locate(w).map(|(_, j)| all[j].clone()))
                        .collect::<Result<Vec<_>>>()?;
                    let (sum, cost) = decode_group(code, g, &chunks, d)
                        .map_err(|e| Error::Invariant(format!("decode failed under the wait policy: {e}")))?;
                    decode_dim = decode_dim.max(cost.solve_dimension);
                    multiply_adds += cost.multiply_adds;
                    waited.push(chosen.len());
                    group_sums.push(sum);
                }
                Ok(RoundOutcome {
                    gradient: aggregate(&group_sums, plan.group_count())?,
                    iteration_time: time,
                    waited,
                    decode_dim,
                    multiply_adds,
                })
            }
        }
    }

    /// One round: sample delays, aggregate, take a NAG step.
    pub fn run_iteration(
        &self,
        state: &TrainingState,
        iteration: usize,
        round_seed: u64,
    ) -> Result<(TrainingState, IterationRecord)> {
        let delays = straggler_sample(&self.settings.stragglers, self.settings.n, round_seed)?;
        let outcome = self.server_gradient(&state.weights, &delays)?;
        let exact = logistic_gradient(&state.weights, &self.train.features, &self.train.labels)?;
        let gradient_error = (&outcome.gradient - &exact).norm();

        let g = outcome.gradient / self.train.len() as f64;
        let beta = self.settings.momentum;
        let velocity = &state.velocity * beta + &g;
        let weights = &state.weights - (&g + &velocity * beta) * self.settings.learning_rate;
        let clock = state.clock + outcome.iteration_time;

        let record = IterationRecord {
            iteration,
            loss: self.train.mean_loss(&weights)?,
            validation_loss: self.validation.as_ref().map(|v| v.mean_loss(&weights)).transpose()?,
            gradient_error,
            iteration_time: outcome.iteration_time,
            sim_time: clock,
            waited: outcome.waited,
            decode_dim: outcome.decode_dim,
            multiply_adds: outcome.multiply_adds,
        };
        Ok((TrainingState { weights, velocity, clock }, record))
    }

    pub fn run(&self) -> Result<TrainingTrace> {
        let mut state = TrainingState::zeros(self.settings.d);
        let mut records = Vec::with_capacity(self.settings.iterations);
        for t in 0..self.settings.iterations {
            let (next, record) = self.run_iteration(&state, t, round_seed(self.settings.seed, t))?;
            state = next;
            records.push(record);
        }
        let iterations = records.len();
        let mean_iteration_time = if iterations == 0 { 0.0 } else { state.clock / iterations as f64 };
        Ok(TrainingTrace {
            summary: TraceSummary {
                scheme: self.scheme.to_string(),
                iterations,
                mean_iteration_time,
                total_sim_time: state.clock,
                final_loss: records.last().map_or(self.train.mean_loss(&state.weights)?, |r| r.loss),
                max_gradient_error: records.iter().map(|r| r.gradient_error).fold(0.0, f64::max),
            },
            records,
            final_weights: state.weights.iter().copied().collect(),
        })
    }
}

/// What the server obtains in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub gradient: DVector<f64>,
    pub iteration_time: f64,
    pub waited: Vec<usize>,
    pub decode_dim: usize,
    pub multiply_adds: u64,
}

pub fn run_training(config: &SimConfig) -> Result<TrainingTrace> {
    Simulator::new(config)?.run()
}
