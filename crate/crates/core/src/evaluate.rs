//! Structure-recovery metrics and the bootstrap bias/variance harness.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::BlockDataset;
use crate::estimate::{
    auto_g_paoe, auto_g_with_params, exact_paoe, AutoGConfig, EstimateError, Policy,
    DEFAULT_EXACT_MAX_UNITS,
};
use crate::graph::{all_unit_pairs, Edge, TieredChainGraph};
use crate::model::{ModelError, Sharing};
use crate::rng::{derive_seed, stream_rng};
use crate::search::{learn, SearchMode, SearchOptions};
use crate::simulate::{
    build_k_regular_truth, gibbs_generate, shuffle_network, GenCoefficients, SamplerConfig,
    SimError,
};

/// Fraction of failed replicates above which a report is flagged.
pub const FAILURE_FLAG_RATE: f64 = 0.05;

const DATA_TAG: u64 = 1;
const ESTIMATE_TAG: u64 = 2;
const SHUFFLE_TAG: u64 = 3;
const RESAMPLE_TAG: u64 = 4;
const TRUTH_TAG: u64 = 5;
const SWEEP_TAG: u64 = 6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("scenario file {path}: {message}")]
    ScenarioFile { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub true_edges: usize,
    pub learned_edges: usize,
    pub correct: usize,
}

/// Overlap of two cross-edge sets. Precision is 1 when nothing was learned and
/// recall is 1 when nothing was there to find.
pub fn precision_recall(learned: &BTreeSet<Edge>, truth: &BTreeSet<Edge>) -> RecoveryMetrics {
    let correct = learned.intersection(truth).count();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    RecoveryMetrics {
        precision: ratio(correct, learned.len()),
        recall: ratio(correct, truth.len()),
        true_edges: truth.len(),
        learned_edges: learned.len(),
        correct,
    }
}

/// How the graph handed to the estimator is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Every unit pair joined by the true prototypes.
    #[serde(rename = "complete")]
    Complete,
    #[serde(rename = "learned-homo")]
    LearnedHomo,
    #[serde(rename = "learned-hetero")]
    LearnedHetero,
    /// Unit template only.
    #[serde(rename = "empty")]
    Empty,
    /// True prototypes on a random network of the true size.
    #[serde(rename = "shuffled")]
    Shuffled,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Complete,
        Condition::LearnedHomo,
        Condition::LearnedHetero,
        Condition::Empty,
        Condition::Shuffled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Complete => "complete",
            Condition::LearnedHomo => "learned-homo",
            Condition::LearnedHetero => "learned-hetero",
            Condition::Empty => "empty",
            Condition::Shuffled => "shuffled",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where each replicate's data comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    /// A new dataset drawn from the truth.
    #[default]
    Fresh,
    /// Blocks of one base dataset resampled with replacement.
    Bootstrap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        GeneratorSettings {
            burn_in: 1000,
            thin: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    #[serde(rename = "T")]
    pub t: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub sharing: Sharing,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        let d = AutoGConfig::default();
        EstimatorSettings {
            t: d.t,
            burn_in: d.burn_in,
            thin: d.thin,
            sharing: d.sharing,
        }
    }
}

impl EstimatorSettings {
    pub fn config(&self, seed: u64) -> AutoGConfig {
        AutoGConfig {
            t: self.t,
            burn_in: self.burn_in,
            thin: self.thin,
            seed,
            sharing: self.sharing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub m: Vec<u32>,
    pub k: u32,
    pub n: Vec<usize>,
    pub modes: Vec<SearchMode>,
    pub replicates: usize,
}

/// Every knob of an evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub m: u32,
    pub k: u32,
    #[serde(default = "one")]
    pub p: u32,
    pub n: usize,
    #[serde(default)]
    pub coefficients: GenCoefficients,
    #[serde(default)]
    pub generator: GeneratorSettings,
    #[serde(default = "all_conditions")]
    pub conditions: Vec<Condition>,
    #[serde(default = "default_policy1")]
    pub policy1: Policy,
    #[serde(default = "default_policy2")]
    pub policy2: Policy,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub resample: Resample,
    /// Largest block for which the true effect is enumerated exactly.
    #[serde(default = "default_exact_max_units")]
    pub exact_max_units: u32,
    /// Monte Carlo draws for the true effect of larger blocks.
    #[serde(default = "default_truth_t")]
    pub truth_t: usize,
    #[serde(default)]
    pub sweep: Option<SweepSettings>,
}

fn one() -> u32 {
    1
}

fn all_conditions() -> Vec<Condition> {
    Condition::ALL.to_vec()
}

fn default_policy1() -> Policy {
    Policy::Bernoulli(0.7)
}

fn default_policy2() -> Policy {
    Policy::Natural
}

fn default_exact_max_units() -> u32 {
    DEFAULT_EXACT_MAX_UNITS
}

fn default_truth_t() -> usize {
    1_000_000
}

impl Scenario {
    /// Scenario with every optional field at its default.
    pub fn new(m: u32, k: u32, n: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "m": m, "k": k, "n": n }))
            .expect("minimal scenario deserializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| {
            EvalError::Scenario(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::ScenarioFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| EvalError::ScenarioFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        self.coefficients.validate()?;
        self.generator_config(0).validate()?;
        self.estimator.config(0).validate()?;
        build_k_regular_truth(self.m, self.k, self.p)?;
        if self.conditions.is_empty() {
            return Err(EvalError::Scenario("no conditions listed".into()));
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<TieredChainGraph, EvalError> {
        Ok(build_k_regular_truth(self.m, self.k, self.p)?)
    }

    pub fn generator_config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            burn_in: self.generator.burn_in,
            thin: self.generator.thin,
            seed,
            n: self.n,
        }
    }
}

/// True effect under the generating model, with the method used.
pub fn true_paoe(scenario: &Scenario, seed: u64) -> Result<(f64, &'static str), EvalError> {
    let truth = scenario.truth()?;
    let params = scenario.coefficients.params_for(&truth);
    if scenario.m <= scenario.exact_max_units {
        let v = exact_paoe(
            &truth,
            &params,
            scenario.policy1,
            scenario.policy2,
            scenario.exact_max_units,
        )?;
        Ok((v, "exact"))
    } else {
        let cfg = AutoGConfig {
            t: scenario.truth_t,
            seed: derive_seed(seed, &[TRUTH_TAG]),
            ..scenario.estimator.config(0)
        };
        let est = auto_g_with_params(&truth, &params, scenario.policy1, scenario.policy2, &cfg)?;
        Ok((est.paoe, "monte-carlo"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub condition: Condition,
    /// Replicates attempted.
    #[serde(rename = "B")]
    pub b: usize,
    pub completed: usize,
    pub failures: usize,
    /// More than [`FAILURE_FLAG_RATE`] of the replicates failed.
    pub flagged: bool,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    /// Per-replicate estimates; `None` marks a failed replicate.
    pub estimates: Vec<Option<f64>>,
}

impl BootstrapReport {
    pub fn from_estimates(condition: Condition, estimates: Vec<Option<f64>>, truth: f64) -> Self {
        let ok: Vec<f64> = estimates.iter().flatten().copied().collect();
        let b = estimates.len();
        let failures = b - ok.len();
        let (mean, variance) = mean_variance(&ok);
        BootstrapReport {
            condition,
            b,
            completed: ok.len(),
            failures,
            flagged: b > 0 && failures as f64 > FAILURE_FLAG_RATE * b as f64,
            mean,
            bias: mean - truth,
            variance,
            estimates,
        }
    }
}

/// Mean and unbiased sample variance; the variance of fewer than two values is 0.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, ss / (n - 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub condition: Condition,
    pub replicate: usize,
    pub paoe: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub truth: f64,
    pub truth_method: String,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub policy1: Policy,
    pub policy2: Policy,
    pub conditions: Vec<BootstrapReport>,
    #[serde(skip)]
    pub replicates: Vec<ReplicateRow>,
}

impl EvaluationReport {
    pub fn condition(&self, c: Condition) -> Option<&BootstrapReport> {
        self.conditions.iter().find(|r| r.condition == c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn replicates_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["condition", "replicate", "paoe", "status"])
            .expect("in-memory write");
        for row in &self.replicates {
            w.write_record([
                row.condition.name().to_string(),
                row.replicate.to_string(),
                row.paoe.map_or(String::new(), |v| v.to_string()),
                row.status.clone(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

/// Graph handed to the estimator under `condition`.
pub fn condition_graph(
    condition: Condition,
    truth: &TieredChainGraph,
    data: &BlockDataset,
    seed: u64,
) -> Result<TieredChainGraph, EvalError> {
    let opts = SearchOptions::default();
    Ok(match condition {
        Condition::Complete => TieredChainGraph::homogeneous(
            truth.m(),
            truth.p(),
            &all_unit_pairs(truth.m()),
            &truth.prototypes(),
        )
        .map_err(ModelError::from)?,
        Condition::LearnedHomo => learn(data, SearchMode::Homogeneous, None, None, &opts)?.graph,
        Condition::LearnedHetero => {
            learn(data, SearchMode::Heterogeneous, None, None, &opts)?.graph
        }
        Condition::Empty => TieredChainGraph::empty(truth.m(), truth.p()),
        Condition::Shuffled => shuffle_network(truth, derive_seed(seed, &[SHUFFLE_TAG]))?,
    })
}

/// Bias and variance of the estimated effect under each graph condition over
/// `b` replicates.
pub fn bootstrap_paoe(
    scenario: &Scenario,
    b: usize,
    seed: u64,
) -> Result<EvaluationReport, EvalError> {
    scenario.validate()?;
    let truth_graph = scenario.truth()?;
    let (truth, method) = true_paoe(scenario, seed)?;
    let base = match scenario.resample {
        Resample::Fresh => None,
        Resample::Bootstrap => Some(gibbs_generate(
            &truth_graph,
            &scenario.coefficients,
            &scenario.generator_config(derive_seed(seed, &[DATA_TAG])),
        )?),
    };
    let rows: Vec<Vec<ReplicateRow>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, &[r as u64]);
            let data = match &base {
                None => gibbs_generate(
                    &truth_graph,
                    &scenario.coefficients,
                    &scenario.generator_config(derive_seed(rep_seed, &[DATA_TAG])),
                ),
                Some(base) => Ok(resample_blocks(
                    base,
                    derive_seed(rep_seed, &[RESAMPLE_TAG]),
                )),
            };
            scenario
                .conditions
                .iter()
                .map(|&condition| {
                    let result = data.as_ref().map_err(|e| e.to_string()).and_then(|data| {
                        estimate_condition(scenario, condition, &truth_graph, data, rep_seed)
                            .map_err(|e| e.to_string())
                    });
                    ReplicateRow {
                        condition,
                        replicate: r + 1,
                        paoe: result.as_ref().ok().copied(),
                        status: match result {
                            Ok(_) => "ok".into(),
                            Err(e) => format!("failed: {e}"),
                        },
                    }
                })
                .collect()
        })
        .collect();
    let mut replicates: Vec<ReplicateRow> = rows.into_iter().flatten().collect();
    replicates.sort_by_key(|r| {
        (
            scenario.conditions.iter().position(|c| *c == r.condition),
            r.replicate,
        )
    });
    let conditions = scenario
        .conditions
        .iter()
        .map(|&c| {
            let est = replicates
                .iter()
                .filter(|r| r.condition == c)
                .map(|r| r.paoe)
                .collect();
            BootstrapReport::from_estimates(c, est, truth)
        })
        .collect();
    Ok(EvaluationReport {
        truth,
        truth_method: method.into(),
        b,
        seed,
        policy1: scenario.policy1,
        policy2: scenario.policy2,
        conditions,
        replicates,
    })
}

fn estimate_condition(
    scenario: &Scenario,
    condition: Condition,
    truth: &TieredChainGraph,
    data: &BlockDataset,
    rep_seed: u64,
) -> Result<f64, EvalError> {
    let graph = condition_graph(condition, truth, data, rep_seed)?;
    let cfg = scenario
        .estimator
        .config(derive_seed(rep_seed, &[ESTIMATE_TAG]));
    Ok(auto_g_paoe(data, &graph, scenario.policy1, scenario.policy2, &cfg)?.paoe)
}

/// Blocks drawn uniformly with replacement.
pub fn resample_blocks(data: &BlockDataset, seed: u64) -> BlockDataset {
    use rand::Rng;
    let mut rng = stream_rng(seed, 0);
    let idx: Vec<usize> = (0..data.n()).map(|_| rng.gen_range(0..data.n())).collect();
    data.select(&idx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: SearchMode,
    pub m: u32,
    pub k: u32,
    pub n: usize,
    pub replicates: usize,
    pub failures: usize,
    pub precision_mean: f64,
    pub precision_sd: f64,
    pub recall_mean: f64,
    pub recall_sd: f64,
    /// Per-replicate metrics; `None` marks a failed replicate.
    #[serde(skip)]
    pub metrics: Vec<Option<RecoveryMetrics>>,
}

/// Mean and standard deviation of recovered precision and recall for every
/// combination of block size, sample size and procedure. Replicate `r` of a
/// given `(m, n)` uses the same dataset for every mode.
pub fn recovery_sweep(
    sweep: &SweepSettings,
    coefficients: &GenCoefficients,
    generator: &GeneratorSettings,
    p: u32,
    seed: u64,
) -> Result<Vec<SweepRow>, EvalError> {
    let mut cells = Vec::new();
    for &m in &sweep.m {
        build_k_regular_truth(m, sweep.k, p)?;
        for &n in &sweep.n {
            for &mode in &sweep.modes {
                cells.push((m, n, mode));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..sweep.replicates).map(move |r| (c, r)))
        .collect();
    let results: Vec<Option<RecoveryMetrics>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let (m, n, mode) = cells[c];
            let truth = build_k_regular_truth(m, sweep.k, p).ok()?;
            let data_seed = derive_seed(seed, &[SWEEP_TAG, m as u64, n as u64, r as u64]);
            let data = gibbs_generate(
                &truth,
                coefficients,
                &SamplerConfig {
                    burn_in: generator.burn_in,
                    thin: generator.thin,
                    seed: data_seed,
                    n,
                },
            )
            .ok()?;
            let learned = learn(&data, mode, None, None, &SearchOptions::default()).ok()?;
            Some(precision_recall(learned.cross_edges(), truth.cross_edges()))
        })
        .collect();
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &(m, n, mode))| {
            let metrics: Vec<Option<RecoveryMetrics>> =
                results[c * sweep.replicates..(c + 1) * sweep.replicates].to_vec();
            let ok: Vec<&RecoveryMetrics> = metrics.iter().flatten().collect();
            let prec: Vec<f64> = ok.iter().map(|x| x.precision).collect();
            let rec: Vec<f64> = ok.iter().map(|x| x.recall).collect();
            let (pm, pv) = mean_variance(&prec);
            let (rm, rv) = mean_variance(&rec);
            SweepRow {
                mode,
                m,
                k: sweep.k,
                n,
                replicates: sweep.replicates,
                failures: metrics.len() - ok.len(),
                precision_mean: pm,
                precision_sd: pv.sqrt(),
                recall_mean: rm,
                recall_sd: rv.sqrt(),
                metrics,
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "mode",
        "m",
        "k",
        "n",
        "replicates",
        "failures",
        "precision_mean",
        "precision_sd",
        "recall_mean",
        "recall_sd",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.mode.name().to_string(),
            r.m.to_string(),
            r.k.to_string(),
            r.n.to_string(),
            r.replicates.to_string(),
            r.failures.to_string(),
            r.precision_mean.to_string(),
            r.precision_sd.to_string(),
            r.recall_mean.to_string(),
            r.recall_sd.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::VariableId;

    fn e(i: u32, j: u32) -> Edge {
        Edge::undirected(VariableId::y(i), VariableId::y(j))
    }

    #[test]
    fn recovery_conventions() {
        let truth: BTreeSet<Edge> = [e(1, 2), e(2, 3)].into();
        let m = precision_recall(&truth, &truth);
        assert_eq!((m.precision, m.recall), (1.0, 1.0));
        let half: BTreeSet<Edge> = [e(1, 2)].into();
        let m = precision_recall(&half, &truth);
        assert_eq!((m.precision, m.recall), (1.0, 0.5));
        let m = precision_recall(&BTreeSet::new(), &truth);
        assert_eq!((m.precision, m.recall), (1.0, 0.0));
    }

    #[test]
    fn single_replicate_has_zero_variance() {
        let r = BootstrapReport::from_estimates(Condition::Empty, vec![Some(0.3)], 0.1);
        assert_eq!(r.variance, 0.0);
        assert!((r.bias - 0.2).abs() < 1e-15);
    }

    #[test]
    fn failures_are_counted_and_flagged() {
        let mut est = vec![Some(0.1); 19];
        est.push(None);
        let r = BootstrapReport::from_estimates(Condition::Complete, est.clone(), 0.0);
        assert_eq!((r.failures, r.completed, r.flagged), (1, 19, false));
        est.push(None);
        let r = BootstrapReport::from_estimates(Condition::Complete, est, 0.0);
        assert!(r.flagged);
    }

    #[test]
    fn scenario_defaults() {
        let s = Scenario::from_json(r#"{"m": 4, "k": 2, "n": 100}"#).unwrap();
        assert_eq!(s.p, 1);
        assert_eq!(s.policy1, Policy::Bernoulli(0.7));
        assert_eq!(s.policy2, Policy::Natural);
        assert_eq!(s.conditions.len(), 5);
        assert_eq!(s.resample, Resample::Fresh);
        assert!(Scenario::from_json(r#"{"m": 4, "k": 5, "n": 100}"#).is_err());
        assert!(Scenario::from_json(r#"{"m": 4, "k": 2, "n": 100, "bogus": 1}"#).is_err());
    }
}
