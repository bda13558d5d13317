//! Command-line front end: `simulate`, `learn`, `estimate`, `evaluate` and
//! `pipeline`. Every subcommand writes its artifacts plus a `manifest.json`
//! into an output directory.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 invalid input.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{BlockDataset, DataError};
use crate::estimate::{auto_g_paoe, AutoGConfig, EffectEstimate, EstimateError, Policy};
use crate::evaluate::{
    bootstrap_paoe, precision_recall, recovery_sweep, sweep_csv, true_paoe, Condition,
    EstimatorSettings, EvalError, EvaluationReport, GeneratorSettings, RecoveryMetrics, Resample,
    Scenario,
};
use crate::graph::io::{graph_to_json, network_from_json, prototypes_from_json, read_graph};
use crate::model::{ModelError, Sharing};
use crate::rng::derive_seed;
use crate::search::{forward_backward, learn, SearchMode, SearchOptions, SearchResult};
use crate::simulate::{
    build_k_regular_truth, gibbs_generate, GenCoefficients, SamplerConfig, SimError,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(
    name = "cgnet",
    version,
    about = "Chain-graph structure learning and network effect estimation"
)]
pub struct Cli {
    /// Worker threads for parallel scoring and Monte Carlo (default: all cores).
    /// Results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw blocks from the k-regular truth by Gibbs sampling.
    Simulate(SimulateArgs),
    /// Learn the network structure of a dataset.
    Learn(LearnArgs),
    /// Estimate the population average overall effect on a given graph.
    Estimate(EstimateArgs),
    /// Run the bias/variance and structure-recovery experiments of a scenario.
    Evaluate(EvaluateArgs),
    /// Simulate, learn, estimate and evaluate from one config file.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Units per block.
    #[arg(long)]
    pub m: u32,
    /// Degree of the regular unit network.
    #[arg(long)]
    pub k: u32,
    /// Covariates per unit.
    #[arg(long, default_value_t = 1)]
    pub p: u32,
    /// Number of blocks.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 100)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON file of generating coefficients (missing fields take defaults).
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "homo",
          value_parser = ["hetero", "homo", "homo-known-proto", "homo-known-net"])]
    pub mode: String,
    /// Known prototypes (JSON) for `homo-known-proto`.
    #[arg(long)]
    pub proto: Option<PathBuf>,
    /// Known unit network (JSON) for `homo-known-net`.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Parameter sharing; `auto` uses the procedure's default.
    #[arg(long, default_value = "auto", value_parser = ["auto", "none", "homogeneous", "ties"])]
    pub sharing: String,
    /// Grow ties from the empty network before the backward search (hetero only).
    #[arg(long)]
    pub forward_backward: bool,
    /// In `homo` mode, search prototypes before the network.
    #[arg(long)]
    pub reverse_chain: bool,
    /// Recorded in the manifest; the search itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Graph JSON.
    #[arg(long)]
    pub graph: PathBuf,
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Treatment probability of the Bernoulli policy.
    #[arg(long, default_value_t = 0.7)]
    pub pi1: f64,
    /// Comparison policy: `natural` or `bernoulli:<alpha>`.
    #[arg(long, default_value = "natural")]
    pub policy2: String,
    /// Monte Carlo draws per policy.
    #[arg(long = "T", default_value_t = 10_000)]
    pub t: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 100)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parameter sharing of the fitted model.
    #[arg(long, default_value = "none", value_parser = ["none", "homogeneous", "ties"])]
    pub sharing: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Replicates per condition.
    #[arg(long = "B", default_value_t = 100)]
    pub b: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything the pipeline needs, in one JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub m: u32,
    pub k: u32,
    #[serde(default = "one")]
    pub p: u32,
    pub n: usize,
    #[serde(default)]
    pub coefficients: GenCoefficients,
    #[serde(default)]
    pub generator: GeneratorSettings,
    #[serde(default = "homo")]
    pub mode: SearchMode,
    /// Sharing for the search; the procedure default when absent.
    #[serde(default)]
    pub sharing: Option<Sharing>,
    #[serde(default = "default_pi1")]
    pub pi1: f64,
    #[serde(default = "natural")]
    pub policy2: Policy,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    /// Bootstrap replicates of the evaluation stage; 0 skips them.
    #[serde(default, rename = "B")]
    pub b: usize,
    #[serde(default = "all_conditions")]
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub resample: Resample,
    #[serde(default = "default_exact_max_units")]
    pub exact_max_units: u32,
    #[serde(default = "default_truth_t")]
    pub truth_t: usize,
}

fn one() -> u32 {
    1
}
fn homo() -> SearchMode {
    SearchMode::Homogeneous
}
fn default_pi1() -> f64 {
    0.7
}
fn natural() -> Policy {
    Policy::Natural
}
fn all_conditions() -> Vec<Condition> {
    Condition::ALL.to_vec()
}
fn default_exact_max_units() -> u32 {
    crate::estimate::DEFAULT_EXACT_MAX_UNITS
}
fn default_truth_t() -> usize {
    1_000_000
}

impl PipelineConfig {
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let scenario = Scenario {
            m: self.m,
            k: self.k,
            p: self.p,
            n: self.n,
            coefficients: self.coefficients,
            generator: self.generator,
            conditions: self.conditions.clone(),
            policy1: Policy::bernoulli(self.pi1).map_err(estimate_err)?,
            policy2: self.policy2,
            estimator: self.estimator,
            resample: self.resample,
            exact_max_units: self.exact_max_units,
            truth_t: self.truth_t,
            sweep: None,
        };
        scenario.validate().map_err(eval_err)?;
        Ok(scenario)
    }
}

/// Summary written by the pipeline's evaluation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub true_paoe: f64,
    pub truth_method: String,
    pub estimated_paoe: f64,
    pub error: f64,
    pub recovery: RecoveryMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationReport>,
}

/// Provenance of an output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    /// Resolved flag values, excluding the output directory and thread count.
    pub flags: BTreeMap<String, Value>,
    /// SHA-256 of every input file, keyed by flag name.
    pub inputs: BTreeMap<String, InputDigest>,
    pub outputs: Vec<String>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent input.
    Invalid(String),
    /// Failure while computing.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => m,
        }
    }
}

fn data_err(e: DataError) -> CliError {
    CliError::Invalid(e.to_string())
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::NotConverged { .. } => CliError::Runtime(e.to_string()),
        _ => CliError::Invalid(e.to_string()),
    }
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::Model(e) => model_err(e),
        _ => CliError::Invalid(e.to_string()),
    }
}

fn estimate_err(e: EstimateError) -> CliError {
    match e {
        EstimateError::Model(e) => model_err(e),
        _ => CliError::Invalid(e.to_string()),
    }
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Sim(e) => sim_err(e),
        EvalError::Estimate(e) => estimate_err(e),
        EvalError::Model(e) => model_err(e),
        EvalError::Write { .. } => CliError::Runtime(e.to_string()),
        _ => CliError::Invalid(e.to_string()),
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn parse_sharing(s: &str) -> Result<Option<Sharing>, CliError> {
    match s {
        "auto" => Ok(None),
        other => other.parse().map(Some).map_err(invalid),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects outputs and writes the manifest last, also after a failure.
struct Run {
    out: PathBuf,
    manifest: RunManifest,
    stage: &'static str,
}

impl Run {
    fn new(subcommand: &str, out: &Path, seed: u64, flags: Value) -> Result<Self, CliError> {
        fs::create_dir_all(out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
        let flags = match flags {
            Value::Object(map) => map.into_iter().collect(),
            _ => BTreeMap::new(),
        };
        Ok(Run {
            out: out.to_path_buf(),
            manifest: RunManifest {
                subcommand: subcommand.into(),
                version: VERSION.into(),
                seed,
                flags,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                status: "running".into(),
                failed_stage: None,
                error: None,
            },
            stage: "inputs",
        })
    }

    fn input(&mut self, flag: &str, path: &Path) -> Result<(), CliError> {
        let digest = InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        };
        self.manifest.inputs.insert(flag.into(), digest);
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn finish(mut self, result: Result<(), CliError>) -> Result<(), CliError> {
        match &result {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.failed_stage = Some(self.stage.into());
                self.manifest.error = Some(e.message().into());
            }
        }
        let text =
            serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        let path = self.out.join("manifest.json");
        fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        result
    }
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let flags = json!({
        "m": args.m, "k": args.k, "p": args.p, "n": args.n,
        "burn_in": args.burn_in, "thin": args.thin, "seed": args.seed,
        "coeffs": args.coeffs.as_ref().map(|p| p.display().to_string()),
    });
    let mut run = Run::new("simulate", &args.out, args.seed, flags)?;
    let result = (|| {
        let coeffs: GenCoefficients = match &args.coeffs {
            Some(path) => {
                run.input("coeffs", path)?;
                serde_json::from_str(&read_text(path)?)
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?
            }
            None => GenCoefficients::default(),
        };
        let truth = build_k_regular_truth(args.m, args.k, args.p).map_err(sim_err)?;
        let config = SamplerConfig {
            burn_in: args.burn_in,
            thin: args.thin,
            seed: args.seed,
            n: args.n,
        };
        run.stage = "simulate";
        let data = gibbs_generate(&truth, &coeffs, &config).map_err(sim_err)?;
        run.write("dataset.csv", &data.to_csv())?;
        run.write("truth.json", &(graph_to_json(&truth) + "\n"))?;
        run.write("coefficients.json", &json_line(&coeffs))
    })();
    run.finish(result)
}

fn run_search(
    data: &BlockDataset,
    mode: SearchMode,
    protos: Option<&std::collections::BTreeSet<crate::graph::EdgePrototype>>,
    network: Option<&std::collections::BTreeSet<(u32, u32)>>,
    opts: &SearchOptions,
    forward: bool,
) -> Result<SearchResult, CliError> {
    if forward {
        if mode != SearchMode::Heterogeneous {
            return Err(invalid("--forward-backward applies to --mode hetero only"));
        }
        return forward_backward(data, opts).map_err(model_err);
    }
    learn(data, mode, protos, network, opts).map_err(model_err)
}

fn learn_cmd(args: &LearnArgs) -> Result<(), CliError> {
    let flags = json!({
        "data": args.data.display().to_string(),
        "mode": args.mode, "sharing": args.sharing,
        "proto": args.proto.as_ref().map(|p| p.display().to_string()),
        "network": args.network.as_ref().map(|p| p.display().to_string()),
        "forward_backward": args.forward_backward,
        "reverse_chain": args.reverse_chain,
        "seed": args.seed,
    });
    let mut run = Run::new("learn", &args.out, args.seed, flags)?;
    let result = (|| {
        let mode: SearchMode = args.mode.parse().map_err(invalid)?;
        let sharing = parse_sharing(&args.sharing)?;
        run.input("data", &args.data)?;
        let data = BlockDataset::read_csv(&args.data).map_err(data_err)?;
        let protos = match &args.proto {
            Some(path) => {
                run.input("proto", path)?;
                let text = read_text(path)?;
                Some(
                    prototypes_from_json(&text)
                        .map_err(|e| invalid(format!("{}: {e}", path.display())))?,
                )
            }
            None => None,
        };
        let network = match &args.network {
            Some(path) => {
                run.input("network", path)?;
                let text = read_text(path)?;
                Some(
                    network_from_json(&text, data.m())
                        .map_err(|e| invalid(format!("{}: {e}", path.display())))?,
                )
            }
            None => None,
        };
        let opts = SearchOptions {
            sharing,
            reverse_chain: args.reverse_chain,
            ..SearchOptions::default()
        };
        run.stage = "learn";
        let result = run_search(
            &data,
            mode,
            protos.as_ref(),
            network.as_ref(),
            &opts,
            args.forward_backward,
        )?;
        run.write("learned.json", &(graph_to_json(&result.graph) + "\n"))?;
        run.write("trace.csv", &result.trace_csv())
    })();
    run.finish(result)
}

fn estimate_cmd(args: &EstimateArgs) -> Result<(), CliError> {
    let flags = json!({
        "graph": args.graph.display().to_string(),
        "data": args.data.display().to_string(),
        "pi1": args.pi1, "policy2": args.policy2, "T": args.t,
        "burn_in": args.burn_in, "thin": args.thin, "seed": args.seed,
        "sharing": args.sharing,
    });
    let mut run = Run::new("estimate", &args.out, args.seed, flags)?;
    let result = (|| {
        let policy1 = Policy::bernoulli(args.pi1).map_err(estimate_err)?;
        let policy2: Policy = args.policy2.parse().map_err(estimate_err)?;
        let sharing = parse_sharing(&args.sharing)?.unwrap_or_default();
        run.input("graph", &args.graph)?;
        run.input("data", &args.data)?;
        let graph = read_graph(&args.graph).map_err(invalid)?;
        let data = BlockDataset::read_csv(&args.data).map_err(data_err)?;
        let config = AutoGConfig {
            t: args.t,
            burn_in: args.burn_in,
            thin: args.thin,
            seed: args.seed,
            sharing,
        };
        run.stage = "estimate";
        let est = auto_g_paoe(&data, &graph, policy1, policy2, &config).map_err(estimate_err)?;
        run.write("effect.json", &json_line(&est))
    })();
    run.finish(result)
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<(), CliError> {
    let flags = json!({
        "scenario": args.scenario.display().to_string(),
        "B": args.b, "seed": args.seed,
    });
    let mut run = Run::new("evaluate", &args.out_dir, args.seed, flags)?;
    let result = (|| {
        run.input("scenario", &args.scenario)?;
        let scenario = Scenario::read(&args.scenario).map_err(eval_err)?;
        run.stage = "bootstrap";
        let report = bootstrap_paoe(&scenario, args.b, args.seed).map_err(eval_err)?;
        run.write("report.json", &(report.to_json() + "\n"))?;
        run.write("replicates.csv", &report.replicates_csv())?;
        run.stage = "sweep";
        let rows = match &scenario.sweep {
            Some(sweep) => recovery_sweep(
                sweep,
                &scenario.coefficients,
                &scenario.generator,
                scenario.p,
                derive_seed(args.seed, &[SWEEP_STAGE]),
            )
            .map_err(eval_err)?,
            None => Vec::new(),
        };
        run.write("sweep.csv", &sweep_csv(&rows))
    })();
    run.finish(result)
}

const SIMULATE_STAGE: u64 = 1;
const ESTIMATE_STAGE: u64 = 3;
const EVALUATE_STAGE: u64 = 4;
const SWEEP_STAGE: u64 = 5;

fn pipeline_cmd(args: &PipelineArgs) -> Result<(), CliError> {
    let flags = json!({
        "config": args.config.display().to_string(),
        "seed": args.seed,
    });
    let mut run = Run::new("pipeline", &args.out, args.seed, flags)?;
    let result = (|| {
        run.input("config", &args.config)?;
        let text = read_text(&args.config)?;
        let config: PipelineConfig = serde_json::from_str(&text).map_err(|e| {
            invalid(format!(
                "{}: line {}, column {}: {e}",
                args.config.display(),
                e.line(),
                e.column()
            ))
        })?;
        let scenario = config.scenario()?;
        run.write("config.json", &json_line(&config))?;

        run.stage = "simulate";
        let truth = scenario.truth().map_err(eval_err)?;
        let data = gibbs_generate(
            &truth,
            &scenario.coefficients,
            &scenario.generator_config(derive_seed(args.seed, &[SIMULATE_STAGE])),
        )
        .map_err(sim_err)?;
        run.write("dataset.csv", &data.to_csv())?;

        run.stage = "learn";
        let opts = SearchOptions {
            sharing: config.sharing,
            ..SearchOptions::default()
        };
        let learned = learn(&data, config.mode, None, None, &opts).map_err(model_err)?;
        run.write("learned.json", &(graph_to_json(&learned.graph) + "\n"))?;
        run.write("trace.csv", &learned.trace_csv())?;

        run.stage = "estimate";
        let est: EffectEstimate = auto_g_paoe(
            &data,
            &learned.graph,
            scenario.policy1,
            scenario.policy2,
            &scenario
                .estimator
                .config(derive_seed(args.seed, &[ESTIMATE_STAGE])),
        )
        .map_err(estimate_err)?;
        run.write("effect.json", &json_line(&est))?;

        run.stage = "evaluate";
        let eval_seed = derive_seed(args.seed, &[EVALUATE_STAGE]);
        let (truth_value, method) = true_paoe(&scenario, eval_seed).map_err(eval_err)?;
        let evaluation = if config.b > 0 {
            let report = bootstrap_paoe(&scenario, config.b, eval_seed).map_err(eval_err)?;
            run.write("replicates.csv", &report.replicates_csv())?;
            Some(report)
        } else {
            None
        };
        let report = PipelineReport {
            true_paoe: truth_value,
            truth_method: method.into(),
            estimated_paoe: est.paoe,
            error: est.paoe - truth_value,
            recovery: precision_recall(learned.cross_edges(), truth.cross_edges()),
            evaluation,
        };
        run.write("report.json", &json_line(&report))
    })();
    run.finish(result)
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Learn(a) => learn_cmd(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
