//! The `commfr` command line.
//!
//! Worker, group and dataset numbers are shown 1-based here; the library
//! itself is 0-based. Exit codes: 0 success, 1 verification failure,
//! 2 usage or parameter error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codes::{CodeDocument, CodeSpec, ErasurePattern, LinearCode};
use crate::coding::{
    achieved_triple, decode_all, encode_worker, fractional_repetition_placement, lower_bound_load, GradientBatch,
};
use crate::error::Error;
use crate::ldpc::{bec_threshold, peel_decode_with, sample_ldpc, ThresholdQuery};
use crate::sim::{run_training, ExperimentConfig};
use crate::stability::{stability_table_with, TableInput, REFERENCE_TABLE_INPUTS, TAIL_CONSTANT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Relative error a roundtrip must stay under to pass.
pub const ROUNDTRIP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "commfr", version, about = "Communication-efficient gradient coding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "kebab-case")]
pub enum Command {
    /// Place datasets on workers and report the achieved (l, m, s) triple.
    Plan(PlanArgs),
    /// Encode random gradients, erase workers, decode, and compare.
    Roundtrip(RoundtripArgs),
    /// Condition-number-aware straggler thresholds.
    Stability(StabilityArgs),
    /// Density-evolution erasure threshold of a regular LDPC ensemble.
    LdpcThreshold(ThresholdArgs),
    /// Peeling success rate on sampled erasure patterns.
    LdpcTrial(TrialArgs),
    /// Simulated training under several aggregation schemes.
    Simulate(SimulateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Plan(_) => "plan",
            Command::Roundtrip(_) => "roundtrip",
            Command::Stability(_) => "stability",
            Command::LdpcThreshold(_) => "ldpc-threshold",
            Command::LdpcTrial(_) => "ldpc-trial",
            Command::Simulate(_) => "simulate",
            Command::Replay(_) => "replay",
        }
    }

    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        match self {
            Command::Plan(a) => &mut a.out,
            Command::Roundtrip(a) => &mut a.plan.out,
            Command::Stability(a) => &mut a.out,
            Command::LdpcThreshold(a) => &mut a.out,
            Command::LdpcTrial(a) => &mut a.out,
            Command::Simulate(a) => &mut a.out,
            Command::Replay(a) => &mut a.out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeChoice {
    /// Systematic MDS code with a Gaussian parity block.
    Mds,
    Gaussian,
    Repetition,
    Vandermonde,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlanArgs {
    /// Number of workers.
    #[arg(long)]
    pub n: usize,
    /// Number of datasets.
    #[arg(long)]
    pub k: usize,
    /// Code block length, i.e. workers per group.
    #[arg(long = "N", alias = "group-size")]
    pub group_size: usize,
    /// Code dimension, i.e. the communication saving. Defaults to 1 for repetition.
    #[arg(long = "K", alias = "code-dim")]
    pub code_dim: Option<usize>,
    #[arg(long, value_enum, default_value = "mds")]
    pub code: CodeChoice,
    /// Code JSON document; overrides --code.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Output directory [default: out/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RoundtripArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Gradient length.
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    /// Workers to erase, 1-based and comma separated.
    #[arg(long, value_delimiter = ',')]
    pub erase: Vec<usize>,
    /// Draw integer gradients in [-9, 9] instead of standard normals.
    #[arg(long)]
    pub integer: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StabilityArgs {
    /// Inline rows as n:s:m, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["input", "reference"])]
    pub rows: Vec<String>,
    /// CSV file with header n,s,m.
    #[arg(long, conflicts_with = "reference")]
    pub input: Option<PathBuf>,
    /// Use the twelve reference inputs.
    #[arg(long)]
    pub reference: bool,
    #[arg(long, default_value_t = 1000.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Tail-bound constant C.
    #[arg(long, default_value_t = TAIL_CONSTANT)]
    pub constant: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = 3)]
    pub dv: usize,
    #[arg(long, default_value_t = 6)]
    pub dc: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrialArgs {
    #[arg(long = "N", alias = "block-length")]
    pub block_length: usize,
    #[arg(long = "K", alias = "dimension")]
    pub dimension: usize,
    #[arg(long, default_value_t = 3)]
    pub dv: usize,
    #[arg(long, default_value_t = 6)]
    pub dc: usize,
    /// Erasure probability.
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long)]
    pub seed: u64,
    /// Solve densely when peeling stalls.
    #[arg(long)]
    pub fallback: bool,
    /// Exit with status 1 when the success rate falls below this.
    #[arg(long)]
    pub min_success: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Experiment JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// File contents a command read, kept so a replay does not depend on them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Inputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<CodeDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<TableInput>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub invocation: Command,
    pub inputs: Inputs,
    pub seed: Option<u64>,
    pub version: String,
    /// Output files, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("manifest {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Usage(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Verification(_) => EXIT_VERIFICATION,
        }
    }
}

/// Library error text with 1-based group numbers.
pub fn describe(e: &Error) -> String {
    match e {
        Error::UnrecoverableGroup { group, received, rank, needed } => format!(
            "unrecoverable-group({}): {received} chunks received, rank {rank}, need rank {needed}",
            group + 1
        ),
        other => other.to_string(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(describe(&e))
    }
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self, Failure> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs { dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

type Console<'a> = &'a mut dyn Write;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: Console, err: Console) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Replay(args) => replay(&args, out),
        command => execute(command, Inputs::default(), out),
    };
    match result {
        Ok(warnings) => {
            for w in warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            EXIT_OK
        }
        Err(f) => {
            let (Failure::Usage(msg) | Failure::Verification(msg)) = &f;
            let _ = writeln!(err, "error: {msg}");
            f.code()
        }
    }
}

fn replay(args: &ReplayArgs, out: Console) -> Result<Vec<String>, Failure> {
    let manifest = RunManifest::read(&args.manifest)?;
    let mut command = manifest.invocation;
    if matches!(command, Command::Replay(_)) {
        return Err(Failure::Usage("a manifest cannot record a replay".into()));
    }
    *command.out_mut() = Some(args.out.clone().unwrap_or_else(|| default_out(&command)));
    execute(command, manifest.inputs, out)
}

fn default_out(command: &Command) -> PathBuf {
    Path::new("out").join(command.name())
}

/// Runs a parsed command. `inputs` replaces file reads when populated.
pub fn execute(mut command: Command, inputs: Inputs, out: Console) -> Result<Vec<String>, Failure> {
    let dir = command.out_mut().clone().unwrap_or_else(|| default_out(&command));
    let mut files = Outputs::new(dir)?;
    let (inputs, seed, warnings, verdict) = match &command {
        Command::Plan(a) => cmd_plan(a, inputs, &mut files, out)?,
        Command::Roundtrip(a) => cmd_roundtrip(a, inputs, &mut files, out)?,
        Command::Stability(a) => cmd_stability(a, inputs, &mut files, out)?,
        Command::LdpcThreshold(a) => cmd_ldpc_threshold(a, &mut files, out)?,
        Command::LdpcTrial(a) => cmd_ldpc_trial(a, &mut files, out)?,
        Command::Simulate(a) => cmd_simulate(a, inputs, &mut files, out)?,
        Command::Replay(_) => return Err(Failure::Usage("replay cannot be nested".into())),
    };
    // The manifest is independent of where outputs went.
    *command.out_mut() = None;
    let manifest = RunManifest {
        command: command.name().to_string(),
        invocation: command,
        inputs,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: files.written.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    files.write(MANIFEST_FILE, &text)?;
    match verdict {
        Some(msg) => Err(Failure::Verification(msg)),
        None => Ok(warnings),
    }
}

type Executed = (Inputs, Option<u64>, Vec<String>, Option<String>);

fn say(out: Console, text: impl std::fmt::Display) {
    let _ = writeln!(out, "{text}");
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn resolve_code(a: &PlanArgs, inputs: &Inputs) -> Result<(LinearCode, Option<CodeDocument>), Failure> {
    let doc = match (&inputs.code, &a.generator) {
        (Some(doc), _) => Some(doc.clone()),
        (None, Some(path)) => Some(
            serde_json::from_str::<CodeDocument>(&read_text(path)?)
                .map_err(|e| Failure::Usage(format!("code {}: {e}", path.display())))?,
        ),
        (None, None) => None,
    };
    if let Some(doc) = doc {
        let code = CodeSpec::Inline { code: doc.clone() }.build()?;
        return Ok((code, Some(doc)));
    }
    let (n, seed) = (a.group_size, a.seed);
    let k = match (a.code, a.code_dim) {
        (CodeChoice::Repetition, None | Some(1)) => 1,
        (CodeChoice::Repetition, Some(k)) => {
            return Err(Failure::Usage(format!("a repetition code has K = 1, got --K {k}")))
        }
        (_, Some(k)) => k,
        (_, None) => return Err(Failure::Usage("--K is required for this code".into())),
    };
    let spec = match a.code {
        CodeChoice::Mds => CodeSpec::SystematicMds { n, k, seed },
        CodeChoice::Gaussian => CodeSpec::Gaussian { n, k, seed },
        CodeChoice::Repetition => CodeSpec::Repetition { n },
        CodeChoice::Vandermonde => CodeSpec::Vandermonde { n, k },
    };
    Ok((spec.build()?, None))
}

fn one_based(items: &[usize]) -> String {
    items.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Serialize)]
struct PlanReport<'a> {
    plan: &'a crate::coding::PlacementPlan,
    code: CodeDocument,
    l: usize,
    m: usize,
    s: usize,
    lower_bound: usize,
    optimal: bool,
}

fn cmd_plan(a: &PlanArgs, inputs: Inputs, files: &mut Outputs, out: Console) -> Result<Executed, Failure> {
    if a.group_size == 0 || !a.n.is_multiple_of(a.group_size) {
        return Err(Failure::Usage(format!("N = {} must divide n = {}", a.group_size, a.n)));
    }
    let (code, doc) = resolve_code(a, &inputs)?;
    let plan = fractional_repetition_placement(a.n, a.k, code.block_length())?;
    let triple = achieved_triple(a.n, a.k, &code)?;
    let bound = lower_bound_load(a.n, a.k, triple.stragglers, triple.saving)?;
    say(
        out,
        format!(
            "plan: n={} k={} N={} K={} code={}",
            a.n,
            a.k,
            code.block_length(),
            code.dimension(),
            code.kind().as_str()
        ),
    );
    for (g, members) in plan.groups.iter().enumerate() {
        say(
            out,
            format!(
                "  group {}: workers {} hold datasets {}",
                g + 1,
                one_based(members),
                one_based(plan.group_datasets(g)?)
            ),
        );
    }
    let verdict = if triple.optimal { "optimal".to_string() } else { format!("lower bound l >= {bound}") };
    say(out, format!("{triple}, {verdict}"));
    let report = PlanReport {
        plan: &plan,
        code: CodeDocument::from(code.clone()),
        l: triple.load,
        m: triple.saving,
        s: triple.stragglers,
        lower_bound: bound,
        optimal: triple.optimal,
    };
    files.write("plan.json", &serde_json::to_string_pretty(&report).expect("plan serializes"))?;
    Ok((Inputs { code: doc, ..Inputs::default() }, Some(a.seed), Vec::new(), None))
}

#[derive(Serialize)]
struct RoundtripReport {
    pass: bool,
    erased: Vec<usize>,
    max_relative_error: Option<f64>,
    solve_dimension: Option<usize>,
    multiply_adds: Option<u64>,
    failure: Option<String>,
    direct: Vec<f64>,
    decoded: Option<Vec<f64>>,
}

fn cmd_roundtrip(a: &RoundtripArgs, inputs: Inputs, files: &mut Outputs, out: Console) -> Result<Executed, Failure> {
    let p = &a.plan;
    if p.group_size == 0 || !p.n.is_multiple_of(p.group_size) {
        return Err(Failure::Usage(format!("N = {} must divide n = {}", p.group_size, p.n)));
    }
    if a.d == 0 {
        return Err(Failure::Usage("--d must be positive".into()));
    }
    let (code, doc) = resolve_code(p, &inputs)?;
    let plan = fractional_repetition_placement(p.n, p.k, code.block_length())?;
    let mut erased = Vec::with_capacity(a.erase.len());
    for &w in &a.erase {
        if w == 0 || w > p.n {
            return Err(Failure::Usage(format!("worker {w} out of range 1..={}", p.n)));
        }
        erased.push(w - 1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(1);
    let partials: Vec<DVector<f64>> = (0..p.k)
        .map(|_| {
            DVector::from_fn(a.d, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if a.integer {
                    (z * 3.0).round().clamp(-9.0, 9.0)
                } else {
                    z
                }
            })
        })
        .collect();
    let batch = GradientBatch::new(partials)?;
    let direct = batch.total();
    let chunks = (0..p.n)
        .filter(|w| !erased.contains(w))
        .map(|w| encode_worker(&plan, &code, &batch, w))
        .collect::<Result<Vec<_>, _>>()?;

    let mut report = RoundtripReport {
        pass: false,
        erased: erased.iter().map(|w| w + 1).collect(),
        max_relative_error: None,
        solve_dimension: None,
        multiply_adds: None,
        failure: None,
        direct: direct.iter().copied().collect(),
        decoded: None,
    };
    let verdict = match decode_all(&plan, &code, &chunks, a.d) {
        Ok((decoded, cost)) => {
            let scale = direct.amax().max(f64::MIN_POSITIVE);
            let rel = (&decoded - &direct).amax() / scale;
            report.pass = rel < ROUNDTRIP_TOLERANCE;
            report.max_relative_error = Some(rel);
            report.solve_dimension = Some(cost.max_solve_dimension());
            report.multiply_adds = Some(cost.total_multiply_adds());
            report.decoded = Some(decoded.iter().copied().collect());
            let line = format!(
                "max relative error {rel:.3e}, solve dimension {}, multiply-adds {}",
                cost.max_solve_dimension(),
                cost.total_multiply_adds()
            );
            if report.pass {
                say(out, format!("PASS {line}"));
                None
            } else {
                say(out, format!("FAIL {line}"));
                Some(format!("roundtrip error {rel:.3e} exceeds {ROUNDTRIP_TOLERANCE:e}"))
            }
        }
        Err(e) => {
            let msg = describe(&e);
            say(out, format!("FAIL {msg}"));
            report.failure = Some(msg.clone());
            Some(msg)
        }
    };
    files.write("roundtrip.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok((Inputs { code: doc, ..Inputs::default() }, Some(p.seed), Vec::new(), verdict))
}

fn parse_row(text: &str) -> Result<TableInput, Failure> {
    let parts: Vec<&str> = text.trim().split(':').collect();
    let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match nums {
        Ok(v) if v.len() == 3 => Ok(TableInput { n: v[0], s: v[1], m: v[2] }),
        _ => Err(Failure::Usage(format!("row {text:?} is not n:s:m"))),
    }
}

fn cmd_stability(a: &StabilityArgs, inputs: Inputs, files: &mut Outputs, out: Console) -> Result<Executed, Failure> {
    let rows: Vec<TableInput> = if let Some(rows) = inputs.rows {
        rows
    } else if a.reference {
        REFERENCE_TABLE_INPUTS.to_vec()
    } else if let Some(path) = &a.input {
        let text = read_text(path)?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        rdr.deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
    } else {
        a.rows.iter().map(|r| parse_row(r)).collect::<Result<_, _>>()?
    };
    if !(a.kappa.is_finite() && a.kappa > 0.0) || !(a.epsilon > 0.0 && a.epsilon < 1.0) {
        return Err(Failure::Usage("need kappa > 0 and 0 < epsilon < 1".into()));
    }
    let table = stability_table_with(&rows, a.kappa, a.epsilon, a.constant);
    let csv = table.to_csv();
    let _ = write!(out, "{csv}");
    files.write("stability.csv", &csv)?;
    files.write("stability.json", &table.to_json())?;
    let warnings = table
        .rows
        .iter()
        .flat_map(|r| r.warnings.iter().map(move |w| format!("row n={} s={} m={}: {w}", r.n, r.s, r.m)))
        .collect();
    Ok((Inputs { rows: Some(rows), ..Inputs::default() }, None, warnings, None))
}

#[derive(Serialize)]
struct ThresholdReport {
    variable_degree: usize,
    check_degree: usize,
    tolerance: f64,
    threshold: f64,
}

fn cmd_ldpc_threshold(a: &ThresholdArgs, files: &mut Outputs, out: Console) -> Result<Executed, Failure> {
    let threshold = bec_threshold(ThresholdQuery::new(a.dv, a.dc, a.tol))?;
    say(out, format!("threshold ({}, {}) = {threshold:.6}", a.dv, a.dc));
    let report = ThresholdReport { variable_degree: a.dv, check_degree: a.dc, tolerance: a.tol, threshold };
    files.write("threshold.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok((Inputs::default(), None, Vec::new(), None))
}

#[derive(Serialize)]
struct TrialRow {
    trial: usize,
    erasures: usize,
    success: bool,
    peel_steps: usize,
    edge_visits: usize,
    used_fallback: bool,
}

#[derive(Serialize)]
struct TrialSummary {
    block_length: usize,
    dimension: usize,
    variable_degree: usize,
    check_degree: usize,
    p: f64,
    trials: usize,
    successes: usize,
    success_rate: f64,
    mean_erasures: f64,
    mean_edge_visits: f64,
}

fn cmd_ldpc_trial(a: &TrialArgs, files: &mut Outputs, out: Console) -> Result<Executed, Failure> {
    if !(0.0..=1.0).contains(&a.p) {
        return Err(Failure::Usage(format!("--p must lie in [0, 1], got {}", a.p)));
    }
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be positive".into()));
    }
    let ldpc = sample_ldpc(a.block_length, a.dimension, a.dv, a.dc, a.seed)?;
    let g = ldpc.linear_code().generator().clone();
    let k = g.nrows();
    let coin = Bernoulli::new(a.p).expect("checked probability");
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    rng.set_stream(1);

    let mut rows = Vec::with_capacity(a.trials);
    for trial in 0..a.trials {
        let message = DMatrix::from_fn(1, k, |_, _| StandardNormal.sample(&mut rng));
        let received: Vec<usize> = (0..a.block_length).filter(|_| !coin.sample(&mut rng)).collect();
        let pattern = ErasurePattern::new(a.block_length, received.iter().copied())?;
        let coded = ldpc.linear_code().encode_columns(&message, &received)?;
        let result = peel_decode_with(&ldpc, &pattern, &coded, a.fallback)?;
        let success = result
            .message
            .as_ref()
            .is_some_and(|m| (m - &message).amax() <= ROUNDTRIP_TOLERANCE * message.amax().max(1.0));
        rows.push(TrialRow {
            trial,
            erasures: result.initial_erasures,
            success,
            peel_steps: result.peel_steps,
            edge_visits: result.edge_visits,
            used_fallback: result.used_fallback,
        });
    }
    let successes = rows.iter().filter(|r| r.success).count();
    let count = rows.len() as f64;
    let summary = TrialSummary {
        block_length: a.block_length,
        dimension: ldpc.dimension(),
        variable_degree: a.dv,
        check_degree: a.dc,
        p: a.p,
        trials: a.trials,
        successes,
        success_rate: successes as f64 / count,
        mean_erasures: rows.iter().map(|r| r.erasures as f64).sum::<f64>() / count,
        mean_edge_visits: rows.iter().map(|r| r.edge_visits as f64).sum::<f64>() / count,
    };
    say(
        out,
        format!(
            "success rate {:.3} ({successes}/{}), mean erasures {:.1}, mean edge visits {:.1}",
            summary.success_rate, a.trials, summary.mean_erasures, summary.mean_edge_visits
        ),
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    let csv = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    files.write("trials.csv", &csv)?;
    files.write("trial.json", &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    let verdict = a
        .min_success
        .filter(|&min| summary.success_rate < min)
        .map(|min| format!("success rate {:.3} below {min}", summary.success_rate));
    Ok((Inputs::default(), Some(a.seed), Vec::new(), verdict))
}

fn cmd_simulate(a: &SimulateArgs, inputs: Inputs, files: &mut Outputs, out: Console) -> Result<Executed, Failure> {
    let config = match inputs.config {
        Some(c) => c,
        None => ExperimentConfig::from_json(&read_text(&a.config)?)?,
    };
    if config.schemes.is_empty() {
        return Err(Failure::Usage("simulation config lists no schemes".into()));
    }
    let mut summaries = Vec::new();
    say(out, "scheme               mean_iteration_time  final_loss  max_gradient_error");
    for (i, sim) in config.configs().iter().enumerate() {
        let trace = run_training(sim)?;
        let stem = format!("trace_{}_{}", i + 1, sim.scheme.name());
        files.write(&format!("{stem}.csv"), &trace.to_csv())?;
        files.write(&format!("{stem}.json"), &trace.to_json())?;
        let s = &trace.summary;
        say(
            out,
            format!(
                "{:<20} {:>20.6} {:>11.6} {:>19.3e}",
                s.scheme, s.mean_iteration_time, s.final_loss, s.max_gradient_error
            ),
        );
        summaries.push(trace.summary);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &summaries {
        w.serialize(s).expect("in-memory CSV write");
    }
    files.write("summary.csv", &String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"))?;
    files.write("summary.json", &serde_json::to_string_pretty(&summaries).expect("summary serializes"))?;
    let seed = config.settings.seed;
    Ok((Inputs { config: Some(config), ..Inputs::default() }, Some(seed), Vec::new(), None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("commfr").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn plan_reports_triple() {
        let dir = tempfile::tempdir().unwrap();
        let o = dir.path().to_str().unwrap();
        let (code, text, _) =
            run_cli(&["plan", "--n", "8", "--k", "4", "--N", "4", "--K", "2", "--code", "mds", "--seed", "1", "--out", o]);
        assert_eq!(code, 0);
        assert!(text.contains("(l=2, m=2, s=2), optimal"), "{text}");
        assert!(text.contains("group 2: workers 5,6,7,8 hold datasets 3,4"), "{text}");
        let (code, text, _) =
            run_cli(&["plan", "--n", "8", "--k", "4", "--N", "4", "--code", "repetition", "--seed", "1", "--out", o]);
        assert_eq!(code, 0);
        assert!(text.contains("(l=2, m=1, s=3)"), "{text}");
    }

    #[test]
    fn usage_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let o = dir.path().to_str().unwrap();
        let (code, _, err) =
            run_cli(&["plan", "--n", "7", "--k", "4", "--N", "4", "--K", "2", "--seed", "1", "--out", o]);
        assert_eq!(code, 2);
        assert!(err.contains("must divide"), "{err}");
        assert_eq!(run_cli(&["plan", "--n", "8"]).0, 2);
        assert_eq!(run_cli(&["bogus"]).0, 2);
        assert_eq!(run_cli(&["--help"]).0, 0);
    }

    #[test]
    fn failure_names_group_one_based() {
        let e = Error::UnrecoverableGroup { group: 0, received: 1, rank: 1, needed: 2 };
        assert!(describe(&e).starts_with("unrecoverable-group(1)"));
    }

    #[test]
    fn stability_rows_parse() {
        assert_eq!(parse_row("60:3:2").unwrap(), TableInput { n: 60, s: 3, m: 2 });
        assert!(parse_row("60:3").is_err());
    }
}
