//! Command-line front end: dataset ingestion, run configuration, analysis
//! and simulation commands, machine-readable reports.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use stochmed::crossfit::{make_folds, EstimationConfig, LearnerSet};
use stochmed::estimators::{decompose_effects, EstimatorKind};
use stochmed::inference::{attach_uniform_inference, Multiplier, UniformInferenceConfig};
use stochmed::learners::{FeatureMaps, IrlsConfig, LearnerSpec, PhiForm};
use stochmed::model::{
    validate_dataset, ColumnRoles, ExposureKind, InterventionSpec, ObservedDataset, RawTable,
};
use stochmed::sim::{
    generate, oracle_truth, run_table1, MisspecToggle, SimConfig, HARNESS_FOLDS,
};
use stochmed::Error as CoreError;

#[derive(Parser)]
#[command(name = "stochmed", version, about = "Direct and indirect effects of stochastic interventions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate direct/indirect effects from a CSV dataset.
    Analyze(CommonArgs),
    /// Run the replication study, or emit a generated dataset.
    Simulate(CommonArgs),
    /// Print exact enumeration truths for the benchmark process.
    Oracle(CommonArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// JSON configuration file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Intervention kind: ips, tilt, or shift.
    #[arg(long)]
    intervention: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    /// Evenly log-spaced delta grid, formatted LO:HI:K.
    #[arg(long, value_name = "LO:HI:K")]
    delta_grid: Option<String>,
    /// Estimator: sub, ipw, or onestep.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Multiplier-bootstrap draws for uniform inference.
    #[arg(long)]
    boot: Option<usize>,
    /// Multiplier law: rademacher or gaussian.
    #[arg(long)]
    multiplier: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Nuisances to deliberately misspecify in simulations (repeatable):
    /// G, E, or M.
    #[arg(long)]
    misspecify: Vec<String>,
    /// With `simulate`: write one generated dataset as CSV and exit.
    #[arg(long)]
    emit_data: bool,
    /// Sample size for --emit-data.
    #[arg(long)]
    n: Option<usize>,
    /// Sample sizes for the replication study (repeatable).
    #[arg(long)]
    ns: Vec<usize>,
    /// Replications per cell of the study.
    #[arg(long)]
    reps: Option<usize>,
}

/// Resolved run configuration; echoed verbatim into every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    schema_version: u32,
    input: Option<String>,
    output: Option<String>,
    roles: Option<ColumnRoles>,
    exposure_kind: Option<String>,
    intervention: String,
    delta: f64,
    delta_grid: Option<GridSpec>,
    estimator: String,
    /// Cross-fitting folds; when omitted, analyze uses 5 and simulate uses
    /// the harness default.
    folds: Option<usize>,
    boot: usize,
    multiplier: String,
    alpha: f64,
    seed: u64,
    threads: usize,
    floor: f64,
    weight_cap: f64,
    sim: SimSection,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridSpec {
    lo: f64,
    hi: f64,
    k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SimSection {
    ns: Vec<usize>,
    reps: usize,
    n: usize,
    misspecify: Vec<String>,
}

impl Default for SimSection {
    fn default() -> SimSection {
        SimSection {
            ns: vec![400, 1600, 6400],
            reps: 300,
            n: 4900,
            misspecify: vec!["G".into(), "E".into(), "M".into()],
        }
    }
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            schema_version: 1,
            input: None,
            output: None,
            roles: None,
            exposure_kind: None,
            intervention: "ips".into(),
            delta: 2.0,
            delta_grid: None,
            estimator: "onestep".into(),
            folds: None,
            boot: 2000,
            multiplier: "rademacher".into(),
            alpha: 0.05,
            seed: 1,
            threads: 0,
            floor: 1e-3,
            weight_cap: 1e4,
            sim: SimSection::default(),
        }
    }
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Numeric(String),
}

impl CliError {
    fn from_core(e: CoreError) -> CliError {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run) = match &cli.command {
        Command::Analyze(a) => (a, cmd_analyze as fn(&CommonArgs, RunConfig) -> CliResult<()>),
        Command::Simulate(a) => (a, cmd_simulate as fn(&CommonArgs, RunConfig) -> CliResult<()>),
        Command::Oracle(a) => (a, cmd_oracle as fn(&CommonArgs, RunConfig) -> CliResult<()>),
    };
    let outcome = resolve_config(args).and_then(|cfg| {
        if cfg.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build_global()
                .ok();
        }
        run(args, cfg)
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, msg, code) = match e {
                CliError::Input(m) => ("input", m, 2),
                CliError::Numeric(m) => ("numeric", m, 3),
            };
            eprintln!(
                "{}",
                json!({ "error": { "kind": kind, "message": msg } })
            );
            ExitCode::from(code)
        }
    }
}

fn resolve_config(args: &CommonArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read config {path:?}: {e}")))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| CliError::Input(format!("bad config: {e}")))?
        }
        None => RunConfig::default(),
    };
    if cfg.schema_version != 1 {
        return Err(CliError::Input(format!(
            "unsupported schema_version {}",
            cfg.schema_version
        )));
    }
    if let Some(p) = &args.input {
        cfg.input = Some(p.display().to_string());
    }
    if let Some(p) = &args.output {
        cfg.output = Some(p.display().to_string());
    }
    if let Some(v) = &args.intervention {
        cfg.intervention = v.clone();
    }
    if let Some(v) = args.delta {
        cfg.delta = v;
    }
    if let Some(gv) = &args.delta_grid {
        let parts: Vec<&str> = gv.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::Input("delta grid must be LO:HI:K".into()));
        }
        let lo: f64 = parts[0].parse().map_err(|_| CliError::Input("bad grid LO".into()))?;
        let hi: f64 = parts[1].parse().map_err(|_| CliError::Input("bad grid HI".into()))?;
        let k: usize = parts[2].parse().map_err(|_| CliError::Input("bad grid K".into()))?;
        cfg.delta_grid = Some(GridSpec { lo, hi, k });
    }
    if let Some(v) = &args.estimator {
        cfg.estimator = v.clone();
    }
    if let Some(v) = args.folds {
        cfg.folds = Some(v);
    }
    if let Some(v) = args.boot {
        cfg.boot = v;
    }
    if let Some(v) = &args.multiplier {
        cfg.multiplier = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.threads {
        cfg.threads = v;
    }
    if !args.misspecify.is_empty() {
        cfg.sim.misspecify = args.misspecify.clone();
    }
    if let Some(v) = args.n {
        cfg.sim.n = v;
    }
    if !args.ns.is_empty() {
        cfg.sim.ns = args.ns.clone();
    }
    if let Some(v) = args.reps {
        cfg.sim.reps = v;
    }
    Ok(cfg)
}

fn parse_intervention(cfg: &RunConfig, delta: f64) -> CliResult<InterventionSpec> {
    match cfg.intervention.as_str() {
        "ips" => Ok(InterventionSpec::IncrementalPropensity { delta_prime: delta }),
        "tilt" => Ok(InterventionSpec::ExponentialTilt { delta }),
        "shift" => Ok(InterventionSpec::ShiftPolicy {
            delta,
            bounds: None,
        }),
        other => Err(CliError::Input(format!("unknown intervention `{other}`"))),
    }
}

fn parse_estimator(cfg: &RunConfig) -> CliResult<EstimatorKind> {
    match cfg.estimator.as_str() {
        "sub" => Ok(EstimatorKind::Substitution),
        "ipw" => Ok(EstimatorKind::Reweighted),
        "onestep" => Ok(EstimatorKind::OneStep),
        other => Err(CliError::Input(format!("unknown estimator `{other}`"))),
    }
}

fn parse_multiplier(cfg: &RunConfig) -> CliResult<Multiplier> {
    match cfg.multiplier.as_str() {
        "rademacher" => Ok(Multiplier::Rademacher),
        "gaussian" => Ok(Multiplier::Gaussian),
        other => Err(CliError::Input(format!("unknown multiplier `{other}`"))),
    }
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn artifact_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

fn write_output(path: Option<&str>, payload: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(payload).expect("serializable payload");
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| CliError::Input(format!("cannot write output {p}: {e}"))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// dataset ingestion
// ---------------------------------------------------------------------------

fn read_csv(path: &str) -> CliResult<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot open {path}: {e}")))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("bad CSV header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| CliError::Input(format!("bad CSV record at row {row}: {e}")))?;
        if record.len() != names.len() {
            return Err(CliError::Input(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                names.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let parsed = field.parse::<f64>().ok().filter(|v| v.is_finite());
            columns[j].push(parsed);
        }
    }
    Ok(RawTable { names, columns })
}

/// Infer column roles by name when the config supplies none: `y` is the
/// outcome, `a` the exposure, `z*` mediators, `w*` covariates.
fn infer_roles(raw: &RawTable) -> CliResult<ColumnRoles> {
    let mut roles = ColumnRoles {
        y: String::new(),
        a: String::new(),
        z: Vec::new(),
        w: Vec::new(),
    };
    for name in &raw.names {
        let lower = name.to_ascii_lowercase();
        if lower == "y" {
            roles.y = name.clone();
        } else if lower == "a" {
            roles.a = name.clone();
        } else if lower.starts_with('z') {
            roles.z.push(name.clone());
        } else if lower.starts_with('w') {
            roles.w.push(name.clone());
        } else {
            return Err(CliError::Input(format!(
                "cannot infer a role for column `{name}`; supply a roles map in the config"
            )));
        }
    }
    if roles.y.is_empty() || roles.a.is_empty() {
        return Err(CliError::Input(
            "role inference needs columns named `y` and `a`".into(),
        ));
    }
    Ok(roles)
}

/// Learner choice per nuisance: exact stratification when the predictors
/// are discrete enough, regression fallbacks otherwise. The outcome
/// regression is allowed more strata than the 64-cell default because its
/// design includes the exposure column.
fn auto_learners(data: &ObservedDataset) -> LearnerSet {
    let strata = |cols: Vec<Vec<f64>>| -> usize {
        let mut seen = std::collections::HashSet::new();
        for row in cols {
            seen.insert(
                row.iter()
                    .map(|v| (v + 0.0).to_bits())
                    .collect::<Vec<u64>>(),
            );
        }
        seen.len()
    };
    let n = data.n();
    let w_strata = strata((0..n).map(|i| data.w().row(i).to_vec()).collect());
    let zw_strata = strata(
        (0..n)
            .map(|i| {
                let mut v = data.z().row(i).to_vec();
                v.extend_from_slice(data.w().row(i));
                v
            })
            .collect(),
    );
    let azw_strata = strata(
        (0..n)
            .map(|i| {
                let mut v = vec![data.a()[i]];
                v.extend_from_slice(data.z().row(i));
                v.extend_from_slice(data.w().row(i));
                v
            })
            .collect(),
    );
    let binary = data.exposure_kind() == ExposureKind::Binary;

    let g = if !binary {
        LearnerSpec::HistogramDensity { bins: 10 }
    } else if w_strata <= 64 {
        LearnerSpec::saturated()
    } else {
        LearnerSpec::LogisticGlm(IrlsConfig::default())
    };
    let e = if !binary {
        LearnerSpec::HistogramDensity { bins: 10 }
    } else if zw_strata <= 64 {
        LearnerSpec::SaturatedStratified {
            shrinkage: stochmed::sim::CROSSFIT_E_SHRINKAGE,
            max_strata: 64,
        }
    } else {
        LearnerSpec::LogisticGlm(IrlsConfig::default())
    };
    let m = if azw_strata <= 256 {
        LearnerSpec::SaturatedStratified {
            shrinkage: stochmed::sim::CROSSFIT_M_SHRINKAGE,
            max_strata: 256,
        }
    } else {
        LearnerSpec::LinearRidge { lambda: 1e-6 }
    };
    // the auxiliary regression takes the exposure as a feature except in
    // the incremental case, so stratification needs a binary exposure
    let phi = if binary && w_strata <= 64 {
        LearnerSpec::SaturatedStratified {
            shrinkage: 0.0,
            max_strata: 128,
        }
    } else {
        LearnerSpec::LinearRidge { lambda: 1e-6 }
    };
    LearnerSet {
        g,
        e,
        m,
        phi,
        phi_form: PhiForm::Stabilized,
    }
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

fn cmd_analyze(_args: &CommonArgs, cfg: RunConfig) -> CliResult<()> {
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| CliError::Input("analyze needs --input".into()))?;
    let raw = read_csv(&input)?;
    let roles = match &cfg.roles {
        Some(r) => r.clone(),
        None => infer_roles(&raw)?,
    };
    let mut data = validate_dataset(&raw, &roles).map_err(CliError::from_core)?;
    match cfg.exposure_kind.as_deref() {
        Some("binary") => data
            .set_exposure_kind(ExposureKind::Binary)
            .map_err(CliError::from_core)?,
        Some("continuous") => data
            .set_exposure_kind(ExposureKind::Continuous)
            .map_err(CliError::from_core)?,
        Some(other) => {
            return Err(CliError::Input(format!("unknown exposure kind `{other}`")))
        }
        None => {}
    }

    let template = parse_intervention(&cfg, cfg.delta)?;
    let kind = parse_estimator(&cfg)?;
    let grid: Vec<f64> = match cfg.delta_grid {
        Some(GridSpec { lo, hi, k }) => {
            if matches!(template, InterventionSpec::ShiftPolicy { .. }) {
                return Err(CliError::Input(
                    "uniform inference over a delta grid is not offered for shift policies; \
                     run single deltas instead"
                        .into(),
                ));
            }
            UniformInferenceConfig::log_grid(lo, hi, k)
        }
        None => vec![cfg.delta],
    };

    let learners = auto_learners(&data);
    let est_cfg = EstimationConfig {
        floor: cfg.floor,
        weight_cap: cfg.weight_cap,
        known_g: None,
    };
    let plan = make_folds(data.n(), cfg.folds.unwrap_or(5), cfg.seed)
        .map_err(CliError::from_core)?;
    let mut dec = decompose_effects(
        &data,
        &template,
        &grid,
        kind,
        &learners,
        &FeatureMaps::default(),
        &plan,
        &est_cfg,
    )
    .map_err(CliError::from_core)?;

    if cfg.delta_grid.is_some() && kind == EstimatorKind::OneStep {
        let ucfg = UniformInferenceConfig {
            delta_grid: grid.clone(),
            n_boot: cfg.boot,
            multiplier: parse_multiplier(&cfg)?,
            alpha: cfg.alpha,
            seed: cfg.seed,
        };
        attach_uniform_inference(&mut dec.report, &dec.s_direct, &ucfg)
            .map_err(CliError::from_core)?;
    }

    let payload = json!({
        "schema_version": 1,
        "version": artifact_version(),
        "timestamp": timestamp(),
        "config": cfg,
        "report": dec.report,
    });
    write_output(cfg.output.as_deref(), &payload)
}

fn csv_of_dataset(data: &ObservedDataset) -> String {
    let mut out = String::from("w1,w2,w3,a,z1,z2,z3,y\n");
    for i in 0..data.n() {
        let w = data.w().row(i);
        let z = data.z().row(i);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            w[0],
            w[1],
            w[2],
            data.a()[i],
            z[0],
            z[1],
            z[2],
            data.y()[i]
        ));
    }
    out
}

fn cmd_simulate(args: &CommonArgs, cfg: RunConfig) -> CliResult<()> {
    if args.emit_data {
        let data = generate(cfg.sim.n, cfg.seed);
        let out = cfg
            .output
            .clone()
            .ok_or_else(|| CliError::Input("--emit-data needs --output".into()))?;
        fs::write(&out, csv_of_dataset(&data))
            .map_err(|e| CliError::Input(format!("cannot write {out}: {e}")))?;
        return Ok(());
    }

    let toggles: Vec<MisspecToggle> = cfg
        .sim
        .misspecify
        .iter()
        .map(|s| MisspecToggle::parse(s).map_err(CliError::from_core))
        .collect::<CliResult<_>>()?;
    let sim_cfg = SimConfig {
        ns: cfg.sim.ns.clone(),
        reps: cfg.sim.reps,
        delta_prime: cfg.delta,
        rows: SimConfig::table_layout(&toggles),
        folds: cfg.folds.unwrap_or(HARNESS_FOLDS),
        seed: cfg.seed,
    };
    let result = run_table1(&sim_cfg).map_err(CliError::from_core)?;

    let payload = json!({
        "schema_version": 1,
        "version": artifact_version(),
        "timestamp": timestamp(),
        "config": cfg,
        "result": result,
    });
    match cfg.output.as_deref() {
        Some(path) => {
            let base = Path::new(path).with_extension("");
            let json_path = base.with_extension("json");
            let csv_path = base.with_extension("csv");
            fs::write(&json_path, serde_json::to_string_pretty(&payload).unwrap())
                .map_err(|e| CliError::Input(format!("cannot write {json_path:?}: {e}")))?;
            fs::write(&csv_path, result.to_csv())
                .map_err(|e| CliError::Input(format!("cannot write {csv_path:?}: {e}")))?;
            Ok(())
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&payload).unwrap());
            Ok(())
        }
    }
}

fn cmd_oracle(_args: &CommonArgs, cfg: RunConfig) -> CliResult<()> {
    let deltas: Vec<f64> = match cfg.delta_grid {
        Some(GridSpec { lo, hi, k }) => UniformInferenceConfig::log_grid(lo, hi, k),
        None => vec![cfg.delta],
    };
    let mut truths = Vec::with_capacity(deltas.len());
    for &d in &deltas {
        let spec = parse_intervention(&cfg, d)?;
        let truth = oracle_truth(&spec).map_err(CliError::from_core)?;
        truths.push(json!({ "delta": d, "truth": truth }));
    }
    let payload = json!({
        "schema_version": 1,
        "version": artifact_version(),
        "timestamp": timestamp(),
        "config": cfg,
        "oracle": truths,
    });
    write_output(cfg.output.as_deref(), &payload)
}
