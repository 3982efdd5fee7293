//! Scenario runner and sweep driver behind the `k06` binary.

pub mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use k06_core::analysis::oracle::exact_detection_oracle;
use k06_core::analysis::{read_floor, AnalysisError, ExperimentPlan, OracleError};
use k06_core::protocol::transcript::to_csv_string;
use k06_core::protocol::{run_session, DetectionRule, ProtocolError, SessionTranscript, Verdict};
use k06_core::rng::stream;
use k06_core::{Exec, SourceModel};
use rand::Rng;
use thiserror::Error;

pub use config::ScenarioConfig;

/// Angle RMSE below which a leg reading counts as useful to Eve.
pub const READ_FLOOR_RMSE: f64 = 0.1;
const READ_FLOOR_TRIALS: u64 = 4000;
const READ_FLOOR_SEED: u64 = 0x6b30_3672_6561_6466;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("value out of range: {0}")]
    Domain(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("session failed: {0}")]
    Session(#[from] ProtocolError),
}

impl CliError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    fn at(self, path: &Path) -> CliError {
        match self {
            CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
            CliError::Domain(m) => CliError::Domain(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Oracle(o) => CliError::Oracle(o),
            other => CliError::Domain(other.to_string()),
        }
    }
}

/// Photons Eve needs on one leg for a 0.1 rad angle estimate; computed once
/// from a fixed seed.
pub fn default_read_floor() -> u64 {
    static FLOOR: OnceLock<u64> = OnceLock::new();
    *FLOOR.get_or_init(|| {
        read_floor(
            READ_FLOOR_RMSE,
            READ_FLOOR_TRIALS,
            READ_FLOOR_SEED,
            Exec::default(),
        )
    })
}

/// `--seed`/`K06_SEED` first, then the file, then fresh entropy.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> u64 {
    flag.or(file).unwrap_or_else(|| rand::rng().random())
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(CliError::io(path))?;
    tmp.write_all(bytes).map_err(CliError::io(path))?;
    tmp.as_file().sync_all().map_err(CliError::io(path))?;
    tmp.persist(path).map_err(|e| CliError::io(path)(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(CliError::io(Path::new("<stdout>"))),
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    ScenarioConfig::parse(&text).map_err(|e| e.at(path))
}

/// Runs `sessions` sessions. Session `i` draws its secrets and all channel
/// noise from `stream(seed, [i])`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    seed: u64,
    sessions: u64,
) -> Result<Vec<SessionTranscript>, CliError> {
    cfg.validate()?;
    let floor = match cfg.monitor.eve_read_floor {
        Some(_) => None,
        None => Some(default_read_floor()),
    };
    (0..sessions)
        .map(|i| {
            let mut rng = stream(seed, &[i]);
            let session = cfg.session_config(floor, &mut rng)?;
            Ok(run_session(i, &cfg.message, &session, &mut rng)?.transcript)
        })
        .collect()
}

/// The first non-clean session decides the exit code.
pub fn exit_code(transcripts: &[SessionTranscript]) -> i32 {
    transcripts
        .iter()
        .map(|t| t.verdict())
        .find(|v| *v != Verdict::Clean)
        .unwrap_or(Verdict::Clean)
        .exit_code()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<u64>,
}

pub fn cmd_run(opts: &RunOptions) -> Result<i32, CliError> {
    let cfg = load_config(&opts.config)?;
    let sessions = opts.trials.unwrap_or(1);
    if sessions == 0 {
        return Err(CliError::Domain("--trials must be at least 1".into()));
    }
    let seed = resolve_seed(opts.seed, cfg.seed);
    let transcripts = run_scenario(&cfg, seed, sessions)?;
    let out = opts.out.as_deref().or(cfg.output.transcript.as_deref());
    emit(out, &to_csv_string(&transcripts))?;
    let code = exit_code(&transcripts);
    let alarms: usize = transcripts.iter().map(|t| t.alarm_count()).sum();
    eprintln!("seed {seed}: {sessions} session(s), {alarms} alarm(s), exit {code}");
    Ok(code)
}

pub fn load_plan(path: &Path) -> Result<ExperimentPlan, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let plan: ExperimentPlan = toml::from_str(&text)
        .map_err(|e| CliError::Parse(format!("{}: {}", path.display(), e.message())))?;
    plan.validate().map_err(|e| CliError::from(e).at(path))?;
    Ok(plan)
}

pub fn sweep_csv(plan: &ExperimentPlan, exec: Exec) -> Result<(String, Vec<String>), CliError> {
    let report = plan.run(exec)?;
    let notes = report
        .thresholds(plan.accuracy_target)
        .iter()
        .map(|t| match t.n_star {
            Some(n) => format!(
                "mu {} z {}: n* = {n} for accuracy {}",
                t.mu, t.z, plan.accuracy_target
            ),
            None => format!(
                "mu {} z {}: accuracy {} not reached on the grid",
                t.mu, t.z, plan.accuracy_target
            ),
        })
        .collect();
    Ok((report.to_csv(), notes))
}

pub fn cmd_sweep(opts: &RunOptions) -> Result<i32, CliError> {
    let mut plan = load_plan(&opts.config)?;
    if let Some(seed) = opts.seed {
        plan.master_seed = seed;
    }
    if let Some(t) = opts.trials {
        plan.trials = t;
        plan.validate()?;
    }
    let (csv, notes) = sweep_csv(&plan, Exec::default())?;
    emit(opts.out.as_deref(), &csv)?;
    for n in notes {
        eprintln!("{n}");
    }
    Ok(0)
}

/// Exact per-pulse probability that Bob's stage-2 check alarms when Eve
/// diverts a fraction `f` of a lossless Poisson(`mu`) pulse, tap budget μ/4.
pub fn oracle_value(mu: f64, f: f64, z: f64) -> Result<f64, CliError> {
    let src = SourceModel::lossless(mu).map_err(|e| CliError::Domain(e.to_string()))?;
    let rule = DetectionRule::from_ledger(&src, k06_core::protocol::nominal_tap_budget(&src), z)
        .map_err(|e| CliError::Domain(e.to_string()))?;
    Ok(exact_detection_oracle(mu, f, &rule)?)
}

/// Twelve significant digits; fixed point from 0.1 up, scientific below.
pub fn format_probability(p: f64) -> String {
    if p == 0.0 || p >= 0.1 {
        format!("{p:.12}")
    } else {
        format!("{p:.11e}")
    }
}

pub fn cmd_oracle(mu: f64, f: f64, z: f64) -> Result<i32, CliError> {
    println!("{}", format_probability(oracle_value(mu, f, z)?));
    Ok(0)
}
