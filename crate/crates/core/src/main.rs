use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use updatelab::demo::{build_feedback_boards, build_pool, Strategy};
use updatelab::eval::aggregate;
use updatelab::gridworld::GenParams;
use updatelab::policy::{build_bank, default_bank_vectors, PolicyBank, PolicyId, Topology, DEFAULT_GAMMA};
use updatelab::session::server::{serve, AppState};
use updatelab::session::{
    load_records, replay, run_batch, summarize, BatchSpec, ExperimentConfig, FeedbackBoardMode, Lab, SessionStore,
    DEFAULT_LAB_SEED, DEFAULT_ROUNDS,
};
use updatelab::simuser::{SimUserConfig, UserModel};
use updatelab::{Error, Result};

#[derive(Parser)]
#[command(name = "updatelab", version, about = "Gridworld lab for corrective feedback and policy-update assessment")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the evaluation pool and feedback boards.
    GenBoards {
        #[arg(long, default_value_t = DEFAULT_LAB_SEED)]
        seed: u64,
        /// Bank manifest used for pool curation (default bank if absent).
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ROUNDS as usize)]
        feedback_count: usize,
        /// Board generation parameters as JSON (defaults if absent).
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Write a bank manifest for the default preference vectors.
    BuildBank {
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = TopologyArg::Full)]
        topology: TopologyArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run simulated sessions across conditions and seeds.
    RunBatch {
        #[command(flatten)]
        lab: LabArgs,
        /// Comma-separated conditions (control, same, random, salient_contrast).
        #[arg(long, value_delimiter = ',', default_value = "control,same,random,salient_contrast")]
        conditions: Vec<Strategy>,
        /// Sessions per condition.
        #[arg(long, default_value_t = 100)]
        sessions: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        /// oracle, myopic, noisy:<eps> or biased:<p>.
        #[arg(long, default_value = "oracle")]
        user: UserModel,
        #[arg(long)]
        initial_policy: Option<u32>,
        /// Use the lab's fixed feedback boards instead of per-session boards.
        #[arg(long)]
        fixed_boards: bool,
        /// NDJSON output (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate session records into per-condition rates.
    Report {
        /// Record file (JSON, JSON array or NDJSON) or directory.
        input: PathBuf,
        /// Write one summary row per session as NDJSON here.
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Serve the HTTP API for live sessions.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Defaults to $UPDATELAB_DATA_DIR, then ./data.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Re-derive stored records and check they match.
    Replay {
        #[command(flatten)]
        lab: LabArgs,
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Full,
    Ring,
}

#[derive(Args)]
struct LabArgs {
    /// Seed for a generated lab when no manifests are given.
    #[arg(long, default_value_t = DEFAULT_LAB_SEED)]
    lab_seed: u64,
    #[arg(long, requires_all = ["pool", "feedback"])]
    bank: Option<PathBuf>,
    #[arg(long, requires_all = ["bank", "feedback"])]
    pool: Option<PathBuf>,
    #[arg(long, requires_all = ["bank", "pool"])]
    feedback: Option<PathBuf>,
}

impl LabArgs {
    fn load(&self) -> Result<Lab> {
        match (&self.bank, &self.pool, &self.feedback) {
            (Some(b), Some(p), Some(f)) => Lab::from_files(b, p, f),
            _ => Lab::generate(self.lab_seed, &GenParams::default()),
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    fs::write(path, body + "\n").map_err(|e| Error::Io { path: path.into(), source: e })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).map_err(|e| Error::Io { path: p.into(), source: e })?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn flush(mut w: Box<dyn Write>) -> Result<()> {
    w.flush().map_err(|e| Error::Io { path: "<output>".into(), source: e })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::GenBoards { seed, bank, feedback_count, params, out_dir } => {
            let bank = match bank {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                    PolicyBank::from_manifest(serde_json::from_str(&text)?)?
                }
                None => updatelab::policy::default_bank(DEFAULT_GAMMA)?,
            };
            let params: GenParams = match params {
                Some(p) => serde_json::from_str(
                    &fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?,
                )?,
                None => GenParams::default(),
            };
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io { path: out_dir.clone(), source: e })?;
            let pool = build_pool(seed, &params, &bank)?;
            let feedback = build_feedback_boards(seed, &params, feedback_count)?;
            write_json(&out_dir.join("pool.json"), &pool)?;
            write_json(&out_dir.join("feedback.json"), &feedback)?;
            eprintln!("wrote {} ({} boards) and {} feedback boards", pool.id(), pool.len(), feedback.len());
        }
        Cmd::BuildBank { gamma, topology, out } => {
            let vectors: Vec<_> = default_bank_vectors().iter().map(|(_, v)| *v).collect();
            let topology = match topology {
                TopologyArg::Full => Topology::FullyConnected,
                TopologyArg::Ring => Topology::Ring,
            };
            let bank = build_bank(&vectors, gamma, &topology)?;
            write_json(&out, &bank.manifest())?;
            eprintln!("wrote bank {} with {} policies", bank.fingerprint(), bank.len());
        }
        Cmd::RunBatch { lab, conditions, sessions, first_seed, user, initial_policy, fixed_boards, out } => {
            let lab = lab.load()?;
            let mut spec = BatchSpec::new(conditions, first_seed..first_seed + sessions, SimUserConfig::new(user));
            spec.initial_policy = initial_policy.map(PolicyId);
            if fixed_boards {
                spec.feedback_boards = FeedbackBoardMode::Fixed;
            }
            let records = run_batch(&lab, &spec)?;
            let mut w = output(out.as_deref())?;
            for r in &records {
                serde_json::to_writer(&mut w, r)?;
                writeln!(w).map_err(|e| Error::Io { path: "<output>".into(), source: e })?;
            }
            flush(w)?;
            eprintln!("ran {} sessions", records.len());
        }
        Cmd::Report { input, rows } => {
            let records = load_records(&input)?;
            let summaries = records
                .iter()
                .filter(|r| r.complete)
                .map(summarize)
                .collect::<Result<Vec<_>>>()?;
            if let Some(p) = rows {
                let mut w = output(Some(&p))?;
                for s in &summaries {
                    serde_json::to_writer(&mut w, s)?;
                    writeln!(w).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                }
                flush(w)?;
            }
            let report = aggregate(&summaries)?;
            let mut w = output(None)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w).map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?;
            flush(w)?;
        }
        Cmd::Serve { config, addr, data_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let lab = Arc::new(cfg.lab(base)?);
            let store = match data_dir {
                Some(d) => SessionStore::open(d)?,
                None => SessionStore::from_env()?,
            };
            let state = AppState::new(
                lab,
                store,
                cfg.session.clone(),
                cfg.assign_conditions.clone(),
                Duration::from_secs(cfg.idle_timeout_secs),
            )?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: "<runtime>".into(), source: e })?;
            rt.block_on(serve(addr, state))?;
        }
        Cmd::Replay { lab, input } => {
            let lab = lab.load()?;
            let records = load_records(&input)?;
            let mut failed = 0;
            for r in &records {
                let out = replay(&lab, r)?;
                if !out.matches {
                    failed += 1;
                    eprintln!("{}: {}", out.session_id, out.detail.unwrap_or_default());
                }
            }
            println!("replayed {} records, {} verified, {} failed", records.len(), records.len() - failed, failed);
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(Error::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
