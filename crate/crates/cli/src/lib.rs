//! Training, evaluation and baseline runs writing plot-ready CSV.
//!
//! Every run writes into its output directory:
//!
//! * `run.txt`: the manifest, seed and random substream names;
//! * `<kind>.csv`: one row per episode with [`CSV_HEADER`];
//! * `summary.txt`: final moving-average USR over the configured window;
//! * training runs: checkpoints `checkpoint_<episode>.ck` at the chosen
//!   interval and always a final checkpoint;
//! * evaluation runs: `eval_frames.csv`, one row per frame.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use entsim_core::baselines::BaselineKind;
use entsim_core::rng::Stream;
use entsim_core::scenario::ScenarioConfig;
use entsim_learner::{checkpoint, EpisodeStats, LearnerConfig, Scheme, Trainer};
use serde::Serialize;
use thiserror::Error;

pub const CSV_HEADER: [&str; 12] = [
    "episode",
    "usr",
    "total_utility",
    "comm_utility",
    "sense_utility",
    "overhead",
    "reward_mean",
    "actor_loss",
    "critic_loss",
    "entropy",
    "wall_ms",
    "seed",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Env(#[from] entsim_core::Error),
    #[error(transparent)]
    Learner(#[from] entsim_learner::LearnerError),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid run: {0}")]
    Manifest(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Baseline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: Command,
    /// Scenario TOML, optionally with a `[learner]` table; reference defaults when absent.
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub episodes: usize,
    pub out: PathBuf,
    /// Checkpoint to read (eval) or the final checkpoint to write (train).
    pub checkpoint: Option<PathBuf>,
    /// Episodes between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub baseline: Option<BaselineKind>,
    pub ma_window: usize,
    /// Record elapsed time per episode; off makes CSVs reproducible byte for byte.
    pub wall_time: bool,
}

impl RunManifest {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        Self {
            command,
            config: None,
            seed: 0,
            episodes: 1,
            out: out.into(),
            checkpoint: None,
            checkpoint_every: 0,
            baseline: None,
            ma_window: 40,
            wall_time: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(CliError::Manifest("episode count must be at least 1".into()));
        }
        if self.ma_window == 0 {
            return Err(CliError::Manifest("moving-average window must be at least 1".into()));
        }
        match self.command {
            Command::Eval if self.checkpoint.is_none() => Err(CliError::Manifest("eval needs --checkpoint".into())),
            Command::Baseline if self.baseline.is_none() => Err(CliError::Manifest("baseline needs --baseline".into())),
            _ => Ok(()),
        }
    }
}

/// Read a scenario TOML whose optional `[learner]` table configures training.
pub fn load_config(path: Option<&Path>) -> Result<(ScenarioConfig, LearnerConfig)> {
    let Some(path) = path else {
        return Ok((ScenarioConfig::reference(), LearnerConfig::default()));
    };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| entsim_core::Error::Parse(format!("{}: {e}", path.display())))?;
    let learner = match table.remove("learner") {
        Some(v) => v
            .try_into()
            .map_err(|e: toml::de::Error| entsim_core::Error::Parse(format!("{} [learner]: {e}", path.display())))?,
        None => LearnerConfig::default(),
    };
    let scenario = ScenarioConfig::from_toml_str(&toml::to_string(&table).expect("table serialises"))?;
    learner.validate()?;
    Ok((scenario, learner))
}

#[derive(Debug, Serialize)]
struct Row {
    episode: usize,
    usr: f64,
    total_utility: f64,
    comm_utility: f64,
    sense_utility: f64,
    overhead: f64,
    reward_mean: f64,
    actor_loss: f64,
    critic_loss: f64,
    entropy: f64,
    wall_ms: u64,
    seed: u64,
}

impl Row {
    fn new(s: &EpisodeStats, wall_ms: u64) -> Self {
        Self {
            episode: s.episode,
            usr: s.usr,
            total_utility: s.total_utility,
            comm_utility: s.comm_utility,
            sense_utility: s.sense_utility,
            overhead: s.overhead,
            reward_mean: s.reward_mean,
            actor_loss: s.update.actor_loss,
            critic_loss: s.update.critic_loss,
            entropy: s.update.entropy,
            wall_ms,
            seed: s.seed,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let values = [
            self.usr,
            self.total_utility,
            self.comm_utility,
            self.sense_utility,
            self.overhead,
            self.reward_mean,
            self.actor_loss,
            self.critic_loss,
            self.entropy,
        ];
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CliError::NonFinite(format!("episode {}", self.episode)))
        }
    }
}

/// Outcome of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub csv: PathBuf,
    pub usr: Vec<f64>,
    /// Mean USR of the last `ma_window` episodes.
    pub final_ma_usr: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Trailing moving average; early entries average what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_header(m: &RunManifest, scheme: Scheme, cfg: &ScenarioConfig, lc: &LearnerConfig) -> Result<()> {
    let path = m.out.join("run.txt");
    let mut f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let streams: Vec<&str> = Stream::ALL.iter().map(|s| s.name()).collect();
    let text = format!(
        "command = {}\nscheme = {}\nseed = {}\nepisodes = {}\nconfig = {}\nsubstreams = {}\n\n[scenario]\n{}\n[learner]\n{}",
        m.command.name(),
        scheme.name(),
        m.seed,
        m.episodes,
        m.config.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "reference defaults".into()),
        streams.join(", "),
        cfg.to_toml_string(),
        toml::to_string(lc).expect("learner config serialises"),
    );
    f.write_all(text.as_bytes()).map_err(io_err(&path))?;
    f.flush().map_err(io_err(&path))
}

struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvSink {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(Self { writer: csv::WriterBuilder::new().has_headers(true).from_writer(file), path })
    }

    fn push<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row)?;
        // Flush per row so an interrupted run leaves a parseable prefix.
        self.writer.flush().map_err(io_err(&self.path))
    }
}

fn write_summary(m: &RunManifest, scheme: Scheme, usr: &[f64]) -> Result<f64> {
    let ma = moving_average(usr, m.ma_window);
    let last = *ma.last().unwrap_or(&0.0);
    let path = m.out.join("summary.txt");
    let text = format!("scheme = {}\nepisodes = {}\nma_window = {}\nfinal_ma_usr = {last}\n", scheme.name(), usr.len(), m.ma_window);
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(last)
}

fn episode_loop(
    m: &RunManifest,
    trainer: &mut Trainer,
    csv_name: &str,
    mut per_episode: impl FnMut(&mut Trainer, usize) -> Result<EpisodeStats>,
    mut after: impl FnMut(&Trainer, &EpisodeStats) -> Result<()>,
) -> Result<(PathBuf, Vec<f64>)> {
    let path = m.out.join(csv_name);
    let mut sink = CsvSink::create(path.clone())?;
    let mut usr = Vec::with_capacity(m.episodes);
    for ep in 0..m.episodes {
        let start = Instant::now();
        let stats = per_episode(trainer, ep)?;
        let wall = if m.wall_time { start.elapsed().as_millis() as u64 } else { 0 };
        let row = Row::new(&stats, wall);
        row.check_finite()?;
        sink.push(&row)?;
        log::info!("{csv_name} episode {ep}: usr {:.4}", stats.usr);
        usr.push(stats.usr);
        after(trainer, &stats)?;
    }
    Ok((path, usr))
}

fn train_scheme(m: &RunManifest, scheme: Scheme, csv_name: &str) -> Result<RunSummary> {
    m.validate()?;
    create_out(&m.out)?;
    let (cfg, lc) = load_config(m.config.as_deref())?;
    write_header(m, scheme, &cfg, &lc)?;
    let mut trainer = Trainer::new(cfg, lc, scheme, m.seed, m.episodes)?;
    let learning = trainer.is_learning();
    let every = m.checkpoint_every;
    let out = m.out.clone();
    let (csv, usr) = episode_loop(
        m,
        &mut trainer,
        csv_name,
        |t, _| Ok(t.train_episode()?),
        |t, s| {
            if learning && every > 0 && (s.episode + 1) % every == 0 {
                checkpoint::save(&t.policies, &out.join(format!("checkpoint_{}.ck", s.episode + 1)))?;
            }
            Ok(())
        },
    )?;
    let ck = if learning {
        let path = m.checkpoint.clone().unwrap_or_else(|| m.out.join("final.ck"));
        checkpoint::save(&trainer.policies, &path)?;
        Some(path)
    } else {
        None
    };
    let final_ma_usr = write_summary(m, scheme, &usr)?;
    Ok(RunSummary { csv, usr, final_ma_usr, checkpoint: ck })
}

/// Train every agent of the proposed scheme.
pub fn run_train(m: &RunManifest) -> Result<RunSummary> {
    train_scheme(m, Scheme::Proposed, "train.csv")
}

/// Run a comparison scheme; learning baselines train their live agents.
pub fn run_baseline(m: &RunManifest) -> Result<RunSummary> {
    let kind = m.baseline.ok_or_else(|| CliError::Manifest("baseline needs --baseline".into()))?;
    train_scheme(m, Scheme::Baseline(kind), &format!("baseline_{}.csv", kind.name()))
}

#[derive(Debug, Serialize)]
struct FrameRow {
    episode: usize,
    frame: usize,
    usr: f64,
    utility: f64,
    comm_utility: f64,
    sense_utility: f64,
    overhead: f64,
    reward: f64,
    /// `;`-separated lists.
    user_rates: String,
    target_pos_err: String,
    target_vel_err: String,
    o1: String,
    o2: String,
    o_fed: String,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

/// Greedy rollouts of a saved policy. The scheme is the proposed one
/// unless a learning baseline is named.
pub fn run_eval(m: &RunManifest) -> Result<RunSummary> {
    m.validate()?;
    create_out(&m.out)?;
    let (cfg, lc) = load_config(m.config.as_deref())?;
    let scheme = m.baseline.map(Scheme::Baseline).unwrap_or(Scheme::Proposed);
    write_header(m, scheme, &cfg, &lc)?;
    let mut trainer = Trainer::new(cfg, lc, scheme, m.seed, 1)?;
    let ck = m.checkpoint.clone().expect("validated");
    checkpoint::load(&mut trainer.policies, &ck)?;
    let frames_path = m.out.join("eval_frames.csv");
    let mut frames = CsvSink::create(frames_path)?;
    let (csv, usr) = episode_loop(
        m,
        &mut trainer,
        "eval.csv",
        |t, ep| Ok(t.evaluate_episode(ep)?),
        |_, s| {
            for d in &s.frames {
                let l = &d.ledger;
                frames.push(&FrameRow {
                    episode: s.episode,
                    frame: d.frame,
                    usr: l.usr,
                    utility: l.utility,
                    comm_utility: l.comm_utility,
                    sense_utility: l.sense_utility,
                    overhead: l.overhead,
                    reward: l.reward,
                    user_rates: join(&d.user_rates),
                    target_pos_err: join(&d.target_pos_err),
                    target_vel_err: join(&d.target_vel_err),
                    o1: join(&l.o1),
                    o2: join(&l.o2),
                    o_fed: join(&l.o_fed),
                })?;
            }
            Ok(())
        },
    )?;
    let final_ma_usr = write_summary(m, scheme, &usr)?;
    Ok(RunSummary { csv, usr, final_ma_usr, checkpoint: Some(ck) })
}

pub fn run(m: &RunManifest) -> Result<RunSummary> {
    match m.command {
        Command::Train => run_train(m),
        Command::Eval => run_eval(m),
        Command::Baseline => run_baseline(m),
    }
}
