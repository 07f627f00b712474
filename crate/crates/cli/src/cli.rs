//! Argument parsing and the subcommands behind the `codenames` binary.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use codenames_core::agents::{GiverKind, GuesserPolicy};
use codenames_core::analysis::{analyze, write_scatter_csv, AnalysisConfig, FeatureMatrix, LabelColumn, ProbeConfig};
use codenames_core::dataset::{load_records, retain_embeddable, to_turn_examples, GameRecord, Selection, Split};
use codenames_core::game::{generate_board, Board, WordPool};
use codenames_core::harness::{
    run_experiment, simulate_turns, sweep, write_sweep_csv, ExperimentConfig, GuesserKind, ModelStore,
};
use codenames_core::lexicon::{EmbeddingTable, LinearHead};
use codenames_core::metrics::alignment;
use codenames_core::training::{split_by_attribute, train, write_loss_csv, Optimizer, Side, TrainConfig};
use codenames_core::Parallelism;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::external::HttpGuesser;
use crate::service::{self, AppState};
use crate::session::{CreateSession, Session};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Stdio(#[from] io::Error),
    #[error(transparent)]
    Lexicon(#[from] codenames_core::lexicon::LexiconError),
    #[error(transparent)]
    Dataset(#[from] codenames_core::dataset::DatasetError),
    #[error(transparent)]
    Train(#[from] codenames_core::training::TrainError),
    #[error(transparent)]
    Harness(#[from] codenames_core::harness::HarnessError),
    #[error(transparent)]
    Metrics(#[from] codenames_core::metrics::MetricsError),
    #[error(transparent)]
    Analysis(#[from] codenames_core::analysis::AnalysisError),
    #[error(transparent)]
    Game(#[from] codenames_core::game::GameError),
    #[error(transparent)]
    Session(#[from] crate::session::SessionError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
    #[error("http client: {0}")]
    Http(#[from] reqwest::Error),
}

impl CliError {
    /// Stable name of the error class, for scripts reading stderr.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } | CliError::Stdio(_) => "io",
            CliError::Lexicon(_) => "lexicon",
            CliError::Dataset(_) => "dataset",
            CliError::Train(_) => "training",
            CliError::Harness(_) => "harness",
            CliError::Metrics(_) => "metrics",
            CliError::Analysis(_) => "analysis",
            CliError::Game(_) => "game",
            CliError::Session(_) => "session",
            CliError::Json(_) => "json",
            CliError::Usage(_) => "usage",
            CliError::Http(_) => "http",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a snake_case serde enum, accepting `-` for `_`.
fn serde_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| format!("unknown value `{s}`"))
}

#[derive(Debug, Parser)]
#[command(name = "codenames", version, about = "Codenames Duet agents, training, evaluation and analysis")]
pub struct Cli {
    /// Run on one thread.
    #[arg(long, global = true, env = "CODENAMES_SEQUENTIAL")]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a listener head on gameplay records.
    Train(TrainArgs),
    /// Play a seeded board suite and report the win rate.
    Eval(EvalArgs),
    /// Evaluate an alpha x delta grid on one board suite.
    Sweep(SweepArgs),
    /// Alignment metrics of simulated agents against recorded games.
    ReplayMetrics(ReplayArgs),
    /// PCA, k-means and a logistic probe over a feature CSV.
    Analyze(AnalyzeArgs),
    /// Write a seeded board suite as JSON.
    GenBoards(GenBoardsArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Play as the guesser in the terminal.
    PlayTty(PlayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TableArgs {
    /// Text embeddings: one `word v1 v2 ...` per line.
    #[arg(long, env = "CODENAMES_EMBEDDINGS")]
    pub embeddings: PathBuf,
    /// Keep only the first N vocabulary entries.
    #[arg(long, env = "CODENAMES_VOCAB_LIMIT")]
    pub vocab_limit: Option<usize>,
}

impl TableArgs {
    pub fn load(&self) -> Result<Arc<EmbeddingTable>> {
        Ok(Arc::new(EmbeddingTable::load(&self.embeddings, self.vocab_limit)?))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub table: TableArgs,
    /// Directory of `<culture>.json` heads.
    #[arg(long, env = "CODENAMES_HEADS_DIR")]
    pub heads_dir: Option<PathBuf>,
}

impl ModelArgs {
    pub fn store(&self) -> Result<ModelStore> {
        let table = self.table.load()?;
        Ok(match &self.heads_dir {
            Some(dir) => ModelStore::from_dir(table, dir)?,
            None => ModelStore::new(table),
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct PoolArgs {
    /// Board words, one per line; `#` starts a comment.
    #[arg(long, env = "CODENAMES_WORDPOOL")]
    pub wordpool: PathBuf,
}

pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

impl PoolArgs {
    pub fn load(&self, table: Option<&EmbeddingTable>) -> Result<WordPool> {
        let words = read_word_list(&self.wordpool)?;
        Ok(match table {
            Some(t) => WordPool::new(&words, t)?,
            None => WordPool::unchecked(&words)?,
        })
    }
}

/// Experiment settings. Flags override a `--config` file, which overrides
/// the defaults.
#[derive(Debug, Clone, Args)]
pub struct AgentArgs {
    /// ExperimentConfig JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// literal, rsa or rsa_c3.
    #[arg(long, value_parser = serde_enum::<GiverKind>)]
    pub giver: Option<GiverKind>,
    /// Giver cultures: ids from the heads directory or paths to head files.
    #[arg(long, value_delimiter = ',')]
    pub cultures: Vec<String>,
    /// embedding, scripted or external.
    #[arg(long, value_parser = serde_enum::<GuesserKind>)]
    pub guesser: Option<GuesserKind>,
    #[arg(long)]
    pub guesser_culture: Option<String>,
    /// Head file for the guesser, registered under its file stem.
    #[arg(long)]
    pub guesser_head: Option<PathBuf>,
    /// Endpoint of an external guesser.
    #[arg(long, env = "CODENAMES_GUESSER_URL")]
    pub guesser_url: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub guesser_timeout_ms: u64,
    /// Sample embedding guesses instead of taking the argmax.
    #[arg(long)]
    pub sample: bool,
    #[arg(long)]
    pub boards: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub agent_seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub clue_vocab: Option<usize>,
    #[arg(long)]
    pub max_turns: Option<usize>,
    /// Renormalize culture weights after each update.
    #[arg(long)]
    pub renormalize: bool,
}

fn stem_of(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Usage(format!("cannot name a culture after {}", path.display())))
}

impl AgentArgs {
    /// The experiment config; head files named on the command line are
    /// added to `store`.
    pub fn config(&self, store: &mut ModelStore, parallelism: Parallelism) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(io_err(p))?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(g) = self.giver {
            cfg.giver_kind = g;
        }
        if !self.cultures.is_empty() {
            cfg.giver_cultures = self
                .cultures
                .iter()
                .map(|c| {
                    let path = Path::new(c);
                    if c.ends_with(".json") && path.is_file() {
                        let id = stem_of(path)?;
                        store.insert(id.clone(), LinearHead::load(path)?)?;
                        Ok(id)
                    } else {
                        Ok(c.clone())
                    }
                })
                .collect::<Result<_>>()?;
        }
        if let Some(g) = self.guesser {
            cfg.guesser_kind = g;
        }
        if let Some(c) = &self.guesser_culture {
            cfg.guesser_culture = c.clone();
        }
        if let Some(p) = &self.guesser_head {
            let id = stem_of(p)?;
            if store.head(&id).is_none() {
                store.insert(id.clone(), LinearHead::load(p)?)?;
            }
            cfg.guesser_culture = id;
        }
        cfg.guesser_sample |= self.sample;
        cfg.renormalize |= self.renormalize;
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),*) => {
                $(if let Some(v) = self.$flag { cfg.$($field).+ = v; })*
            };
        }
        set!(boards => board_count, base_seed => base_seed, runs => runs, agent_seed => agent_seed,
             alpha => rsa.alpha, delta => rsa.delta, beta => beta, clue_vocab => rsa.clue_vocab_size,
             max_turns => rules.max_turns);
        if parallelism == Parallelism::Sequential {
            cfg.parallelism = parallelism;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn external(&self, cfg: &ExperimentConfig) -> Result<Option<Arc<dyn GuesserPolicy>>> {
        if cfg.guesser_kind != GuesserKind::External {
            return Ok(None);
        }
        let url = self
            .guesser_url
            .as_ref()
            .ok_or_else(|| CliError::Usage("--guesser external needs --guesser-url".into()))?;
        let g = HttpGuesser::new(url.clone(), Duration::from_millis(self.guesser_timeout_ms))?;
        Ok(Some(Arc::new(g)))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub table: TableArgs,
    /// Gameplay records (JSON Lines).
    #[arg(long)]
    pub records: PathBuf,
    /// Where to write the trained head.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// TrainConfig JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// sgd or adam.
    #[arg(long, value_parser = serde_enum::<Optimizer>)]
    pub optimizer: Option<Optimizer>,
    #[arg(long)]
    pub temperature_init: Option<f64>,
    #[arg(long)]
    pub d_out: Option<usize>,
    #[arg(long)]
    pub bias: bool,
    /// human_guesses or giver_targets.
    #[arg(long, value_parser = serde_enum::<Selection>, default_value = "human_guesses")]
    pub selection: Selection,
    /// Dataset split to train on.
    #[arg(long, value_parser = serde_enum::<Split>, default_value = "train")]
    pub dataset_split: Split,
    /// Train on one demographic group: `attribute=value[,value...]`.
    #[arg(long)]
    pub split: Option<String>,
    /// Whose demographics `--split` reads: guesser or giver.
    #[arg(long, value_parser = serde_enum::<Side>, default_value = "guesser")]
    pub side: Side,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub agents: AgentArgs,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-game transcripts (JSON Lines).
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub agents: AgentArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub deltas: Vec<f64>,
    /// Grid CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub agents: AgentArgs,
    #[arg(long)]
    pub records: PathBuf,
    /// Only replay records of this split.
    #[arg(long, value_parser = serde_enum::<Split>)]
    pub dataset_split: Option<Split>,
    /// Write one CSV row instead of JSON.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Feature CSV with a header row; optional label column last.
    #[arg(long)]
    pub features: PathBuf,
    /// auto, last or none.
    #[arg(long, value_parser = serde_enum::<LabelColumn>, default_value = "auto")]
    pub label_column: LabelColumn,
    /// Number of k-means clusters.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub components: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub probe_seeds: usize,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-row projection on the first two components, with labels.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenBoardsArgs {
    #[command(flatten)]
    pub pool: PoolArgs,
    /// Check pool words against this table.
    #[arg(long, env = "CODENAMES_EMBEDDINGS")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[arg(long, env = "CODENAMES_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Append finished games here (JSON Lines).
    #[arg(long, env = "CODENAMES_TRANSCRIPTS_LOG")]
    pub transcripts_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub pool: PoolArgs,
    /// Cultures the giver reasons about; all loaded ones when absent.
    #[arg(long, value_delimiter = ',')]
    pub cultures: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let parallelism = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    match cli.command {
        Command::Train(a) => cmd_train(a, parallelism),
        Command::Eval(a) => cmd_eval(a, parallelism),
        Command::Sweep(a) => cmd_sweep(a, parallelism),
        Command::ReplayMetrics(a) => cmd_replay(a, parallelism),
        Command::Analyze(a) => cmd_analyze(a, parallelism),
        Command::GenBoards(a) => cmd_gen_boards(a),
        Command::Serve(a) => cmd_serve(a),
        Command::PlayTty(a) => {
            let stdin = io::stdin();
            cmd_play(a, &mut stdin.lock(), &mut io::stdout().lock())
        }
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    records: usize,
    examples: usize,
    skipped_turns: usize,
    dropped_oov: usize,
    final_loss: Option<f64>,
    head: PathBuf,
    loss_csv: PathBuf,
}

fn select_group(records: Vec<GameRecord>, spec: &str, side: Side) -> Result<Vec<GameRecord>> {
    let (attribute, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--split expects attribute=value, got `{spec}`")))?;
    let group = values.to_string();
    let grouping: BTreeMap<String, String> = values
        .split(',')
        .map(|v| (v.trim().to_string(), group.clone()))
        .collect();
    let mut groups = split_by_attribute(&records, side, attribute, &grouping)?;
    groups
        .remove(&group)
        .ok_or_else(|| CliError::Usage(format!("no records with {attribute} in {{{values}}}")))
}

fn cmd_train(a: TrainArgs, parallelism: Parallelism) -> Result<()> {
    let table = a.table.load()?;
    let (records, _) = load_records(&a.records)?;
    let mut records: Vec<GameRecord> = records.into_iter().filter(|r| r.split == a.dataset_split).collect();
    if let Some(spec) = &a.split {
        records = select_group(records, spec, a.side)?;
    }
    let (mut examples, skipped) = to_turn_examples(&records, a.selection);
    let dropped = retain_embeddable(&mut examples, &table);
    log::info!(
        "{} records, {} examples ({skipped} turns without selections, {dropped} with unknown words)",
        records.len(),
        examples.len()
    );

    let mut cfg: TrainConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(io_err(p))?)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { cfg.$field = v; })* };
    }
    set!(epochs => epochs, lr => learning_rate, batch_size => batch_size, seed => seed,
         optimizer => optimizer, temperature_init => temperature_init);
    if a.d_out.is_some() {
        cfg.d_out = a.d_out;
    }
    cfg.bias |= a.bias;
    if parallelism == Parallelism::Sequential {
        cfg.parallelism = parallelism;
    }

    let report = train(&examples, &table, &cfg)?;
    report.head.save(&a.out)?;
    let loss_csv = a.loss_csv.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    write_loss_csv(&report.trace, File::create(&loss_csv).map_err(io_err(&loss_csv))?)?;
    write_json(
        &TrainSummary {
            records: records.len(),
            examples: examples.len(),
            skipped_turns: skipped,
            dropped_oov: dropped,
            final_loss: report.trace.last().map(|e| e.mean_loss),
            head: a.out,
            loss_csv,
        },
        None,
    )
}

fn cmd_eval(a: EvalArgs, parallelism: Parallelism) -> Result<()> {
    let mut store = a.model.store()?;
    let pool = a.pool.load(Some(store.table()))?;
    let cfg = a.agents.config(&mut store, parallelism)?;
    let external = a.agents.external(&cfg)?;
    let outcome = run_experiment(&cfg, &store, &pool, external)?;
    if let Some(p) = &a.transcripts {
        let mut w = BufWriter::new(File::create(p).map_err(io_err(p))?);
        outcome.write_transcripts(&mut w)?;
        w.flush()?;
    }
    write_json(&outcome, a.out.as_deref())
}

fn cmd_sweep(a: SweepArgs, parallelism: Parallelism) -> Result<()> {
    let mut store = a.model.store()?;
    let pool = a.pool.load(Some(store.table()))?;
    let cfg = a.agents.config(&mut store, parallelism)?;
    let external = a.agents.external(&cfg)?;
    let cells = sweep(&a.alphas, &a.deltas, &cfg, &store, &pool, external)?;
    let mut out = output(a.out.as_deref())?;
    write_sweep_csv(&cells, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_replay(a: ReplayArgs, parallelism: Parallelism) -> Result<()> {
    let mut store = a.model.store()?;
    let cfg = a.agents.config(&mut store, parallelism)?;
    let (records, _) = load_records(&a.records)?;
    let records: Vec<GameRecord> = records
        .into_iter()
        .filter(|r| a.dataset_split.is_none_or(|s| r.split == s))
        .collect();
    let simulated = simulate_turns(&cfg, &store, &records)?;
    let report = alignment(&simulated, &records)?;
    if a.csv {
        let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
        w.serialize(report.row()).map_err(|e| CliError::Usage(e.to_string()))?;
        w.flush()?;
        Ok(())
    } else {
        write_json(&report, a.out.as_deref())
    }
}

fn cmd_analyze(a: AnalyzeArgs, parallelism: Parallelism) -> Result<()> {
    let file = File::open(&a.features).map_err(io_err(&a.features))?;
    let features = FeatureMatrix::read_csv(BufReader::new(file), a.label_column)?;
    let cfg = AnalysisConfig {
        pca_components: a.components,
        kmeans_k: Some(a.k),
        kmeans_seed: a.seed,
        probe: ProbeConfig {
            seeds: a.probe_seeds,
            base_seed: a.seed,
            parallelism,
            ..Default::default()
        },
    };
    let (report, pca) = analyze(&features, &cfg)?;
    if let Some(p) = &a.scatter {
        write_scatter_csv(&features, &pca, File::create(p).map_err(io_err(p))?)?;
    }
    write_json(&report, a.out.as_deref())
}

fn cmd_gen_boards(a: GenBoardsArgs) -> Result<()> {
    let table = match &a.embeddings {
        Some(p) => Some(EmbeddingTable::load(p, None)?),
        None => None,
    };
    let pool = a.pool.load(table.as_ref())?;
    let boards: Vec<Board> = (0..a.count as u64)
        .map(|i| generate_board(&pool, a.base_seed + i))
        .collect::<std::result::Result<_, _>>()?;
    write_json(&boards, a.out.as_deref())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let store = a.model.store()?;
    let pool = a.pool.load(Some(store.table()))?;
    let mut app = AppState::new(Arc::new(store), Arc::new(pool));
    if let Some(p) = &a.transcripts_log {
        app = app.with_finished_log(p).map_err(io_err(p))?;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(Arc::new(app), a.port))?;
    Ok(())
}

fn render_board(session: &Session, out: &mut dyn Write) -> io::Result<()> {
    for row in session.board().chunks(5) {
        let cells: Vec<String> = row
            .iter()
            .map(|c| match c.role {
                Some(r) => format!("[{}:{}]", c.word, serde_json::to_value(r).unwrap().as_str().unwrap_or("?")),
                None => c.word.clone(),
            })
            .map(|s| format!("{s:<22}"))
            .collect();
        writeln!(out, "{}", cells.join(" ").trim_end())?;
    }
    Ok(())
}

fn render_posterior(session: &Session, out: &mut dyn Write) -> io::Result<()> {
    let parts: Vec<String> = session
        .weights()
        .iter()
        .map(|w| format!("{}={:.3}", w.culture, w.weight))
        .collect();
    writeln!(out, "posterior: {}", parts.join(" "))
}

/// The terminal game loop. Each input line is a guess; `quit` ends early.
pub fn cmd_play(a: PlayArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let store = a.model.store()?;
    let pool = a.pool.load(Some(store.table()))?;
    let mut req = CreateSession {
        cultures: a.cultures.clone(),
        beta: a.beta,
        seed: a.seed,
        ..Default::default()
    };
    if let Some(x) = a.alpha {
        req.rsa.alpha = x;
    }
    if let Some(x) = a.delta {
        req.rsa.delta = x;
    }
    let mut session = Session::start("tty".into(), &store, &pool, &req)?;
    let mut line = String::new();
    while !session.is_over() {
        render_board(&session, out)?;
        render_posterior(&session, out)?;
        writeln!(out, "clue: {} (1 word)", session.current_clue().unwrap_or("-"))?;
        write!(out, "guess> ")?;
        out.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 || line.trim() == "quit" {
            writeln!(out)?;
            break;
        }
        match session.guess(line.trim()) {
            Ok(r) => writeln!(out, "{} was {}", line.trim(), serde_json::to_value(r.outcome)?.as_str().unwrap_or("?"))?,
            Err(crate::session::SessionError::IllegalGuess(msg)) => writeln!(out, "{msg}")?,
            Err(e) => return Err(e.into()),
        }
    }
    render_posterior(&session, out)?;
    writeln!(out, "status: {}", serde_json::to_value(session.status())?.as_str().unwrap_or("?"))?;
    Ok(())
}
