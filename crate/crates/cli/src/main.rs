use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use redsim::learner::{evaluate, train, LearnerConfig, QTable};
use redsim::log::{parse_log, write_log};
use redsim::metrics::{csv_document, BatchSummary, EpisodeSummary};
use redsim::observation::Frame;
use redsim::policy::PolicyKind;
use redsim::protocol::{serve_connection, serve_tcp};
use redsim::rollout::{replay, rollout_each};
use redsim::{Action, DetectorFlags, Env, EnvConfig, RewardConfig, SequenceId, World};

#[derive(Parser)]
#[command(name = "redsim", version, about = "Early-game overworld simulator with reward shaping")]
struct Cli {
    /// TOML file with defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the JSON-lines protocol.
    Serve {
        #[arg(long, conflicts_with = "stdio")]
        tcp: Option<u16>,
        #[arg(long)]
        stdio: bool,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Run a scripted policy and write per-episode metrics.
    Rollout {
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        ablation: AblationArgs,
        #[arg(long)]
        csv: PathBuf,
        /// Also write one episode log per episode into this directory.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Train a tabular Q-learner.
    TrainQ {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        ablation: AblationArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Greedy evaluation of a saved Q-table.
    Eval {
        #[arg(long)]
        qtable: PathBuf,
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Replay an action file and write frames, masks and the episode log.
    Render {
        #[arg(long)]
        sequence: Option<u8>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        actions: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Summarize an episode log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        /// Re-run the logged actions and check the log reproduces exactly.
        #[arg(long)]
        verify: bool,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    sequence: Option<u8>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    no_anti_loop: bool,
    #[arg(long)]
    no_anti_spam: bool,
    #[arg(long)]
    no_mask: bool,
}

/// Contents of the `--config` file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    sequence: Option<u8>,
    seed: Option<u64>,
    episodes: Option<u64>,
    policy: Option<String>,
    visited_mask: Option<bool>,
    step_limit: Option<u64>,
    reward: Option<RewardConfig>,
    detectors: Option<DetectorFlags>,
    learner: Option<LearnerFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LearnerFile {
    alpha: Option<f64>,
    gamma: Option<f64>,
    epsilon_start: Option<f64>,
    epsilon_end: Option<f64>,
    decay_fraction: Option<f64>,
    window: Option<u64>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn sequence(&self, flag: Option<u8>) -> Result<SequenceId> {
        let n = flag.or(self.sequence).unwrap_or(1);
        SequenceId::try_from(n).map_err(anyhow::Error::msg)
    }

    fn env_config(&self, common: &CommonArgs, ablation: &AblationArgs) -> Result<EnvConfig> {
        let mut cfg = EnvConfig::new(self.sequence(common.sequence)?, common.seed.or(self.seed).unwrap_or(0));
        if let Some(r) = &self.reward {
            cfg.reward = r.clone();
        }
        if let Some(d) = self.detectors {
            cfg.detectors = d;
        }
        if let Some(m) = self.visited_mask {
            cfg.visited_mask = m;
        }
        cfg.step_limit = self.step_limit;
        if ablation.no_anti_loop {
            cfg.detectors.anti_loop = false;
        }
        if ablation.no_anti_spam {
            cfg.detectors.anti_spam = false;
        }
        if ablation.no_mask {
            cfg.visited_mask = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn episodes(&self, flag: Option<u64>, default: u64) -> u64 {
        flag.or(self.episodes).unwrap_or(default)
    }

    fn learner(&self, episodes: u64, seed: u64) -> LearnerConfig {
        let mut c = LearnerConfig { episodes, seed, ..LearnerConfig::default() };
        if let Some(l) = &self.learner {
            c.alpha = l.alpha.unwrap_or(c.alpha);
            c.gamma = l.gamma.unwrap_or(c.gamma);
            c.epsilon_start = l.epsilon_start.unwrap_or(c.epsilon_start);
            c.epsilon_end = l.epsilon_end.unwrap_or(c.epsilon_end);
            c.decay_fraction = l.decay_fraction.unwrap_or(c.decay_fraction);
            c.window = l.window.unwrap_or(c.window);
        }
        c
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn parse_actions(text: &str) -> Result<Vec<Action>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .map(|tok| Action::parse(tok).with_context(|| format!("unknown action {tok:?}")))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { tcp, stdio, host } => match (tcp, stdio) {
            (Some(port), false) => {
                eprintln!("listening on {host}:{port}");
                serve_tcp((host.as_str(), port))?;
            }
            (None, true) => {
                let stdin = io::stdin();
                serve_connection(stdin.lock(), io::stdout().lock())?;
            }
            _ => bail!("serve needs exactly one of --tcp PORT or --stdio"),
        },
        Command::Rollout { policy, common, ablation, csv, log_dir } => {
            let kind = match (policy, &file.policy) {
                (Some(k), _) => k,
                (None, Some(name)) => name.parse().map_err(anyhow::Error::msg)?,
                (None, None) => PolicyKind::Random,
            };
            let cfg = file.env_config(&common, &ablation)?;
            let episodes = file.episodes(common.episodes, 100);
            if let Some(dir) = &log_dir {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let mut log_err = None;
            let report = rollout_each(kind, &cfg, episodes, |i, c, log| {
                if let (Some(dir), None) = (&log_dir, &log_err) {
                    let path = dir.join(format!("episode_{i:05}.log"));
                    if let Err(e) = write_file(&path, write_log(c, log)) {
                        log_err = Some(e);
                    }
                }
            })?;
            if let Some(e) = log_err {
                return Err(e);
            }
            write_file(&csv, csv_document(&report.rows))?;
            print!("policy={kind}\nsequence={}\n{}", cfg.sequence, report.summary.to_report());
        }
        Command::TrainQ { common, ablation, out, report } => {
            let cfg = file.env_config(&common, &ablation)?;
            let learner = file.learner(file.episodes(common.episodes, 5000), cfg.seed);
            let (table, rep) = train(&learner, &cfg)?;
            let mut f = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            table.write_to(&mut f)?;
            write_file(&report, serde_json::to_string_pretty(&rep)?)?;
            if let Some(w) = rep.windows.last() {
                println!(
                    "states={}\nfinal_success_rate={}\nfinal_loop_episode_fraction={}\nfinal_mean_entropy_bits={}",
                    rep.states, w.success_rate, w.loop_episode_fraction, w.mean_entropy_bits
                );
            }
        }
        Command::Eval { qtable, episodes, seed, csv } => {
            let f = fs::File::open(&qtable).with_context(|| format!("opening {}", qtable.display()))?;
            let table = QTable::read_from(BufReader::new(f))?;
            let mut cfg = EnvConfig::new(table.sequence, seed.or(file.seed).unwrap_or(0));
            if let Some(r) = &file.reward {
                cfg.reward = r.clone();
            }
            if let Some(d) = file.detectors {
                cfg.detectors = d;
            }
            cfg.step_limit = file.step_limit;
            let rep = evaluate(&table, &cfg, file.episodes(episodes, 200))?;
            write_file(&csv, csv_document(&rep.rows))?;
            print!("sequence={}\n{}", table.sequence, rep.summary.to_report());
        }
        Command::Render { sequence, seed, actions, out_dir } => {
            let text = fs::read_to_string(&actions).with_context(|| format!("reading {}", actions.display()))?;
            let actions = parse_actions(&text)?;
            let mut cfg = EnvConfig::new(file.sequence(sequence)?, seed.or(file.seed).unwrap_or(0));
            if let Some(m) = file.visited_mask {
                cfg.visited_mask = m;
            }
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut env = Env::new(cfg.clone())?;
            let save = |i: usize, (gray, mask): (Frame, Frame)| -> Result<()> {
                write_file(&out_dir.join(format!("frame_{i:05}.pgm")), gray.to_pgm())?;
                write_file(&out_dir.join(format!("mask_{i:05}.pgm")), mask.to_pgm())
            };
            save(0, env.frames())?;
            let mut written = 1;
            for a in actions {
                if env.outcome().is_terminal() {
                    eprintln!("episode ended ({}); remaining actions ignored", env.outcome().name());
                    break;
                }
                env.step(a)?;
                save(written, env.frames())?;
                written += 1;
            }
            write_file(&out_dir.join("episode.log"), write_log(&cfg, env.log()))?;
            println!("frames={written}\noutcome={}", env.outcome().name());
        }
        Command::Metrics { log, verify } => {
            let text = fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let (cfg, episode) = parse_log(&text)?;
            if verify {
                let again = replay(cfg.clone(), episode.actions())?;
                if again != episode {
                    bail!("log does not reproduce from its config and actions");
                }
            }
            let row = EpisodeSummary::from_log(0, cfg.sequence.number(), cfg.seed, &episode, World::canonical());
            println!("outcome={}", row.outcome);
            println!("steps={}", row.steps);
            println!("total_reward={}", row.total_reward);
            println!("unique_positions={}", row.unique_positions);
            println!("revisit_ratio={}", row.revisit_ratio);
            println!("exploration_ratio={}", row.exploration_ratio);
            println!("loop_episode={}", row.loop_episode);
            print!("{}", BatchSummary::from_rows(&[row]).to_report());
            if verify {
                println!("verified=true");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
