use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use iiie_core::codec;
use iiie_core::config::Config;
use iiie_core::orchestrator::{self, EditOptions, Phase, Pipeline, PlanOverride, PlanOverrideFields};
use iiie_core::protocol::mock::{GroundFixtures, MockBackends, MockChat, MockGround, MockSet, RuleTable};

#[derive(Parser)]
#[command(name = "iiie", version, about = "Instruction-guided image editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run against in-process mock backends instead of the configured ones.
    #[arg(long)]
    mock: bool,
    /// Grounding fixture directory for the mocks.
    #[arg(long, requires = "mock")]
    fixtures: Option<PathBuf>,
    /// Extra mock chat rules (TOML), tried before the built-in ones.
    #[arg(long, requires = "mock")]
    rules: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Edit one image.
    Edit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        instruction: String,
        /// JSON file with any of category, main_object, addition_subject, target_prompt.
        #[arg(long)]
        override_plan: Option<PathBuf>,
        /// Mask PNG to use instead of grounding.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Job id, which names the artifact directory. Defaults to the image file stem.
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every record of a JSON Lines manifest.
    Batch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the job API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the four deterministic mock backends on consecutive ports.
    MockBackends {
        #[arg(long, default_value_t = 7860)]
        port_base: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
}

fn mock_set(fixtures: Option<&Path>, rules: Option<&Path>) -> Result<MockSet> {
    let fixtures = match fixtures {
        Some(dir) => GroundFixtures::load_dir(dir).with_context(|| format!("loading fixtures from {}", dir.display()))?,
        None => GroundFixtures::new(),
    };
    let mut table = RuleTable::builtin();
    if let Some(path) = rules {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        table = table.with_overrides(RuleTable::from_toml(&text)?);
    }
    Ok(MockSet {
        chat: MockChat::new(table),
        ground: MockGround::new(fixtures),
        ..MockSet::default()
    })
}

/// Loads the config and, with `--mock`, starts mocks and points the config at them.
async fn prepare(common: &Common) -> Result<(Config, Option<MockBackends>)> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let mocks = if common.mock {
        let mocks = MockBackends::spawn(mock_set(common.fixtures.as_deref(), common.rules.as_deref())?).await?;
        cfg.backends = mocks.endpoints();
        Some(mocks)
    } else {
        None
    };
    Ok((cfg, mocks))
}

fn default_id(image: &Path) -> String {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let id: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .take(128)
        .collect();
    if id.is_empty() || id == "." || id == ".." {
        "edit".into()
    } else {
        id
    }
}

async fn wait_for_ctrl_c() -> Result<()> {
    tokio::signal::ctrl_c().await.context("waiting for ctrl-c")
}

async fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Edit {
            image,
            instruction,
            override_plan,
            mask,
            seed,
            out,
            id,
            common,
        } => {
            let (mut cfg, mocks) = prepare(&common).await?;
            if let Some(out) = out {
                cfg.service.out_dir = out;
            }
            let pipeline = Pipeline::from_config(&cfg)?;
            let fields: Option<PlanOverrideFields> = match &override_plan {
                Some(p) => Some(
                    serde_json::from_slice(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)
                        .with_context(|| format!("parsing {}", p.display()))?,
                ),
                None => None,
            };
            let user_mask = match &mask {
                Some(p) => Some(codec::decode_mask(&std::fs::read(p)?).with_context(|| format!("decoding {}", p.display()))?),
                None => None,
            };
            let options = EditOptions {
                plan_override: (fields.is_some() || user_mask.is_some())
                    .then(|| PlanOverride::from_fields(fields.unwrap_or_default(), user_mask)),
                seed,
            };
            let id = id.unwrap_or_else(|| default_id(&image));
            let bytes = std::fs::read(&image).with_context(|| format!("reading {}", image.display()))?;
            let state = pipeline.execute_encoded(&id, &bytes, &instruction, &options, &()).await?;
            println!("{}", serde_json::to_string_pretty(&state)?);
            if let Some(m) = mocks {
                m.shutdown().await;
            }
            Ok(if state.phase == Phase::Done { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Batch {
            manifest,
            out,
            parallelism,
            common,
        } => {
            let (mut cfg, mocks) = prepare(&common).await?;
            if let Some(out) = out {
                cfg.service.out_dir = out;
            }
            let pipeline = Pipeline::from_config(&cfg)?;
            let summary = orchestrator::run_batch(&pipeline, &manifest, parallelism.unwrap_or(cfg.service.parallelism)).await?;
            for r in &summary.records {
                let code = r.error_code.map(|c| format!("{c:?}")).unwrap_or_default();
                println!("{}\t{:?}\t{}\t{}ms", r.id, r.phase, code, r.wall_time_ms);
            }
            println!(
                "{}/{} done, success rate {:.3}",
                summary.done(),
                summary.records.len(),
                summary.success_rate()
            );
            if let Some(m) = mocks {
                m.shutdown().await;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { port, common } => {
            let (cfg, _mocks) = prepare(&common).await?;
            let mut addr: SocketAddr = cfg
                .service
                .bind
                .parse()
                .with_context(|| format!("service.bind {:?} is not host:port", cfg.service.bind))?;
            if let Some(p) = port {
                addr.set_port(p);
            }
            let pipeline = Pipeline::from_config(&cfg)?;
            let (handle, _state) = orchestrator::serve_api(pipeline, cfg.service.parallelism, addr).await?;
            eprintln!("serving job API on {}", handle.url());
            wait_for_ctrl_c().await?;
            handle.shutdown().await;
            Ok(ExitCode::SUCCESS)
        }
        Command::MockBackends {
            port_base,
            host,
            fixtures,
            rules,
        } => {
            if port_base > u16::MAX - 3 {
                bail!("port base {port_base} leaves no room for four ports");
            }
            let mocks = MockBackends::spawn_on(mock_set(fixtures.as_deref(), rules.as_deref())?, host, port_base).await?;
            let e = mocks.endpoints();
            eprintln!("chat        {}", e.chat);
            eprintln!("ground      {}", e.ground);
            eprintln!("inpaint     {}", e.inpaint);
            eprintln!("global-edit {}", e.global_edit);
            wait_for_ctrl_c().await?;
            mocks.shutdown().await;
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
