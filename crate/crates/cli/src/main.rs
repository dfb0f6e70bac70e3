use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use kpi2kvi_core::agents::{Exhaustion, HttpConfig, HttpProvider, Playbook, Provider, RecordingProvider, ScriptedProvider};
use kpi2kvi_core::eval::{
    generate_suite, load_cases, parse_q_range, sweep, to_csv, write_cases, Mode, NoiseModel, RunSettings, SweepConfig,
    VariantConfig,
};
use kpi2kvi_core::orchestrator::{create_session_with_id, handle_user_turn_with, FileStore, Workflow};
use kpi2kvi_core::taxonomy::{fixture_taxonomy, load_taxonomy_file, Taxonomy};
use kpi2kvi_server::{AppState, ServerConfig};

#[derive(Parser)]
#[command(name = "kpi2kvi", version, about = "Staged KPI-to-KVI assessment service and evaluation harness")]
struct Cli {
    /// Taxonomy JSON file; the bundled fixture when omitted.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Scripted,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/SSE service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "KPI2KVI_STORE_DIR", default_value = "sessions")]
        store_dir: PathBuf,
        #[arg(long, value_enum, default_value = "scripted")]
        provider: ProviderKind,
        /// Required for the scripted provider.
        #[arg(long)]
        playbook: Option<PathBuf>,
        #[arg(long, env = "KPI2KVI_CORS_ORIGIN")]
        cors_origin: Option<String>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Sweep cases over variants and taxonomy quality; writes CSV.
    Eval {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value = "1,2,3,4", value_delimiter = ',')]
        variants: Vec<u8>,
        /// `start:end:step` or a comma list.
        #[arg(long, default_value = "0.0:1.0:0.1")]
        q: String,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        /// Fixed error probability, ignoring alpha and beta.
        #[arg(long)]
        p_err: Option<f64>,
    },
    /// Play one case's messages through a fresh session and print SSE frames.
    Replay {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        case: String,
        /// Staged variant 2, 3 or 4.
        #[arg(long, default_value_t = 4)]
        variant: u8,
        #[arg(long, value_enum, default_value = "scripted")]
        provider: ProviderKind,
        /// Write the provider traffic as a playbook.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Write the built-in evaluation cases and their playbooks.
    GenCases {
        #[arg(long)]
        out: PathBuf,
    },
}

fn taxonomy(path: Option<&Path>) -> Result<Taxonomy> {
    match path {
        Some(p) => load_taxonomy_file(p).with_context(|| format!("loading taxonomy {}", p.display())),
        None => Ok(fixture_taxonomy()),
    }
}

fn provider(kind: ProviderKind, playbook: Option<&Path>) -> Result<Arc<dyn Provider>> {
    Ok(match kind {
        ProviderKind::Scripted => {
            let path = playbook.context("--playbook is required with --provider scripted")?;
            let pb = Playbook::load(path).with_context(|| format!("loading playbook {}", path.display()))?;
            Arc::new(ScriptedProvider::new(&pb, Exhaustion::Fail)?)
        }
        ProviderKind::Http => Arc::new(HttpProvider::new(HttpConfig::from_env()?)),
    })
}

fn main() -> Result<()> {
    // RUST_LOG takes a single level here, e.g. `info`.
    let level = std::env::var("RUST_LOG").ok().and_then(|l| l.parse().ok()).unwrap_or(tracing::Level::WARN);
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let tax = taxonomy(cli.taxonomy.as_deref())?;
    match cli.command {
        Command::Serve { port, store_dir, provider: kind, playbook, cors_origin, host } => {
            let store = Arc::new(FileStore::new(&store_dir)?);
            let config = ServerConfig { cors_origin, ..ServerConfig::default() };
            let state = AppState::new(store, provider(kind, playbook.as_deref())?, Workflow::new(tax), config.heartbeat);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(kpi2kvi_server::serve(addr, state, config))?;
        }
        Command::Eval { cases, variants, q, runs, seed, out, alpha, beta, p_err } => {
            if let Some(v) = variants.iter().find(|v| VariantConfig::numbered(**v).is_none()) {
                bail!("unknown variant {v}; expected 1 to 4");
            }
            let loaded = load_cases(&cases)?;
            if loaded.is_empty() {
                bail!("no *.case.json files in {}", cases.display());
            }
            for (c, _) in &loaded {
                c.validate(&tax)?;
            }
            let noise = NoiseModel { alpha, beta, p_override: p_err, ..NoiseModel::default() };
            let config = SweepConfig {
                variants,
                qs: parse_q_range(&q)?,
                runs,
                base_seed: seed,
                settings: RunSettings { noise, ..RunSettings::default() },
            };
            let csv = to_csv(&sweep(&loaded, &tax, &config)?, &config);
            match out {
                Some(path) => std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::Replay { cases, case, variant, provider: kind, record } => {
            let cfg = VariantConfig::numbered(variant).context("variant must be 2, 3 or 4")?;
            if cfg.mode != Mode::Staged {
                bail!("replay drives the staged pipeline; variant {variant} is monolithic");
            }
            let (spec, playbook) = load_cases(&cases)?
                .into_iter()
                .find(|(c, _)| c.case_id == case)
                .with_context(|| format!("no case `{case}` in {}", cases.display()))?;
            let inner: Arc<dyn Provider> = match kind {
                ProviderKind::Scripted => Arc::new(ScriptedProvider::new(&playbook, Exhaustion::Fail)?),
                ProviderKind::Http => provider(kind, None)?,
            };
            let recorder = RecordingProvider::new(inner);
            let wf = Workflow { taxonomy: Arc::new(tax), taxonomy_in_prompts: cfg.taxonomy_enabled, cot: cfg.cot_enabled };
            let mut session = create_session_with_id(format!("{case}-replay"), Some(&spec.description));
            let sid = session.session_id.clone();
            for m in &spec.messages {
                handle_user_turn_with(&mut session, m, &recorder, &wf, &mut |e| print!("{}", e.to_sse(&sid)));
            }
            if let Some(path) = record {
                std::fs::write(&path, recorder.to_playbook().to_json() + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::GenCases { out } => {
            let suite = generate_suite(&tax)?;
            write_cases(&out, &suite)?;
            eprintln!("wrote {} cases to {}", suite.len(), out.display());
        }
    }
    Ok(())
}
