use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cloudroid::choreographer::{Choreographer, NodePool, SlaDictionary};
use cloudroid::harness::realtime::run_realtime;
use cloudroid::harness::report::{emit_report, load_report};
use cloudroid::harness::{run_scenario, Deployment, MetricsReport, Scenario};
use cloudroid::portal::Portal;
use cloudroid::samples::{DETECTOR_MANIFEST, MAPPER_MANIFEST};
use cloudroid::stub::Action;
use cloudroid_portal::{PortalConfig, RunningPortal};

#[derive(Debug, Parser)]
#[command(
    name = "cloudroid",
    version,
    about = "Cloud service portal, stubs and QoS scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the portal server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Deploy a package manifest to a running portal.
    Deploy {
        manifest: PathBuf,
        /// Portal base URL, e.g. http://127.0.0.1:8080
        #[arg(long)]
        portal: String,
        /// Replace a deployed package with different content.
        #[arg(long)]
        replace: bool,
        #[arg(long, env = "CLOUDROID_TOKEN")]
        token: String,
    },
    /// Stub descriptor operations.
    Stub {
        #[command(subcommand)]
        command: StubCommand,
    },
    /// Run a scenario and write trace.csv and aggregates.json.
    RunScenario {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Drive the real stub against an in-process portal instead of
        /// the virtual-time simulator.
        #[arg(long)]
        realtime: bool,
    },
    /// Summarize a scenario output directory.
    Report { dir: PathBuf },
}

#[derive(Debug, Subcommand)]
enum StubCommand {
    /// Download the stub descriptor of a deployed service.
    Fetch {
        service: String,
        #[arg(long)]
        portal: String,
        #[arg(long, env = "CLOUDROID_TOKEN")]
        token: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { config } => serve(&config).await,
        Command::Deploy {
            manifest,
            portal,
            replace,
            token,
        } => deploy(&manifest, &portal, replace, &token).await,
        Command::Stub {
            command:
                StubCommand::Fetch {
                    service,
                    portal,
                    token,
                    out,
                },
        } => fetch_stub(&service, &portal, &token, out.as_deref()).await,
        Command::RunScenario {
            file,
            seed,
            out,
            realtime,
        } => run(&file, seed, &out, realtime).await,
        Command::Report { dir } => report(&dir),
    }
}

async fn serve(config: &Path) -> Result<()> {
    let cfg = PortalConfig::load(config)?;
    let running = RunningPortal::start(&cfg).await?;
    println!("listening on {}", running.addr);
    std::io::stdout().flush()?;
    tokio::signal::ctrl_c().await?;
    running.stop().await;
    Ok(())
}

fn base(portal: &str) -> &str {
    portal.trim_end_matches('/')
}

async fn deploy(manifest: &Path, portal: &str, replace: bool, token: &str) -> Result<()> {
    let body =
        std::fs::read(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let resp = reqwest::Client::new()
        .post(format!("{}/packages?replace={replace}", base(portal)))
        .bearer_auth(token)
        .body(body)
        .send()
        .await?;
    let status = resp.status();
    let text = resp.text().await?;
    if !status.is_success() {
        bail!("deploy failed ({status}): {text}");
    }
    println!("{text}");
    Ok(())
}

async fn fetch_stub(service: &str, portal: &str, token: &str, out: Option<&Path>) -> Result<()> {
    let resp = reqwest::Client::new()
        .get(format!("{}/stubs/{service}", base(portal)))
        .bearer_auth(token)
        .send()
        .await?;
    let status = resp.status();
    let bytes = resp.bytes().await?;
    if !status.is_success() {
        bail!(
            "fetch failed ({status}): {}",
            String::from_utf8_lossy(&bytes)
        );
    }
    match out {
        Some(p) => std::fs::write(p, &bytes).with_context(|| format!("writing {}", p.display()))?,
        None => {
            std::io::stdout().write_all(&bytes)?;
            println!();
        }
    }
    Ok(())
}

async fn run(file: &Path, seed: Option<u64>, out: &Path, realtime: bool) -> Result<()> {
    let mut sc = Scenario::load(file)?;
    if let Some(s) = seed {
        sc = sc.with_seed(s);
    }
    let report: MetricsReport = if realtime {
        let portal = Portal::new(
            Choreographer::new(SlaDictionary::default(), NodePool::uniform(4, 8000, 16384)),
            "ws://in-process/ws",
        );
        portal.deploy(DETECTOR_MANIFEST.as_bytes(), false)?;
        portal.deploy(MAPPER_MANIFEST.as_bytes(), false)?;
        run_realtime(&sc, &portal).await?
    } else {
        run_scenario(&sc, &Deployment::samples())?
    };
    let (csv, json) = emit_report(&report, out)?;
    print_aggregates(&serde_json::to_value(report.aggregates_file())?);
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let (agg, rows) = load_report(dir).with_context(|| format!("reading {}", dir.display()))?;
    print_aggregates(&serde_json::to_value(&agg)?);
    let starts: Vec<String> = rows
        .iter()
        .filter(|r| r.action == Action::StartLocal)
        .map(|r| r.index.to_string())
        .collect();
    let stops: Vec<String> = rows
        .iter()
        .filter(|r| r.action == Action::StopLocal)
        .map(|r| r.index.to_string())
        .collect();
    println!("{:<24}{}", "start_local at", starts.join(" "));
    println!("{:<24}{}", "stop_local at", stops.join(" "));
    Ok(())
}

fn print_aggregates(v: &serde_json::Value) {
    let Some(map) = v.as_object() else { return };
    for (k, v) in map {
        let shown = match v.as_f64() {
            Some(f) if v.is_f64() => format!("{f:.3}"),
            _ => v.to_string(),
        };
        println!("{k:<24}{shown}");
    }
}
