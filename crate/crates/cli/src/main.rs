use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flowdbg_core::agent::{run_agent, AgentConfig};
use flowdbg_core::bus::{connect_ws, serve_gateway, BusClient};
use flowdbg_core::client::{run_client, serve_frontend, ClientConfig};
use flowdbg_core::simkit::{parse_scenario, run_scenario_blocking, run_suite, RunOptions, ScenarioReport, TimerProfile};
use flowdbg_core::workflow::{parse_workflow, WorkflowDefinition};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "flowdbg", version, about = "Remote debugger for event-driven industrial workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Message bus gateway.
    Bus {
        #[command(subcommand)]
        command: BusCommand,
    },
    /// Automation controller agent hosting workflows.
    Agent {
        #[command(subcommand)]
        command: AgentCommand,
    },
    /// MES-side debug client.
    Client {
        #[command(subcommand)]
        command: ClientCommand,
    },
    /// Scripted scenarios under virtual time.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Subcommand)]
enum BusCommand {
    /// Serve the `/bus` WebSocket endpoint.
    Serve {
        #[arg(long, default_value = "127.0.0.1:4222")]
        listen: String,
    },
}

#[derive(Subcommand)]
enum AgentCommand {
    Run(AgentArgs),
}

#[derive(Args)]
struct AgentArgs {
    /// Bus address: `host:port` or a full `ws://` URL.
    #[arg(long)]
    bus: String,
    /// Workflow definition files (JSON).
    #[arg(long = "workflow", required = true, num_args = 1..)]
    workflows: Vec<PathBuf>,
    /// Instance id; random when omitted. Keep it fixed to survive restarts.
    #[arg(long)]
    aci_id: Option<String>,
    #[arg(long, value_name = "MS", default_value_t = 30_000)]
    sweep_interval: u64,
    #[arg(long, value_name = "MS", default_value_t = 35_000)]
    session_expiry: u64,
    /// How long a synchronous breakpoint waits for the MES.
    #[arg(long, value_name = "MS", default_value_t = 300_000)]
    sync_reply_timeout: u64,
}

#[derive(Subcommand)]
enum ClientCommand {
    /// Run a client and expose its frontend API.
    Run(ClientArgs),
    /// Drive a scenario headlessly and print its report.
    Script {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "fast")]
        timer_profile: ProfileArg,
    },
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long)]
    bus: String,
    #[arg(long)]
    mes_id: String,
    /// Listen address of the `/frontend` WebSocket.
    #[arg(long, default_value = "127.0.0.1:8080")]
    frontend: String,
    /// Definitions for local mock sessions.
    #[arg(long = "workflow", num_args = 1..)]
    workflows: Vec<PathBuf>,
    #[arg(long, value_name = "MS", default_value_t = 30_000)]
    aci_request_interval: u64,
    #[arg(long, value_name = "MS", default_value_t = 10_000)]
    comm_attempt_interval: u64,
    #[arg(long, value_name = "MS", default_value_t = 5_000)]
    auto_select_window: u64,
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Run one scenario file; JSON report on stdout.
    Run {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "fast")]
        timer_profile: ProfileArg,
    },
    /// Run the built-in suite; JSON report on stdout.
    Suite {
        #[arg(long, value_enum, default_value = "fast")]
        timer_profile: ProfileArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ProfileArg {
    Fast,
    Paper,
}

impl From<ProfileArg> for TimerProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Fast => TimerProfile::Fast,
            ProfileArg::Paper => TimerProfile::Paper,
        }
    }
}

fn bus_url(addr: &str) -> String {
    if addr.starts_with("ws://") || addr.starts_with("wss://") {
        addr.to_string()
    } else {
        format!("ws://{addr}/bus")
    }
}

fn load_workflow(path: &Path) -> Result<Arc<WorkflowDefinition>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let def = parse_workflow(&text).with_context(|| format!("workflow {}", path.display()))?;
    Ok(Arc::new(def))
}

async fn connect(addr: &str) -> Result<BusClient> {
    let url = bus_url(addr);
    connect_ws(&url).await.with_context(|| format!("connecting to {url}"))
}

async fn ctrl_c() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        tracing::error!(error = %e, "cannot listen for ctrl-c");
        std::future::pending::<()>().await;
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn bus_serve(listen: &str) -> Result<ExitCode> {
    runtime()?.block_on(async {
        let gateway = serve_gateway(listen).await?;
        eprintln!("bus listening on {}", gateway.url());
        ctrl_c().await;
        gateway.shutdown().await;
        Ok(ExitCode::SUCCESS)
    })
}

fn agent_run(args: AgentArgs) -> Result<ExitCode> {
    let workflows = args.workflows.iter().map(|p| load_workflow(p)).collect::<Result<Vec<_>>>()?;
    runtime()?.block_on(async {
        let bus = connect(&args.bus).await?;
        let config = AgentConfig {
            aci_id: args.aci_id,
            workflows,
            sweep_interval: Duration::from_millis(args.sweep_interval),
            session_expiry: Duration::from_millis(args.session_expiry),
            sync_reply_timeout: Duration::from_millis(args.sync_reply_timeout),
            ..AgentConfig::default()
        };
        let agent = run_agent(bus, config).await?;
        eprintln!("agent {} serving {:?}", agent.aci_id(), agent.workflow_ids());
        tokio::select! {
            _ = ctrl_c() => {}
            _ = async { while agent.is_running() { tokio::time::sleep(Duration::from_millis(200)).await } } => {
                bail!("agent stopped: bus connection lost");
            }
        }
        agent.shutdown().await;
        Ok(ExitCode::SUCCESS)
    })
}

fn client_run(args: ClientArgs) -> Result<ExitCode> {
    let workflows = args.workflows.iter().map(|p| load_workflow(p)).collect::<Result<Vec<_>>>()?;
    runtime()?.block_on(async {
        let bus = connect(&args.bus).await?;
        let mut config = ClientConfig::new(args.mes_id);
        config.workflows = workflows;
        config.aci_request_interval = Duration::from_millis(args.aci_request_interval);
        config.comm_attempt_interval = Duration::from_millis(args.comm_attempt_interval);
        config.auto_select_window = Duration::from_millis(args.auto_select_window);
        let client = run_client(bus, config)?;
        let server = serve_frontend(&args.frontend, client.clone()).await?;
        eprintln!("frontend API on {}", server.url());
        ctrl_c().await;
        server.shutdown().await;
        client.shutdown().await;
        Ok(ExitCode::SUCCESS)
    })
}

fn run_file(file: &Path, profile: TimerProfile) -> Result<ScenarioReport> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let script = parse_scenario(&text)?;
    let opts = RunOptions {
        profile,
        base_dir: file.parent().map(Path::to_path_buf),
    };
    Ok(run_scenario_blocking(&script, &opts)?)
}

fn verdict(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Scenario runs log every agent event; keep their stderr readable.
    let default_level = match cli.command {
        Command::Scenario { .. } | Command::Client { command: ClientCommand::Script { .. } } => "warn",
        _ => "info",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .init();
    let result = match cli.command {
        Command::Bus { command: BusCommand::Serve { listen } } => bus_serve(&listen),
        Command::Agent { command: AgentCommand::Run(args) } => agent_run(args),
        Command::Client { command: ClientCommand::Run(args) } => client_run(args),
        Command::Client { command: ClientCommand::Script { file, timer_profile } } => {
            run_file(&file, timer_profile.into()).map(|report| {
                for line in &report.transcript {
                    eprintln!("{:>8} {}", line.at_ms, line.text);
                }
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                verdict(report.passed)
            })
        }
        Command::Scenario { command: ScenarioCommand::Run { file, timer_profile } } => {
            run_file(&file, timer_profile.into()).map(|report| {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                verdict(report.passed)
            })
        }
        Command::Scenario { command: ScenarioCommand::Suite { timer_profile } } => {
            let report = run_suite(timer_profile.into());
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(verdict(report.passed))
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
