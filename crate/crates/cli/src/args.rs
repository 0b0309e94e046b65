use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use url::Url;

use qbridge_core::stack::{DEFAULT_FUNCTIONS_PORT, DEFAULT_GATEWAY_PORT, DEFAULT_PROVIDER_PORT};
use qbridge_core::BackendType;

#[derive(Debug, Parser)]
#[command(name = "qbridge", version, about = "Classical/quantum job bridge")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Boot broker, provider, functions, gateway and collector; serve until Ctrl-C.
    RunAll(StackArgs),
    /// Submit one emoticon pair and print the decoded frequencies.
    Submit(SubmitArgs),
    /// Drive several concurrent clients and check result segregation.
    Loadgen(LoadgenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct StackArgs {
    /// Function dispatch file (JSON array of function records).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Device fleet file.
    #[arg(long)]
    pub fleet: Option<PathBuf>,
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    pub host: IpAddr,
    #[arg(long, default_value_t = DEFAULT_GATEWAY_PORT)]
    pub gateway_port: u16,
    #[arg(long, default_value_t = DEFAULT_FUNCTIONS_PORT)]
    pub functions_port: u16,
    #[arg(long, default_value_t = DEFAULT_PROVIDER_PORT)]
    pub provider_port: u16,
    /// Collector wait threshold in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    pub threshold: u64,
    /// Collector worker count.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    /// Re-enqueue budget per job.
    #[arg(long, default_value_t = 100)]
    pub max_attempts: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Route the function runtime and collector through the HTTP surfaces
    /// of the broker and provider instead of in-process handles.
    #[arg(long)]
    pub detached_services: bool,
}

/// Where to send requests: a running gateway, or a private in-process stack.
#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    /// Gateway base URL; defaults to http://HOST:GATEWAY_PORT/.
    #[arg(long, conflicts_with = "in_process")]
    pub gateway: Option<Url>,
    /// Boot a stack on free ports for the duration of the command.
    #[arg(long)]
    pub in_process: bool,
    #[command(flatten)]
    pub stack: StackArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SubmitArgs {
    /// First emoticon, exactly two characters.
    pub emoticon_a: String,
    /// Second emoticon, exactly two characters.
    pub emoticon_b: String,
    #[arg(long, default_value = "NOISELESS_SIM")]
    pub backend: BackendType,
    #[arg(long, default_value_t = 1024)]
    pub shots: u64,
    /// Seconds to wait for the result.
    #[arg(long, default_value = "60", value_parser = parse_secs)]
    pub timeout: Duration,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LoadgenArgs {
    #[arg(long, default_value_t = 5)]
    pub clients: usize,
    #[arg(long, default_value_t = 4)]
    pub jobs_per_client: usize,
    #[arg(long, default_value = "NOISELESS_SIM")]
    pub backend: BackendType,
    #[arg(long, default_value_t = 1024)]
    pub shots: u64,
    /// Seconds allowed for all results to arrive.
    #[arg(long, default_value = "60", value_parser = parse_secs)]
    pub timeout: Duration,
    #[command(flatten)]
    pub target: TargetArgs,
}

fn parse_secs(s: &str) -> Result<Duration, String> {
    let secs: f64 = s.parse().map_err(|_| format!("`{s}` is not a number of seconds"))?;
    if !(secs.is_finite() && secs > 0.0) {
        return Err("timeout must be positive".into());
    }
    Ok(Duration::from_secs_f64(secs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_and_backend_parsing() {
        let cli = Cli::try_parse_from(["qbridge", "submit", ";)", ";(", "--backend", "noisy_sim"]).unwrap();
        let Command::Submit(a) = cli.command else { panic!() };
        assert_eq!(a.backend, BackendType::NoisySim);
        assert_eq!(a.shots, 1024);
        assert_eq!(a.target.stack.gateway_port, DEFAULT_GATEWAY_PORT);
        assert!(Cli::try_parse_from(["qbridge", "submit", ";)", ";(", "--backend", "QPU"]).is_err());
        assert!(Cli::try_parse_from(["qbridge", "loadgen", "--timeout", "0"]).is_err());
    }
}
