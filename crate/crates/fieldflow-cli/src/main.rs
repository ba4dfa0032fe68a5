//! Command-line entry points tying the library into reproducible
//! experiments. Every run validates its config, executes one workflow, and
//! writes the artifacts plus a manifest (config copy, hashes, seeds,
//! versions, wall time) into the output directory.
//!
//! Exit codes: 0 pass, 1 hard error or statistical failure, 2 inconclusive
//! statistical verdicts.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{CommandOutput, Status};

#[derive(Parser)]
#[command(name = "fieldflow", version, about = "Lattice field transport experiments")]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed (overrides the config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = library default; overrides the config).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Estimate the multiscale curvature profile.
    Profile,
    /// Push a free-field ensemble through the transport map.
    Transport,
    /// Empirical Lipschitz report for the transport map.
    Lipschitz,
    /// Verify the renormalization flow equation statistically.
    VerifyPde,
    /// Verify the relaxation semigroup identity with two estimators.
    VerifyOu,
    /// Run the transferred-inequality battery against a MALA reference.
    Inequalities,
    /// Simulate the finite-horizon renormalization SDE.
    Bridge,
    /// Draw a MALA reference ensemble.
    Mcmc,
    /// Closed-form oracle suite on a single-site quadratic model.
    OracleQuadratic,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Transport => "transport",
            Command::Lipschitz => "lipschitz",
            Command::VerifyPde => "verify-pde",
            Command::VerifyOu => "verify-ou",
            Command::Inequalities => "inequalities",
            Command::Bridge => "bridge",
            Command::Mcmc => "mcmc",
            Command::OracleQuadratic => "oracle-quadratic",
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(status) => std::process::exit(status.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Status> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--config <path> is required"))?;
    let config_text = std::fs::read_to_string(config_path)?;
    let mut validated = config::load_config(config_path)?;

    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed: {} -> {seed}", validated.config.seed));
        validated.config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        overrides.push(format!("threads: {} -> {threads}", validated.config.threads));
        validated.config.threads = threads;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| validated.config.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| anyhow::anyhow!("no output directory: set output_dir or pass --out"))?;
    if cli.out.is_some() && validated.config.output_dir.is_some() {
        overrides.push(format!(
            "output_dir: {} -> {}",
            validated.config.output_dir.as_deref().unwrap_or(""),
            out_dir.display()
        ));
    }
    std::fs::create_dir_all(&out_dir)?;

    if validated.config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(validated.config.threads)
            .build_global()
            .ok();
    }

    for w in &validated.warnings {
        eprintln!("note: {w}");
    }

    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let clock = Instant::now();
    let output: CommandOutput = match cli.command {
        Command::Profile => commands::cmd_profile(&validated, &out_dir)?,
        Command::Transport => commands::cmd_transport(&validated, &out_dir)?,
        Command::Lipschitz => commands::cmd_lipschitz(&validated, &out_dir)?,
        Command::VerifyPde => commands::cmd_verify_pde(&validated, &out_dir)?,
        Command::VerifyOu => commands::cmd_verify_ou(&validated, &out_dir)?,
        Command::Inequalities => commands::cmd_inequalities(&validated, &out_dir)?,
        Command::Bridge => commands::cmd_bridge(&validated, &out_dir)?,
        Command::Mcmc => commands::cmd_mcmc(&validated, &out_dir)?,
        Command::OracleQuadratic => commands::cmd_oracle_quadratic(&validated, &out_dir)?,
    };
    let wall = clock.elapsed().as_secs_f64();

    let artifacts: Vec<serde_json::Value> = output
        .artifacts
        .iter()
        .map(|a| {
            let sha = report::sha256_hex_file(&a.path).unwrap_or_default();
            json!({"name": a.name, "path": a.path.display().to_string(), "sha256": sha})
        })
        .collect();
    let manifest = json!({
        "command": cli.command.name(),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(&validated.config)?,
        "config_sha256": report::sha256_hex_str(&config_text),
        "cli_overrides": overrides,
        "seed": validated.config.seed,
        "threads": validated.config.threads,
        "started_unix": started_unix,
        "wall_time_s": wall,
        "warnings": validated.warnings,
        "artifacts": artifacts,
        "summary": output.summary,
        "exit_code": output.status.exit_code(),
    });
    report::write_json(&out_dir.join("manifest.json"), &manifest)?;

    println!(
        "{}: {} ({} artifacts, {:.1}s)",
        cli.command.name(),
        match output.status {
            Status::Pass => "pass",
            Status::Inconclusive => "inconclusive",
            Status::Fail => "FAIL",
        },
        output.artifacts.len(),
        wall
    );
    Ok(output.status)
}
