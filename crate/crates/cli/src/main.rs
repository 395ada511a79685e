use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tracknet_cli::{cmd_ledger, cmd_logdump, cmd_run, CliError};

#[derive(Parser)]
#[command(name = "tracknet", version, about = "Wildlife tracking network simulator and log tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics to a directory.
    Run {
        /// Scenario TOML file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write events.log.
        #[arg(long)]
        event_log: bool,
    },
    /// Decode a page log dump into one line per record.
    Logdump {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        registry: PathBuf,
    },
    /// Show the next needed pages for a node from a cloud journal.
    Ledger {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        node: u32,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result: Result<(), CliError> = match cli.command {
        Command::Run {
            scenario,
            seed,
            out: dir,
            event_log,
        } => cmd_run(&scenario, seed, &dir, event_log).map(|r| {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{} seed={} sessions={} pages_stored={} duplicates={} unaccounted={} -> {}",
                r.scenario,
                r.seed,
                s.sessions,
                s.pages_stored,
                s.duplicate_storage,
                s.audit.unaccounted,
                dir.display()
            );
        }),
        Command::Logdump { log, registry } => cmd_logdump(&log, &registry, &mut out).map(|_| ()),
        Command::Ledger { journal, node } => cmd_ledger(&journal, node, &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Output(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
