use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dosn_privacy::bench::{
    emit_csv, emit_summary, run_category_comparison, run_scenario, run_sweep, write_csv, BenchError, Category,
    SweepConfig,
};
use dosn_privacy::crypto::CryptoCostParams;
use dosn_privacy::group::GroupType;
use dosn_privacy::models::ModelKind;

#[derive(Parser, Debug)]
#[command(name = "bench", version, about = "Cost sweeps and oracle replays for DOSN privacy models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Key-tree degree for the LKH model.
    #[arg(long, default_value_t = 4)]
    degree: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cost profile file (key = value lines); CBC figures when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measure join, leave and publish over a parameter grid.
    Sweep {
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = ModelKind::ALL)]
        models: Vec<ModelKind>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = GroupType::ALL)]
        gtypes: Vec<GroupType>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [10usize, 50, 100, 1000, 10000])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [10usize, 50, 100])]
        p: Vec<usize>,
        #[arg(long, default_value_t = 102_400)]
        content_size: usize,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalized owner costs of all models for one group category (n = 4000).
    Compare {
        #[arg(long)]
        category: Category,
        #[arg(long, default_value_t = 102_400)]
        content_size: usize,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a scenario file, checking every access against the oracle.
    Scenario {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        gtype: GroupType,
        #[command(flatten)]
        common: Common,
        /// Per-event cost CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config(common: &Common) -> Result<SweepConfig, BenchError> {
    let params = match &common.profile {
        Some(path) => CryptoCostParams::load(path)?,
        None => CryptoCostParams::default(),
    };
    Ok(SweepConfig {
        degree: common.degree,
        seed: common.seed,
        params,
        ..SweepConfig::default()
    })
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Sweep {
            models,
            gtypes,
            n,
            p,
            content_size,
            common,
            out,
        } => {
            let cfg = SweepConfig {
                models,
                gtypes,
                n_list: n,
                p_list: p,
                content_size,
                ..config(&common)?
            };
            let rows = run_sweep(&cfg)?;
            emit_csv(&rows, &out)?;
            eprintln!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Compare {
            category,
            content_size,
            common,
            out,
        } => {
            let cfg = SweepConfig {
                content_size,
                ..config(&common)?
            };
            let summary = run_category_comparison(category, &cfg)?;
            emit_summary(&summary, &out)?;
            eprintln!("wrote {} cells to {}", summary.cells.len(), out.display());
        }
        Command::Scenario {
            file,
            model,
            gtype,
            common,
            out,
        } => {
            let text = std::fs::read_to_string(&file).map_err(|source| BenchError::Io {
                path: file.clone(),
                source,
            })?;
            let rows = run_scenario(&text, model, gtype, &config(&common)?)?;
            match out {
                Some(path) => emit_csv(&rows, &path)?,
                None => write_csv(&rows, std::io::stdout().lock())?,
            }
            eprintln!("{}: {} events replayed, no divergence", file.display(), rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let BenchError::Divergence(report) = &e {
                for d in report.divergences.iter().take(20) {
                    eprintln!(
                        "  t={} user={} content={}: oracle {:?}, model {:?}{}",
                        d.seq,
                        d.user,
                        d.content,
                        d.oracle,
                        d.model,
                        if d.wrong_payload { " (wrong payload)" } else { "" }
                    );
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
