use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use iiie_core::eval::{self, MethodScore, PanelRule};

#[derive(Parser)]
#[command(name = "iiie-eval", version, about = "Aggregate 0/1 human ratings into method scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Majority-vote and average a ratings file (CSV or JSON Lines).
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        /// `.json` writes scores, `.csv` a CSV table, anything else a text table.
        /// Prints the text table when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Required raters per cell; 0 accepts any odd panel.
        #[arg(long, default_value_t = 3)]
        panel: usize,
    },
    /// Print the ranked comparison table for a ratings file or a scores JSON file.
    Rank {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        panel: usize,
        #[arg(long)]
        csv: bool,
    },
}

fn rule(panel: usize) -> PanelRule {
    PanelRule {
        panel_size: (panel > 0).then_some(panel),
    }
}

fn load_scores(input: &Path, panel: usize) -> Result<Vec<MethodScore>> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).with_context(|| format!("parsing scores in {}", input.display()));
    }
    let records = eval::read_records(input)?;
    Ok(eval::aggregate(records, rule(panel))?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Aggregate { input, out, panel } => {
            let scores = eval::aggregate(eval::read_records(&input)?, rule(panel))?;
            let ranked = eval::rank_methods(&scores);
            match out {
                None => print!("{}", eval::render_text(&ranked)),
                Some(path) => {
                    let body = match path.extension().and_then(|e| e.to_str()) {
                        Some("json") => serde_json::to_string_pretty(&scores)? + "\n",
                        Some("csv") => eval::render_csv(&ranked),
                        _ => eval::render_text(&ranked),
                    };
                    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
                }
            }
        }
        Command::Rank { input, panel, csv } => {
            let ranked = eval::rank_methods(&load_scores(&input, panel)?);
            if csv {
                print!("{}", eval::render_csv(&ranked));
            } else {
                print!("{}", eval::render_text(&ranked));
            }
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::from(2)
        }
    }
}
