use std::path::PathBuf;
use std::process::ExitCode;

use adapteval::corpus::sample_dialog_ids;
use adapteval_cli::config::{Overrides, RunConfig};
use adapteval_cli::correlate::cmd_correlate;
use adapteval_cli::manifest::RunManifest;
use adapteval_cli::pipeline::{cmd_adapt, cmd_evaluate, cmd_validate_corpus, load_corpus};
use adapteval_cli::report::cmd_report;
use clap::{Parser, Subcommand};

/// Evaluate cultural adaptations of dialog corpora.
#[derive(Parser)]
#[command(name = "adapteval", version, about)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true, default_value = "adapteval.toml")]
    config: PathBuf,
    /// Fuzzy-match threshold for CSI found-ness (0-100).
    #[arg(long, global = true)]
    csi_match_threshold: Option<u32>,
    /// Override the judge model id.
    #[arg(long, global = true)]
    judge_model: Option<String>,
    /// Override the completion cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Bound on concurrent in-flight completions.
    #[arg(long, global = true)]
    max_inflight: Option<usize>,
    /// Significance level for correlation flags.
    #[arg(long, global = true)]
    significance: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one adaptation per (dialog, adapter model).
    Adapt,
    /// Run the full evaluation pipeline over existing adaptations.
    Evaluate,
    /// Correlate judge dialog scores against human ratings.
    Correlate {
        /// CSV with columns dialog_id, rater_id, naturalness, localisation,
        /// offensiveness, stereotypical, content_preservation.
        #[arg(long)]
        human_ratings: PathBuf,
        /// Model whose scores the humans rated (required with several
        /// adapters).
        #[arg(long)]
        model: Option<String>,
    },
    /// Render the Markdown + CSV report bundle from evaluation outputs.
    Report,
    /// Load the corpus and annotations, check invariants, print statistics.
    ValidateCorpus,
    /// Print a seeded random sample of dialog ids (for human-rating batches).
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        csi_match_threshold: cli.csi_match_threshold,
        judge_model: cli.judge_model.clone(),
        cache_dir: cli.cache_dir.clone(),
        out_dir: cli.out_dir.clone(),
        max_inflight: cli.max_inflight,
        significance: cli.significance,
    };
    let config = match RunConfig::load(&cli.config, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };

    let command_name = match &cli.command {
        Command::Adapt => "adapt",
        Command::Evaluate => "evaluate",
        Command::Correlate { .. } => "correlate",
        Command::Report => "report",
        Command::ValidateCorpus => "validate-corpus",
        Command::Sample { .. } => "sample",
    };
    let mut manifest = RunManifest::new(command_name, &config);
    for path in [&config.corpus.dialogs, &config.corpus.annotations] {
        if let Err(e) = manifest.hash_input(path) {
            eprintln!("error hashing {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    }

    let result: Result<(), String> = match &cli.command {
        Command::Adapt => cmd_adapt(&config, &mut manifest).map_err(|e| e.to_string()),
        Command::Evaluate => cmd_evaluate(&config, &mut manifest).map_err(|e| e.to_string()),
        Command::Correlate { human_ratings, model } => {
            if let Err(e) = manifest.hash_input(human_ratings) {
                Err(format!("error hashing {}: {e}", human_ratings.display()))
            } else {
                cmd_correlate(&config, human_ratings, model.as_deref(), &mut manifest)
                    .map(|output| {
                        println!(
                            "wrote {}",
                            config.run.out_dir.join("correlate/correlation.md").display()
                        );
                        for aspect in &output.aspects {
                            match &aspect.result {
                                Some(r) => println!(
                                    "{}: tau={:.2} p={:.4} ({})",
                                    aspect.aspect, r.tau, r.p_value, r.band
                                ),
                                None => println!("{}: undefined", aspect.aspect),
                            }
                        }
                    })
                    .map_err(|e| e.to_string())
            }
        }
        Command::Report => cmd_report(&config, &mut manifest)
            .map(|path| println!("wrote {}", path.display()))
            .map_err(|e| e.to_string()),
        Command::ValidateCorpus => cmd_validate_corpus(&config, &mut manifest)
            .map(|stats| print!("{stats}"))
            .map_err(|e| e.to_string()),
        Command::Sample { n, seed } => match load_corpus(&config) {
            Ok((dialogs, _)) => {
                for id in sample_dialog_ids(&dialogs, *n, *seed) {
                    println!("{id}");
                }
                Ok(())
            }
            Err(e) => Err(e.to_string()),
        },
    };

    if let Err(message) = result {
        manifest.hard_errors.push(message);
    }
    for warning in &manifest.warnings {
        eprintln!("warning: {warning}");
    }
    for error in &manifest.hard_errors {
        eprintln!("error: {error}");
    }
    if let Err(e) = manifest.write(&config.run.out_dir) {
        eprintln!("error writing manifest: {e}");
        return ExitCode::FAILURE;
    }
    if manifest.exit_code() == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
