//! Command-line interface. Every subcommand builds the pipeline from the
//! same TOML config, so a CLI run and the gateway see identical fleets,
//! templates, and stores.

use anyhow::{bail, Context};
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use prescore_core::config::PipelineConfig;
use prescore_core::corpus::{Corpus, QueryIndex};
use prescore_core::metrics::{
    accuracy_table, contextual_summary_table, distribution_table, heatmap_table, CsvTable,
};
use prescore_core::pipeline::{Pipeline, SplitScope};
use prescore_core::reportcard::{
    build_category_report_card, build_report_card, render_report_card, CardVariant,
};
use prescore_core::scoreboard::{mode_score, ScoreboardError};
use prescore_core::types::{JudgingMode, PredictionMode};
use std::collections::HashSet;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "prescore",
    version,
    about = "Grade model responses, predict judge verdicts, and route queries by predicted grade"
)]
pub struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "prescore.toml")]
    config: PathBuf,
    /// Corpus file, overriding the one named in the config.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Train/test split seed, overriding the one in the config.
    #[arg(long, global = true)]
    split_seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the deterministic train/test split of the corpus.
    Split {
        /// Emit the full split as JSON instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Collect responses from the routed fleet and have the judge grade
    /// them, appending evaluation records to the store.
    Evaluate {
        /// Grade all responses in one judge call, or each on its own.
        #[arg(long, default_value = "combined", value_parser = ["combined", "independent"])]
        mode: String,
    },
    /// Print each model's most frequent judge verdict per query family.
    /// Mode scores conventionally describe the training split, so that is
    /// the default scope.
    Scoreboard {
        /// Restrict to one side of the split: train, test, or all.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Render one model's report card from recorded evaluations.
    ReportCard {
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "long", value_parser = ["long", "short"])]
        variant: String,
        /// Restrict the backing evaluations: train (the conventional card
        /// scope), test, or all.
        #[arg(long, default_value = "train")]
        split: String,
        /// Build the card over the categories of this dataset instead of
        /// one entry per dataset.
        #[arg(long, value_name = "DATASET")]
        by_category: Option<String>,
        /// Timestamp to stamp on the card (RFC 3339); defaults to now.
        /// Fixing it makes the rendered card reproducible byte for byte.
        #[arg(long)]
        generated_at: Option<String>,
        /// Emit the structured card as JSON instead of the rendered text.
        #[arg(long)]
        json: bool,
    },
    /// Ask each routed model to predict its own judge grade per query,
    /// appending prediction records to the store.
    Predict {
        #[arg(long, default_value = "zero_shot", value_parser = ["zero_shot", "contextual"])]
        mode: String,
        /// Which queries to predict on: all, train, or test.
        #[arg(long, default_value = "all")]
        split: String,
        /// Report card rendering fed to contextual predictions, overriding
        /// the config default.
        #[arg(long, value_parser = ["long", "short"])]
        card_variant: Option<String>,
    },
    /// Route one query through the cost ladder and answer it.
    Route {
        #[arg(long)]
        query: String,
        /// Query-family label recorded with the routing decision.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Write an analysis table as CSV (to stdout unless --out is given).
    Metrics {
        #[arg(long, value_parser = ["distribution", "heatmap", "accuracy", "contextual-summary"])]
        table: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset to slice (required by the heatmap table).
        #[arg(long)]
        dataset: Option<String>,
        /// Restrict to one side of the split: all, train, or test.
        #[arg(long, default_value = "all")]
        split: String,
        /// Prediction mode for the accuracy table.
        #[arg(long, default_value = "zero_shot", value_parser = ["zero_shot", "contextual"])]
        mode: String,
    },
    /// Export hindsight-relabeled SFT data for one model as JSONL.
    ExportSft {
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the routing gateway over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn judging_mode(s: &str) -> JudgingMode {
    match s {
        "combined" => JudgingMode::Combined,
        "independent" => JudgingMode::Independent,
        other => unreachable!("clap vetted the mode, got {other:?}"),
    }
}

fn prediction_mode(s: &str) -> PredictionMode {
    match s {
        "zero_shot" => PredictionMode::ZeroShot,
        "contextual" => PredictionMode::Contextual,
        other => unreachable!("clap vetted the mode, got {other:?}"),
    }
}

fn card_variant(s: &str) -> CardVariant {
    match s {
        "long" => CardVariant::Long,
        "short" => CardVariant::Short,
        other => unreachable!("clap vetted the variant, got {other:?}"),
    }
}

fn scope(s: &str) -> anyhow::Result<SplitScope> {
    s.parse::<SplitScope>().map_err(anyhow::Error::msg)
}

/// The id set for a scope, or `None` when the whole corpus is in play.
fn restrict_for(
    pipeline: &Pipeline,
    corpus: &Corpus,
    scope: SplitScope,
) -> anyhow::Result<Option<HashSet<String>>> {
    Ok(match scope {
        SplitScope::All => None,
        _ => {
            let split = pipeline.split(corpus)?;
            scope.restrict(&split)
        }
    })
}

fn emit_table(table: &CsvTable, out: Option<&PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            table
                .write_to(path)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{}", table.to_csv_string()?),
    }
    Ok(())
}

impl Cli {
    pub async fn run(self) -> anyhow::Result<()> {
        let mut config = PipelineConfig::load(&self.config)?;
        if let Some(corpus) = &self.corpus {
            config.corpus = Some(corpus.clone());
        }
        if let Some(seed) = self.split_seed {
            config.split_seed = seed;
        }
        if let Command::Predict {
            card_variant: Some(variant),
            ..
        } = &self.command
        {
            config.card_variant = card_variant(variant);
        }
        let pipeline = Pipeline::from_config(config)?;
        match self.command {
            Command::Split { json } => {
                let corpus = pipeline.load_corpus()?;
                let split = pipeline.split(&corpus)?;
                if json {
                    println!("{}", serde_json::to_string_pretty(&split)?);
                } else {
                    println!(
                        "{} queries -> {} train / {} test (seed {}, ratio {})",
                        corpus.len(),
                        split.train.len(),
                        split.test.len(),
                        split.seed,
                        split.ratio
                    );
                }
            }
            Command::Evaluate { mode } => {
                let corpus = pipeline.load_corpus()?;
                let summary = pipeline.run_evaluate(&corpus, judging_mode(&mode)).await?;
                println!(
                    "graded {} responses over {} queries ({} response failures)",
                    summary.evaluations_recorded, summary.queries_seen, summary.response_failures
                );
                for (query_id, reason) in &summary.failed_queries {
                    eprintln!("no evaluations for {query_id}: {reason}");
                }
                if !summary.failed_queries.is_empty() {
                    bail!("{} queries produced no evaluations", summary.failed_queries.len());
                }
            }
            Command::Scoreboard { split } => {
                let corpus = pipeline.load_corpus()?;
                let restrict = restrict_for(&pipeline, &corpus, scope(&split)?)?;
                let index = QueryIndex::from_corpus(&corpus);
                let mut models = pipeline.config().routed_refs();
                models.sort_by(|a, b| a.id.cmp(&b.id));
                let mut printed = 0;
                for model in &models {
                    for dataset in corpus.datasets() {
                        match mode_score(
                            pipeline.store(),
                            &index,
                            &model.id,
                            &dataset,
                            None,
                            restrict.as_ref(),
                        ) {
                            Ok(score) => {
                                println!(
                                    "{:<24} {:<16} {:<6} ({} graded)",
                                    model.id, dataset, score.grade, score.support
                                );
                                printed += 1;
                            }
                            Err(ScoreboardError::NoEvaluations { .. }) => {}
                        }
                    }
                }
                if printed == 0 {
                    bail!("no evaluations in the store; run `prescore evaluate` first");
                }
            }
            Command::ReportCard {
                model,
                variant,
                split,
                by_category,
                generated_at,
                json,
            } => {
                let corpus = pipeline.load_corpus()?;
                let restrict = restrict_for(&pipeline, &corpus, scope(&split)?)?;
                let index = QueryIndex::from_corpus(&corpus);
                let stamp = match generated_at {
                    Some(text) => DateTime::parse_from_rfc3339(&text)
                        .with_context(|| format!("bad --generated-at {text:?}"))?
                        .with_timezone(&Utc),
                    None => Utc::now(),
                };
                let card = match &by_category {
                    Some(dataset) => {
                        let categories = corpus.categories(dataset);
                        if categories.is_empty() {
                            bail!("no categories recorded for dataset {dataset:?}");
                        }
                        build_category_report_card(
                            pipeline.store(),
                            &index,
                            &model,
                            dataset,
                            &categories,
                            &pipeline.config().catalog(),
                            restrict.as_ref(),
                            stamp,
                        )?
                    }
                    None => build_report_card(
                        pipeline.store(),
                        &index,
                        &model,
                        &corpus.datasets(),
                        &pipeline.config().catalog(),
                        restrict.as_ref(),
                        stamp,
                    )?,
                };
                if json {
                    println!("{}", serde_json::to_string_pretty(&card.to_json())?);
                } else {
                    print!(
                        "{}",
                        render_report_card(&card, card_variant(&variant), pipeline.templates())?
                    );
                }
            }
            // card_variant was already applied to the config above.
            Command::Predict { mode, split, .. } => {
                let corpus = pipeline.load_corpus()?;
                let summary = pipeline
                    .run_predict(&corpus, prediction_mode(&mode), scope(&split)?)
                    .await?;
                println!("recorded {} predictions", summary.predictions_recorded);
                for (model, query_id, reason) in &summary.failures {
                    eprintln!("no prediction from {model} for {query_id}: {reason}");
                }
            }
            Command::Route { query, dataset } => {
                let router = pipeline.router()?;
                let reply = router.route(&query, dataset.as_deref()).await?;
                println!("{}", reply.answer);
                let predicted = reply
                    .decision
                    .predicted
                    .map(|g| g.to_string())
                    .unwrap_or_else(|| "none".into());
                eprintln!(
                    "[{}: routed to {}; predicted {}; fallback {}; consulted {} model(s)]",
                    reply.query_id,
                    reply.decision.chosen.id,
                    predicted,
                    reply.decision.fallback,
                    reply.decision.trail.len()
                );
            }
            Command::Metrics {
                table,
                out,
                dataset,
                split,
                mode,
            } => {
                let corpus = pipeline.load_corpus()?;
                let restrict = restrict_for(&pipeline, &corpus, scope(&split)?)?;
                let index = QueryIndex::from_corpus(&corpus);
                let datasets = corpus.datasets();
                let built = match table.as_str() {
                    "distribution" => {
                        distribution_table(pipeline.store(), &index, &datasets, restrict.as_ref())
                    }
                    "heatmap" => {
                        let dataset = dataset
                            .ok_or_else(|| anyhow::anyhow!("--dataset is required for the heatmap table"))?;
                        heatmap_table(pipeline.store(), &index, &dataset, restrict.as_ref())
                    }
                    "accuracy" => accuracy_table(
                        pipeline.store(),
                        &index,
                        &datasets,
                        prediction_mode(&mode),
                        restrict.as_ref(),
                    ),
                    "contextual-summary" => contextual_summary_table(
                        pipeline.store(),
                        &index,
                        &datasets,
                        restrict.as_ref(),
                    ),
                    other => unreachable!("clap vetted the table, got {other:?}"),
                };
                emit_table(&built, out.as_ref())?;
            }
            Command::ExportSft { model, out } => {
                let corpus = pipeline.load_corpus()?;
                let written = pipeline.run_export_sft(&corpus, &model, &out)?;
                println!("wrote {} SFT examples to {}", written, out.display());
            }
            Command::Serve { addr } => {
                crate::gateway::serve(&pipeline, &addr).await?;
            }
        }
        Ok(())
    }
}
