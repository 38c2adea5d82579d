use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, ValueEnum};
use onepixel_core::campaign::plots::{emit_boxplots, emit_trace};
use onepixel_core::campaign::{filter_dataset, load_dataset, run_campaign, CampaignConfig, CampaignOutput, FilterRule};
use onepixel_core::AttackDirection;
use serde_json::json;

use crate::args::{log_oracle_stats, write_json, DeArgs, OracleArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionChoice {
    Both,
    MitosisToNormal,
    NormalToMitosis,
}

impl DirectionChoice {
    fn direction(self) -> Option<AttackDirection> {
        match self {
            DirectionChoice::Both => None,
            DirectionChoice::MitosisToNormal => Some(AttackDirection::MitosisToNormal),
            DirectionChoice::NormalToMitosis => Some(AttackDirection::NormalToMitosis),
        }
    }
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    /// Dataset: a directory with mitosis/ and normal/ PNG subdirectories, or
    /// a CSV manifest with columns image_id,path,label
    pub input: PathBuf,

    /// Which attacks to run; each image is attacked away from its own label
    #[arg(long, value_enum, default_value_t = DirectionChoice::Both)]
    pub direction: DirectionChoice,

    #[command(flatten)]
    pub oracle: OracleArgs,

    #[command(flatten)]
    pub de: DeArgs,

    /// Minimum score for a mitosis image to be attacked
    #[arg(long, default_value_t = 0.9)]
    pub mitosis_min: f64,

    /// Maximum score for a normal image to be attacked
    #[arg(long, default_value_t = 0.1)]
    pub normal_max: f64,

    /// Score the final image must cross (strictly) for success
    #[arg(long, default_value_t = 0.5)]
    pub success_threshold: f64,

    /// Strong-success threshold for mitosis-to-normal attacks
    #[arg(long, default_value_t = 0.05)]
    pub strong_minimize: f64,

    /// Strong-success threshold for normal-to-mitosis attacks
    #[arg(long, default_value_t = 0.95)]
    pub strong_maximize: f64,

    /// Stop each attack as soon as it reaches its strong threshold
    #[arg(long)]
    pub early_stop_on_strong: bool,

    /// Attacks run concurrently
    #[arg(long, value_name = "N", default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub parallel: u64,

    /// Wall-clock limit after which no new attack starts, e.g. 90s, 2h, 5days [default: none]
    #[arg(long, value_parser = humantime::parse_duration)]
    pub budget: Option<Duration>,

    /// Output directory; an existing results.csv there is resumed
    #[arg(long, value_name = "DIR", default_value = "campaign-out")]
    pub out_dir: PathBuf,

    /// Also write convergence traces for these image ids
    #[arg(long = "trace-id", value_name = "ID")]
    pub trace_ids: Vec<String>,
}

pub fn run(args: CampaignArgs) -> anyhow::Result<ExitCode> {
    let rule = FilterRule {
        mitosis_min: args.mitosis_min,
        normal_max: args.normal_max,
    };
    let config = CampaignConfig {
        direction: args.direction.direction(),
        de: args.de.config(),
        success_threshold: args.success_threshold,
        strong_minimize: args.strong_minimize,
        strong_maximize: args.strong_maximize,
        early_stop_on_strong: args.early_stop_on_strong,
        seed: args.de.seed,
        parallelism: args.parallel as usize,
        budget: args.budget,
    };
    let entries = load_dataset(&args.input)?;
    let oracle = args.oracle.build()?;
    tracing::info!(images = entries.len(), oracle = %args.oracle.describe(), "scoring dataset");

    let filtered = filter_dataset(&entries, &oracle, rule);
    for (entry, reason) in &filtered.failed {
        tracing::warn!(image_id = %entry.image_id, %reason, "could not score image");
    }
    tracing::info!(
        eligible = filtered.eligible.len(),
        excluded = filtered.excluded.len(),
        failed = filtered.failed.len(),
        "filtered dataset"
    );

    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        tracing::warn!(error = %e, "could not install Ctrl-C handler");
    }

    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let output = CampaignOutput::in_dir(&args.out_dir);
    let run = run_campaign(&filtered.eligible, &oracle, &config, &output, Some(&cancel))?;
    log_oracle_stats(&oracle);

    let stats_path = args.out_dir.join("stats.json");
    write_json(&stats_path, &run.report)?;
    emit_boxplots(&run.report, &args.out_dir)?;
    for id in &args.trace_ids {
        match run.records.iter().find(|r| &r.image_id == id) {
            Some(record) => {
                emit_trace(id, &record.trace, &args.out_dir)?;
            }
            None => tracing::warn!(image_id = %id, "no attack record for requested trace"),
        }
    }

    let summary = json!({
        "results": output.results_csv,
        "traces": output.traces_csv,
        "stats": stats_path,
        "images": entries.len(),
        "eligible": filtered.eligible.len(),
        "unscored": filtered.failed.len(),
        "attacked": run.records.len(),
        "resumed": run.resumed,
        "rows": run.rows.len(),
        "truncated": run.truncated,
        "report": run.report,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if run.truncated {
        tracing::warn!("campaign stopped before every image was attacked; rerun to resume");
        return Ok(ExitCode::from(crate::EXIT_TRUNCATED));
    }
    Ok(ExitCode::SUCCESS)
}
