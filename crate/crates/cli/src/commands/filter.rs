use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use onepixel_core::campaign::{filter_dataset, load_dataset, EligibleEntry, FilterRule};
use serde_json::{json, Value};

use crate::args::{log_oracle_stats, OracleArgs};

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Dataset directory or CSV manifest
    pub input: PathBuf,

    #[command(flatten)]
    pub oracle: OracleArgs,

    /// Minimum score for a mitosis image to be kept
    #[arg(long, default_value_t = 0.9)]
    pub mitosis_min: f64,

    /// Maximum score for a normal image to be kept
    #[arg(long, default_value_t = 0.1)]
    pub normal_max: f64,

    /// Write the kept entries as a manifest usable by `campaign`
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

fn describe(e: &EligibleEntry) -> Value {
    json!({
        "image_id": e.entry.image_id,
        "label": e.entry.label,
        "path": e.entry.path,
        "score": e.score,
    })
}

pub fn run(args: FilterArgs) -> anyhow::Result<ExitCode> {
    let entries = load_dataset(&args.input)?;
    let oracle = args.oracle.build()?;
    let rule = FilterRule {
        mitosis_min: args.mitosis_min,
        normal_max: args.normal_max,
    };
    let result = filter_dataset(&entries, &oracle, rule);
    log_oracle_stats(&oracle);

    if let Some(path) = &args.out {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["image_id", "path", "label"])?;
        for e in &result.eligible {
            let full = std::path::absolute(&e.entry.path)?;
            w.write_record([
                e.entry.image_id.as_str(),
                &full.to_string_lossy(),
                e.entry.label.as_str(),
            ])?;
        }
        w.flush()?;
    }
    let summary = json!({
        "eligible": result.eligible.iter().map(describe).collect::<Vec<_>>(),
        "excluded": result.excluded.iter().map(describe).collect::<Vec<_>>(),
        "failed": result
            .failed
            .iter()
            .map(|(e, reason)| json!({ "image_id": e.image_id, "path": e.path, "error": reason }))
            .collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}
