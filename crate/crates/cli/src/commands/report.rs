use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use onepixel_core::campaign::plots::{emit_adversarial, emit_boxplots, emit_trace};
use onepixel_core::campaign::results::{read_results_file, read_traces_file};
use onepixel_core::campaign::{load_dataset, CampaignReport};

use crate::args::write_json;

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Campaign results CSV
    pub results: PathBuf,

    /// Also write the report to this JSON file
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

pub fn stats(args: StatsArgs) -> anyhow::Result<ExitCode> {
    let rows = read_results_file(&args.results).with_context(|| format!("reading {}", args.results.display()))?;
    let report = CampaignReport::from_rows(&rows);
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Campaign results CSV
    pub results: PathBuf,

    /// Traces CSV [default: traces.csv beside the results]
    #[arg(long, value_name = "CSV")]
    pub traces: Option<PathBuf>,

    /// Dataset the campaign ran on; needed for adversarial images
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,

    /// Render the trace and adversarial image for this id (repeatable)
    #[arg(long = "image-id", value_name = "ID")]
    pub image_ids: Vec<String>,

    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "plots")]
    pub out_dir: PathBuf,
}

pub fn render(args: RenderArgs) -> anyhow::Result<ExitCode> {
    let rows = read_results_file(&args.results).with_context(|| format!("reading {}", args.results.display()))?;
    let report = CampaignReport::from_rows(&rows);
    let mut written =
        emit_boxplots(&report, &args.out_dir).with_context(|| format!("writing to {}", args.out_dir.display()))?;

    if !args.image_ids.is_empty() {
        let traces_path = args
            .traces
            .clone()
            .unwrap_or_else(|| args.results.with_file_name("traces.csv"));
        let mut traces: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
        for p in read_traces_file(&traces_path).with_context(|| format!("reading {}", traces_path.display()))? {
            traces.entry(p.image_id).or_default().push((p.iteration, p.best_score));
        }
        let dataset = match &args.data {
            Some(path) => load_dataset(path)?,
            None => Vec::new(),
        };

        for id in &args.image_ids {
            let row = rows
                .iter()
                .find(|r| &r.image_id == id)
                .with_context(|| format!("image id `{id}` is not in {}", args.results.display()))?;
            let mut trace = traces
                .remove(id)
                .with_context(|| format!("no trace for `{id}` in {}", traces_path.display()))?;
            trace.sort_by_key(|&(i, _)| i);
            let scores: Vec<f64> = trace.into_iter().map(|(_, s)| s).collect();
            written.extend(emit_trace(id, &scores, &args.out_dir)?);

            let Some(perturbation) = &row.perturbation else {
                tracing::warn!(image_id = %id, "row has no perturbation; skipping adversarial image");
                continue;
            };
            match dataset.iter().find(|e| &e.image_id == id) {
                Some(entry) => {
                    let source = entry.load_image()?;
                    written.push(emit_adversarial(id, &source, perturbation, &args.out_dir)?);
                }
                None if args.data.is_none() => {
                    tracing::warn!(image_id = %id, "pass --data to render adversarial images");
                }
                None => anyhow::bail!("image id `{id}` is not in the dataset"),
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&written)?);
    Ok(ExitCode::SUCCESS)
}
