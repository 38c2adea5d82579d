//! Batch attacks over a labeled tile dataset.
//!
//! A campaign loads entries (directory layout or CSV manifest), keeps those
//! the classifier already labels confidently, attacks each with a seed
//! derived from `(campaign seed, image_id)`, streams one CSV row per attack
//! and aggregates the rows into a [`CampaignReport`].

pub mod plots;
pub mod results;
pub mod stats;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attack::{run_attack, AttackConfig, AttackDirection, AttackRecord};
use crate::evolution::DeConfig;
use crate::imaging::{decode_png, ImagingError, RgbImage};
use crate::oracle::{Oracle, ScoreValue};
use results::{AppendSink, ResultRow, ResultsError, RESULT_COLUMNS, TRACE_COLUMNS};
pub use stats::{color_histogram, summarize, CampaignReport, ColorHistogram, SummaryStats};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Results(#[from] ResultsError),
    #[error("invalid campaign configuration: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Mitosis,
    Normal,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Mitosis => "mitosis",
            Label::Normal => "normal",
        }
    }

    /// Mitosis tiles are pushed toward normal and vice versa.
    pub fn attack_direction(self) -> AttackDirection {
        match self {
            Label::Mitosis => AttackDirection::MitosisToNormal,
            Label::Normal => AttackDirection::NormalToMitosis,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mitosis" => Ok(Label::Mitosis),
            "normal" => Ok(Label::Normal),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub image_id: String,
    pub path: PathBuf,
    pub label: Label,
}

impl DatasetEntry {
    pub fn load_image(&self) -> Result<RgbImage, CampaignError> {
        let bytes = fs::read(&self.path).map_err(io_err(&self.path))?;
        decode_png(&bytes).map_err(|e: ImagingError| CampaignError::Io {
            path: self.path.clone(),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })
    }
}

fn check_unique(entries: &[DatasetEntry]) -> Result<(), CampaignError> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.image_id.as_str()) {
            return Err(CampaignError::DuplicateId(e.image_id.clone()));
        }
    }
    Ok(())
}

/// Reads `mitosis/*.png` and `normal/*.png`; the file stem is the image id.
pub fn load_directory(dir: &Path) -> Result<Vec<DatasetEntry>, CampaignError> {
    let mut entries = Vec::new();
    for label in [Label::Mitosis, Label::Normal] {
        let sub = dir.join(label.as_str());
        if !sub.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(io_err(&sub))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for path in files {
            let image_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            entries.push(DatasetEntry { image_id, path, label });
        }
    }
    if entries.is_empty() && !dir.join("mitosis").is_dir() && !dir.join("normal").is_dir() {
        return Err(CampaignError::Manifest {
            path: dir.to_path_buf(),
            message: "expected mitosis/ and/or normal/ subdirectories".into(),
        });
    }
    check_unique(&entries)?;
    Ok(entries)
}

/// Reads an `image_id,path,label` manifest. Relative paths resolve against
/// the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<DatasetEntry>, CampaignError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = |message: String| CampaignError::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if !header.iter().eq(["image_id", "path", "label"]) {
        return Err(bad(format!(
            "expected columns image_id,path,label, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        let label = record[2].parse().map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        let rel = PathBuf::from(&record[1]);
        entries.push(DatasetEntry {
            image_id: record[0].to_string(),
            path: if rel.is_absolute() { rel } else { base.join(rel) },
            label,
        });
    }
    check_unique(&entries)?;
    Ok(entries)
}

/// Directory layout or CSV manifest, depending on what `path` is.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetEntry>, CampaignError> {
    if path.is_dir() {
        load_directory(path)
    } else {
        load_manifest(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterRule {
    pub mitosis_min: f64,
    pub normal_max: f64,
}

impl Default for FilterRule {
    fn default() -> Self {
        Self {
            mitosis_min: 0.9,
            normal_max: 0.1,
        }
    }
}

impl FilterRule {
    /// Inclusive on both sides: mitosis needs `score >= mitosis_min`,
    /// normal needs `score <= normal_max`.
    pub fn keeps(&self, label: Label, score: f64) -> bool {
        match label {
            Label::Mitosis => score >= self.mitosis_min,
            Label::Normal => score <= self.normal_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EligibleEntry {
    pub entry: DatasetEntry,
    pub score: ScoreValue,
}

#[derive(Debug, Default)]
pub struct FilterResult {
    pub eligible: Vec<EligibleEntry>,
    pub excluded: Vec<EligibleEntry>,
    /// Entries that could not be loaded or scored, with the reason.
    pub failed: Vec<(DatasetEntry, String)>,
}

/// Scores every entry once and keeps the confidently labeled ones.
pub fn filter_dataset<O: Oracle + ?Sized>(entries: &[DatasetEntry], oracle: &O, rule: FilterRule) -> FilterResult {
    let mut out = FilterResult::default();
    for entry in entries {
        let scored = entry
            .load_image()
            .map_err(|e| e.to_string())
            .and_then(|img| oracle.score(&img).map_err(|e| e.to_string()));
        match scored {
            Ok(score) => {
                let item = EligibleEntry {
                    entry: entry.clone(),
                    score,
                };
                if rule.keeps(entry.label, score.get()) {
                    out.eligible.push(item);
                } else {
                    out.excluded.push(item);
                }
            }
            Err(reason) => {
                tracing::warn!(image_id = %entry.image_id, %reason, "skipping entry");
                out.failed.push((entry.clone(), reason));
            }
        }
    }
    out
}

/// Per-image DE seed: the first eight bytes of `sha256(seed_le || image_id)`.
pub fn derive_seed(campaign_seed: u64, image_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(campaign_seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    /// `None` attacks every eligible entry in its label's direction.
    pub direction: Option<AttackDirection>,
    /// Template for every attack; `rng_seed` is replaced per image.
    pub de: DeConfig,
    pub success_threshold: f64,
    /// Strong thresholds per direction.
    pub strong_minimize: f64,
    pub strong_maximize: f64,
    pub early_stop_on_strong: bool,
    pub seed: u64,
    pub parallelism: usize,
    /// No new attack starts once this much wall-clock time has passed.
    pub budget: Option<Duration>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            direction: None,
            de: DeConfig::default(),
            success_threshold: 0.5,
            strong_minimize: 0.05,
            strong_maximize: 0.95,
            early_stop_on_strong: false,
            seed: 0,
            parallelism: 4,
            budget: None,
        }
    }
}

impl CampaignConfig {
    pub fn attack_config(&self, direction: AttackDirection, image_id: &str) -> AttackConfig {
        AttackConfig {
            direction,
            de: DeConfig {
                rng_seed: derive_seed(self.seed, image_id),
                ..self.de.clone()
            },
            success_threshold: self.success_threshold,
            strong_threshold: match direction {
                AttackDirection::MitosisToNormal => self.strong_minimize,
                AttackDirection::NormalToMitosis => self.strong_maximize,
            },
            early_stop_on_strong: self.early_stop_on_strong,
        }
    }

    fn validate(&self) -> Result<(), CampaignError> {
        if self.parallelism == 0 {
            return Err(CampaignError::Config("parallelism must be at least 1".into()));
        }
        for direction in [AttackDirection::MitosisToNormal, AttackDirection::NormalToMitosis] {
            self.attack_config(direction, "")
                .validate()
                .map_err(|e| CampaignError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Where a campaign writes. Traces go to `traces.csv` beside the results;
/// adversarial PNGs for successful attacks go to `adversarial_dir` if set.
#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub results_csv: PathBuf,
    pub traces_csv: PathBuf,
    pub adversarial_dir: Option<PathBuf>,
}

impl CampaignOutput {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            results_csv: dir.join("results.csv"),
            traces_csv: dir.join("traces.csv"),
            adversarial_dir: Some(dir.join("adversarial")),
        }
    }
}

#[derive(Debug)]
pub struct CampaignRun {
    /// Aggregates over every row in the results file, including resumed ones.
    pub report: CampaignReport,
    pub rows: Vec<ResultRow>,
    /// Records produced by this invocation.
    pub records: Vec<AttackRecord>,
    /// Entries skipped because the results file already had them.
    pub resumed: usize,
    /// True when the budget or a cancellation left entries unattacked.
    pub truncated: bool,
}

enum WorkerMessage {
    Done(AttackRecord, Label),
    Failed(ResultRow, String),
}

/// Runs attacks over `entries` with bounded parallelism.
///
/// Rows are appended to `output.results_csv` as attacks finish; ids already
/// present there are skipped. When every pending entry has been handled the
/// results and traces files are rewritten sorted by image id, so outputs do
/// not depend on scheduling.
pub fn run_campaign<O: Oracle + ?Sized>(
    entries: &[EligibleEntry],
    oracle: &O,
    config: &CampaignConfig,
    output: &CampaignOutput,
    cancel: Option<&AtomicBool>,
) -> Result<CampaignRun, CampaignError> {
    config.validate()?;
    let started = Instant::now();

    let mut existing = if output.results_csv.exists()
        && fs::metadata(&output.results_csv)
            .map_err(io_err(&output.results_csv))?
            .len()
            > 0
    {
        results::read_results_file(&output.results_csv)?
    } else {
        Vec::new()
    };
    let done: HashSet<&str> = existing.iter().map(|r| r.image_id.as_str()).collect();
    let selected = entries
        .iter()
        .filter(|e| config.direction.is_none_or(|d| d == e.entry.label.attack_direction()));
    let (skipped, pending): (Vec<&EligibleEntry>, Vec<&EligibleEntry>) =
        selected.partition(|e| done.contains(e.entry.image_id.as_str()));
    let resumed = skipped.len();

    for path in [&output.results_csv, &output.traces_csv] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let mut results_sink = AppendSink::open(&output.results_csv, &RESULT_COLUMNS)?;
    let mut traces_sink = AppendSink::open(&output.traces_csv, &TRACE_COLUMNS)?;

    let next = AtomicUsize::new(0);
    let stop =
        || cancel.is_some_and(|c| c.load(Ordering::Relaxed)) || config.budget.is_some_and(|b| started.elapsed() >= b);
    let (tx, rx) = mpsc::channel::<WorkerMessage>();
    let mut records = Vec::new();
    let mut new_rows = Vec::new();
    let total = pending.len();

    let sink_result: Result<(), CampaignError> = std::thread::scope(|scope| {
        for _ in 0..config.parallelism.min(total) {
            let tx = tx.clone();
            let (pending, next, stop) = (&pending, &next, &stop);
            scope.spawn(move || loop {
                if stop() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = pending.get(i) else { break };
                let msg = attack_entry(item, oracle, config, output.adversarial_dir.as_deref());
                if tx.send(msg).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for msg in rx {
            let row = match msg {
                WorkerMessage::Done(record, label) => {
                    traces_sink.write_trace(&record.image_id, &record.trace)?;
                    let row = ResultRow::from_record(&record, label);
                    records.push(record);
                    row
                }
                WorkerMessage::Failed(row, reason) => {
                    tracing::warn!(image_id = %row.image_id, %reason, "attack failed");
                    row
                }
            };
            results_sink.write_row(&row)?;
            new_rows.push(row);
            tracing::info!(
                done = new_rows.len(),
                total,
                image_id = %new_rows.last().map(|r| r.image_id.as_str()).unwrap_or(""),
                "attack finished"
            );
        }
        Ok(())
    });
    sink_result?;
    drop((results_sink, traces_sink));

    let truncated = new_rows.len() < total;
    existing.extend(new_rows);
    let mut rows = existing;
    rows.sort_by(|a, b| a.image_id.cmp(&b.image_id).then(a.direction.cmp(&b.direction)));
    normalize_outputs(output, &rows)?;
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    Ok(CampaignRun {
        report: CampaignReport::from_rows(&rows),
        rows,
        records,
        resumed,
        truncated,
    })
}

fn attack_entry<O: Oracle + ?Sized>(
    item: &EligibleEntry,
    oracle: &O,
    config: &CampaignConfig,
    adversarial_dir: Option<&Path>,
) -> WorkerMessage {
    let entry = &item.entry;
    let direction = entry.label.attack_direction();
    let attack = config.attack_config(direction, &entry.image_id);
    let failed = |reason: String| {
        WorkerMessage::Failed(
            ResultRow::errored(
                &entry.image_id,
                entry.label,
                direction,
                item.score.get(),
                attack.de.clone(),
            ),
            reason,
        )
    };
    let image = match entry.load_image() {
        Ok(img) => img,
        Err(e) => return failed(e.to_string()),
    };
    match run_attack(&entry.image_id, &image, oracle, &attack) {
        Ok(record) => {
            if let Some(dir) = adversarial_dir.filter(|_| record.outcome.is_success()) {
                if let Err(e) = plots::emit_adversarial(&record.image_id, &image, &record.best_perturbation, dir) {
                    tracing::warn!(image_id = %record.image_id, error = %e, "could not write adversarial image");
                }
            }
            WorkerMessage::Done(record, entry.label)
        }
        Err(e) => failed(e.to_string()),
    }
}

/// Rewrites results and traces sorted by image id via temp-file rename.
fn normalize_outputs(output: &CampaignOutput, rows: &[ResultRow]) -> Result<(), CampaignError> {
    let tmp = output.results_csv.with_extension("csv.tmp");
    {
        let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        results::write_results(io::BufWriter::new(file), rows)?;
    }
    fs::rename(&tmp, &output.results_csv).map_err(io_err(&output.results_csv))?;

    let mut points = results::read_traces_file(&output.traces_csv)?;
    points.sort_by(|a, b| a.image_id.cmp(&b.image_id).then(a.iteration.cmp(&b.iteration)));
    let tmp = output.traces_csv.with_extension("csv.tmp");
    {
        let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        results::write_traces(io::BufWriter::new(file), &points)?;
    }
    fs::rename(&tmp, &output.traces_csv).map_err(io_err(&output.traces_csv))?;
    Ok(())
}
