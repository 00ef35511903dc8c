//! Activity layer: bag-of-words histograms over fixed blocks of voted unit
//! patterns, a forest over the raw counts, and a minute-resolution timeline.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig, LabeledSet, RandomForest};
use crate::recognizer::UnitPatternEvent;

pub const DEFAULT_SEQ_LEN: usize = 120;
const MINUTE_MS: u64 = 60_000;
const MINUTES_PER_DAY: u64 = 1440;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowHistogram {
    /// Occurrences per pattern, in vocabulary order.
    pub counts: Vec<u32>,
    pub seq_len: usize,
    pub window_start_t_ms: u64,
    pub window_end_t_ms: u64,
}

impl BowHistogram {
    pub fn features(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Counts each vocabulary entry in `labels`.
pub fn bow<S: AsRef<str>>(labels: &[S], vocabulary: &[String]) -> Result<BowHistogram> {
    let mut counts = vec![0u32; vocabulary.len()];
    for l in labels {
        let l = l.as_ref();
        let i = vocabulary
            .iter()
            .position(|v| v == l)
            .ok_or_else(|| Error::argument(format!("unit pattern {l:?} not in vocabulary")))?;
        counts[i] += 1;
    }
    Ok(BowHistogram { counts, seq_len: labels.len(), window_start_t_ms: 0, window_end_t_ms: 0 })
}

/// Activity forest together with the pattern vocabulary its columns follow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    pub vocabulary: Vec<String>,
    pub forest: RandomForest,
}

impl ActivityModel {
    pub fn activities(&self) -> &[String] {
        &self.forest.label_names
    }
}

/// One training example: the activity and its histogram counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSample {
    pub activity: String,
    pub counts: Vec<u32>,
}

pub fn fit_activity_model(
    samples: &[HistogramSample],
    vocabulary: &[String],
    activities: &[String],
    cfg: &ForestConfig,
) -> Result<ActivityModel> {
    if let Some(s) = samples.iter().find(|s| s.counts.len() != vocabulary.len()) {
        return Err(Error::argument(format!(
            "histogram has {} counts for a vocabulary of {}",
            s.counts.len(),
            vocabulary.len()
        )));
    }
    let x: Vec<Vec<f64>> = samples.iter().map(|s| s.counts.iter().map(|&c| c as f64).collect()).collect();
    let labels: Vec<&str> = samples.iter().map(|s| s.activity.as_str()).collect();
    let data = LabeledSet::from_labels(x, &labels, activities)?;
    let forest = fit_forest(&data, cfg)?;
    Ok(ActivityModel { vocabulary: vocabulary.to_vec(), forest })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub t0_ms: u64,
    pub t1_ms: u64,
    pub label: String,
    pub confidence: f64,
}

/// Classifies a histogram. A model trained before patterns were appended to
/// the vocabulary reads only its own leading columns.
pub fn classify_activity(h: &BowHistogram, model: &ActivityModel) -> Result<ActivityEvent> {
    let n = model.vocabulary.len();
    if h.counts.len() < n {
        return Err(Error::argument(format!("histogram over {} patterns, activity model expects {n}", h.counts.len())));
    }
    let x: Vec<f64> = h.counts[..n].iter().map(|&c| c as f64).collect();
    let p = model.forest.predict(&x)?;
    Ok(ActivityEvent {
        t0_ms: h.window_start_t_ms,
        t1_ms: h.window_end_t_ms,
        label: model.forest.label_names[p.label].clone(),
        confidence: p.confidence(),
    })
}

/// Gathers voted labels into disjoint blocks of `seq_len`.
#[derive(Clone, Debug)]
pub struct ActivityAggregator {
    seq_len: usize,
    step_ms: u64,
    vocabulary: Vec<String>,
    block: Vec<(u64, String)>,
}

impl ActivityAggregator {
    pub fn new(vocabulary: Vec<String>, seq_len: usize, step_ms: u64) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::argument("seq_len must be >= 1"));
        }
        Ok(ActivityAggregator { seq_len, step_ms, vocabulary, block: Vec::with_capacity(seq_len) })
    }

    pub fn pending(&self) -> usize {
        self.block.len()
    }

    /// Adds one event; returns the block histogram once `seq_len` voted
    /// labels have accumulated. Events without a voted label are skipped.
    pub fn push(&mut self, ev: &UnitPatternEvent) -> Result<Option<BowHistogram>> {
        let Some(label) = &ev.voted_label else { return Ok(None) };
        self.block.push((ev.t_ms, label.clone()));
        if self.block.len() < self.seq_len {
            return Ok(None);
        }
        let block = std::mem::take(&mut self.block);
        let labels: Vec<&str> = block.iter().map(|(_, l)| l.as_str()).collect();
        let mut h = bow(&labels, &self.vocabulary)?;
        h.window_start_t_ms = block[0].0;
        h.window_end_t_ms = block[block.len() - 1].0 + self.step_ms;
        Ok(Some(h))
    }

    /// Switches to a longer vocabulary after retraining; existing labels keep
    /// their columns.
    pub fn set_vocabulary(&mut self, vocabulary: Vec<String>) {
        self.vocabulary = vocabulary;
    }
}

/// Classifies every full block of an event stream.
pub fn run_activity_pipeline<'a, I>(
    events: I,
    model: &'a ActivityModel,
    vocabulary: Vec<String>,
    seq_len: usize,
    step_ms: u64,
) -> Result<impl Iterator<Item = Result<ActivityEvent>> + 'a>
where
    I: IntoIterator<Item = UnitPatternEvent> + 'a,
{
    let mut agg = ActivityAggregator::new(vocabulary, seq_len, step_ms)?;
    Ok(events.into_iter().filter_map(move |ev| match agg.push(&ev) {
        Ok(Some(h)) => Some(classify_activity(&h, model)),
        Ok(None) => None,
        Err(e) => Some(Err(e)),
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub date: NaiveDate,
    /// Minute of the day, 0..1440.
    pub minute: u32,
    pub activity: String,
    pub confidence: f64,
}

/// Quantizes event spans to wall-clock minutes. `origin_epoch_ms` is the
/// wall-clock time of stream offset 0. Where events overlap a minute, the
/// more confident one wins (the earlier one on ties).
pub fn record_timeline(events: &[ActivityEvent], origin_epoch_ms: i64) -> Vec<TimelineEntry> {
    let mut slots: BTreeMap<i64, (String, f64)> = BTreeMap::new();
    for ev in events {
        if ev.t1_ms <= ev.t0_ms {
            continue;
        }
        let first = (origin_epoch_ms + ev.t0_ms as i64).div_euclid(MINUTE_MS as i64);
        let last = (origin_epoch_ms + ev.t1_ms as i64 - 1).div_euclid(MINUTE_MS as i64);
        for m in first..=last {
            let replace = slots.get(&m).is_none_or(|(_, c)| ev.confidence > *c);
            if replace {
                slots.insert(m, (ev.label.clone(), ev.confidence));
            }
        }
    }
    slots
        .into_iter()
        .filter_map(|(m, (activity, confidence))| {
            let date = DateTime::from_timestamp(m * 60, 0)?.date_naive();
            let minute = m.rem_euclid(MINUTES_PER_DAY as i64) as u32;
            Some(TimelineEntry { date, minute, activity, confidence })
        })
        .collect()
}

/// CSV export: `date,minute,activity,confidence`.
pub fn write_timeline_csv<W: Write>(mut out: W, entries: &[TimelineEntry]) -> Result<()> {
    writeln!(out, "date,minute,activity,confidence")?;
    for e in entries {
        writeln!(out, "{},{},{},{}", e.date.format("%Y-%m-%d"), e.minute, e.activity, e.confidence)?;
    }
    Ok(())
}

/// Append-only store of activity events on wall-clock time, one JSON
/// object per line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimelineStore {
    path: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct StoredEvent {
    t0_epoch_ms: i64,
    t1_epoch_ms: i64,
    label: String,
    confidence: f64,
}

impl TimelineStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TimelineStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records `ev`, whose stream offsets are relative to `origin_epoch_ms`.
    pub fn append(&self, origin_epoch_ms: i64, ev: &ActivityEvent) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let rec = StoredEvent {
            t0_epoch_ms: origin_epoch_ms + ev.t0_ms as i64,
            t1_epoch_ms: origin_epoch_ms + ev.t1_ms as i64,
            label: ev.label.clone(),
            confidence: ev.confidence,
        };
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
        Ok(())
    }

    /// Minute timeline of everything recorded so far; empty when the store
    /// does not exist yet.
    pub fn timeline(&self) -> Result<Vec<TimelineEntry>> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: StoredEvent =
                serde_json::from_str(line).map_err(|e| Error::Row { row: i + 1, source: Box::new(e.into()) })?;
            if r.t0_epoch_ms < 0 || r.t1_epoch_ms < r.t0_epoch_ms {
                return Err(Error::Row { row: i + 1, source: Box::new(Error::Format("bad event span".into())) });
            }
            events.push(ActivityEvent {
                t0_ms: r.t0_epoch_ms as u64,
                t1_ms: r.t1_epoch_ms as u64,
                label: r.label,
                confidence: r.confidence,
            });
        }
        Ok(record_timeline(&events, 0))
    }
}
