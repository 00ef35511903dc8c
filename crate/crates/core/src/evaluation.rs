//! Scoring a snapshot against a labeled frame stream.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::activity::{classify_activity, ActivityAggregator, ActivityEvent};
use crate::error::Result;
use crate::ingest::LabeledFrame;
use crate::recognizer::run_unit_pipeline;
use crate::registry::ModelSnapshot;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockOutcome {
    pub event: ActivityEvent,
    /// Activity covering more than half of the block's windows, if any.
    pub truth: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamReport {
    /// Windows with a single ground-truth pattern.
    pub unit_windows: usize,
    pub unit_correct: usize,
    pub blocks: Vec<BlockOutcome>,
}

impl StreamReport {
    pub fn unit_accuracy(&self) -> Option<f64> {
        (self.unit_windows > 0).then(|| self.unit_correct as f64 / self.unit_windows as f64)
    }

    /// Accuracy over blocks that have a ground-truth activity.
    pub fn block_accuracy(&self) -> Option<f64> {
        let scored: Vec<&BlockOutcome> = self.blocks.iter().filter(|b| b.truth.is_some()).collect();
        (!scored.is_empty()).then(|| {
            scored.iter().filter(|b| b.truth.as_deref() == Some(b.event.label.as_str())).count() as f64
                / scored.len() as f64
        })
    }
}

/// Runs the full pipeline over `frames` and compares raw unit labels and
/// activity blocks with the frames' ground truth.
pub fn evaluate_stream<I>(frames: I, snapshot: Arc<ModelSnapshot>) -> Result<StreamReport>
where
    I: IntoIterator<Item = Result<LabeledFrame>>,
{
    let mut agg = ActivityAggregator::new(snapshot.patterns.clone(), snapshot.seq_len, snapshot.step_ms())?;
    let mut report = StreamReport { unit_windows: 0, unit_correct: 0, blocks: Vec::new() };
    let mut block_truth: Vec<Option<String>> = Vec::new();
    let cfg = snapshot.recognizer_config();
    for step in run_unit_pipeline(frames, snapshot.clone(), cfg)? {
        let step = step?;
        if let Some(p) = &step.truth_pattern {
            report.unit_windows += 1;
            report.unit_correct += (*p == step.event.raw_label) as usize;
        }
        if step.event.voted_label.is_some() {
            block_truth.push(step.truth_activity.clone());
        }
        if let Some(h) = agg.push(&step.event)? {
            let truth = majority(&block_truth);
            block_truth.clear();
            if let Some(model) = &snapshot.activity {
                report.blocks.push(BlockOutcome { event: classify_activity(&h, model)?, truth });
            }
        }
    }
    Ok(report)
}

fn majority(labels: &[Option<String>]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels.iter().flatten() {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    counts.into_iter().find(|(_, c)| 2 * c > labels.len()).map(|(l, _)| l.to_string())
}
