//! Unit-pattern layer: density-score each window for novelty, classify it
//! with the unit forest, and smooth the raw labels with a majority vote.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector, WindowConfig, Windower};
use crate::ingest::LabeledFrame;
use crate::novelty::{NoveltyEvent, NoveltyState};
use crate::registry::ModelSnapshot;

/// Most frequent label; ties go to whichever tied label occurs last.
pub fn majority_vote<S: AsRef<str>>(labels: &[S]) -> Option<&str> {
    let mut best: Option<(&str, usize, usize)> = None; // label, count, last index
    for (i, l) in labels.iter().enumerate() {
        let l = l.as_ref();
        let count = labels.iter().filter(|x| x.as_ref() == l).count();
        let last = labels.iter().rposition(|x| x.as_ref() == l).unwrap_or(i);
        let better = match best {
            None => true,
            Some((_, c, li)) => count > c || (count == c && last > li),
        };
        if better {
            best = Some((l, count, last));
        }
    }
    best.map(|(l, _, _)| l)
}

#[derive(Clone, Debug)]
pub struct VoteBuffer {
    capacity: usize,
    disjoint: bool,
    entries: VecDeque<String>,
}

impl VoteBuffer {
    pub fn new(capacity: usize) -> Self {
        VoteBuffer { capacity: capacity.max(1), disjoint: false, entries: VecDeque::new() }
    }

    /// Emits one vote per completed block of `capacity` labels instead of
    /// one per label.
    pub fn disjoint(capacity: usize) -> Self {
        VoteBuffer { disjoint: true, ..VoteBuffer::new(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, label: impl Into<String>) -> Option<String> {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(label.into());
        if self.entries.len() < self.capacity {
            return None;
        }
        let labels: Vec<&String> = self.entries.iter().collect();
        let voted = majority_vote(&labels).map(str::to_string);
        if self.disjoint {
            self.entries.clear();
        }
        voted
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    pub vote_capacity: usize,
    pub disjoint_votes: bool,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig { vote_capacity: 3, disjoint_votes: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitPatternEvent {
    pub t_ms: u64,
    pub raw_label: String,
    pub voted_label: Option<String>,
    /// Winning vote fraction of the unit forest.
    pub confidence: f64,
    /// Mixture log-density of the window's projected features.
    pub score: f64,
}

/// Per-session recognition state over an atomically swappable snapshot.
pub struct Recognizer {
    snapshot: Option<Arc<ModelSnapshot>>,
    votes: VoteBuffer,
    novelty: NoveltyState,
}

impl Recognizer {
    pub fn new(snapshot: Arc<ModelSnapshot>, cfg: RecognizerConfig) -> Self {
        let mut r = Recognizer::untrained(cfg);
        r.snapshot = Some(snapshot);
        r
    }

    pub fn untrained(cfg: RecognizerConfig) -> Self {
        let votes = if cfg.disjoint_votes {
            VoteBuffer::disjoint(cfg.vote_capacity)
        } else {
            VoteBuffer::new(cfg.vote_capacity)
        };
        Recognizer { snapshot: None, votes, novelty: NoveltyState::new() }
    }

    pub fn snapshot(&self) -> Option<&Arc<ModelSnapshot>> {
        self.snapshot.as_ref()
    }

    /// Replaces the models; takes effect from the next window.
    pub fn swap_snapshot(&mut self, snapshot: Arc<ModelSnapshot>) {
        self.snapshot = Some(snapshot);
    }

    pub fn novelty(&self) -> &NoveltyState {
        &self.novelty
    }

    pub fn novelty_mut(&mut self) -> &mut NoveltyState {
        &mut self.novelty
    }

    /// Scores, classifies and votes on one window's features.
    pub fn classify_window(&mut self, fv: &FeatureVector) -> Result<(UnitPatternEvent, Option<NoveltyEvent>)> {
        let snap = self.snapshot.clone().ok_or_else(|| Error::state("no trained models loaded"))?;
        let score = snap.gmm.log_pdf(&fv.project_27())?;
        let novelty = if self.novelty.mode() == crate::novelty::Mode::Collecting {
            Some(self.novelty.collect_step(fv, &snap.novelty)?)
        } else {
            self.novelty.step(score, fv, &snap.novelty)?
        };
        let pred = snap.unit_forest.predict(&fv.values)?;
        let raw_label = snap.unit_forest.label_names[pred.label].clone();
        let voted_label = self.votes.push(raw_label.clone());
        Ok((
            UnitPatternEvent {
                t_ms: fv.window_start_t_ms,
                raw_label,
                voted_label,
                confidence: pred.confidence(),
                score,
            },
            novelty,
        ))
    }
}

/// Output of the unit pipeline for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitStep {
    pub event: UnitPatternEvent,
    pub novelty: Option<NoveltyEvent>,
    pub features: FeatureVector,
    /// Ground-truth labels of the window, when the source carries them.
    pub truth_pattern: Option<String>,
    pub truth_activity: Option<String>,
}

/// Frames → windows → features → [`Recognizer::classify_window`].
pub struct UnitPipeline<I> {
    frames: I,
    windower: Windower,
    recognizer: Recognizer,
    failed: bool,
}

impl<I> UnitPipeline<I> {
    pub fn recognizer(&self) -> &Recognizer {
        &self.recognizer
    }

    pub fn recognizer_mut(&mut self) -> &mut Recognizer {
        &mut self.recognizer
    }
}

pub fn run_unit_pipeline<I>(
    frames: I,
    snapshot: Arc<ModelSnapshot>,
    cfg: RecognizerConfig,
) -> Result<UnitPipeline<I::IntoIter>>
where
    I: IntoIterator<Item = Result<LabeledFrame>>,
{
    let window: WindowConfig = snapshot.window;
    Ok(UnitPipeline {
        frames: frames.into_iter(),
        windower: Windower::new(window)?,
        recognizer: Recognizer::new(snapshot, cfg),
        failed: false,
    })
}

impl<I> Iterator for UnitPipeline<I>
where
    I: Iterator<Item = Result<LabeledFrame>>,
{
    type Item = Result<UnitStep>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let frame = match self.frames.next()? {
                Ok(f) => f,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            };
            let Some(w) = self.windower.push(frame) else { continue };
            let res = extract_features(&w.window).and_then(|fv| {
                let (event, novelty) = self.recognizer.classify_window(&fv)?;
                Ok(UnitStep { event, novelty, features: fv, truth_pattern: w.pattern, truth_activity: w.activity })
            });
            if res.is_err() {
                self.failed = true;
            }
            return Some(res);
        }
    }
}
