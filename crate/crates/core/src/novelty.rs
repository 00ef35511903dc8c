//! Dual-threshold novelty detection over per-window log-density scores, and
//! the sample-collection protocol that follows a confirmed new pattern.
//!
//! A window scoring at or above `theta_match` matches a known pattern; one
//! scoring below `theta_new` is unexplained. `consecutive_n` unexplained
//! windows in a row raise a candidate; the same run of matches marks the
//! stream as known. Scores between the thresholds reset both runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::gmm::GmmModel;

pub const MIN_CALIBRATION_SCORES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoveltyConfig {
    pub theta_match: f64,
    pub theta_new: f64,
    pub consecutive_n: usize,
    pub collect_target: usize,
}

impl NoveltyConfig {
    pub fn new(theta_match: f64, theta_new: f64) -> Self {
        NoveltyConfig { theta_match, theta_new, consecutive_n: 3, collect_target: 120 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_new < self.theta_match) {
            return Err(Error::argument(format!(
                "theta_new ({}) must be below theta_match ({})",
                self.theta_new, self.theta_match
            )));
        }
        if self.consecutive_n == 0 {
            return Err(Error::argument("consecutive_n must be >= 1"));
        }
        if self.collect_target < 2 {
            return Err(Error::argument("collect_target must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Known,
    Uncertain,
    CandidatePending,
    Collecting,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Known => "known",
            Mode::Uncertain => "uncertain",
            Mode::CandidatePending => "candidate_pending",
            Mode::Collecting => "collecting",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Save { name: String, activity: String },
    Ignore,
    NotOfInterest,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoveltyEvent {
    NoveltyDetected { candidate_id: u64, buffered: usize },
    CollectionProgress { collected: usize, target: usize },
    CollectionComplete { name: String, activity: String, vectors: Vec<FeatureVector> },
    CollectionCancelled { discarded: usize },
}

/// Region of projected feature space the operator marked as not of interest.
#[derive(Clone, Debug, PartialEq)]
pub struct SuppressedRegion {
    pub centroid: Vec<f64>,
    pub radius: f64,
}

impl SuppressedRegion {
    fn from_buffer(buf: &[FeatureVector]) -> Self {
        let pts: Vec<Vec<f64>> = buf.iter().map(FeatureVector::project_27).collect();
        let mut dists = Vec::new();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                dists.push(dist(&pts[i], &pts[j]));
            }
        }
        dists.sort_by(f64::total_cmp);
        let radius = match dists.len() {
            0 => 0.0,
            n if n % 2 == 1 => dists[n / 2],
            n => 0.5 * (dists[n / 2 - 1] + dists[n / 2]),
        };
        SuppressedRegion { centroid: centroid(&pts), radius }
    }
}

fn centroid(pts: &[Vec<f64>]) -> Vec<f64> {
    let mut c = vec![0.0; pts.first().map_or(0, Vec::len)];
    for p in pts {
        for (a, v) in c.iter_mut().zip(p) {
            *a += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= pts.len() as f64);
    c
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct NoveltyState {
    mode: Mode,
    low_run: usize,
    high_run: usize,
    // windows of the current low run, before they become a candidate
    run_buffer: Vec<FeatureVector>,
    candidate_buffer: Vec<FeatureVector>,
    pending_label: Option<(String, String)>,
    suppressed: Vec<SuppressedRegion>,
    candidates_raised: u64,
}

impl Default for NoveltyState {
    fn default() -> Self {
        NoveltyState {
            mode: Mode::Uncertain,
            low_run: 0,
            high_run: 0,
            run_buffer: Vec::new(),
            candidate_buffer: Vec::new(),
            pending_label: None,
            suppressed: Vec::new(),
            candidates_raised: 0,
        }
    }
}

impl NoveltyState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn low_run(&self) -> usize {
        self.low_run
    }

    pub fn high_run(&self) -> usize {
        self.high_run
    }

    pub fn candidate_buffer(&self) -> &[FeatureVector] {
        &self.candidate_buffer
    }

    pub fn suppressed(&self) -> &[SuppressedRegion] {
        &self.suppressed
    }

    /// Id of the most recently raised candidate.
    pub fn candidate_id(&self) -> u64 {
        self.candidates_raised
    }

    /// Vectors collected so far while in `Collecting`.
    pub fn progress(&self) -> usize {
        self.candidate_buffer.len()
    }

    fn reset_runs(&mut self) {
        self.low_run = 0;
        self.high_run = 0;
        self.run_buffer.clear();
    }

    fn is_suppressed(&self, buf: &[FeatureVector]) -> bool {
        if self.suppressed.is_empty() {
            return false;
        }
        let pts: Vec<Vec<f64>> = buf.iter().map(FeatureVector::project_27).collect();
        let c = centroid(&pts);
        self.suppressed.iter().any(|r| dist(&c, &r.centroid) <= r.radius)
    }

    /// Advances the state machine by one scored window. While a candidate
    /// awaits a decision the scores are ignored.
    pub fn step(&mut self, score: f64, fv: &FeatureVector, cfg: &NoveltyConfig) -> Result<Option<NoveltyEvent>> {
        match self.mode {
            Mode::Collecting => {
                return Err(Error::state("step called while collecting; use collect_step"));
            }
            Mode::CandidatePending => return Ok(None),
            Mode::Known | Mode::Uncertain => {}
        }
        if score >= cfg.theta_match {
            self.low_run = 0;
            self.run_buffer.clear();
            self.high_run += 1;
            if self.high_run >= cfg.consecutive_n {
                self.mode = Mode::Known;
            }
            return Ok(None);
        }
        if score >= cfg.theta_new {
            self.reset_runs();
            self.mode = Mode::Uncertain;
            return Ok(None);
        }
        self.high_run = 0;
        self.mode = Mode::Uncertain;
        self.low_run += 1;
        self.run_buffer.push(fv.clone());
        if self.low_run < cfg.consecutive_n {
            return Ok(None);
        }
        let buf = std::mem::take(&mut self.run_buffer);
        self.low_run = 0;
        if self.is_suppressed(&buf) {
            return Ok(None);
        }
        self.candidate_buffer = buf;
        self.mode = Mode::CandidatePending;
        self.candidates_raised += 1;
        Ok(Some(NoveltyEvent::NoveltyDetected {
            candidate_id: self.candidates_raised,
            buffered: self.candidate_buffer.len(),
        }))
    }

    pub fn resolve_candidate(&mut self, decision: Decision, cfg: &NoveltyConfig) -> Result<()> {
        if self.mode != Mode::CandidatePending {
            return Err(Error::state(format!("no candidate pending (mode is {})", self.mode)));
        }
        match decision {
            Decision::Save { name, activity } => {
                if name.trim().is_empty() || activity.trim().is_empty() {
                    return Err(Error::argument("pattern and activity names must be non-empty"));
                }
                self.candidate_buffer.truncate(cfg.collect_target);
                self.pending_label = Some((name, activity));
                self.mode = Mode::Collecting;
            }
            Decision::Ignore => {
                self.candidate_buffer.clear();
                self.mode = Mode::Uncertain;
            }
            Decision::NotOfInterest => {
                let region = SuppressedRegion::from_buffer(&self.candidate_buffer);
                self.suppressed.push(region);
                self.candidate_buffer.clear();
                self.mode = Mode::Uncertain;
            }
        }
        self.reset_runs();
        Ok(())
    }

    /// Adds one window to the collection in progress.
    pub fn collect_step(&mut self, fv: &FeatureVector, cfg: &NoveltyConfig) -> Result<NoveltyEvent> {
        if self.mode != Mode::Collecting {
            return Err(Error::state(format!("not collecting (mode is {})", self.mode)));
        }
        if self.candidate_buffer.len() < cfg.collect_target {
            self.candidate_buffer.push(fv.clone());
        }
        if self.candidate_buffer.len() < cfg.collect_target {
            return Ok(NoveltyEvent::CollectionProgress {
                collected: self.candidate_buffer.len(),
                target: cfg.collect_target,
            });
        }
        let (name, activity) = self.pending_label.take().unwrap_or_default();
        self.mode = Mode::Uncertain;
        self.reset_runs();
        Ok(NoveltyEvent::CollectionComplete { name, activity, vectors: std::mem::take(&mut self.candidate_buffer) })
    }

    pub fn cancel_collection(&mut self) -> Result<NoveltyEvent> {
        if self.mode != Mode::Collecting {
            return Err(Error::state(format!("not collecting (mode is {})", self.mode)));
        }
        let discarded = self.candidate_buffer.len();
        self.candidate_buffer.clear();
        self.pending_label = None;
        self.mode = Mode::Uncertain;
        self.reset_runs();
        Ok(NoveltyEvent::CollectionCancelled { discarded })
    }
}

/// Lower empirical quantile: at least `1 - q` of `sorted` is >= the result.
fn lower_quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    sorted[idx]
}

/// Derives both thresholds from the log-densities of the training windows:
/// `theta_match` is the `match_quantile` quantile and `theta_new` the
/// `new_quantile` quantile of the pooled scores.
pub fn calibrate_thresholds(
    training_scores: &[Vec<f64>],
    match_quantile: f64,
    new_quantile: f64,
) -> Result<NoveltyConfig> {
    if training_scores.is_empty() {
        return Err(Error::argument("no training scores"));
    }
    for q in [match_quantile, new_quantile] {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::argument(format!("quantile {q} outside [0, 1)")));
        }
    }
    for (i, s) in training_scores.iter().enumerate() {
        if s.len() < MIN_CALIBRATION_SCORES {
            return Err(Error::argument(format!(
                "pattern {i} has {} scores, need at least {MIN_CALIBRATION_SCORES}",
                s.len()
            )));
        }
        if s.iter().any(|v| v.is_nan()) {
            return Err(Error::argument(format!("pattern {i} has NaN scores")));
        }
    }
    let mut all: Vec<f64> = training_scores.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let theta_match = lower_quantile(&all, match_quantile);
    let mut theta_new = lower_quantile(&all, new_quantile);
    if !(theta_new < theta_match) {
        theta_new = theta_match - 1.0;
    }
    Ok(NoveltyConfig::new(theta_match, theta_new))
}

/// Log-density of every projected vector, grouped as given.
pub fn score_groups(model: &GmmModel, groups: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    groups.iter().map(|g| g.iter().map(|x| model.log_pdf(x)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LOW: f64 = -100.0;
    const MID: f64 = -20.0;
    const HIGH: f64 = 0.0;

    fn cfg() -> NoveltyConfig {
        NoveltyConfig::new(-10.0, -50.0)
    }

    fn fv(v: f64) -> FeatureVector {
        FeatureVector::new(0, vec![v; 36]).unwrap()
    }

    fn known() -> NoveltyState {
        let mut s = NoveltyState::new();
        for _ in 0..3 {
            s.step(HIGH, &fv(0.0), &cfg()).unwrap();
        }
        assert_eq!(s.mode(), Mode::Known);
        s
    }

    fn pending() -> NoveltyState {
        let mut s = known();
        for _ in 0..3 {
            s.step(LOW, &fv(1.0), &cfg()).unwrap();
        }
        assert_eq!(s.mode(), Mode::CandidatePending);
        s
    }

    #[test]
    fn three_lows_raise_candidate() {
        let mut s = known();
        assert_eq!(s.step(LOW, &fv(1.0), &cfg()).unwrap(), None);
        assert_eq!(s.step(LOW, &fv(1.0), &cfg()).unwrap(), None);
        let ev = s.step(LOW, &fv(1.0), &cfg()).unwrap();
        assert!(matches!(ev, Some(NoveltyEvent::NoveltyDetected { buffered: 3, .. })));
        assert_eq!(s.candidate_buffer().len(), 3);
        assert_eq!(s.low_run(), 0);
    }

    #[test]
    fn high_breaks_low_run() {
        let mut s = known();
        s.step(LOW, &fv(1.0), &cfg()).unwrap();
        s.step(LOW, &fv(1.0), &cfg()).unwrap();
        assert_eq!(s.step(HIGH, &fv(0.0), &cfg()).unwrap(), None);
        assert_eq!(s.low_run(), 0);
        assert_eq!(s.high_run(), 1);
    }

    #[test]
    fn match_keeps_known() {
        let mut s = known();
        assert_eq!(s.step(HIGH, &fv(0.0), &cfg()).unwrap(), None);
        assert_eq!(s.mode(), Mode::Known);
    }

    #[test]
    fn intermediate_resets_everything() {
        let mut s = known();
        s.step(LOW, &fv(1.0), &cfg()).unwrap();
        s.step(MID, &fv(1.0), &cfg()).unwrap();
        assert_eq!((s.low_run(), s.high_run(), s.mode()), (0, 0, Mode::Uncertain));
    }

    #[test]
    fn save_starts_collection() {
        let mut s = pending();
        s.resolve_candidate(Decision::Save { name: "boxing".into(), activity: "WORKOUT".into() }, &cfg()).unwrap();
        assert_eq!(s.mode(), Mode::Collecting);
        assert_eq!(s.progress(), 3);
        let ev = s.collect_step(&fv(1.0), &cfg()).unwrap();
        assert_eq!(ev, NoveltyEvent::CollectionProgress { collected: 4, target: 120 });
        for _ in 4..119 {
            s.collect_step(&fv(1.0), &cfg()).unwrap();
        }
        assert_eq!(s.progress(), 119);
        match s.collect_step(&fv(1.0), &cfg()).unwrap() {
            NoveltyEvent::CollectionComplete { name, activity, vectors } => {
                assert_eq!((name.as_str(), activity.as_str()), ("boxing", "WORKOUT"));
                assert_eq!(vectors.len(), 120);
            }
            e => panic!("{e:?}"),
        }
        assert_eq!(s.mode(), Mode::Uncertain);
        assert!(s.candidate_buffer().is_empty());
    }

    #[test]
    fn ignore_discards() {
        let mut s = pending();
        s.resolve_candidate(Decision::Ignore, &cfg()).unwrap();
        assert_eq!(s.mode(), Mode::Uncertain);
        assert!(s.candidate_buffer().is_empty());
    }

    #[test]
    fn cancel_collection_clears() {
        let mut s = pending();
        s.resolve_candidate(Decision::Save { name: "a".into(), activity: "B".into() }, &cfg()).unwrap();
        s.collect_step(&fv(1.0), &cfg()).unwrap();
        assert_eq!(s.cancel_collection().unwrap(), NoveltyEvent::CollectionCancelled { discarded: 4 });
        assert!(s.candidate_buffer().is_empty());
        assert_eq!(s.mode(), Mode::Uncertain);
    }

    #[test]
    fn guards() {
        let mut s = known();
        assert!(matches!(s.resolve_candidate(Decision::Ignore, &cfg()), Err(Error::State(_))));
        assert!(s.collect_step(&fv(0.0), &cfg()).is_err());
        let mut p = pending();
        p.resolve_candidate(Decision::Save { name: "x".into(), activity: "Y".into() }, &cfg()).unwrap();
        assert!(p.step(HIGH, &fv(0.0), &cfg()).is_err());
        let mut p = pending();
        assert!(p.resolve_candidate(Decision::Save { name: "".into(), activity: "Y".into() }, &cfg()).is_err());
        assert_eq!(p.mode(), Mode::CandidatePending);
    }

    #[test]
    fn pending_ignores_scores() {
        let mut s = pending();
        for _ in 0..5 {
            assert_eq!(s.step(LOW, &fv(1.0), &cfg()).unwrap(), None);
        }
        assert_eq!(s.candidate_buffer().len(), 3);
    }

    #[test]
    fn not_of_interest_suppresses_similar_candidates() {
        let vecs = [fv(1.0), fv(1.1), fv(0.9)];
        let mut s = NoveltyState::new();
        for v in &vecs {
            s.step(LOW, v, &cfg()).unwrap();
        }
        assert_eq!(s.mode(), Mode::CandidatePending);
        s.resolve_candidate(Decision::NotOfInterest, &cfg()).unwrap();
        assert_eq!(s.suppressed().len(), 1);

        // Same region again: suppressed.
        let mut events = Vec::new();
        for v in [fv(1.02), fv(0.97), fv(1.05)] {
            events.extend(s.step(LOW, &v, &cfg()).unwrap());
        }
        assert!(events.is_empty());
        assert_eq!(s.mode(), Mode::Uncertain);

        // A different region still triggers.
        for v in [fv(9.0), fv(9.1), fv(9.2)] {
            events.extend(s.step(LOW, &v, &cfg()).unwrap());
        }
        assert_eq!(events.len(), 1);
    }

    #[test]
    fn calibration_quantiles() {
        let scores: Vec<Vec<f64>> = (0..3).map(|p| (0..100).map(|i| (i + p * 100) as f64).collect()).collect();
        let c = calibrate_thresholds(&scores, 0.05, 0.001).unwrap();
        let all: Vec<f64> = scores.iter().flatten().copied().collect();
        let above = all.iter().filter(|s| **s >= c.theta_match).count();
        assert!(above as f64 >= 0.95 * all.len() as f64);
        assert!(c.theta_new < c.theta_match);
        c.validate().unwrap();
    }

    #[test]
    fn calibration_degenerate_and_errors() {
        let c = calibrate_thresholds(&[vec![-3.0; 40]], 0.05, 0.001).unwrap();
        assert_eq!(c.theta_match, -3.0);
        assert_eq!(c.theta_new, -4.0);
        assert!(calibrate_thresholds(&[vec![0.0; 19]], 0.05, 0.001).is_err());
    }

    /// Window formulation of the rule: index `i` fires when the last `n`
    /// scores are all unexplained and none of them belongs to an earlier
    /// firing's window.
    fn brute_force_fires(scores: &[f64], theta_new: f64, n: usize) -> Vec<usize> {
        let mut fires: Vec<usize> = Vec::new();
        for i in 0..scores.len() {
            if i + 1 < n {
                continue;
            }
            let window = &scores[i + 1 - n..=i];
            let fresh = fires.last().is_none_or(|&j| j + n <= i);
            if window.iter().all(|s| *s < theta_new) && fresh {
                fires.push(i);
            }
        }
        fires
    }

    proptest! {
        #[test]
        fn detection_matches_brute_force(
            levels in prop::collection::vec(0u8..3, 0..200),
            n in 1usize..5,
        ) {
            let cfg = NoveltyConfig { consecutive_n: n, ..cfg() };
            let scores: Vec<f64> = levels.iter().map(|l| [LOW, MID, HIGH][*l as usize]).collect();
            let mut s = NoveltyState::new();
            let mut fired = Vec::new();
            for (i, sc) in scores.iter().enumerate() {
                if let Some(NoveltyEvent::NoveltyDetected { .. }) = s.step(*sc, &fv(0.0), &cfg).unwrap() {
                    fired.push(i);
                    s.resolve_candidate(Decision::Ignore, &cfg).unwrap();
                }
                prop_assert!(!(s.low_run() > 0 && s.high_run() > 0));
                if *sc >= cfg.theta_new {
                    prop_assert_eq!(s.low_run(), 0);
                }
            }
            prop_assert_eq!(fired, brute_force_fires(&scores, cfg.theta_new, n));
        }
    }
}
