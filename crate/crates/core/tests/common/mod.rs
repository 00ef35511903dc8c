#![allow(dead_code)]

use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use strata_core::corpus::Corpus;
use strata_core::ingest::{synth_stream, LabeledFrame, PatternProfile, SynthSegment};
use strata_core::registry::{bootstrap_from_frames, ModelSnapshot, PatternRegistry, TrainConfig};
use strata_core::service::{Message, Subscription};

pub fn train_config() -> TrainConfig {
    let mut cfg = TrainConfig::seeded(1);
    cfg.unit_forest.n_trees = 30;
    cfg.activity_forest.n_trees = 30;
    cfg
}

/// Starter corpus trained once per test binary: nine warm-up patterns plus
/// eighteen activity blocks.
pub fn trained() -> &'static (PatternRegistry, Arc<ModelSnapshot>) {
    static CELL: OnceLock<(PatternRegistry, Arc<ModelSnapshot>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let corpus = Corpus::starter();
        let script = corpus.script(62.0 * 9.0 + 60.0 * 18.0, 1).unwrap();
        let frames = synth_stream(script, 1).unwrap().map(Ok);
        let (reg, snap) = bootstrap_from_frames(frames, &train_config()).unwrap();
        (reg, Arc::new(snap))
    })
}

pub fn profile(name: &str) -> PatternProfile {
    Corpus::starter()
        .profile(name)
        .cloned()
        .or_else(|| Corpus::extra_patterns().into_iter().find(|p| p.name == name))
        .unwrap_or_else(|| panic!("no profile {name}"))
}

/// Frames for consecutive (pattern, seconds) segments on one clock.
pub fn frames(parts: &[(&str, f64)], seed: u64) -> Vec<LabeledFrame> {
    let segs: Vec<SynthSegment> = parts.iter().map(|(p, s)| (profile(p), *s).into()).collect();
    synth_stream(segs, seed).unwrap().collect()
}

/// Reads messages until `stop` matches one, returning everything read.
pub fn read_until(sub: &Subscription, mut stop: impl FnMut(&Message) -> bool) -> Vec<Message> {
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut out = Vec::new();
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        let m = sub.recv(left).unwrap_or_else(|| panic!("stream ended or timed out after {:?}", out.last()));
        let done = stop(&m);
        out.push(m);
        if done {
            return out;
        }
    }
}
