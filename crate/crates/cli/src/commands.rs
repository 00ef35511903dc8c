use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde_json::json;
use strata_core::activity::{write_timeline_csv, HistogramSample, TimelineStore};
use strata_core::corpus::Corpus;
use strata_core::evaluation::evaluate_stream;
use strata_core::forest::{cross_validate, CvReport, ForestConfig, LabeledSet};
use strata_core::ingest::{replay as replay_csv, synth_stream, write_csv, SAMPLE_RATE_HZ};
use strata_core::registry::{
    bootstrap_from_frames, labeled_features, load_snapshot, save_snapshot, ModelSnapshot, PatternRegistry, TrainConfig,
};
use strata_core::service::{serve as serve_tcp, Session, SessionConfig, SourceSpec};

use crate::{EvalArgs, ReplayArgs, ServeArgs, SynthArgs, TimelineArgs, TrainArgs};

/// A command-line value that is well-formed but unusable.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn load_corpus(path: Option<&Path>) -> Result<Corpus> {
    match path {
        Some(p) => Corpus::load(p).with_context(|| format!("loading profiles {}", p.display())),
        None => Ok(Corpus::starter()),
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    if !(a.seconds > 0.0 && a.seconds.is_finite()) {
        return Err(usage(format!("--seconds must be positive, got {}", a.seconds)));
    }
    let mut corpus = load_corpus(a.profiles.as_deref())?;
    if let Some(w) = a.warmup {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(usage(format!("--warmup must be non-negative, got {w}")));
        }
        corpus.plan.pattern_warmup_s = w;
    }
    let frames: Vec<_> = synth_stream(corpus.script(a.seconds, a.seed)?, a.seed)?.collect();
    let mut out = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    write_csv(&mut out, &frames)?;
    out.flush()?;
    eprintln!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

/// Training input, told apart by path kind and CSV header.
enum Data {
    Frames(PathBuf),
    Registry(PatternRegistry),
}

fn open_data(path: &Path) -> Result<Data> {
    if path.is_dir() {
        let reg = PatternRegistry::load_dir(path).with_context(|| format!("loading registry {}", path.display()))?;
        return Ok(Data::Registry(reg));
    }
    let mut header = String::new();
    BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?).read_line(&mut header)?;
    if header.trim_start().starts_with("window_start_t_ms") {
        let reg = PatternRegistry::load_files(path).with_context(|| format!("loading features {}", path.display()))?;
        Ok(Data::Registry(reg))
    } else {
        Ok(Data::Frames(path.to_path_buf()))
    }
}

fn frames(
    path: &Path,
    realtime: bool,
) -> Result<impl Iterator<Item = strata_core::Result<strata_core::ingest::LabeledFrame>>> {
    replay_csv(path, SAMPLE_RATE_HZ, realtime).with_context(|| format!("opening {}", path.display()))
}

/// `<snapshot>.registry`, the registry directory saved next to a snapshot.
pub fn registry_dir(snapshot: &Path) -> PathBuf {
    let mut name = snapshot.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".registry");
    snapshot.with_file_name(name)
}

fn check_folds(folds: usize) -> Result<()> {
    if folds == 1 {
        return Err(usage("--folds must be 0 (skip) or at least 2"));
    }
    Ok(())
}

fn unit_set(samples: &[(strata_core::features::FeatureVector, String)], vocabulary: &[String]) -> Result<LabeledSet> {
    let x = samples.iter().map(|(fv, _)| fv.values.clone()).collect();
    let y: Vec<&str> = samples.iter().map(|(_, l)| l.as_str()).collect();
    Ok(LabeledSet::from_labels(x, &y, vocabulary)?)
}

fn unit_cv(reg: &PatternRegistry, folds: usize, cfg: &ForestConfig) -> Result<Option<CvReport>> {
    if folds == 0 {
        return Ok(None);
    }
    let set = unit_set(reg.samples(), &reg.pattern_names())?;
    Ok(Some(cross_validate(&set, folds, cfg)?))
}

/// Activity CV over stored histograms, when every activity has at least
/// one histogram per fold.
fn activity_cv(reg: &PatternRegistry, folds: usize, cfg: &ForestConfig) -> Result<Option<CvReport>> {
    let hs: &[HistogramSample] = reg.histograms();
    let activities = reg.activities();
    let enough =
        !activities.is_empty() && activities.iter().all(|a| hs.iter().filter(|h| &h.activity == a).count() >= folds);
    if folds == 0 || !enough {
        return Ok(None);
    }
    let width = reg.patterns().len();
    let x = hs
        .iter()
        .map(|h| {
            let mut c: Vec<f64> = h.counts.iter().map(|&v| v as f64).collect();
            c.resize(width, 0.0);
            c
        })
        .collect();
    let y: Vec<&str> = hs.iter().map(|h| h.activity.as_str()).collect();
    let set = LabeledSet::from_labels(x, &y, activities)?;
    Ok(Some(cross_validate(&set, folds, cfg)?))
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    check_folds(a.folds)?;
    let cfg = TrainConfig::seeded(a.seed);
    let (reg, snap) = match open_data(&a.data)? {
        Data::Frames(p) => bootstrap_from_frames(frames(&p, false)?, &cfg)?,
        Data::Registry(reg) => {
            let snap = reg.retrain(&cfg, None)?;
            (reg, snap)
        }
    };
    let unit = unit_cv(&reg, a.folds, &cfg.unit_forest)?;
    let activity = activity_cv(&reg, a.folds, &cfg.activity_forest)?;
    save_snapshot(&snap, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let dir = registry_dir(&a.out);
    reg.save_dir(&dir).with_context(|| format!("writing registry {}", dir.display()))?;
    print_json(&json!({
        "snapshot": a.out,
        "registry": dir,
        "version": snap.version,
        "patterns": snap.patterns,
        "activities": snap.activities,
        "samples": reg.samples().len(),
        "histograms": reg.histograms().len(),
        "unit_cv": unit,
        "activity_cv": activity,
    }))
}

fn read_snapshot(path: &Path) -> Result<ModelSnapshot> {
    load_snapshot(path).with_context(|| format!("loading snapshot {}", path.display()))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    check_folds(a.folds)?;
    let snap = Arc::new(read_snapshot(&a.snapshot)?);
    let report = match open_data(&a.data)? {
        Data::Frames(p) => {
            let stream = evaluate_stream(frames(&p, false)?, snap.clone())?;
            let samples: Vec<_> = labeled_features(frames(&p, false)?, snap.window)?
                .into_iter()
                .filter_map(|(fv, p, _)| p.filter(|p| snap.patterns.contains(p)).map(|p| (fv, p)))
                .collect();
            let cv = if a.folds == 0 {
                None
            } else {
                Some(cross_validate(&unit_set(&samples, &snap.patterns)?, a.folds, &snap.train.unit_forest)?)
            };
            let correct = stream.blocks.iter().filter(|b| b.truth.as_deref() == Some(b.event.label.as_str())).count();
            json!({
                "labeled_windows": stream.unit_windows,
                "unit_accuracy": stream.unit_accuracy(),
                "unit_cv": cv,
                "activity_blocks": stream.blocks.len(),
                "activity_blocks_correct": correct,
                "activity_block_accuracy": stream.block_accuracy(),
            })
        }
        Data::Registry(reg) => {
            let set =
                unit_set(reg.samples(), &snap.patterns).context("data uses patterns the snapshot does not know")?;
            json!({
                "labeled_windows": set.len(),
                "unit_accuracy": snap.unit_forest.accuracy(&set)?,
                "unit_cv": unit_cv(&reg, a.folds, &snap.train.unit_forest)?,
                "activity_cv": activity_cv(&reg, a.folds, &snap.train.activity_forest)?,
            })
        }
    };
    print_json(&report)
}

fn timeline_store(state_dir: &Path) -> TimelineStore {
    TimelineStore::new(state_dir.join("timeline.jsonl"))
}

pub fn replay(a: ReplayArgs, state_dir: &Path) -> Result<()> {
    let snap = Arc::new(read_snapshot(&a.snapshot)?);
    if !a.file.is_file() {
        anyhow::bail!(strata_core::Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no such file {}", a.file.display())
        )));
    }
    let cfg = SessionConfig { timeline: Some(timeline_store(state_dir)), realtime: a.realtime, ..Default::default() };
    let (session, sub) = Session::start_subscribed(SourceSpec::Replay { path: a.file }, snap, cfg)?;
    let mut out = BufWriter::new(std::io::stdout().lock());
    let written = sub.lines().try_for_each(|line| {
        writeln!(out, "{line}")?;
        if a.realtime {
            out.flush()?;
        }
        Ok(())
    });
    match written.and_then(|()| out.flush()) {
        // The reader went away; nothing more to report to it.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
        r => r?,
    }
    Ok(session.join()?)
}

pub fn serve(a: ServeArgs, state_dir: &Path) -> Result<()> {
    let snap = Arc::new(read_snapshot(&a.snapshot)?);
    let source = match (&a.replay, &a.live) {
        (Some(p), _) => SourceSpec::Replay { path: p.clone() },
        (None, Some(addr)) => SourceSpec::Live { addr: addr.clone() },
        (None, None) => {
            if !(a.seconds > 0.0 && a.seconds.is_finite()) {
                return Err(usage(format!("--seconds must be positive, got {}", a.seconds)));
            }
            SourceSpec::Synth { corpus: load_corpus(a.profiles.as_deref())?, seconds: a.seconds, seed: a.seed }
        }
    };
    let reg_dir = a.registry.clone().unwrap_or_else(|| registry_dir(&a.snapshot));
    let registry = if reg_dir.is_dir() {
        Some(PatternRegistry::load_dir(&reg_dir).with_context(|| format!("loading registry {}", reg_dir.display()))?)
    } else if a.registry.is_some() {
        return Err(usage(format!("registry {} does not exist", reg_dir.display())));
    } else {
        None
    };
    let listener = TcpListener::bind(&a.listen)
        .map_err(strata_core::Error::Io)
        .with_context(|| format!("binding {}", a.listen))?;
    let cfg = SessionConfig {
        persist_snapshot: registry.is_some().then(|| a.snapshot.clone()),
        persist_registry: registry.is_some().then(|| reg_dir.clone()),
        registry,
        timeline: Some(timeline_store(state_dir)),
        realtime: !a.fast,
        start_paused: a.paused,
        ..Default::default()
    };
    let session = Arc::new(Session::start(source, snap, cfg)?);
    eprintln!("listening on {}", listener.local_addr()?);
    serve_tcp(listener, session.clone())?;
    Ok(session.join()?)
}

pub fn timeline(a: TimelineArgs, state_dir: &Path) -> Result<()> {
    let entries = timeline_store(state_dir).timeline()?;
    if a.out.as_os_str() == "-" {
        write_timeline_csv(std::io::stdout().lock(), &entries)?;
    } else {
        let mut out = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
        write_timeline_csv(&mut out, &entries)?;
        out.flush()?;
    }
    eprintln!("{} timeline minutes", entries.len());
    Ok(())
}
