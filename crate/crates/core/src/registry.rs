//! Pattern and activity vocabularies, their stored training data, and the
//! retraining step that turns them into an immutable [`ModelSnapshot`].
//!
//! On disk a registry is a feature CSV (`features.csv`) plus a manifest
//! (`features.manifest.json`) holding the vocabularies, the pattern→activity
//! associations and the activity histograms.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activity::{fit_activity_model, ActivityModel, HistogramSample};
use crate::error::{Error, Result};
use crate::features::{read_feature_csv, write_feature_csv, FeatureVector, WindowConfig, FEATURE_DIM, GMM_DIM};
use crate::forest::{fit_forest, ForestConfig, LabeledSet, RandomForest};
use crate::gmm::{em_refine, init_from_labels, EmConfig, GmmModel};
use crate::ingest::LabeledFrame;
use crate::novelty::{calibrate_thresholds, NoveltyConfig, MIN_CALIBRATION_SCORES};
use crate::recognizer::{Recognizer, RecognizerConfig};

/// Newest snapshot layout this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;
pub const FEATURES_FILE: &str = "features.csv";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternEntry {
    pub name: String,
    pub activities: Vec<String>,
    pub sample_count: usize,
}

/// Everything needed to go from stored data to models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub window: WindowConfig,
    pub em: EmConfig,
    pub unit_forest: ForestConfig,
    pub activity_forest: ForestConfig,
    pub match_quantile: f64,
    pub new_quantile: f64,
    pub consecutive_n: usize,
    pub collect_target: usize,
    pub vote_capacity: usize,
    pub seq_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: WindowConfig::default(),
            em: EmConfig::default(),
            unit_forest: ForestConfig::default(),
            activity_forest: ForestConfig::default(),
            match_quantile: 0.05,
            new_quantile: 0.001,
            consecutive_n: 3,
            collect_target: 120,
            vote_capacity: 3,
            seq_len: crate::activity::DEFAULT_SEQ_LEN,
        }
    }
}

impl TrainConfig {
    /// Default configuration with every model seeded from `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut c = TrainConfig::default();
        c.em.seed = seed;
        c.unit_forest.seed = seed;
        c.activity_forest.seed = seed.wrapping_add(1);
        c
    }

    pub fn recognizer(&self) -> RecognizerConfig {
        RecognizerConfig { vote_capacity: self.vote_capacity, disjoint_votes: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub schema_version: u32,
    /// Registry version the models were trained from.
    pub version: u64,
    pub window: WindowConfig,
    pub feature_dim: usize,
    pub gmm_dim: usize,
    pub patterns: Vec<String>,
    pub activities: Vec<String>,
    pub gmm: GmmModel,
    pub unit_forest: RandomForest,
    /// Absent until some activity has histogram data.
    pub activity: Option<ActivityModel>,
    pub novelty: NoveltyConfig,
    pub vote_capacity: usize,
    pub seq_len: usize,
    pub train: TrainConfig,
}

impl ModelSnapshot {
    /// Milliseconds between consecutive window starts.
    pub fn step_ms(&self) -> u64 {
        (self.window.step as f64 * 1000.0 / self.window.rate_hz).round() as u64
    }

    pub fn recognizer_config(&self) -> RecognizerConfig {
        RecognizerConfig { vote_capacity: self.vote_capacity, disjoint_votes: false }
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<ModelSnapshot> {
        #[derive(Deserialize)]
        struct Header {
            schema_version: u32,
        }
        let header: Header = serde_json::from_slice(bytes)?;
        if header.schema_version > SCHEMA_VERSION || header.schema_version == 0 {
            return Err(Error::Compatibility { found: header.schema_version, supported: SCHEMA_VERSION });
        }
        let s: ModelSnapshot = serde_json::from_slice(bytes)?;
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Format(format!("inconsistent snapshot: {m}")));
        if self.feature_dim != FEATURE_DIM || self.gmm_dim != GMM_DIM || self.gmm.dim != GMM_DIM {
            return fail(format!("feature dims {}/{}", self.feature_dim, self.gmm_dim));
        }
        if self.unit_forest.label_names != self.patterns {
            return fail("unit forest labels differ from the pattern vocabulary".into());
        }
        if self.unit_forest.n_features != FEATURE_DIM {
            return fail(format!("unit forest over {} features", self.unit_forest.n_features));
        }
        if let Some(a) = &self.activity {
            if a.vocabulary.len() > self.patterns.len() || a.vocabulary[..] != self.patterns[..a.vocabulary.len()] {
                return fail("activity vocabulary is not a prefix of the pattern vocabulary".into());
            }
        }
        self.window.validate()?;
        self.novelty.validate()
    }
}

/// Writes via a temporary file and rename, so readers never see a partial
/// snapshot.
pub fn save_snapshot(s: &ModelSnapshot, path: &Path) -> Result<()> {
    let bytes = s.to_json_bytes()?;
    let tmp = sibling(path, ".tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<ModelSnapshot> {
    ModelSnapshot::from_json_bytes(&std::fs::read(path)?)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Sidecar manifest for a feature CSV.
pub fn manifest_path(features_csv: &Path) -> PathBuf {
    features_csv.with_extension("manifest.json")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u64,
    patterns: Vec<PatternEntry>,
    activities: Vec<String>,
    #[serde(default)]
    histograms: Vec<HistogramSample>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatternRegistry {
    patterns: Vec<PatternEntry>,
    activities: Vec<String>,
    version: u64,
    samples: Vec<(FeatureVector, String)>,
    histograms: Vec<HistogramSample>,
}

impl PatternRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a registry from labeled feature vectors. Patterns are ordered
    /// by first appearance; `associations` lists (pattern, activity) pairs.
    pub fn from_samples(samples: Vec<(FeatureVector, String)>, associations: &[(String, String)]) -> Result<Self> {
        let mut reg = PatternRegistry::new();
        for (fv, name) in &samples {
            check_sample(fv)?;
            if name.is_empty() {
                return Err(Error::argument("empty pattern label"));
            }
            match reg.patterns.iter_mut().find(|p| &p.name == name) {
                Some(p) => p.sample_count += 1,
                None => reg.patterns.push(PatternEntry { name: name.clone(), activities: Vec::new(), sample_count: 1 }),
            }
        }
        for (pattern, activity) in associations {
            reg.associate(pattern, activity)?;
        }
        reg.samples = samples;
        reg.version = 1;
        Ok(reg)
    }

    fn associate(&mut self, pattern: &str, activity: &str) -> Result<()> {
        if activity.trim().is_empty() {
            return Err(Error::argument("activity name must be non-empty"));
        }
        let entry = self
            .patterns
            .iter_mut()
            .find(|p| p.name == pattern)
            .ok_or_else(|| Error::argument(format!("unknown pattern {pattern:?}")))?;
        if !entry.activities.iter().any(|a| a == activity) {
            entry.activities.push(activity.to_string());
        }
        if !self.activities.iter().any(|a| a == activity) {
            self.activities.push(activity.to_string());
        }
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn patterns(&self) -> &[PatternEntry] {
        &self.patterns
    }

    pub fn pattern_names(&self) -> Vec<String> {
        self.patterns.iter().map(|p| p.name.clone()).collect()
    }

    pub fn activities(&self) -> &[String] {
        &self.activities
    }

    pub fn samples(&self) -> &[(FeatureVector, String)] {
        &self.samples
    }

    pub fn histograms(&self) -> &[HistogramSample] {
        &self.histograms
    }

    /// Appends a confirmed pattern with its collected samples. Leaves the
    /// registry untouched on error.
    pub fn add_pattern(
        &mut self,
        name: &str,
        activity: &str,
        samples: Vec<FeatureVector>,
        collect_target: usize,
    ) -> Result<u64> {
        if name.trim().is_empty() || activity.trim().is_empty() {
            return Err(Error::argument("pattern and activity names must be non-empty"));
        }
        if self.patterns.iter().any(|p| p.name == name) {
            return Err(Error::Conflict(format!("pattern {name:?} already exists")));
        }
        if samples.len() != collect_target {
            return Err(Error::argument(format!(
                "pattern {name:?} needs exactly {collect_target} samples, got {}",
                samples.len()
            )));
        }
        for fv in &samples {
            check_sample(fv)?;
        }
        self.patterns.push(PatternEntry {
            name: name.to_string(),
            activities: Vec::new(),
            sample_count: samples.len(),
        });
        self.associate(name, activity)?;
        self.samples.extend(samples.into_iter().map(|fv| (fv, name.to_string())));
        self.version += 1;
        Ok(self.version)
    }

    /// Stores one labeled activity histogram over the current vocabulary.
    pub fn add_histogram(&mut self, activity: &str, counts: Vec<u32>) -> Result<u64> {
        if counts.len() != self.patterns.len() {
            return Err(Error::argument(format!(
                "histogram has {} counts, registry has {} patterns",
                counts.len(),
                self.patterns.len()
            )));
        }
        if activity.trim().is_empty() {
            return Err(Error::argument("activity name must be non-empty"));
        }
        if !self.activities.iter().any(|a| a == activity) {
            self.activities.push(activity.to_string());
        }
        self.histograms.push(HistogramSample { activity: activity.to_string(), counts });
        self.version += 1;
        Ok(self.version)
    }

    /// Fits every model on the stored data. The activity model is refit
    /// when histograms exist and carried over from `previous` otherwise.
    pub fn retrain(&self, cfg: &TrainConfig, previous: Option<&ModelSnapshot>) -> Result<ModelSnapshot> {
        let training = |what: &str, e: Error| Error::Training(format!("{what}: {e}"));
        if self.patterns.is_empty() {
            return Err(Error::Training("registry has no patterns".into()));
        }
        if let Some(p) = self.patterns.iter().find(|p| p.sample_count < 2) {
            return Err(Error::Training(format!(
                "pattern {:?} has {} samples, need at least 2",
                p.name, p.sample_count
            )));
        }
        cfg.window.validate()?;
        let vocab = self.pattern_names();
        let labels: Vec<String> = self.samples.iter().map(|(_, l)| l.clone()).collect();

        let points: Vec<Vec<f64>> = self.samples.iter().map(|(fv, _)| fv.project_27()).collect();
        let init =
            init_from_labels(&points, &labels, &vocab, cfg.em.variance_floor).map_err(|e| training("mixture", e))?;
        let mut gmm = em_refine(&points, init, &cfg.em).map_err(|e| training("mixture", e))?.model;
        gmm.label_components(&points, &labels).map_err(|e| training("mixture", e))?;

        let x: Vec<Vec<f64>> = self.samples.iter().map(|(fv, _)| fv.values.clone()).collect();
        let data = LabeledSet::from_labels(x, &labels, &vocab).map_err(|e| training("unit forest", e))?;
        let unit_forest = fit_forest(&data, &cfg.unit_forest).map_err(|e| training("unit forest", e))?;

        let novelty = self.calibrate(&gmm, &points, &labels, &vocab, cfg)?;

        let activity = if self.histograms.is_empty() {
            previous.and_then(|p| p.activity.clone())
        } else {
            let samples: Vec<HistogramSample> = self
                .histograms
                .iter()
                .map(|h| {
                    let mut counts = h.counts.clone();
                    counts.resize(vocab.len(), 0);
                    HistogramSample { activity: h.activity.clone(), counts }
                })
                .collect();
            let present: Vec<String> =
                self.activities.iter().filter(|a| samples.iter().any(|s| &s.activity == *a)).cloned().collect();
            Some(
                fit_activity_model(&samples, &vocab, &present, &cfg.activity_forest)
                    .map_err(|e| training("activity forest", e))?,
            )
        };

        Ok(ModelSnapshot {
            schema_version: SCHEMA_VERSION,
            version: self.version,
            window: cfg.window,
            feature_dim: FEATURE_DIM,
            gmm_dim: GMM_DIM,
            patterns: vocab,
            activities: self.activities.clone(),
            gmm,
            unit_forest,
            activity,
            novelty,
            vote_capacity: cfg.vote_capacity,
            seq_len: cfg.seq_len,
            train: *cfg,
        })
    }

    fn calibrate(
        &self,
        gmm: &GmmModel,
        points: &[Vec<f64>],
        labels: &[String],
        vocab: &[String],
        cfg: &TrainConfig,
    ) -> Result<NoveltyConfig> {
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); vocab.len()];
        for (p, l) in points.iter().zip(labels) {
            let i = vocab.iter().position(|v| v == l).expect("label in vocabulary");
            groups[i].push(gmm.log_pdf(p)?);
        }
        let usable: Vec<Vec<f64>> = groups.into_iter().filter(|g| g.len() >= MIN_CALIBRATION_SCORES).collect();
        if usable.is_empty() {
            let short: Vec<&str> = self.patterns.iter().map(|p| p.name.as_str()).collect();
            return Err(Error::Training(format!(
                "no pattern has the {MIN_CALIBRATION_SCORES} samples threshold calibration needs: {}",
                short.join(", ")
            )));
        }
        let mut n = calibrate_thresholds(&usable, cfg.match_quantile, cfg.new_quantile)
            .map_err(|e| Error::Training(format!("threshold calibration: {e}")))?;
        n.consecutive_n = cfg.consecutive_n;
        n.collect_target = cfg.collect_target;
        n.validate()?;
        Ok(n)
    }

    /// Writes `features.csv` and its manifest into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.save_files(&dir.join(FEATURES_FILE))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load_files(&dir.join(FEATURES_FILE))
    }

    /// Writes the feature CSV at `csv` and the manifest beside it.
    pub fn save_files(&self, csv: &Path) -> Result<()> {
        let rows: Vec<(FeatureVector, Option<String>)> =
            self.samples.iter().map(|(fv, l)| (fv.clone(), Some(l.clone()))).collect();
        let tmp = sibling(csv, ".tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            write_feature_csv(&mut out, &rows)?;
            out.flush()?;
        }
        let manifest = Manifest {
            version: self.version,
            patterns: self.patterns.clone(),
            activities: self.activities.clone(),
            histograms: self.histograms.clone(),
        };
        let mpath = manifest_path(csv);
        let mtmp = sibling(&mpath, ".tmp");
        std::fs::write(&mtmp, serde_json::to_vec_pretty(&manifest)?)?;
        std::fs::rename(&tmp, csv)?;
        std::fs::rename(&mtmp, &mpath)?;
        Ok(())
    }

    /// Reads a feature CSV and, when present, its manifest. Without a
    /// manifest, patterns come from the CSV labels and carry no activities.
    pub fn load_files(csv: &Path) -> Result<Self> {
        let rows = read_feature_csv(BufReader::new(File::open(csv)?))?;
        let mut samples = Vec::with_capacity(rows.len());
        for (i, (fv, label)) in rows.into_iter().enumerate() {
            let label = label.ok_or_else(|| Error::Row {
                row: i + 2,
                source: Box::new(Error::Format("feature row has no pattern label".into())),
            })?;
            samples.push((fv, label));
        }
        let mpath = manifest_path(csv);
        if !mpath.exists() {
            return PatternRegistry::from_samples(samples, &[]);
        }
        let m: Manifest = serde_json::from_slice(&std::fs::read(&mpath)?)?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, l) in &samples {
            *counts.entry(l.as_str()).or_default() += 1;
        }
        for p in &m.patterns {
            let found = counts.remove(p.name.as_str()).unwrap_or(0);
            if found != p.sample_count {
                return Err(Error::Format(format!(
                    "manifest lists {} samples of {:?}, feature file has {found}",
                    p.sample_count, p.name
                )));
            }
        }
        if let Some((name, _)) = counts.into_iter().next() {
            return Err(Error::Format(format!("pattern {name:?} missing from manifest")));
        }
        if let Some(h) = m.histograms.iter().find(|h| h.counts.len() > m.patterns.len()) {
            return Err(Error::Format(format!("histogram for {:?} is longer than the vocabulary", h.activity)));
        }
        Ok(PatternRegistry {
            patterns: m.patterns,
            activities: m.activities,
            version: m.version,
            samples,
            histograms: m.histograms,
        })
    }
}

fn check_sample(fv: &FeatureVector) -> Result<()> {
    if fv.values.len() != FEATURE_DIM {
        return Err(Error::argument(format!("feature vector has {} values, expected {FEATURE_DIM}", fv.values.len())));
    }
    if fv.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite feature in window at {} ms", fv.window_start_t_ms)));
    }
    Ok(())
}

/// A window's features with its uniform pattern and activity labels.
pub type LabeledFeatures = (FeatureVector, Option<String>, Option<String>);

/// Feature vectors of every window in a labeled frame stream, with the
/// windows' uniform pattern and activity labels.
pub fn labeled_features<I>(frames: I, window: WindowConfig) -> Result<Vec<LabeledFeatures>>
where
    I: IntoIterator<Item = Result<LabeledFrame>>,
{
    let mut w = crate::features::Windower::new(window)?;
    let mut out = Vec::new();
    for f in frames {
        if let Some(lw) = w.push(f?) {
            let fv = crate::features::extract_features(&lw.window)?;
            out.push((fv, lw.pattern, lw.activity));
        }
    }
    Ok(out)
}

/// Initial training from a labeled recording. Windows with a single pattern
/// label become unit samples. The stream is then replayed through the
/// freshly trained unit models, and every disjoint block of `seq_len` voted
/// labels whose windows are mostly one activity becomes a histogram sample
/// of that activity.
pub fn bootstrap_from_frames<I>(frames: I, cfg: &TrainConfig) -> Result<(PatternRegistry, ModelSnapshot)>
where
    I: IntoIterator<Item = Result<LabeledFrame>>,
{
    let windows = labeled_features(frames, cfg.window)?;
    let mut samples = Vec::new();
    let mut assoc: Vec<(String, String)> = Vec::new();
    for (fv, p, a) in &windows {
        if let Some(p) = p {
            samples.push((fv.clone(), p.clone()));
            if let Some(a) = a {
                let pair = (p.clone(), a.clone());
                if !assoc.contains(&pair) {
                    assoc.push(pair);
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Training("no window carries a single pattern label".into()));
    }
    let mut reg = PatternRegistry::from_samples(samples, &assoc)?;
    let unit = std::sync::Arc::new(reg.retrain(cfg, None)?);

    let mut rec = Recognizer::new(unit, cfg.recognizer());
    let mut block: Vec<(String, Option<String>)> = Vec::with_capacity(cfg.seq_len);
    let vocab = reg.pattern_names();
    let mut found = Vec::new();
    for (fv, _, activity) in &windows {
        let (ev, _) = rec.classify_window(fv)?;
        let Some(voted) = ev.voted_label else { continue };
        block.push((voted, activity.clone()));
        if block.len() < cfg.seq_len {
            continue;
        }
        if let Some(act) = majority_activity(&block) {
            let labels: Vec<&str> = block.iter().map(|(l, _)| l.as_str()).collect();
            let h = crate::activity::bow(&labels, &vocab)?;
            found.push((act, h.counts));
        }
        block.clear();
    }
    let version = reg.version;
    for (act, counts) in found {
        reg.add_histogram(&act, counts)?;
    }
    // Histograms found during bootstrap belong to the initial version.
    reg.version = version;
    let snapshot = reg.retrain(cfg, None)?;
    Ok((reg, snapshot))
}

fn majority_activity(block: &[(String, Option<String>)]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in block.iter().filter_map(|(_, a)| a.as_deref()) {
        *counts.entry(a).or_default() += 1;
    }
    counts.into_iter().find(|(_, c)| 2 * c > block.len()).map(|(a, _)| a.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::ingest::synth_stream;

    fn small_cfg() -> TrainConfig {
        let mut c = TrainConfig::seeded(7);
        c.unit_forest.n_trees = 20;
        c.activity_forest.n_trees = 20;
        c
    }

    /// Three starter patterns, `n` windows each.
    fn registry(n: usize) -> PatternRegistry {
        let corpus = Corpus::starter();
        let mut samples = Vec::new();
        for (i, name) in ["walking", "running", "idle_sitting"].iter().enumerate() {
            let p = corpus.profile(name).unwrap().clone();
            let secs = (n as f64 - 1.0) * 0.5 + 2.0;
            let frames = synth_stream([(p, secs)], i as u64).unwrap().map(Ok);
            for (fv, _, _) in labeled_features(frames, WindowConfig::default()).unwrap() {
                samples.push((fv, name.to_string()));
            }
        }
        let assoc = vec![("walking".to_string(), "COMMUTE".to_string())];
        PatternRegistry::from_samples(samples, &assoc).unwrap()
    }

    fn fv(v: f64) -> FeatureVector {
        FeatureVector::new(0, vec![v; FEATURE_DIM]).unwrap()
    }

    #[test]
    fn add_pattern_rules() {
        let mut reg = registry(30);
        let v0 = reg.version();
        assert!(matches!(reg.add_pattern("walking", "X", vec![fv(0.0); 120], 120), Err(Error::Conflict(_))));
        assert!(matches!(reg.add_pattern("boxing", "WORKOUT", vec![fv(0.0); 119], 120), Err(Error::Argument(_))));
        assert_eq!(reg.version(), v0);
        assert_eq!(reg.patterns().len(), 3);
        let v = reg.add_pattern("boxing", "WORKOUT", vec![fv(0.0); 120], 120).unwrap();
        assert_eq!(v, v0 + 1);
        assert_eq!(reg.patterns().last().unwrap().name, "boxing");
        assert_eq!(reg.activities(), ["COMMUTE", "WORKOUT"]);
    }

    #[test]
    fn retrain_sizes_models_to_registry() {
        let reg = registry(40);
        let s = reg.retrain(&small_cfg(), None).unwrap();
        assert_eq!(s.gmm.k(), 3);
        assert_eq!(s.patterns, ["walking", "running", "idle_sitting"]);
        assert_eq!(s.version, reg.version());
        assert!(s.activity.is_none());
        assert!(s.novelty.theta_new < s.novelty.theta_match);
    }

    #[test]
    fn retrain_is_deterministic() {
        let reg = registry(30);
        let a = reg.retrain(&small_cfg(), None).unwrap().to_json_bytes().unwrap();
        let b = reg.retrain(&small_cfg(), None).unwrap().to_json_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn retrain_names_deficient_pattern() {
        let mut samples: Vec<(FeatureVector, String)> = registry(30).samples().to_vec();
        samples.push((fv(5.0), "lonely".into()));
        let reg = PatternRegistry::from_samples(samples, &[]).unwrap();
        let err = reg.retrain(&small_cfg(), None).unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains("lonely")), "{err}");
    }

    #[test]
    fn new_pattern_reaches_the_forest() {
        let mut reg = registry(30);
        let extra = Corpus::extra_patterns().into_iter().find(|p| p.name == "boxing").unwrap();
        let frames = synth_stream([(extra, 61.5)], 3).unwrap().map(Ok);
        let fvs: Vec<FeatureVector> =
            labeled_features(frames, WindowConfig::default()).unwrap().into_iter().map(|r| r.0).collect();
        assert_eq!(fvs.len(), 120);
        reg.add_pattern("boxing", "WORKOUT", fvs, 120).unwrap();
        let s = reg.retrain(&small_cfg(), None).unwrap();
        assert!(s.unit_forest.label_names.contains(&"boxing".to_string()));
        assert_eq!(s.gmm.k(), 4);
    }

    #[test]
    fn activity_model_carried_over_and_padded() {
        let mut reg = registry(30);
        reg.add_histogram("COMMUTE", vec![100, 20, 0]).unwrap();
        reg.add_histogram("COMMUTE", vec![90, 30, 0]).unwrap();
        reg.add_histogram("REST", vec![0, 0, 120]).unwrap();
        reg.add_histogram("REST", vec![10, 0, 110]).unwrap();
        let first = reg.retrain(&small_cfg(), None).unwrap();
        let act = first.activity.clone().unwrap();
        assert_eq!(act.activities(), ["COMMUTE", "REST"]);

        let bare = registry(30);
        let carried = bare.retrain(&small_cfg(), Some(&first)).unwrap();
        assert_eq!(carried.activity, Some(act));

        reg.add_pattern("boxing", "WORKOUT", vec![fv(9.0); 120], 120).unwrap();
        let grown = reg.retrain(&small_cfg(), None).unwrap();
        assert_eq!(grown.activity.unwrap().vocabulary.len(), 4);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let s = registry(30).retrain(&small_cfg(), None).unwrap();
        save_snapshot(&s, &path).unwrap();
        let back = load_snapshot(&path).unwrap();
        assert_eq!(back, s);
        for (fv, _) in registry(30).samples().iter().take(50) {
            assert_eq!(back.gmm.log_pdf(&fv.project_27()).unwrap(), s.gmm.log_pdf(&fv.project_27()).unwrap());
            assert_eq!(back.unit_forest.predict(&fv.values).unwrap(), s.unit_forest.predict(&fv.values).unwrap());
        }
    }

    #[test]
    fn snapshot_load_errors() {
        let s = registry(30).retrain(&small_cfg(), None).unwrap();
        let bytes = s.to_json_bytes().unwrap();
        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(ModelSnapshot::from_json_bytes(truncated), Err(Error::Format(_))));

        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["schema_version"] = serde_json::json!(SCHEMA_VERSION + 1);
        let err = ModelSnapshot::from_json_bytes(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Compatibility { found: 2, supported: 1 }));
        assert!(err.to_string().contains('2') && err.to_string().contains('1'));
    }

    #[test]
    fn registry_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = registry(25);
        reg.add_histogram("COMMUTE", vec![60, 60, 0]).unwrap();
        reg.save_dir(dir.path()).unwrap();
        let back = PatternRegistry::load_dir(dir.path()).unwrap();
        assert_eq!(back, reg);
        assert!(dir.path().join("features.manifest.json").exists());
    }

    #[test]
    fn majority_needs_more_than_half() {
        let b = |a: &[Option<&str>]| -> Vec<(String, Option<String>)> {
            a.iter().map(|x| ("p".to_string(), x.map(String::from))).collect()
        };
        assert_eq!(majority_activity(&b(&[Some("A"), Some("A"), None])), Some("A".into()));
        assert_eq!(majority_activity(&b(&[Some("A"), None, None, Some("B")])), None);
    }
}
