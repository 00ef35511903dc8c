//! WebAssembly bindings for the browser demo in `www/`. Every operation
//! takes plain numbers and returns a JSON document for the page to draw.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use strata_core::corpus::Corpus;
use strata_core::features::{extract_features, windows, WindowConfig};
use strata_core::gmm::{em_fit, EmConfig, GaussianComponent};
use strata_core::ingest::synth_stream;
use strata_core::recognizer::VoteBuffer;
use wasm_bindgen::prelude::wasm_bindgen;
use wasm_bindgen::JsError;

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

fn js(e: strata_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn all_profiles() -> Vec<strata_core::ingest::PatternProfile> {
    Corpus::starter().patterns.into_iter().chain(Corpus::extra_patterns()).collect()
}

/// Names accepted by [`synthesize`], as a JSON array.
#[wasm_bindgen]
pub fn pattern_names() -> String {
    serde_json::to_string(&all_profiles().iter().map(|p| p.name.clone()).collect::<Vec<_>>())
        .expect("strings serialize")
}

#[derive(Debug, Serialize)]
pub struct Synthesized {
    pub t_ms: Vec<u64>,
    /// One row of nine channel values per frame.
    pub frames: Vec<[f64; 9]>,
    pub window_start_t_ms: Vec<u64>,
    /// One row of 36 statistics per window.
    pub features: Vec<Vec<f64>>,
}

pub fn synthesize_pattern(pattern: &str, seconds: f64, seed: u64) -> strata_core::Result<Synthesized> {
    let profile = all_profiles()
        .into_iter()
        .find(|p| p.name == pattern)
        .ok_or_else(|| strata_core::Error::Argument(format!("unknown pattern {pattern:?}")))?;
    let frames: Vec<_> = synth_stream([(profile, seconds)], seed)?.collect();
    let mut out = Synthesized {
        t_ms: frames.iter().map(|f| f.frame.t_ms).collect(),
        frames: frames.iter().map(|f| f.frame.channels()).collect(),
        window_start_t_ms: Vec::new(),
        features: Vec::new(),
    };
    for lw in windows(frames, WindowConfig::default())? {
        let fv = extract_features(&lw.window)?;
        out.window_start_t_ms.push(fv.window_start_t_ms);
        out.features.push(fv.values);
    }
    Ok(out)
}

/// Synthesizes `seconds` of one pattern and extracts the window features.
#[wasm_bindgen]
pub fn synthesize(pattern: &str, seconds: f64, seed: u32) -> Result<String, JsError> {
    to_json(&synthesize_pattern(pattern, seconds, seed as u64).map_err(js)?)
}

#[derive(Debug, Serialize)]
pub struct MixtureFit {
    pub points: Vec<Vec<f64>>,
    /// Generating blob of each point.
    pub truth: Vec<usize>,
    /// Log-likelihood before every M-step of the kept run.
    pub trace: Vec<f64>,
    pub components: Vec<GaussianComponent>,
    /// Most responsible fitted component of each point.
    pub assignment: Vec<usize>,
}

pub fn fit_blobs(blobs: usize, per_blob: usize, k: usize, spread: f64, seed: u64) -> strata_core::Result<MixtureFit> {
    if blobs == 0 || per_blob == 0 || !(spread > 0.0 && spread.is_finite()) {
        return Err(strata_core::Error::Argument("need at least one blob, one point and a positive spread".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).expect("positive spread");
    let centers: Vec<[f64; 2]> =
        (0..blobs).map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]).collect();
    let mut points = Vec::with_capacity(blobs * per_blob);
    let mut truth = Vec::with_capacity(blobs * per_blob);
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
            truth.push(b);
        }
    }
    let fit = em_fit(&points, k, &EmConfig { seed, ..EmConfig::default() })?;
    let assignment = points
        .iter()
        .map(|p| {
            let r = fit.model.responsibilities(p)?;
            Ok(r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i))
        })
        .collect::<strata_core::Result<Vec<_>>>()?;
    Ok(MixtureFit { points, truth, trace: fit.trace().to_vec(), components: fit.model.components, assignment })
}

/// Draws `blobs` Gaussian blobs in the plane and fits a `k`-component
/// mixture to them by EM.
#[wasm_bindgen]
pub fn fit_mixture(blobs: u32, per_blob: u32, k: u32, spread: f64, seed: u32) -> Result<String, JsError> {
    to_json(&fit_blobs(blobs as usize, per_blob as usize, k as usize, spread, seed as u64).map_err(js)?)
}

#[derive(Debug, Serialize)]
pub struct Smoothing {
    pub truth: Vec<String>,
    pub raw: Vec<String>,
    pub voted: Vec<String>,
    pub raw_accuracy: f64,
    pub voted_accuracy: f64,
}

/// A label stream of `n` window steps with runs of 8 to 20 steps, a share
/// `noise` of raw labels replaced by another label, and the result of a
/// `capacity` vote buffer.
pub fn smooth(n: usize, noise: f64, capacity: usize, seed: u64) -> strata_core::Result<Smoothing> {
    if !(0.0..=1.0).contains(&noise) || capacity == 0 {
        return Err(strata_core::Error::Argument("noise must be in [0, 1] and capacity at least 1".into()));
    }
    let vocab = Corpus::starter().pattern_names();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = Vec::with_capacity(n);
    while truth.len() < n {
        let label = vocab.choose(&mut rng).expect("starter vocabulary");
        let run = rng.random_range(8..=20).min(n - truth.len());
        truth.extend(std::iter::repeat_n(label.clone(), run));
    }
    let raw: Vec<String> = truth
        .iter()
        .map(|t| {
            if rng.random_bool(noise) {
                let others: Vec<&String> = vocab.iter().filter(|v| *v != t).collect();
                (*others.choose(&mut rng).expect("several labels")).clone()
            } else {
                t.clone()
            }
        })
        .collect();
    let mut buf = VoteBuffer::new(capacity);
    let voted: Vec<String> = raw.iter().map(|r| buf.push(r.clone()).unwrap_or_default()).collect();
    let share = |labels: &[String]| {
        let hits = labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        hits as f64 / n.max(1) as f64
    };
    Ok(Smoothing { raw_accuracy: share(&raw), voted_accuracy: share(&voted), truth, raw, voted })
}

#[wasm_bindgen]
pub fn smooth_votes(n: u32, noise: f64, capacity: u32, seed: u32) -> Result<String, JsError> {
    to_json(&smooth(n as usize, noise, capacity as usize, seed as u64).map_err(js)?)
}
