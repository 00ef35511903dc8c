//! Sliding windows over the frame stream and the per-window statistics:
//! mean, median, population variance and mean-crossing count for each of
//! the nine channels (36 values), plus the 27-value projection without the
//! crossing counts that the density model consumes.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LabeledFrame, CHANNELS, CHANNEL_NAMES};

pub const STATS_PER_CHANNEL: usize = 4;
pub const FEATURE_DIM: usize = CHANNELS * STATS_PER_CHANNEL;
pub const GMM_DIM: usize = CHANNELS * 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_len: usize,
    pub step: usize,
    pub rate_hz: f64,
}

impl Default for WindowConfig {
    /// Two-second windows at 20 Hz with 75% overlap.
    fn default() -> Self {
        WindowConfig { window_len: 40, step: 10, rate_hz: 20.0 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 || self.step > self.window_len {
            return Err(Error::argument(format!(
                "window config needs 0 < step <= window_len, got step={} window_len={}",
                self.step, self.window_len
            )));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::argument("window rate_hz must be positive"));
        }
        Ok(())
    }

    /// Number of full windows obtainable from `n` frames.
    pub fn window_count(&self, n: usize) -> usize {
        if n < self.window_len {
            0
        } else {
            (n - self.window_len) / self.step + 1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start_t_ms: u64,
    /// `window_len` rows of nine channel values.
    pub samples: Vec<[f64; CHANNELS]>,
}

impl Window {
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[c]).collect()
    }
}

/// A window with the ground-truth labels shared by all of its frames, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledWindow {
    pub window: Window,
    pub pattern: Option<String>,
    pub activity: Option<String>,
}

/// Stateful window assembler: push frames, receive a window every `step`
/// frames once `window_len` are buffered.
#[derive(Clone, Debug)]
pub struct Windower {
    cfg: WindowConfig,
    buf: VecDeque<LabeledFrame>,
    seen: usize,
}

impl Windower {
    pub fn new(cfg: WindowConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Windower { cfg, buf: VecDeque::with_capacity(cfg.window_len), seen: 0 })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.cfg
    }

    pub fn push(&mut self, frame: LabeledFrame) -> Option<LabeledWindow> {
        if self.buf.len() == self.cfg.window_len {
            self.buf.pop_front();
        }
        self.buf.push_back(frame);
        self.seen += 1;
        if self.seen < self.cfg.window_len || !(self.seen - self.cfg.window_len).is_multiple_of(self.cfg.step) {
            return None;
        }
        let uniform = |get: fn(&LabeledFrame) -> &Option<String>| {
            let first = get(&self.buf[0]);
            if self.buf.iter().all(|f| get(f) == first) {
                first.clone()
            } else {
                None
            }
        };
        Some(LabeledWindow {
            window: Window {
                start_t_ms: self.buf[0].frame.t_ms,
                samples: self.buf.iter().map(|f| f.frame.channels()).collect(),
            },
            pattern: uniform(|f| &f.pattern),
            activity: uniform(|f| &f.activity),
        })
    }
}

/// Iterator adapter over a frame stream. Trailing partial windows are dropped.
pub struct Windows<I> {
    frames: I,
    windower: Windower,
}

impl<I, F> Iterator for Windows<I>
where
    I: Iterator<Item = F>,
    F: Into<LabeledFrame>,
{
    type Item = LabeledWindow;

    fn next(&mut self) -> Option<LabeledWindow> {
        for f in self.frames.by_ref() {
            if let Some(w) = self.windower.push(f.into()) {
                return Some(w);
            }
        }
        None
    }
}

pub fn windows<I, F>(frames: I, cfg: WindowConfig) -> Result<Windows<I::IntoIter>>
where
    I: IntoIterator<Item = F>,
    F: Into<LabeledFrame>,
{
    Ok(Windows { frames: frames.into_iter(), windower: Windower::new(cfg)? })
}

/// Adjacent pairs whose deviations from `mu` have strictly opposite signs.
pub fn mean_crossings(x: &[f64], mu: f64) -> usize {
    x.windows(2).filter(|p| (p[0] - mu) * (p[1] - mu) < 0.0).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub window_start_t_ms: u64,
    /// Channel-major: `[mean, median, variance, crossings]` per channel.
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(window_start_t_ms: u64, values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::argument(format!("feature vector needs {FEATURE_DIM} values, got {}", values.len())));
        }
        Ok(FeatureVector { window_start_t_ms, values })
    }

    pub fn project_27(&self) -> Vec<f64> {
        project_27(&self.values)
    }
}

pub fn extract_features(w: &Window) -> Result<FeatureVector> {
    if w.samples.is_empty() {
        return Err(Error::Data("empty window".into()));
    }
    let n = w.samples.len() as f64;
    let mut values = Vec::with_capacity(FEATURE_DIM);
    for c in 0..CHANNELS {
        let mut x = w.channel(c);
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value in channel {} at sample {i}", CHANNEL_NAMES[c])));
        }
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let crossings = mean_crossings(&x, mean);
        x.sort_by(f64::total_cmp);
        let mid = x.len() / 2;
        let median = if x.len().is_multiple_of(2) { 0.5 * (x[mid - 1] + x[mid]) } else { x[mid] };
        values.extend_from_slice(&[mean, median, var, crossings as f64]);
    }
    Ok(FeatureVector { window_start_t_ms: w.start_t_ms, values })
}

/// Drops the crossing counts from a 36-value vector. A 27-value input is
/// assumed already projected and returned as is.
pub fn project_27(values: &[f64]) -> Vec<f64> {
    match values.len() {
        GMM_DIM => values.to_vec(),
        _ => values.chunks(STATS_PER_CHANNEL).flat_map(|c| c[..3].iter().copied()).collect(),
    }
}

/// Writes the feature-dump CSV: `window_start_t_ms,f0..f35[,pattern]`.
pub fn write_feature_csv<W: Write>(mut out: W, rows: &[(FeatureVector, Option<String>)]) -> Result<()> {
    let labeled = rows.iter().any(|(_, l)| l.is_some());
    write!(out, "window_start_t_ms")?;
    for i in 0..FEATURE_DIM {
        write!(out, ",f{i}")?;
    }
    if labeled {
        write!(out, ",pattern")?;
    }
    writeln!(out)?;
    for (fv, label) in rows {
        write!(out, "{}", fv.window_start_t_ms)?;
        for v in &fv.values {
            write!(out, ",{v:?}")?;
        }
        if labeled {
            write!(out, ",{}", label.as_deref().unwrap_or(""))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_feature_csv<R: BufRead>(reader: R) -> Result<Vec<(FeatureVector, Option<String>)>> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Ok(Vec::new()),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    let labeled = match cols.len() {
        n if n == FEATURE_DIM + 1 => false,
        n if n == FEATURE_DIM + 2 && cols[n - 1] == "pattern" => true,
        n => return Err(Error::Format(format!("feature header has {n} columns"))),
    };
    if cols[0] != "window_start_t_ms" {
        return Err(Error::Format("feature header must start with window_start_t_ms".into()));
    }
    let arity = cols.len();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 2;
        let wrap = |e: Error| Error::Row { row, source: Box::new(e) };
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != arity {
            return Err(wrap(Error::Format(format!("expected {arity} columns, found {}", fields.len()))));
        }
        let t = fields[0].parse::<u64>().map_err(|e| wrap(Error::Parse { column: 1, message: e.to_string() }))?;
        let mut values = Vec::with_capacity(FEATURE_DIM);
        for (c, f) in fields[1..=FEATURE_DIM].iter().enumerate() {
            let v =
                f.parse::<f64>().map_err(|e| wrap(Error::Parse { column: c + 2, message: format!("{f:?}: {e}") }))?;
            values.push(v);
        }
        let label = labeled.then(|| fields[arity - 1].to_string()).filter(|s| !s.is_empty());
        rows.push((FeatureVector { window_start_t_ms: t, values }, label));
    }
    Ok(rows)
}
