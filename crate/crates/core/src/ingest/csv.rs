use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use super::{ImuFrame, LabeledFrame, CHANNELS, CHANNEL_NAMES};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t_ms,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,roll,pitch,yaw";

/// Positional layout of a CSV data row: the timestamp is always column 0,
/// then the nine channels, then optional label columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelOrder {
    pub pattern_col: Option<usize>,
    pub activity_col: Option<usize>,
}

impl ChannelOrder {
    /// Bare ten-column layout without labels.
    pub fn canonical() -> Self {
        ChannelOrder { pattern_col: None, activity_col: None }
    }

    pub fn with_labels() -> Self {
        ChannelOrder { pattern_col: Some(10), activity_col: Some(11) }
    }

    pub fn from_header(header: &str) -> Result<Self> {
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if cols.len() < 1 + CHANNELS || cols[0] != "t_ms" {
            return Err(Error::Format(format!("unrecognized header: {header:?}")));
        }
        for (i, name) in CHANNEL_NAMES.iter().enumerate() {
            if cols[i + 1] != *name {
                return Err(Error::Format(format!(
                    "header column {} is {:?}, expected {:?}",
                    i + 2,
                    cols[i + 1],
                    name
                )));
            }
        }
        let mut order = ChannelOrder::canonical();
        for (i, name) in cols.iter().enumerate().skip(1 + CHANNELS) {
            match *name {
                "pattern" if order.pattern_col.is_none() => order.pattern_col = Some(i),
                "activity" if order.activity_col.is_none() => order.activity_col = Some(i),
                other => return Err(Error::Format(format!("unexpected header column {other:?}"))),
            }
        }
        Ok(order)
    }

    pub fn arity(&self) -> usize {
        1 + CHANNELS + self.pattern_col.is_some() as usize + self.activity_col.is_some() as usize
    }

    pub fn header(&self) -> String {
        let mut h = CSV_HEADER.to_string();
        let mut extra: Vec<(usize, &str)> = Vec::new();
        if let Some(c) = self.pattern_col {
            extra.push((c, "pattern"));
        }
        if let Some(c) = self.activity_col {
            extra.push((c, "activity"));
        }
        extra.sort();
        for (_, name) in extra {
            h.push(',');
            h.push_str(name);
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRecord {
    pub frame: ImuFrame,
    pub pattern: Option<String>,
    pub activity: Option<String>,
}

impl From<CsvRecord> for LabeledFrame {
    fn from(r: CsvRecord) -> Self {
        LabeledFrame { frame: r.frame, pattern: r.pattern, activity: r.activity }
    }
}

/// Parses one data row. Column numbers in errors are 1-based.
pub fn parse_csv_record(line: &str, schema: &ChannelOrder) -> Result<CsvRecord> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
    let expected = schema.arity();
    if fields.len() != expected {
        return Err(Error::Format(format!("expected {expected} columns, found {}", fields.len())));
    }
    let t_ms = fields[0]
        .trim()
        .parse::<u64>()
        .map_err(|e| Error::Parse { column: 1, message: format!("timestamp {:?}: {e}", fields[0]) })?;
    let mut ch = [0.0; CHANNELS];
    for (i, slot) in ch.iter_mut().enumerate() {
        let raw = fields[i + 1].trim();
        let v = raw.parse::<f64>().map_err(|e| Error::Parse { column: i + 2, message: format!("{:?}: {e}", raw) })?;
        if !v.is_finite() {
            return Err(Error::Parse { column: i + 2, message: format!("non-finite value {raw:?}") });
        }
        *slot = v;
    }
    let label = |col: Option<usize>| col.map(|c| fields[c].trim().to_string()).filter(|s| !s.is_empty());
    Ok(CsvRecord {
        frame: ImuFrame::from_channels(t_ms, ch),
        pattern: label(schema.pattern_col),
        activity: label(schema.activity_col),
    })
}

/// Writes frames in canonical CSV. Label columns are emitted when any frame
/// carries a label. Floats use the shortest representation that parses back
/// to the identical value.
pub fn write_csv<'a, W, I>(mut out: W, frames: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a LabeledFrame>,
{
    let frames: Vec<&LabeledFrame> = frames.into_iter().collect();
    let labeled = frames.iter().any(|f| f.pattern.is_some() || f.activity.is_some());
    let schema = if labeled { ChannelOrder::with_labels() } else { ChannelOrder::canonical() };
    writeln!(out, "{}", schema.header())?;
    for lf in frames {
        write!(out, "{}", lf.frame.t_ms)?;
        for v in lf.frame.channels() {
            write!(out, ",{v:?}")?;
        }
        if labeled {
            write!(out, ",{},{}", lf.pattern.as_deref().unwrap_or(""), lf.activity.as_deref().unwrap_or(""))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Row-by-row CSV reader, optionally paced at a fixed rate.
pub struct Replay<R> {
    lines: std::io::Lines<R>,
    schema: ChannelOrder,
    row: usize,
    emitted: u64,
    period: Option<Duration>,
    started: Option<Instant>,
    pending: Option<String>,
    done: bool,
}

impl<R: BufRead> Replay<R> {
    pub fn new(reader: R, rate_hz: f64, realtime: bool) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::argument(format!("rate_hz must be positive, got {rate_hz}")));
        }
        let mut lines = reader.lines();
        let mut schema = ChannelOrder::canonical();
        let mut pending = None;
        let mut row = 0;
        // The header is optional; a headerless file starts with data.
        for line in lines.by_ref() {
            let line = line?;
            row += 1;
            if line.trim().is_empty() {
                continue;
            }
            if line.trim_start().starts_with("t_ms") {
                schema = ChannelOrder::from_header(&line)?;
            } else {
                pending = Some(line);
                row -= 1;
            }
            break;
        }
        Ok(Replay {
            lines,
            schema,
            row,
            emitted: 0,
            period: realtime.then(|| Duration::from_secs_f64(1.0 / rate_hz)),
            started: None,
            pending,
            done: false,
        })
    }

    pub fn schema(&self) -> &ChannelOrder {
        &self.schema
    }

    fn pace(&mut self) {
        if let Some(period) = self.period {
            let start = *self.started.get_or_insert_with(Instant::now);
            let due = start + period.mul_f64(self.emitted as f64);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
    }
}

impl<R: BufRead> Iterator for Replay<R> {
    type Item = Result<LabeledFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let line = loop {
            let line = match self.pending.take() {
                Some(l) => l,
                None => match self.lines.next()? {
                    Ok(l) => l,
                    Err(e) => {
                        self.done = true;
                        return Some(Err(e.into()));
                    }
                },
            };
            self.row += 1;
            if !line.trim().is_empty() {
                break line;
            }
        };
        match parse_csv_record(&line, &self.schema) {
            Ok(rec) => {
                self.pace();
                self.emitted += 1;
                Some(Ok(rec.into()))
            }
            Err(e) => {
                self.done = true;
                Some(Err(Error::Row { row: self.row, source: Box::new(e) }))
            }
        }
    }
}

/// Opens `path` for replay. Row numbers in errors count the header as row 1.
pub fn replay(path: impl AsRef<Path>, rate_hz: f64, realtime: bool) -> Result<Replay<BufReader<File>>> {
    let file = File::open(path)?;
    Replay::new(BufReader::new(file), rate_hz, realtime)
}
