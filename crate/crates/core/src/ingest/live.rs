use std::io::{BufRead, BufReader};
use std::net::{TcpStream, ToSocketAddrs};

use serde::{Deserialize, Serialize};

use super::{ImuFrame, LabeledFrame};
use crate::error::{Error, Result};

/// Wire form of one live frame: `{"t":..,"acc":[..],"gyro":[..],"orient":[..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveFrame {
    pub t: u64,
    pub acc: [f64; 3],
    pub gyro: [f64; 3],
    pub orient: [f64; 3],
}

impl From<LiveFrame> for ImuFrame {
    fn from(f: LiveFrame) -> Self {
        ImuFrame { t_ms: f.t, acc: f.acc, gyro: f.gyro, orient: f.orient }
    }
}

impl From<&ImuFrame> for LiveFrame {
    fn from(f: &ImuFrame) -> Self {
        LiveFrame { t: f.t_ms, acc: f.acc, gyro: f.gyro, orient: f.orient }
    }
}

/// Reads newline-delimited JSON frames until EOF. Blank lines are skipped;
/// a malformed line ends the stream with an error.
pub struct LiveSource<R> {
    reader: R,
    line: String,
    row: usize,
    done: bool,
}

impl<R: BufRead> LiveSource<R> {
    pub fn new(reader: R) -> Self {
        LiveSource { reader, line: String::new(), row: 0, done: false }
    }
}

impl LiveSource<BufReader<TcpStream>> {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(LiveSource::new(BufReader::new(stream)))
    }
}

impl<R: BufRead> Iterator for LiveSource<R> {
    type Item = Result<LabeledFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
            self.row += 1;
            if self.line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<LiveFrame>(self.line.trim()).map_err(Error::from).and_then(|f| {
                let frame = ImuFrame::from(f);
                frame.validate()?;
                Ok(frame)
            });
            return Some(match parsed {
                Ok(frame) => Ok(LabeledFrame::unlabeled(frame)),
                Err(e) => {
                    self.done = true;
                    Err(Error::Row { row: self.row, source: Box::new(e) })
                }
            });
        }
    }
}
