//! IMU frame sources: CSV replay, a seeded synthetic generator, and a
//! newline-delimited JSON live feed. All of them yield [`ImuFrame`]s at a
//! nominal 20 Hz.

mod csv;
mod live;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::csv::{parse_csv_record, replay, write_csv, ChannelOrder, CsvRecord, Replay, CSV_HEADER};
pub use self::live::{LiveFrame, LiveSource};
pub use self::synth::{synth_stream, PatternProfile, SynthSegment, SynthStream};

pub const CHANNELS: usize = 9;
pub const SAMPLE_RATE_HZ: f64 = 20.0;

/// Canonical channel order used by every downstream stage.
pub const CHANNEL_NAMES: [&str; CHANNELS] =
    ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "roll", "pitch", "yaw"];

/// One 9-channel IMU sample. Accelerations in g, angular rates in deg/s,
/// orientation as roll/pitch/yaw in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuFrame {
    pub t_ms: u64,
    pub acc: [f64; 3],
    pub gyro: [f64; 3],
    pub orient: [f64; 3],
}

impl ImuFrame {
    pub fn from_channels(t_ms: u64, ch: [f64; CHANNELS]) -> Self {
        ImuFrame { t_ms, acc: [ch[0], ch[1], ch[2]], gyro: [ch[3], ch[4], ch[5]], orient: [ch[6], ch[7], ch[8]] }
    }

    pub fn channels(&self) -> [f64; CHANNELS] {
        [
            self.acc[0],
            self.acc[1],
            self.acc[2],
            self.gyro[0],
            self.gyro[1],
            self.gyro[2],
            self.orient[0],
            self.orient[1],
            self.orient[2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.channels().iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!("channel {} is not finite at t={}ms", CHANNEL_NAMES[i], self.t_ms)));
            }
        }
        Ok(())
    }
}

/// A frame plus the optional ground-truth labels carried by recorded or
/// synthesized streams.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    pub frame: ImuFrame,
    pub pattern: Option<String>,
    pub activity: Option<String>,
}

impl LabeledFrame {
    pub fn unlabeled(frame: ImuFrame) -> Self {
        LabeledFrame { frame, pattern: None, activity: None }
    }
}

impl From<ImuFrame> for LabeledFrame {
    fn from(frame: ImuFrame) -> Self {
        LabeledFrame::unlabeled(frame)
    }
}
