//! Time-tagged detection streams and their on-disk formats.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TTPS"
//! 4       4     format version (u32) = 1
//! 8       2     channel count (u16)
//! 10      6     reserved, zero
//! 16      9·N   records: channel (u8), timestamp in ps (u64)
//! ```
//!
//! The text alternative is CSV with the header `channel,timestamp_ps`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TTPS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Record {
    pub channel: u8,
    pub timestamp_ps: u64,
}

/// Time-sorted detections. `duration_ps` and `seed` are run metadata and are
/// not part of the file formats.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventStream {
    pub records: Vec<Record>,
    pub channel_count: u16,
    pub duration_ps: u64,
    pub seed: u64,
}

impl EventStream {
    /// Builds a stream, checking channel numbers and time order.
    pub fn new(records: Vec<Record>, channel_count: u16, duration_ps: u64, seed: u64) -> Result<Self> {
        let s = EventStream {
            records,
            channel_count,
            duration_ps,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0u64;
        for (i, r) in self.records.iter().enumerate() {
            if u16::from(r.channel) >= self.channel_count {
                return Err(Error::UnknownChannel {
                    channel: r.channel,
                    channel_count: self.channel_count,
                });
            }
            if r.timestamp_ps < prev {
                return Err(Error::Format(format!(
                    "record {i}: timestamp {} ps precedes {prev} ps",
                    r.timestamp_ps
                )));
            }
            if self.duration_ps > 0 && r.timestamp_ps >= self.duration_ps {
                return Err(Error::Format(format!(
                    "record {i}: timestamp {} ps is not below the duration {} ps",
                    r.timestamp_ps, self.duration_ps
                )));
            }
            prev = r.timestamp_ps;
        }
        Ok(())
    }

    pub fn check_channel(&self, channel: u8) -> Result<()> {
        if u16::from(channel) < self.channel_count {
            Ok(())
        } else {
            Err(Error::UnknownChannel {
                channel,
                channel_count: self.channel_count,
            })
        }
    }

    /// Timestamps of one channel, in order.
    pub fn channel_times(&self, channel: u8) -> Result<Vec<u64>> {
        self.check_channel(channel)?;
        Ok(self
            .records
            .iter()
            .filter(|r| r.channel == channel)
            .map(|r| r.timestamp_ps)
            .collect())
    }

    pub fn count(&self, channel: u8) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 * 1e-12
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let mut header = [0u8; HEADER_LEN];
        header[..4].copy_from_slice(&MAGIC);
        header[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        header[8..10].copy_from_slice(&self.channel_count.to_le_bytes());
        w.write_all(&header)?;
        let mut buf = [0u8; RECORD_LEN];
        for r in &self.records {
            buf[0] = r.channel;
            buf[1..].copy_from_slice(&r.timestamp_ps.to_le_bytes());
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a binary stream. The duration is taken as one past the last timestamp.
    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
        if header[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &header[..4])));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let channel_count = u16::from_le_bytes([header[8], header[9]]);
        if header[10..].iter().any(|&b| b != 0) {
            return Err(Error::Format("reserved header bytes are not zero".into()));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % RECORD_LEN != 0 {
            return Err(Error::Format(format!(
                "payload of {} bytes is not a whole number of {RECORD_LEN}-byte records",
                body.len()
            )));
        }
        let records = body
            .chunks_exact(RECORD_LEN)
            .map(|c| Record {
                channel: c[0],
                timestamp_ps: u64::from_le_bytes(c[1..].try_into().expect("8 bytes")),
            })
            .collect::<Vec<_>>();
        let duration_ps = records.last().map_or(0, |r| r.timestamp_ps + 1);
        EventStream::new(records, channel_count, duration_ps, 0)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a CSV stream; the channel count is one past the largest channel seen.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let records = rdr
            .deserialize::<Record>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(csv_error)?;
        let channel_count = records.iter().map(|r| u16::from(r.channel) + 1).max().unwrap_or(0);
        let duration_ps = records.last().map_or(0, |r| r.timestamp_ps + 1);
        EventStream::new(records, channel_count, duration_ps, 0)
    }

    /// Writes binary unless the extension is `.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let wrap = |source| Error::Write {
            path: path.to_path_buf(),
            source,
        };
        let file = BufWriter::new(File::create(path).map_err(wrap)?);
        if is_csv(path) {
            self.write_csv(file)
        } else {
            self.write_binary(file)
        }
    }

    /// Reads binary unless the extension is `.csv`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        if is_csv(path) {
            Self::read_csv(file)
        } else {
            Self::read_binary(file)
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
