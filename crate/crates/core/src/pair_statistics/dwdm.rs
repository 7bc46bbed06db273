//! Dense wavelength-division demultiplexer: a fixed grid of equal-width
//! channels, each with the same insertion loss.

use serde::Serialize;

use super::source::db_to_transmission;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DwdmGrid {
    pub start_nm: f64,
    pub width_nm: f64,
    pub channels: usize,
    pub insertion_loss_db: f64,
}

impl Default for DwdmGrid {
    fn default() -> Self {
        DwdmGrid {
            start_nm: 1535.0,
            width_nm: 0.8,
            channels: 38,
            insertion_loss_db: 4.0,
        }
    }
}

impl DwdmGrid {
    pub fn new(start_nm: f64, width_nm: f64, channels: usize, insertion_loss_db: f64) -> Result<Self> {
        if !(width_nm > 0.0) || !start_nm.is_finite() || channels == 0 || !(insertion_loss_db >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "DWDM grid needs a positive width, at least one channel and a non-negative loss \
                 (got {width_nm} nm × {channels}, {insertion_loss_db} dB)"
            )));
        }
        Ok(DwdmGrid {
            start_nm,
            width_nm,
            channels,
            insertion_loss_db,
        })
    }

    pub fn end_nm(&self) -> f64 {
        self.start_nm + self.width_nm * self.channels as f64
    }

    /// Channel `k` spans `[lower(k), lower(k) + width)`.
    pub fn lower_nm(&self, k: usize) -> f64 {
        self.start_nm + self.width_nm * k as f64
    }

    pub fn center_nm(&self, k: usize) -> f64 {
        self.lower_nm(k) + 0.5 * self.width_nm
    }

    pub fn channel_of(&self, wavelength_nm: f64) -> Option<usize> {
        let x = (wavelength_nm - self.start_nm) / self.width_nm;
        if x < 0.0 || !x.is_finite() {
            return None;
        }
        let k = x.floor() as usize;
        // Guard against rounding at the upper edge.
        (k < self.channels && wavelength_nm >= self.lower_nm(k)).then_some(k)
    }

    pub fn transmission(&self) -> f64 {
        db_to_transmission(self.insertion_loss_db)
    }

    /// Sums `(wavelength, rate)` items into channels, applying the insertion
    /// loss; out-of-band items are dropped.
    pub fn filter_rates(&self, items: impl IntoIterator<Item = (f64, f64)>) -> Vec<f64> {
        let t = self.transmission();
        let mut out = vec![0.0; self.channels];
        for (lam, rate) in items {
            if let Some(k) = self.channel_of(lam) {
                out[k] += rate * t;
            }
        }
        out
    }
}
