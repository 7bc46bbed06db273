//! Monte Carlo photon-pair detection and TCSPC-style analysis.
//!
//! Everything here is `f64`: counts, rates and timestamps have no use for a
//! generic scalar.

pub mod closed_form;
pub mod coincidence;
pub mod dwdm;
pub mod events;
pub mod source;

pub use closed_form::{best_capture, capture_fraction, car_closed_form, HeraldedPoint, TwoFoldPoint};
pub use coincidence::{
    heralded_g2, histogram, two_fold_metrics, CoincidenceHistogram, G2Point, TwoFoldResult, TwoFoldSettings,
};
pub use dwdm::DwdmGrid;
pub use events::{EventStream, Record};
pub use source::{generate_events, ChannelMap, DelaySign, Emission, Port, SaturationPoint, Simulation, SourceModel};
