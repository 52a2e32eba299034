//! Getting data in: windowed band power from raw signals, and the
//! long-format CSV layout for multilevel curves.

mod band;
mod table;

pub use band::{band_power, read_signal, window_power, Band, BandPowerSeries, BandSpec, RawFormat};
pub use table::{load_sample, read_sample, write_sample, LoadOptions};
