//! EEG loading, synthesis and preprocessing up to GFP-peak maps.

pub mod preprocess;
pub mod recording;
pub mod synthetic;

pub use preprocess::{
    bandpass_filter, common_average_reference, design_bandpass, extract_gfp_peaks, gfp, maps_at, GfpSeries,
};
pub use recording::{default_montage, load_montage, load_recording, read_csv, save_montage, EegRecording, Electrode};
pub use synthetic::{generate_synthetic, run_lengths, SyntheticRecording, SyntheticSpec};

/// Band edges and peak spacing of the standard preprocessing chain.
pub const BAND_LOW_HZ: f64 = 2.0;
pub const BAND_HIGH_HZ: f64 = 20.0;
pub const MIN_PEAK_DISTANCE: usize = 3;

/// Average reference, 2–20 Hz zero-phase bandpass, GFP, and peaks at least 3 samples apart.
pub fn preprocess(rec: &EegRecording) -> crate::Result<(EegRecording, GfpSeries)> {
    let car = common_average_reference(rec);
    let filtered = bandpass_filter(&car, BAND_LOW_HZ, BAND_HIGH_HZ)?;
    let series = extract_gfp_peaks(&gfp(&filtered), MIN_PEAK_DISTANCE)?;
    Ok((filtered, series))
}
