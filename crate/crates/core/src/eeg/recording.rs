use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-6;
const DEFAULT_MONTAGE: &str = include_str!("../../assets/montage_1010_61.json");

/// One electrode position on the unit sphere (+x right, +y nose, +z vertex).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Electrode {
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    fn check_unit(&self) -> Result<()> {
        let n = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!("electrode {} has norm {n}, expected 1", self.name)));
        }
        Ok(())
    }
}

/// The bundled 61-channel 10–10 montage.
pub fn default_montage() -> Vec<Electrode> {
    serde_json::from_str(DEFAULT_MONTAGE).expect("bundled montage is valid JSON")
}

pub fn load_montage(path: &Path) -> Result<Vec<Electrode>> {
    let m: Vec<Electrode> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    for e in &m {
        e.check_unit()?;
    }
    Ok(m)
}

pub fn save_montage(montage: &[Electrode], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, montage)?;
    w.flush()?;
    Ok(())
}

/// Multichannel EEG, channel-major, in µV.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    /// `(channels, samples)`.
    pub data: Array2<f64>,
    pub fs: f64,
    pub montage: Vec<Electrode>,
}

impl EegRecording {
    pub fn new(data: Array2<f64>, fs: f64, montage: Vec<Electrode>) -> Result<Self> {
        if data.nrows() != montage.len() {
            return Err(Error::MontageMismatch { data: data.nrows(), montage: montage.len() });
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("recording contains NaN or infinite samples"));
        }
        for e in &montage {
            e.check_unit()?;
        }
        Ok(Self { data, fs, montage })
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.montage.iter().map(|e| e.name.as_str()).collect()
    }

    /// Same recording with new samples.
    pub fn with_data(&self, data: Array2<f64>) -> Self {
        assert_eq!(data.nrows(), self.n_channels());
        Self { data, fs: self.fs, montage: self.montage.clone() }
    }

    /// Writes the CSV layout read by [`load_recording`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.channel_names())?;
        for t in 0..self.n_samples() {
            w.write_record(self.data.column(t).iter().map(|v| format!("{v}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a CSV recording (header of channel names, one sample per row) and
/// pairs each column with the montage entry of the same name.
///
/// The sampling rate is not part of the file and is given by the caller.
pub fn load_recording(data_path: &Path, montage_path: &Path, fs: f64) -> Result<EegRecording> {
    let montage = load_montage(montage_path)?;
    read_csv(data_path, montage, fs)
}

/// As [`load_recording`] with an already loaded montage.
pub fn read_csv(data_path: &Path, montage: Vec<Electrode>, fs: f64) -> Result<EegRecording> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(data_path)?;
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names.len() != montage.len() {
        return Err(Error::MontageMismatch { data: names.len(), montage: montage.len() });
    }
    let mut by_name: HashMap<&str, &Electrode> = montage.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut ordered = Vec::with_capacity(names.len());
    for n in &names {
        match by_name.remove(n.as_str()) {
            Some(e) => ordered.push(e.clone()),
            None => {
                return Err(Error::Parse {
                    location: data_path.display().to_string(),
                    message: format!("montage mismatch: channel {n} has no montage position"),
                })
            }
        }
    }
    let c = names.len();
    let mut flat = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != c {
            return Err(Error::Parse {
                location: format!("{}:{}", data_path.display(), row + 2),
                message: format!("expected {c} values, found {}", rec.len()),
            });
        }
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                location: format!("{}:{}:{}", data_path.display(), row + 2, col + 1),
                message: format!("not a number: {cell:?}"),
            })?;
            flat.push(v);
        }
    }
    let n = flat.len() / c.max(1);
    let samples_major = Array2::from_shape_vec((n, c), flat).map_err(|e| Error::shape(e.to_string()))?;
    EegRecording::new(samples_major.reversed_axes().as_standard_layout().into_owned(), fs, ordered)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_montage_is_61_unit_vectors() {
        let m = default_montage();
        assert_eq!(m.len(), 61);
        for e in &m {
            e.check_unit().unwrap();
        }
        let names: std::collections::HashSet<_> = m.iter().map(|e| &e.name).collect();
        assert_eq!(names.len(), 61);
    }

    #[test]
    fn rejects_non_finite_and_bad_fs() {
        let m = default_montage()[..2].to_vec();
        assert!(EegRecording::new(Array2::from_elem((2, 3), f64::NAN), 250.0, m.clone()).is_err());
        assert!(EegRecording::new(Array2::zeros((2, 3)), 0.0, m.clone()).is_err());
        assert!(matches!(
            EegRecording::new(Array2::zeros((3, 3)), 250.0, m),
            Err(Error::MontageMismatch { data: 3, montage: 2 })
        ));
    }
}
