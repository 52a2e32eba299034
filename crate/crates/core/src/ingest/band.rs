use std::io::Read;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{MfpcaError, Result};

/// A closed frequency interval in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        Band { name: name.to_string(), lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub bands: Vec<Band>,
    pub window_seconds: f64,
    pub sampling_rate: f64,
    /// Multiply each window by a Hann taper before the transform.
    pub hann: bool,
}

impl BandSpec {
    /// Delta, theta, alpha and beta bands over 30-second windows.
    pub fn eeg(sampling_rate: f64) -> Self {
        BandSpec {
            bands: vec![
                Band::new("delta", 0.8, 4.0),
                Band::new("theta", 4.1, 8.0),
                Band::new("alpha", 8.1, 13.0),
                Band::new("beta", 13.1, 20.0),
            ],
            window_seconds: 30.0,
            sampling_rate,
            hann: false,
        }
    }

    /// Samples per window.
    pub fn window_len(&self) -> Result<usize> {
        let n = self.window_seconds * self.sampling_rate;
        if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 * n {
            return Err(MfpcaError::InvalidArgument(format!(
                "window of {} s at {} Hz is not a whole number of samples",
                self.window_seconds, self.sampling_rate
            )));
        }
        Ok(n.round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(MfpcaError::InvalidArgument("no bands given".into()));
        }
        for b in &self.bands {
            if !(b.lo >= 0.0 && b.lo <= b.hi) {
                return Err(MfpcaError::InvalidArgument(format!("band '{}' has bad edges", b.name)));
            }
        }
        if self.bands.windows(2).any(|w| w[1].lo <= w[0].hi) {
            return Err(MfpcaError::InvalidArgument("bands must be ordered and non-overlapping".into()));
        }
        let top = self.bands.last().map(|b| b.hi).unwrap_or(0.0);
        if !(self.sampling_rate > 2.0 * top) {
            return Err(MfpcaError::InvalidArgument(format!(
                "sampling rate {} Hz does not exceed twice the top band edge {top} Hz",
                self.sampling_rate
            )));
        }
        self.window_len().map(|_| ())
    }

    fn band_index(&self, name: &str) -> Result<usize> {
        self.bands
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| MfpcaError::InvalidArgument(format!("unknown band '{name}'")))
    }
}

/// Normalized power of one band over consecutive windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPowerSeries {
    pub band: String,
    /// Window midpoints in hours from the start of the signal.
    pub times: Vec<f64>,
    /// `None` where no band carried any power.
    pub values: Vec<Option<f64>>,
    /// Indices of the windows left undefined.
    pub undefined: Vec<usize>,
    /// Samples after the last complete window.
    pub dropped_samples: usize,
}

impl BandPowerSeries {
    pub fn n_windows(&self) -> usize {
        self.times.len()
    }
}

/// Power per band of one window: squared DFT magnitudes summed over the
/// bins whose frequency lies in the band.
pub fn window_power(window: &[f64], spec: &BandSpec) -> Vec<f64> {
    let n = window.len();
    let mut buf: Vec<Complex<f64>> = if spec.hann {
        let denom = n.max(2) as f64 - 1.0;
        window
            .iter()
            .enumerate()
            .map(|(i, &x)| Complex::new(x * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / denom).cos()), 0.0))
            .collect()
    } else {
        window.iter().map(|&x| Complex::new(x, 0.0)).collect()
    };
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = spec.sampling_rate / n as f64;
    spec.bands
        .iter()
        .map(|b| {
            (0..=n / 2)
                .filter(|&k| {
                    let f = k as f64 * df;
                    f >= b.lo && f <= b.hi
                })
                .map(|k| buf[k].norm_sqr())
                .sum()
        })
        .collect()
}

/// Fraction of the all-band power falling in `target`, window by window.
pub fn band_power(signal: &[f64], spec: &BandSpec, target: &str) -> Result<BandPowerSeries> {
    spec.validate()?;
    let idx = spec.band_index(target)?;
    let n = spec.window_len()?;
    if signal.len() < n {
        return Err(MfpcaError::InsufficientData(format!("signal has {} samples, one window needs {n}", signal.len())));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(MfpcaError::InvalidArgument("signal has non-finite samples".into()));
    }
    let n_windows = signal.len() / n;
    let mut values = Vec::with_capacity(n_windows);
    let mut undefined = Vec::new();
    for (w, chunk) in signal.chunks_exact(n).enumerate() {
        let power = window_power(chunk, spec);
        let total: f64 = power.iter().sum();
        // Parseval scale of the window; anything below this is rounding.
        let energy = n as f64 * chunk.iter().map(|x| x * x).sum::<f64>();
        if total <= 1e-20 * energy || total == 0.0 {
            undefined.push(w);
            values.push(None);
        } else {
            values.push(Some(power[idx] / total));
        }
    }
    let times = (0..n_windows).map(|w| (w as f64 + 0.5) * spec.window_seconds / 3600.0).collect();
    Ok(BandPowerSeries {
        band: target.to_string(),
        times,
        values,
        undefined,
        dropped_samples: signal.len() - n_windows * n,
    })
}

impl BandPowerSeries {
    /// The first undefined window as an error, if any.
    pub fn check_defined(&self) -> Result<()> {
        match self.undefined.first() {
            Some(&window) => Err(MfpcaError::BandPowerUndefined { window }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawFormat {
    /// One number per line.
    Text,
    /// Little-endian 32-bit floats.
    F32le,
}

impl std::str::FromStr for RawFormat {
    type Err = MfpcaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(RawFormat::Text),
            "f32le" => Ok(RawFormat::F32le),
            other => Err(MfpcaError::InvalidArgument(format!("unknown raw format '{other}'"))),
        }
    }
}

pub fn read_signal(path: &Path, format: RawFormat) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    match format {
        RawFormat::F32le => {
            if bytes.len() % 4 != 0 {
                return Err(MfpcaError::Parse { line: 0, message: format!("{} bytes is not a whole number of f32 values", bytes.len()) });
            }
            Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
        }
        RawFormat::Text => {
            let text = String::from_utf8(bytes).map_err(|e| MfpcaError::Parse { line: 0, message: e.to_string() })?;
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let v = line.parse::<f64>().map_err(|e| MfpcaError::Parse { line: i + 1, message: e.to_string() })?;
                out.push(v);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, rate: f64, seconds: f64, amp: f64) -> Vec<f64> {
        let n = (rate * seconds) as usize;
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    /// Plain O(N^2) DFT power in a band.
    fn dft_band_power(x: &[f64], rate: f64, lo: f64, hi: f64) -> f64 {
        let n = x.len();
        (0..=n / 2)
            .filter(|&k| {
                let f = k as f64 * rate / n as f64;
                f >= lo && f <= hi
            })
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (m, &v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * m) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .sum()
    }

    #[test]
    fn delta_tone_dominates() {
        let spec = BandSpec::eeg(125.0);
        let s = band_power(&tone(2.0, 125.0, 300.0, 1.0), &spec, "delta").unwrap();
        assert_eq!(s.n_windows(), 10);
        assert!(s.values.iter().all(|v| v.unwrap() >= 0.99));
        assert!(s.undefined.is_empty());
    }

    #[test]
    fn alpha_tone_leaves_delta_empty() {
        let spec = BandSpec::eeg(125.0);
        let s = band_power(&tone(10.0, 125.0, 120.0, 3.0), &spec, "delta").unwrap();
        assert!(s.values.iter().all(|v| v.unwrap() <= 0.01));
    }

    #[test]
    fn matches_direct_transform() {
        let spec = BandSpec { window_seconds: 2.0, ..BandSpec::eeg(64.0) };
        let x: Vec<f64> = (0..128).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3 + (i as f64 * 0.4).sin()).collect();
        let p = window_power(&x, &spec);
        for (b, got) in spec.bands.iter().zip(&p) {
            let want = dft_band_power(&x, 64.0, b.lo, b.hi);
            assert!((got - want).abs() < 1e-9 * want.max(1.0), "{}: {got} vs {want}", b.name);
        }
    }

    #[test]
    fn bin_edges_are_inclusive_and_gaps_excluded() {
        // 1-second windows at 64 Hz put bins on whole hertz.
        let spec = BandSpec {
            bands: vec![Band::new("a", 1.0, 2.0), Band::new("b", 4.0, 4.0)],
            window_seconds: 1.0,
            sampling_rate: 64.0,
            hann: false,
        };
        let at2 = band_power(&tone(2.0, 64.0, 1.0, 1.0), &spec, "a").unwrap();
        assert!((at2.values[0].unwrap() - 1.0).abs() < 1e-12);
        let at4 = band_power(&tone(4.0, 64.0, 1.0, 1.0), &spec, "b").unwrap();
        assert!((at4.values[0].unwrap() - 1.0).abs() < 1e-12);
        // 3 Hz lies between the bands.
        let gap = band_power(&tone(3.0, 64.0, 1.0, 1.0), &spec, "a").unwrap();
        assert_eq!(gap.values[0], None);
    }

    #[test]
    fn constant_signal_is_undefined_everywhere() {
        let spec = BandSpec::eeg(125.0);
        let s = band_power(&vec![4.2; 125 * 95], &spec, "delta").unwrap();
        assert_eq!(s.n_windows(), 3);
        assert_eq!(s.undefined, vec![0, 1, 2]);
        assert!(s.values.iter().all(Option::is_none));
        assert_eq!(s.dropped_samples, 125 * 5);
        assert_eq!(s.check_defined(), Err(MfpcaError::BandPowerUndefined { window: 0 }));
        let zero = band_power(&vec![0.0; 125 * 30], &spec, "delta").unwrap();
        assert_eq!(zero.undefined, vec![0]);
    }

    #[test]
    fn midpoints_are_in_hours() {
        let spec = BandSpec::eeg(125.0);
        let s = band_power(&tone(2.0, 125.0, 90.0, 1.0), &spec, "delta").unwrap();
        assert_eq!(s.times, vec![15.0 / 3600.0, 45.0 / 3600.0, 75.0 / 3600.0]);
    }

    #[test]
    fn spec_validation() {
        let mut spec = BandSpec::eeg(30.0);
        assert!(spec.validate().is_err());
        spec.sampling_rate = 125.0;
        spec.window_seconds = 0.003;
        assert!(spec.validate().is_err());
        let overlapping = BandSpec { bands: vec![Band::new("a", 1.0, 3.0), Band::new("b", 2.0, 4.0)], ..BandSpec::eeg(125.0) };
        assert!(overlapping.validate().is_err());
        assert!(band_power(&[0.0; 10], &BandSpec::eeg(125.0), "delta").is_err());
        assert!(matches!(band_power(&tone(2.0, 125.0, 30.0, 1.0), &BandSpec::eeg(125.0), "gamma"), Err(MfpcaError::InvalidArgument(_))));
    }

    #[test]
    fn hann_taper_keeps_a_tone_in_band() {
        let spec = BandSpec { hann: true, ..BandSpec::eeg(125.0) };
        let s = band_power(&tone(2.3, 125.0, 60.0, 1.0), &spec, "delta").unwrap();
        assert!(s.values.iter().all(|v| v.unwrap() > 0.999));
    }

    #[test]
    fn reads_raw_formats() {
        let dir = tempfile::tempdir().unwrap();
        let text = dir.path().join("s.txt");
        std::fs::write(&text, "1.5\n-2\n\n3e-1\n").unwrap();
        assert_eq!(read_signal(&text, RawFormat::Text).unwrap(), vec![1.5, -2.0, 0.3]);
        let bin = dir.path().join("s.bin");
        let bytes: Vec<u8> = [0.5f32, -1.25].iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&bin, &bytes).unwrap();
        assert_eq!(read_signal(&bin, RawFormat::F32le).unwrap(), vec![0.5, -1.25]);
        std::fs::write(&bin, &bytes[..5]).unwrap();
        assert!(matches!(read_signal(&bin, RawFormat::F32le), Err(MfpcaError::Parse { .. })));
        std::fs::write(&text, "1\nx\n").unwrap();
        assert!(matches!(read_signal(&text, RawFormat::Text), Err(MfpcaError::Parse { line: 2, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn amplitude_cancels(c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], seed in 0u64..100) {
            let spec = BandSpec { window_seconds: 4.0, ..BandSpec::eeg(50.0) };
            let x: Vec<f64> = (0..400).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
            let y: Vec<f64> = x.iter().map(|v| c * v).collect();
            let a = band_power(&x, &spec, "theta").unwrap();
            let b = band_power(&y, &spec, "theta").unwrap();
            for (p, q) in a.values.iter().zip(&b.values) {
                prop_assert!((p.unwrap() - q.unwrap()).abs() < 1e-10);
                prop_assert!((0.0..=1.0).contains(&p.unwrap()));
            }
        }
    }
}
