//! Window statistics over every (device, pollutant) channel.
//!
//! Nine operators run on each channel of a window, and the results are
//! concatenated device-major, then pollutant in [`PollutantKind::ALL`] order,
//! then operator in [`FeatureFn::ALL`] order. Names follow
//! `<device>.<pollutant>.<fn>`, e.g. `d1.co2.roc_raise`.
//!
//! Threshold-based operators count a sample as exceeding only when it is
//! strictly above the threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DeviceId, PollutantKind};
use crate::series::SeriesWindow;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("empty window")]
    EmptyWindow,
    #[error("window of {len} samples is too short for rate of change with smoothing width {width}")]
    WindowTooShort { len: usize, width: usize },
    #[error("safe threshold {safe} exceeds unsafe threshold {unsafe_}")]
    ThresholdOrder { safe: f64, unsafe_: f64 },
    #[error("too many missing cells in {device}.{pollutant}")]
    TooManyMissing {
        device: DeviceId,
        pollutant: PollutantKind,
    },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("feature schema needs at least one device")]
    EmptyDevices,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub safe: f64,
    #[serde(rename = "unsafe")]
    pub unsafe_: f64,
}

impl Threshold {
    pub const fn new(safe: f64, unsafe_: f64) -> Self {
        Self { safe, unsafe_ }
    }
}

/// Safe / unsafe levels per pollutant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub co2: Threshold,
    pub voc: Threshold,
    pub pm25: Threshold,
    pub pm10: Threshold,
    pub t: Threshold,
    pub rh: Threshold,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            co2: Threshold::new(800.0, 1200.0),
            voc: Threshold::new(220.0, 660.0),
            pm25: Threshold::new(12.0, 35.0),
            pm10: Threshold::new(54.0, 150.0),
            t: Threshold::new(28.0, 32.0),
            rh: Threshold::new(60.0, 70.0),
        }
    }
}

impl Thresholds {
    pub fn get(&self, kind: PollutantKind) -> Threshold {
        match kind {
            PollutantKind::Co2 => self.co2,
            PollutantKind::Voc => self.voc,
            PollutantKind::Pm25 => self.pm25,
            PollutantKind::Pm10 => self.pm10,
            PollutantKind::Temperature => self.t,
            PollutantKind::Humidity => self.rh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Window length in seconds.
    pub tau: f64,
    pub thresholds: Thresholds,
    /// Shortest run above the unsafe threshold that counts as a peak, seconds.
    pub min_run: f64,
    /// Centered moving-average width (samples, odd) applied before the rate of change.
    pub smoothing: usize,
    /// Largest tolerated fraction of missing cells per channel.
    pub max_missing: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            tau: 600.0,
            thresholds: Thresholds::default(),
            min_run: 5.0,
            smoothing: 1,
            max_missing: 0.10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(FeatureError::ConfigMismatch(format!("tau must be positive, got {}", self.tau)));
        }
        if self.smoothing == 0 || self.smoothing % 2 == 0 {
            return Err(FeatureError::ConfigMismatch(format!(
                "smoothing width must be odd and >= 1, got {}",
                self.smoothing
            )));
        }
        if !(self.min_run >= 0.0) {
            return Err(FeatureError::ConfigMismatch("min_run must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.max_missing) {
            return Err(FeatureError::ConfigMismatch("max_missing must be in [0, 1)".into()));
        }
        for kind in PollutantKind::ALL {
            let th = self.thresholds.get(kind);
            if th.safe > th.unsafe_ {
                return Err(FeatureError::ThresholdOrder {
                    safe: th.safe,
                    unsafe_: th.unsafe_,
                });
            }
        }
        Ok(())
    }

    /// Minimum peak run expressed in grid samples.
    pub fn min_run_samples(&self, step: f64) -> usize {
        ((self.min_run / step) - 1e-9).ceil().max(1.0) as usize
    }

    /// Number of grid cells in one window.
    pub fn window_cells(&self, step: f64) -> Result<usize, FeatureError> {
        let cells = self.tau / step;
        if (cells - cells.round()).abs() > 1e-9 || cells.round() < 2.0 {
            return Err(FeatureError::ConfigMismatch(format!(
                "tau {} is not a multiple of step {step}",
                self.tau
            )));
        }
        Ok(cells.round() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureFn {
    Min,
    Max,
    Avg,
    Std,
    RocRaise,
    RocFall,
    PeakCount,
    PeakDuration,
    LongStay,
}

impl FeatureFn {
    pub const COUNT: usize = 9;
    pub const ALL: [FeatureFn; 9] = [
        FeatureFn::Min,
        FeatureFn::Max,
        FeatureFn::Avg,
        FeatureFn::Std,
        FeatureFn::RocRaise,
        FeatureFn::RocFall,
        FeatureFn::PeakCount,
        FeatureFn::PeakDuration,
        FeatureFn::LongStay,
    ];

    pub fn token(self) -> &'static str {
        match self {
            FeatureFn::Min => "min",
            FeatureFn::Max => "max",
            FeatureFn::Avg => "avg",
            FeatureFn::Std => "std",
            FeatureFn::RocRaise => "roc_raise",
            FeatureFn::RocFall => "roc_fall",
            FeatureFn::PeakCount => "peak_c",
            FeatureFn::PeakDuration => "peak_dur",
            FeatureFn::LongStay => "long_stay",
        }
    }
}

/// Ordered feature names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    pub fn from_names(names: Vec<String>) -> Self {
        Self { names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

pub fn feature_schema(devices: &[DeviceId], cfg: &FeatureConfig) -> Result<FeatureSchema, FeatureError> {
    if devices.is_empty() {
        return Err(FeatureError::EmptyDevices);
    }
    cfg.validate()?;
    let mut names = Vec::with_capacity(devices.len() * PollutantKind::COUNT * FeatureFn::COUNT);
    for device in devices {
        for kind in PollutantKind::ALL {
            for f in FeatureFn::ALL {
                names.push(format!("{device}.{}.{}", kind.token(), f.token()));
            }
        }
    }
    Ok(FeatureSchema { names })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicStats {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn basic_stats(x: &[f64]) -> Result<BasicStats, FeatureError> {
    if x.is_empty() {
        return Err(FeatureError::EmptyWindow);
    }
    let n = x.len() as f64;
    let (min, max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // Rounding can nudge the mean a hair outside [min, max] for constant input.
    let avg = (x.iter().sum::<f64>() / n).clamp(min, max);
    let var = x.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / n;
    Ok(BasicStats {
        min,
        max,
        avg,
        std: var.sqrt(),
    })
}

/// Extremal first differences per second after a centered moving average of
/// `width` samples. Smoothing uses only full windows, so the smoothed series
/// has `x.len() - width + 1` points.
///
/// Returns `(roc_raise, roc_fall)` with `roc_fall <= 0 <= roc_raise`.
pub fn rate_of_change(x: &[f64], width: usize, step: f64) -> Result<(f64, f64), FeatureError> {
    let width = width.max(1);
    if x.len() < width + 1 {
        return Err(FeatureError::WindowTooShort { len: x.len(), width });
    }
    let smoothed: Vec<f64> = if width == 1 {
        x.to_vec()
    } else {
        x.windows(width)
            .map(|w| w.iter().sum::<f64>() / width as f64)
            .collect()
    };
    let (mut raise, mut fall) = (0.0f64, 0.0f64);
    for pair in smoothed.windows(2) {
        let d = (pair[1] - pair[0]) / step;
        raise = raise.max(d);
        fall = fall.min(d);
    }
    Ok((raise, fall))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdStats {
    /// Runs strictly above `unsafe` lasting at least the minimum run.
    pub peak_count: usize,
    /// Seconds spent inside the counted runs.
    pub peak_duration: f64,
    /// Seconds strictly above `safe`.
    pub long_stay: f64,
}

pub fn threshold_stats(
    x: &[f64],
    threshold: Threshold,
    min_run_samples: usize,
    step: f64,
) -> Result<ThresholdStats, FeatureError> {
    if threshold.safe > threshold.unsafe_ {
        return Err(FeatureError::ThresholdOrder {
            safe: threshold.safe,
            unsafe_: threshold.unsafe_,
        });
    }
    let min_run = min_run_samples.max(1);
    let mut peak_count = 0usize;
    let mut peak_samples = 0usize;
    let mut run = 0usize;
    let mut close_run = |run: &mut usize| {
        if *run >= min_run {
            peak_count += 1;
            peak_samples += *run;
        }
        *run = 0;
    };
    for &v in x {
        if v > threshold.unsafe_ {
            run += 1;
        } else {
            close_run(&mut run);
        }
    }
    close_run(&mut run);
    let above_safe = x.iter().filter(|&&v| v > threshold.safe).count();
    Ok(ThresholdStats {
        peak_count,
        peak_duration: peak_samples as f64 * step,
        long_stay: above_safe as f64 * step,
    })
}

/// The nine operators on one gap-free channel, in [`FeatureFn::ALL`] order.
pub fn channel_features(
    x: &[f64],
    kind: PollutantKind,
    cfg: &FeatureConfig,
    step: f64,
) -> Result<[f64; FeatureFn::COUNT], FeatureError> {
    let stats = basic_stats(x)?;
    let (raise, fall) = rate_of_change(x, cfg.smoothing, step)?;
    let th = threshold_stats(x, cfg.thresholds.get(kind), cfg.min_run_samples(step), step)?;
    Ok([
        stats.min,
        stats.max,
        stats.avg,
        stats.std,
        raise,
        fall,
        th.peak_count as f64,
        th.peak_duration,
        th.long_stay,
    ])
}

/// Fills `NaN` cells by linear interpolation between observed neighbours;
/// leading and trailing gaps take the nearest observed value.
pub fn interpolate_missing(x: &[f64]) -> Option<Vec<f64>> {
    let observed: Vec<usize> = (0..x.len()).filter(|&i| !x[i].is_nan()).collect();
    let (&first, &last) = (observed.first()?, observed.last()?);
    let mut out = x.to_vec();
    out[..first].fill(x[first]);
    out[last + 1..].fill(x[last]);
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let span = (b - a) as f64;
        for i in a + 1..b {
            let frac = (i - a) as f64 / span;
            out[i] = x[a] + (x[b] - x[a]) * frac;
        }
    }
    Some(out)
}

pub fn extract_features(window: &SeriesWindow<'_>, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    cfg.validate()?;
    let step = window.step();
    let expected = cfg.window_cells(step)?;
    if window.len() != expected {
        return Err(FeatureError::ConfigMismatch(format!(
            "window has {} cells, tau {} at step {step} needs {expected}",
            window.len(),
            cfg.tau
        )));
    }
    let devices = window.devices();
    let mut values = Vec::with_capacity(devices.len() * PollutantKind::COUNT * FeatureFn::COUNT);
    for (d, device) in devices.iter().enumerate() {
        for kind in PollutantKind::ALL {
            let too_many = || FeatureError::TooManyMissing {
                device: device.clone(),
                pollutant: kind,
            };
            if window.missing_fraction(d, kind) > cfg.max_missing {
                return Err(too_many());
            }
            let raw = window.channel(d, kind);
            let filled = interpolate_missing(raw).ok_or_else(too_many)?;
            values.extend(channel_features(&filled, kind, cfg, step)?);
        }
    }
    Ok(FeatureVector(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::AlignedSeries;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn basic_stats_examples() {
        let s = basic_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.min, s.max, s.avg), (1.0, 4.0, 2.5));
        assert!(approx(s.std, 1.118_033_988_7));
        let c = basic_stats(&[400.0; 600]).unwrap();
        assert_eq!((c.min, c.max, c.avg, c.std), (400.0, 400.0, 400.0, 0.0));
        assert_eq!(basic_stats(&[]), Err(FeatureError::EmptyWindow));
    }

    #[test]
    fn rate_of_change_examples() {
        let ramp: Vec<f64> = (0..60).map(f64::from).collect();
        assert_eq!(rate_of_change(&ramp, 1, 1.0).unwrap(), (1.0, 0.0));
        assert_eq!(rate_of_change(&[5.0; 10], 1, 1.0).unwrap(), (0.0, 0.0));
        assert!(matches!(
            rate_of_change(&[1.0], 1, 1.0),
            Err(FeatureError::WindowTooShort { .. })
        ));
        // Per-second scaling at a 2 s grid.
        assert_eq!(rate_of_change(&[0.0, 4.0, 2.0], 1, 2.0).unwrap(), (2.0, -1.0));
    }

    #[test]
    fn threshold_stats_constructed_window() {
        // 100 s above safe, of which one 10 s and one 20 s run above unsafe,
        // and a 3 s blip above unsafe that is shorter than the minimum run.
        let th = Threshold::new(10.0, 20.0);
        let mut x = vec![0.0; 40];
        x.extend(vec![15.0; 30]);
        x.extend(vec![25.0; 10]);
        x.extend(vec![15.0; 20]);
        x.extend(vec![25.0; 20]);
        x.extend(vec![15.0; 17]);
        x.extend(vec![25.0; 3]);
        x.extend(vec![0.0; 10]);
        let s = threshold_stats(&x, th, 5, 1.0).unwrap();
        assert_eq!(s.peak_count, 2);
        assert_eq!(s.peak_duration, 30.0);
        assert_eq!(s.long_stay, 100.0);

        let calm = threshold_stats(&[1.0; 50], th, 5, 1.0).unwrap();
        assert_eq!((calm.peak_count, calm.peak_duration, calm.long_stay), (0, 0.0, 0.0));

        assert!(matches!(
            threshold_stats(&x, Threshold::new(30.0, 20.0), 5, 1.0),
            Err(FeatureError::ThresholdOrder { .. })
        ));
    }

    #[test]
    fn threshold_equality_is_not_exceedance() {
        let s = threshold_stats(&[20.0; 10], Threshold::new(20.0, 20.0), 1, 1.0).unwrap();
        assert_eq!((s.peak_count, s.long_stay), (0, 0.0));
    }

    #[test]
    fn schema_ordering() {
        let d1 = DeviceId::new("d1").unwrap();
        let d2 = DeviceId::new("d2").unwrap();
        let cfg = FeatureConfig::default();
        let s = feature_schema(std::slice::from_ref(&d1), &cfg).unwrap();
        assert_eq!(s.len(), 54);
        assert_eq!(s.names()[0], "d1.co2.min");
        assert_eq!(s.names()[53], "d1.rh.long_stay");
        assert_eq!(s.names()[4], "d1.co2.roc_raise");
        assert_eq!(feature_schema(&[d1, d2], &cfg).unwrap().len(), 108);
        assert_eq!(feature_schema(&[], &cfg), Err(FeatureError::EmptyDevices));
    }

    #[test]
    fn interpolation() {
        let x = [f64::NAN, 1.0, f64::NAN, f64::NAN, 4.0, f64::NAN];
        assert_eq!(interpolate_missing(&x).unwrap(), vec![1.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
        assert_eq!(interpolate_missing(&[f64::NAN; 3]), None);
    }

    #[test]
    fn constant_single_device_window() {
        let d = DeviceId::new("d1").unwrap();
        let mut s = AlignedSeries::empty(vec![d], 0.0, 1.0, 600);
        for kind in PollutantKind::ALL {
            s.channel_mut(0, kind).fill(10.0);
        }
        let v = extract_features(&s.window(0, 600).unwrap(), &FeatureConfig::default()).unwrap();
        for chunk in v.values().chunks(FeatureFn::COUNT) {
            assert_eq!(chunk[0], chunk[1]);
            assert_eq!(chunk[1], chunk[2]);
            assert!(chunk[3..8].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn missing_tolerance() {
        let d = DeviceId::new("d1").unwrap();
        let mut s = AlignedSeries::empty(vec![d], 0.0, 1.0, 600);
        for kind in PollutantKind::ALL {
            s.channel_mut(0, kind).fill(10.0);
        }
        s.channel_mut(0, PollutantKind::Voc)[100..160].fill(f64::NAN);
        let cfg = FeatureConfig::default();
        assert!(extract_features(&s.window(0, 600).unwrap(), &cfg).is_ok());
        s.channel_mut(0, PollutantKind::Voc)[160] = f64::NAN;
        assert!(matches!(
            extract_features(&s.window(0, 600).unwrap(), &cfg),
            Err(FeatureError::TooManyMissing { pollutant: PollutantKind::Voc, .. })
        ));
        assert!(matches!(
            extract_features(&s.window(0, 300).unwrap(), &cfg),
            Err(FeatureError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = FeatureConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.smoothing = 4;
        assert!(cfg.validate().is_err());
        cfg.smoothing = 1;
        cfg.thresholds.co2 = Threshold::new(2000.0, 1000.0);
        assert!(matches!(cfg.validate(), Err(FeatureError::ThresholdOrder { .. })));
    }
}
