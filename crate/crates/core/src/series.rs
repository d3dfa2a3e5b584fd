//! Multi-device readings on a regular time grid.

use crate::model::{DeviceId, PollutantKind};

/// Readings of several devices on the grid `t0 + k * step`.
///
/// Storage is one contiguous channel per (device, pollutant); a missing cell
/// holds `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeries {
    devices: Vec<DeviceId>,
    t0: f64,
    step: f64,
    len: usize,
    channels: Vec<Vec<f64>>,
}

impl AlignedSeries {
    /// A grid of `len` cells with every value missing.
    pub fn empty(devices: Vec<DeviceId>, t0: f64, step: f64, len: usize) -> Self {
        assert!(step > 0.0, "grid step must be positive");
        let channels = vec![vec![f64::NAN; len]; devices.len() * PollutantKind::COUNT];
        Self {
            devices,
            t0,
            step,
            len,
            channels,
        }
    }

    pub fn devices(&self) -> &[DeviceId] {
        &self.devices
    }

    pub fn device_index(&self, id: &DeviceId) -> Option<usize> {
        self.devices.iter().position(|d| d == id)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step
    }

    /// One past the last grid time.
    pub fn end(&self) -> f64 {
        self.time(self.len)
    }

    pub fn channel(&self, device: usize, kind: PollutantKind) -> &[f64] {
        &self.channels[device * PollutantKind::COUNT + kind.index()]
    }

    pub fn channel_mut(&mut self, device: usize, kind: PollutantKind) -> &mut [f64] {
        &mut self.channels[device * PollutantKind::COUNT + kind.index()]
    }

    pub fn get(&self, device: usize, kind: PollutantKind, k: usize) -> Option<f64> {
        let v = self.channel(device, kind)[k];
        (!v.is_nan()).then_some(v)
    }

    pub fn set(&mut self, device: usize, kind: PollutantKind, k: usize, value: Option<f64>) {
        self.channel_mut(device, kind)[k] = value.unwrap_or(f64::NAN);
    }

    /// Index of the first cell whose time is `>= t`, which may be negative or
    /// past the end.
    pub fn first_cell_at_or_after(&self, t: f64) -> i64 {
        ((t - self.t0) / self.step - 1e-9).ceil() as i64
    }

    /// View of `len` cells starting at `start`, if they lie inside the grid.
    pub fn window(&self, start: usize, len: usize) -> Option<SeriesWindow<'_>> {
        (start + len <= self.len).then_some(SeriesWindow {
            series: self,
            start,
            len,
        })
    }

    /// Copy of the cells `[start, start + len)` as a standalone series.
    pub fn slice(&self, start: usize, len: usize) -> Option<AlignedSeries> {
        if start + len > self.len {
            return None;
        }
        Some(AlignedSeries {
            devices: self.devices.clone(),
            t0: self.time(start),
            step: self.step,
            len,
            channels: self
                .channels
                .iter()
                .map(|c| c[start..start + len].to_vec())
                .collect(),
        })
    }

    /// Reorders or subsets devices. Returns `None` if an id is unknown.
    pub fn select_devices(&self, ids: &[DeviceId]) -> Option<AlignedSeries> {
        let mut channels = Vec::with_capacity(ids.len() * PollutantKind::COUNT);
        for id in ids {
            let d = self.device_index(id)?;
            for kind in PollutantKind::ALL {
                channels.push(self.channel(d, kind).to_vec());
            }
        }
        Some(AlignedSeries {
            devices: ids.to_vec(),
            t0: self.t0,
            step: self.step,
            len: self.len,
            channels,
        })
    }
}

/// A borrowed run of consecutive grid cells.
#[derive(Debug, Clone, Copy)]
pub struct SeriesWindow<'a> {
    series: &'a AlignedSeries,
    start: usize,
    len: usize,
}

impl<'a> SeriesWindow<'a> {
    pub fn devices(&self) -> &'a [DeviceId] {
        self.series.devices()
    }

    pub fn step(&self) -> f64 {
        self.series.step()
    }

    pub fn start_time(&self) -> f64 {
        self.series.time(self.start)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channel(&self, device: usize, kind: PollutantKind) -> &'a [f64] {
        &self.series.channel(device, kind)[self.start..self.start + self.len]
    }

    /// Fraction of missing cells in one channel.
    pub fn missing_fraction(&self, device: usize, kind: PollutantKind) -> f64 {
        if self.len == 0 {
            return 1.0;
        }
        let missing = self.channel(device, kind).iter().filter(|v| v.is_nan()).count();
        missing as f64 / self.len as f64
    }
}
