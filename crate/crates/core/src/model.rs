//! Shared domain types: pollutant channels, devices, samples and activity labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown activity label `{0}`")]
    UnknownLabel(String),
    #[error("unknown pollutant `{0}`")]
    UnknownPollutant(String),
    #[error("invalid device id `{0}`: expected 1-32 visible ASCII characters, no path separators")]
    InvalidDeviceId(String),
    #[error("non-finite timestamp")]
    NonFiniteTimestamp,
    #[error("non-finite reading for {0}")]
    NonFiniteReading(PollutantKind),
    #[error("negative concentration for {0}")]
    NegativeConcentration(PollutantKind),
    #[error("humidity {0} outside [0, 100]")]
    HumidityOutOfRange(f64),
    #[error("sample carries no readings")]
    EmptyReadings,
}

/// The six sensed channels, in the fixed order used by every feature schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PollutantKind {
    Co2,
    Voc,
    Pm25,
    Pm10,
    #[serde(rename = "t")]
    Temperature,
    #[serde(rename = "rh")]
    Humidity,
}

impl PollutantKind {
    pub const COUNT: usize = 6;
    pub const ALL: [PollutantKind; 6] = [
        PollutantKind::Co2,
        PollutantKind::Voc,
        PollutantKind::Pm25,
        PollutantKind::Pm10,
        PollutantKind::Temperature,
        PollutantKind::Humidity,
    ];

    /// Short token used in file headers and feature names.
    pub fn token(self) -> &'static str {
        match self {
            PollutantKind::Co2 => "co2",
            PollutantKind::Voc => "voc",
            PollutantKind::Pm25 => "pm25",
            PollutantKind::Pm10 => "pm10",
            PollutantKind::Temperature => "t",
            PollutantKind::Humidity => "rh",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            PollutantKind::Co2 => "ppm",
            PollutantKind::Voc => "index",
            PollutantKind::Pm25 | PollutantKind::Pm10 => "ug/m3",
            PollutantKind::Temperature => "degC",
            PollutantKind::Humidity => "%RH",
        }
    }

    /// Position in [`PollutantKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    fn is_concentration(self) -> bool {
        matches!(
            self,
            PollutantKind::Co2 | PollutantKind::Voc | PollutantKind::Pm25 | PollutantKind::Pm10
        )
    }
}

impl fmt::Display for PollutantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for PollutantKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PollutantKind::ALL
            .into_iter()
            .find(|p| p.token().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ModelError::UnknownPollutant(s.to_string()))
    }
}

/// Identifier of one sensing module.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DeviceId(String);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        let visible = id.bytes().all(|b| (0x21..=0x7e).contains(&b));
        // Ids double as directory names in the collector's store.
        let path_safe = !id.contains(['/', '\\']) && !id.starts_with('.');
        if id.is_empty() || id.len() > 32 || !visible || !path_safe {
            return Err(ModelError::InvalidDeviceId(id));
        }
        Ok(DeviceId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DeviceId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        DeviceId::new(value)
    }
}

impl From<DeviceId> for String {
    fn from(value: DeviceId) -> Self {
        value.0
    }
}

impl FromStr for DeviceId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceId::new(s)
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Per-channel readings; `None` marks a field the sensor did not report.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Readings([Option<f64>; PollutantKind::COUNT]);

impl Readings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, kind: PollutantKind, value: f64) -> Self {
        self.set(kind, Some(value));
        self
    }

    pub fn get(&self, kind: PollutantKind) -> Option<f64> {
        self.0[kind.index()]
    }

    pub fn set(&mut self, kind: PollutantKind, value: Option<f64>) {
        self.0[kind.index()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (PollutantKind, f64)> + '_ {
        PollutantKind::ALL
            .into_iter()
            .filter_map(|k| self.get(k).map(|v| (k, v)))
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }
}

/// One timestamped reading from one device.
#[derive(Debug, Clone, PartialEq)]
pub struct PollutantSample {
    /// Unix seconds.
    pub ts: f64,
    pub device: DeviceId,
    pub readings: Readings,
}

/// A sample that passed [`validate_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSample(PollutantSample);

impl ValidatedSample {
    pub fn into_inner(self) -> PollutantSample {
        self.0
    }
}

impl std::ops::Deref for ValidatedSample {
    type Target = PollutantSample;

    fn deref(&self) -> &PollutantSample {
        &self.0
    }
}

pub fn validate_sample(sample: PollutantSample) -> Result<ValidatedSample, ModelError> {
    if !sample.ts.is_finite() {
        return Err(ModelError::NonFiniteTimestamp);
    }
    if sample.readings.is_empty() {
        return Err(ModelError::EmptyReadings);
    }
    for (kind, value) in sample.readings.iter() {
        if !value.is_finite() {
            return Err(ModelError::NonFiniteReading(kind));
        }
        if kind.is_concentration() && value < 0.0 {
            return Err(ModelError::NegativeConcentration(kind));
        }
        if kind == PollutantKind::Humidity && !(0.0..=100.0).contains(&value) {
            return Err(ModelError::HumidityOutOfRange(value));
        }
    }
    Ok(ValidatedSample(sample))
}

/// The eight annotated activities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ActivityLabel {
    Enter,
    Exit,
    FanOn,
    FanOff,
    AcOn,
    AcOff,
    Gathering,
    Eating,
}

impl ActivityLabel {
    pub const COUNT: usize = 8;
    pub const ALL: [ActivityLabel; 8] = [
        ActivityLabel::Enter,
        ActivityLabel::Exit,
        ActivityLabel::FanOn,
        ActivityLabel::FanOff,
        ActivityLabel::AcOn,
        ActivityLabel::AcOff,
        ActivityLabel::Gathering,
        ActivityLabel::Eating,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityLabel::Enter => "enter",
            ActivityLabel::Exit => "exit",
            ActivityLabel::FanOn => "fan_on",
            ActivityLabel::FanOff => "fan_off",
            ActivityLabel::AcOn => "ac_on",
            ActivityLabel::AcOff => "ac_off",
            ActivityLabel::Gathering => "gathering",
            ActivityLabel::Eating => "eating",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Case-insensitive; spaces, hyphens and underscores are interchangeable.
pub fn parse_activity_label(text: &str) -> Result<ActivityLabel, ModelError> {
    let normalized: String = text
        .trim()
        .chars()
        .map(|c| match c {
            ' ' | '-' => '_',
            c => c.to_ascii_lowercase(),
        })
        .collect();
    ActivityLabel::ALL
        .into_iter()
        .find(|l| l.as_str() == normalized)
        .ok_or_else(|| ModelError::UnknownLabel(text.to_string()))
}

impl FromStr for ActivityLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_activity_label(s)
    }
}

impl TryFrom<String> for ActivityLabel {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        parse_activity_label(&value)
    }
}

impl From<ActivityLabel> for String {
    fn from(value: ActivityLabel) -> Self {
        value.as_str().to_string()
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A ground-truth activity event, modelled as an instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityAnnotation {
    pub ts: f64,
    pub label: ActivityLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(readings: Readings) -> PollutantSample {
        PollutantSample {
            ts: 1e9,
            device: DeviceId::new("d1").unwrap(),
            readings,
        }
    }

    #[test]
    fn label_parsing() {
        assert_eq!(parse_activity_label("fan_on").unwrap(), ActivityLabel::FanOn);
        assert_eq!(parse_activity_label("AC Off").unwrap(), ActivityLabel::AcOff);
        assert_eq!(
            parse_activity_label("smoking"),
            Err(ModelError::UnknownLabel("smoking".into()))
        );
    }

    #[test]
    fn label_text_round_trip() {
        for label in ActivityLabel::ALL {
            assert_eq!(parse_activity_label(label.as_str()).unwrap(), label);
            assert_eq!(label.to_string().parse::<ActivityLabel>().unwrap(), label);
        }
    }

    #[test]
    fn pollutant_order_is_fixed() {
        let tokens: Vec<_> = PollutantKind::ALL.iter().map(|p| p.token()).collect();
        assert_eq!(tokens, ["co2", "voc", "pm25", "pm10", "t", "rh"]);
        for (i, p) in PollutantKind::ALL.iter().enumerate() {
            assert_eq!(p.index(), i);
            assert_eq!(p.token().parse::<PollutantKind>().unwrap(), *p);
        }
    }

    #[test]
    fn validation() {
        let ok = sample(Readings::new().with(PollutantKind::Co2, 400.0));
        assert!(validate_sample(ok).is_ok());

        let neg = sample(Readings::new().with(PollutantKind::Pm25, -1.0));
        assert_eq!(
            validate_sample(neg).unwrap_err(),
            ModelError::NegativeConcentration(PollutantKind::Pm25)
        );

        let wet = sample(Readings::new().with(PollutantKind::Humidity, 130.0));
        assert_eq!(
            validate_sample(wet).unwrap_err(),
            ModelError::HumidityOutOfRange(130.0)
        );

        let nan = sample(Readings::new().with(PollutantKind::Voc, f64::NAN));
        assert_eq!(
            validate_sample(nan).unwrap_err(),
            ModelError::NonFiniteReading(PollutantKind::Voc)
        );

        assert_eq!(
            validate_sample(sample(Readings::new())).unwrap_err(),
            ModelError::EmptyReadings
        );

        // Temperatures may legitimately be negative.
        let cold = sample(Readings::new().with(PollutantKind::Temperature, -5.0));
        assert!(validate_sample(cold).is_ok());
    }

    #[test]
    fn device_ids() {
        assert!(DeviceId::new("lab-ne").is_ok());
        assert!(DeviceId::new("").is_err());
        assert!(DeviceId::new("a b").is_err());
        assert!(DeviceId::new("../etc").is_err());
        assert!(DeviceId::new("x".repeat(33)).is_err());
        assert!(DeviceId::new("x".repeat(32)).is_ok());
    }
}
