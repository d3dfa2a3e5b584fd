//! Synthetic labeled telemetry from a single well-mixed zone.
//!
//! The zone integrates a CO2 mass balance driven by occupancy and air
//! exchange, first-order temperature relaxation toward the AC setpoint or the
//! ambient temperature, a VOC source while someone eats, and particulate
//! impulses from movement, all with explicit Euler at one-second steps.
//! Devices observe the zone through a per-device proximity weight, a fixed
//! bias and white noise.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActivityAnnotation, ActivityLabel, DeviceId, PollutantKind};
use crate::rng::{derive_seed, hash_key, keyed_normal, substream};
use crate::series::AlignedSeries;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("infeasible schedule: {0}")]
    Infeasible(String),
}

/// One value per pollutant channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PerPollutant<T> {
    pub co2: T,
    pub voc: T,
    pub pm25: T,
    pub pm10: T,
    pub t: T,
    pub rh: T,
}

impl<T: Copy> PerPollutant<T> {
    pub fn get(&self, kind: PollutantKind) -> T {
        match kind {
            PollutantKind::Co2 => self.co2,
            PollutantKind::Voc => self.voc,
            PollutantKind::Pm25 => self.pm25,
            PollutantKind::Pm10 => self.pm10,
            PollutantKind::Temperature => self.t,
            PollutantKind::Humidity => self.rh,
        }
    }

    pub fn to_array(&self) -> [T; 6] {
        PollutantKind::ALL.map(|k| self.get(k))
    }
}

/// Particulate mass added instantly by an event, µg/m³.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PmImpulse {
    pub pm25: f64,
    pub pm10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoneParams {
    /// m³
    pub volume: f64,
    /// ppm
    pub outdoor_co2: f64,
    /// Air exchange with all openings closed, 1/s.
    pub air_exchange_base: f64,
    /// Extra exchange while the fan runs, 1/s.
    pub air_exchange_fan: f64,
    /// CO2 emission of one occupant, ppm·m³/s.
    pub co2_per_person: f64,
    /// °C
    pub ambient_temp: f64,
    /// °C
    pub ac_setpoint: f64,
    /// Temperature relaxation rate toward the setpoint while the AC runs, 1/s.
    pub ac_rate: f64,
    /// Relaxation rate toward ambient while the AC is off, 1/s.
    pub passive_rate: f64,
    /// %RH
    pub ambient_rh: f64,
    pub rh_rate: f64,
    pub voc_baseline: f64,
    /// VOC index per second while eating.
    pub voc_eating_rate: f64,
    pub voc_decay: f64,
    pub pm25_baseline: f64,
    pub pm10_baseline: f64,
    /// Deposition rate of particulates, 1/s (air exchange adds to it).
    pub pm_decay: f64,
    pub pm_enter: PmImpulse,
    pub pm_exit: PmImpulse,
    pub pm_fan_on: PmImpulse,
    pub pm_gathering_per_person: PmImpulse,
    /// Inclusive range of extra people a gathering brings.
    pub gathering_size: [u32; 2],
    /// Range of gathering durations, seconds.
    pub gathering_duration: [f64; 2],
    /// How long the VOC source stays active after an eating event, seconds.
    pub eating_duration: f64,
    /// Log-normal spread of every event's particulate impulse.
    pub impulse_spread: f64,
    /// Minor movements per occupant per second, each kicking up `pm_fidget`.
    pub fidget_rate: f64,
    pub pm_fidget: PmImpulse,
    /// Log-normal spread of the outdoor particulate level from day to day.
    pub outdoor_pm_spread: f64,
    /// Half the daily swing of ambient temperature, °C (warmest at 15:00).
    pub diurnal_temp: f64,
    /// Half the daily swing of ambient humidity, %RH (most humid at 03:00).
    pub diurnal_rh: f64,
}

/// Classroom in which 40 occupants take CO2 from 400 to 5000 ppm in 2 h 15 min.
pub const EXAM_OCCUPANTS: u32 = 40;
pub const EXAM_OCCUPIED_SECONDS: f64 = 8100.0;
pub const EXAM_PEAK_CO2: f64 = 5000.0;
pub const CLASSROOM_VOLUME: f64 = 360.0;
pub const CLOSED_ROOM_EXCHANGE: f64 = 5e-6;

/// Per-person CO2 source that makes the closed-form solution
/// `C(t) = C_out + g·n/(λV)·(1 − e^{−λt})` (starting from `C_out`) reach `peak`
/// after `seconds`.
pub fn solve_co2_per_person(
    peak: f64,
    outdoor: f64,
    occupants: u32,
    seconds: f64,
    volume: f64,
    exchange: f64,
) -> f64 {
    let rise = peak - outdoor;
    if exchange == 0.0 {
        return rise * volume / (f64::from(occupants) * seconds);
    }
    rise * exchange * volume / (f64::from(occupants) * (1.0 - (-exchange * seconds).exp()))
}

/// Closed-form CO2 for constant occupancy and air exchange.
pub fn co2_closed_form(params: &ZoneParams, occupants: u32, exchange: f64, c0: f64, t: f64) -> f64 {
    let n = f64::from(occupants);
    let out = params.outdoor_co2;
    if exchange == 0.0 {
        return c0 + params.co2_per_person * n * t / params.volume;
    }
    let decay = (-exchange * t).exp();
    out + params.co2_per_person * n / (exchange * params.volume) * (1.0 - decay) + (c0 - out) * decay
}

impl ZoneParams {
    /// Research lab: moderate infiltration, ceiling fan, split AC.
    pub fn lab() -> Self {
        Self {
            volume: 150.0,
            outdoor_co2: 400.0,
            air_exchange_base: 1.5e-4,
            air_exchange_fan: 1.2e-3,
            co2_per_person: solve_co2_per_person(
                EXAM_PEAK_CO2,
                400.0,
                EXAM_OCCUPANTS,
                EXAM_OCCUPIED_SECONDS,
                CLASSROOM_VOLUME,
                CLOSED_ROOM_EXCHANGE,
            ),
            ambient_temp: 26.0,
            ac_setpoint: 23.0,
            ac_rate: 1.2e-3,
            passive_rate: 6e-4,
            ambient_rh: 55.0,
            rh_rate: 2e-4,
            voc_baseline: 100.0,
            voc_eating_rate: 5.0,
            voc_decay: 1.0 / 90.0,
            pm25_baseline: 15.0,
            pm10_baseline: 30.0,
            pm_decay: 1.0 / 900.0,
            pm_enter: PmImpulse { pm25: 6.0, pm10: 30.0 },
            pm_exit: PmImpulse { pm25: 3.0, pm10: 12.0 },
            pm_fan_on: PmImpulse { pm25: 2.0, pm10: 10.0 },
            pm_gathering_per_person: PmImpulse { pm25: 4.0, pm10: 15.0 },
            gathering_size: [3, 8],
            gathering_duration: [900.0, 2700.0],
            eating_duration: 600.0,
            impulse_spread: 0.1,
            fidget_rate: 1e-3,
            pm_fidget: PmImpulse { pm25: 1.5, pm10: 8.0 },
            outdoor_pm_spread: 0.4,
            diurnal_temp: 1.5,
            diurnal_rh: 6.0,
        }
    }

    /// Same room with constant surroundings and repeatable events, as in a
    /// short controlled observation.
    pub fn steady(self) -> Self {
        Self {
            impulse_spread: 0.0,
            fidget_rate: 0.0,
            outdoor_pm_spread: 0.0,
            diurnal_temp: 0.0,
            diurnal_rh: 0.0,
            ..self
        }
    }

    /// These parameters with baselines moved to the surroundings at `ts`.
    pub fn at(&self, ts: f64, seed: u64) -> Self {
        let mut p = self.clone();
        p.follow(self, ts, seed);
        p
    }

    fn follow(&mut self, nominal: &ZoneParams, ts: f64, seed: u64) {
        let (pm_scale, temp, rh) = nominal.surroundings(ts, seed);
        self.pm25_baseline = nominal.pm25_baseline * pm_scale;
        self.pm10_baseline = nominal.pm10_baseline * pm_scale;
        self.ambient_temp = temp;
        self.ambient_rh = rh;
    }

    /// Outdoor particulate scale, ambient temperature and humidity at unix time `ts`.
    pub fn surroundings(&self, ts: f64, seed: u64) -> (f64, f64, f64) {
        const DAY: f64 = 86_400.0;
        let phase = std::f64::consts::TAU * (ts.rem_euclid(DAY) - 15.0 * 3600.0) / DAY;
        let temp = self.ambient_temp + self.diurnal_temp * phase.cos();
        let rh = (self.ambient_rh - self.diurnal_rh * phase.cos()).clamp(0.0, 100.0);
        let pm_scale = if self.outdoor_pm_spread > 0.0 {
            let day = (ts / DAY).floor();
            let frac = ts / DAY - day;
            let key = derive_seed(seed, "sim.outdoor_pm");
            let z0 = keyed_normal(&[key, day as i64 as u64]);
            let z1 = keyed_normal(&[key, (day + 1.0) as i64 as u64]);
            (self.outdoor_pm_spread * (z0 + (z1 - z0) * frac)).exp()
        } else {
            1.0
        };
        (pm_scale, temp, rh)
    }

    /// Exam classroom with windows shut and a recirculating split AC.
    pub fn classroom() -> Self {
        Self {
            volume: CLASSROOM_VOLUME,
            air_exchange_base: CLOSED_ROOM_EXCHANGE,
            ..Self::lab()
        }
    }

    pub fn baseline(&self) -> PerPollutant<f64> {
        PerPollutant {
            co2: self.outdoor_co2,
            voc: self.voc_baseline,
            pm25: self.pm25_baseline,
            pm10: self.pm10_baseline,
            t: self.ambient_temp,
            rh: self.ambient_rh,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidScenario(what.to_string()));
        if !(self.volume > 0.0) {
            return bad("volume must be positive");
        }
        let rates = [
            self.outdoor_co2,
            self.air_exchange_base,
            self.air_exchange_fan,
            self.co2_per_person,
            self.ac_rate,
            self.passive_rate,
            self.rh_rate,
            self.voc_baseline,
            self.voc_eating_rate,
            self.voc_decay,
            self.pm25_baseline,
            self.pm10_baseline,
            self.pm_decay,
            self.eating_duration,
            self.impulse_spread,
            self.fidget_rate,
            self.outdoor_pm_spread,
            self.diurnal_temp,
            self.diurnal_rh,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("rates and baselines must be finite and non-negative");
        }
        let impulses = [
            self.pm_enter,
            self.pm_exit,
            self.pm_fan_on,
            self.pm_gathering_per_person,
            self.pm_fidget,
        ];
        if impulses.iter().any(|i| !(i.pm25 >= 0.0 && i.pm10 >= 0.0)) {
            return bad("particulate impulses must be non-negative");
        }
        if !(self.ac_setpoint < self.ambient_temp - self.diurnal_temp) {
            return bad("AC setpoint must be below the coolest ambient temperature");
        }
        if !(0.0..=100.0).contains(&self.ambient_rh) || self.diurnal_rh > 100.0 {
            return bad("ambient humidity must be in [0, 100]");
        }
        if self.gathering_size[0] > self.gathering_size[1]
            || !(0.0 <= self.gathering_duration[0] && self.gathering_duration[0] <= self.gathering_duration[1])
        {
            return bad("gathering ranges must be ordered");
        }
        Ok(())
    }
}

impl Default for ZoneParams {
    fn default() -> Self {
        Self::lab()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneState {
    pub t: f64,
    pub occupancy: u32,
    pub fan: bool,
    pub ac: bool,
    pub eating: bool,
    /// Indexed by [`PollutantKind::index`].
    pub levels: [f64; 6],
}

impl ZoneState {
    pub fn level(&self, kind: PollutantKind) -> f64 {
        self.levels[kind.index()]
    }
}

/// One explicit Euler step of the zone dynamics.
pub fn step_zone(state: &ZoneState, p: &ZoneParams, dt: f64) -> Result<ZoneState, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::NonPositiveDt(dt));
    }
    use PollutantKind::*;
    let exchange = p.air_exchange_base + if state.fan { p.air_exchange_fan } else { 0.0 };
    let n = f64::from(state.occupancy);
    let l = |k: PollutantKind| state.levels[k.index()];
    let mut levels = state.levels;

    let co2 = l(Co2);
    levels[Co2.index()] = co2 + dt * (p.co2_per_person * n / p.volume - exchange * (co2 - p.outdoor_co2));

    let (rate, target) = if state.ac {
        (p.ac_rate, p.ac_setpoint)
    } else {
        (p.passive_rate, p.ambient_temp)
    };
    let temp = l(Temperature);
    levels[Temperature.index()] = temp - dt * rate * (temp - target);

    let voc = l(Voc);
    let source = if state.eating { p.voc_eating_rate } else { 0.0 };
    levels[Voc.index()] = voc + dt * (source - (p.voc_decay + exchange) * (voc - p.voc_baseline));

    let pm_rate = p.pm_decay + exchange;
    levels[Pm25.index()] = l(Pm25) - dt * pm_rate * (l(Pm25) - p.pm25_baseline);
    levels[Pm10.index()] = l(Pm10) - dt * pm_rate * (l(Pm10) - p.pm10_baseline);

    let rh = l(Humidity);
    levels[Humidity.index()] = (rh - dt * p.rh_rate * (rh - p.ambient_rh)).clamp(0.0, 100.0);

    Ok(ZoneState {
        t: state.t + dt,
        levels,
        ..state.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    /// Seconds from scenario start.
    pub at: f64,
    pub label: ActivityLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePlacement {
    pub id: DeviceId,
    /// Fraction of the zone's deviation from baseline this device sees, in (0, 1].
    pub weight: f64,
}

/// Per-channel white noise and per-device bias spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub sigma: PerPollutant<f64>,
    pub bias_sd: PerPollutant<f64>,
}

impl SensorNoise {
    pub fn none() -> Self {
        Self {
            sigma: PerPollutant::default(),
            bias_sd: PerPollutant::default(),
        }
    }
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            sigma: PerPollutant {
                co2: 8.0,
                voc: 5.0,
                pm25: 1.0,
                pm10: 2.0,
                t: 0.1,
                rh: 0.5,
            },
            bias_sd: PerPollutant {
                co2: 15.0,
                voc: 10.0,
                pm25: 1.5,
                pm10: 3.0,
                t: 0.3,
                rh: 1.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialState {
    pub occupancy: u32,
    pub fan: bool,
    pub ac: bool,
    /// Starting levels; unset channels start at the zone baseline.
    pub levels: PerPollutant<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Seconds.
    pub duration: f64,
    /// Unix time of the first grid cell.
    #[serde(default = "default_start_ts")]
    pub start_ts: f64,
    #[serde(default)]
    pub zone: ZoneParams,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub script: Vec<ScriptEvent>,
    #[serde(default = "default_devices")]
    pub devices: Vec<DevicePlacement>,
    #[serde(default)]
    pub noise: SensorNoise,
}

fn default_start_ts() -> f64 {
    1_700_000_000.0
}

/// Four devices at the corners of a room, nearest to the door, fan, AC and desks.
pub fn default_devices() -> Vec<DevicePlacement> {
    [("d1", 1.0), ("d2", 0.85), ("d3", 0.7), ("d4", 0.9)]
        .into_iter()
        .map(|(id, weight)| DevicePlacement {
            id: DeviceId::new(id).expect("static id"),
            weight,
        })
        .collect()
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: String| Err(SimError::InvalidScenario(what));
        if !(self.duration.is_finite() && self.duration >= 1.0) {
            return bad(format!("duration must be at least 1 s, got {}", self.duration));
        }
        if !self.start_ts.is_finite() {
            return bad("start_ts must be finite".into());
        }
        self.zone.validate()?;
        if self.devices.is_empty() {
            return bad("at least one device is required".into());
        }
        for (i, d) in self.devices.iter().enumerate() {
            if !(d.weight > 0.0 && d.weight <= 1.0) {
                return bad(format!("device {} weight must be in (0, 1]", d.id));
            }
            if self.devices[..i].iter().any(|o| o.id == d.id) {
                return bad(format!("duplicate device {}", d.id));
            }
        }
        if self
            .script
            .iter()
            .any(|e| !(e.at.is_finite() && e.at >= 0.0 && e.at < self.duration))
        {
            return bad("script events must lie in [0, duration)".into());
        }
        let sigmas = self.noise.sigma.to_array().into_iter().chain(self.noise.bias_sd.to_array());
        if sigmas.clone().any(|s| !(s.is_finite() && s >= 0.0)) {
            return bad("noise deviations must be non-negative".into());
        }
        if let Some(rh) = self.initial.levels.rh {
            if !(0.0..=100.0).contains(&rh) {
                return bad("initial humidity must be in [0, 100]".into());
            }
        }
        Ok(())
    }

    pub fn device_ids(&self) -> Vec<DeviceId> {
        self.devices.iter().map(|d| d.id.clone()).collect()
    }

    /// Number of one-second cells.
    pub fn cells(&self) -> usize {
        self.duration.ceil() as usize
    }

    fn initial_state(&self, seed: u64) -> ZoneState {
        let base = self.zone.at(self.start_ts, seed).baseline();
        let levels = PollutantKind::ALL.map(|k| self.initial.levels.get(k).unwrap_or(base.get(k)));
        ZoneState {
            t: 0.0,
            occupancy: self.initial.occupancy,
            fan: self.initial.fan,
            ac: self.initial.ac,
            eating: false,
            levels,
        }
    }

    /// The script as annotations on the unix time axis, in time order.
    pub fn annotations(&self) -> Vec<ActivityAnnotation> {
        let mut events = self.script.clone();
        events.sort_by(|a, b| a.at.total_cmp(&b.at));
        events
            .into_iter()
            .map(|e| ActivityAnnotation {
                ts: self.start_ts + e.at,
                label: e.label,
                annotator: Some("sim".into()),
            })
            .collect()
    }
}

/// Runs the scenario and records the zone state at every one-second cell that
/// falls in `ranges` (sorted, non-overlapping, in cells from the start).
fn integrate(sc: &Scenario, seed: u64, ranges: &[(usize, usize)]) -> Result<Vec<AlignedSeries>, SimError> {
    sc.validate()?;
    let zone_id = DeviceId::new("zone").expect("static id");
    let mut outputs: Vec<AlignedSeries> = ranges
        .iter()
        .map(|&(a, b)| AlignedSeries::empty(vec![zone_id.clone()], sc.start_ts + a as f64, 1.0, b - a))
        .collect();

    let mut script = sc.script.clone();
    script.sort_by(|a, b| a.at.total_cmp(&b.at));
    let mut next_event = 0;
    let mut rng = substream(seed, "sim.events");
    // (release time, people) for gatherings in progress.
    let mut releases: Vec<(f64, u32)> = Vec::new();
    let mut eating_until = f64::NEG_INFINITY;

    let mut state = sc.initial_state(seed);
    let nominal = &sc.zone;
    let mut p = nominal.clone();
    let fidget_key = derive_seed(seed, "sim.fidget");
    let total = ranges.last().map_or(0, |r| r.1);
    let mut range = 0;
    for k in 0..total {
        let now = k as f64;
        let ts = sc.start_ts + now;
        p.follow(nominal, ts, seed);
        releases.retain(|&(until, people)| {
            if until <= now {
                state.occupancy = state.occupancy.saturating_sub(people);
                false
            } else {
                true
            }
        });
        while next_event < script.len() && script[next_event].at <= now {
            let ev = &script[next_event];
            apply_event(&mut state, &p, ev, &mut rng, &mut releases, &mut eating_until);
            next_event += 1;
        }
        state.eating = now < eating_until;
        if state.occupancy > 0 && p.fidget_rate > 0.0 {
            let cell = ts.round() as i64 as u64;
            let u = (hash_key(&[fidget_key, cell]) >> 11) as f64 / (1u64 << 53) as f64;
            if u < p.fidget_rate * f64::from(state.occupancy) {
                let scale = spread(p.impulse_spread, keyed_normal(&[fidget_key, cell, 1]));
                state.levels[PollutantKind::Pm25.index()] += p.pm_fidget.pm25 * scale;
                state.levels[PollutantKind::Pm10.index()] += p.pm_fidget.pm10 * scale;
            }
        }

        while range < ranges.len() && k >= ranges[range].1 {
            range += 1;
        }
        if range < ranges.len() && k >= ranges[range].0 {
            let cell = k - ranges[range].0;
            for kind in PollutantKind::ALL {
                outputs[range].set(0, kind, cell, Some(state.level(kind)));
            }
        }
        state = step_zone(&state, &p, 1.0)?;
    }
    Ok(outputs)
}

fn apply_event(
    state: &mut ZoneState,
    p: &ZoneParams,
    ev: &ScriptEvent,
    rng: &mut impl Rng,
    releases: &mut Vec<(f64, u32)>,
    eating_until: &mut f64,
) {
    let jitter = spread(p.impulse_spread, crate::rng::standard_normal(rng));
    let mut impulse = |imp: PmImpulse, scale: f64| {
        let scale = scale * jitter;
        state.levels[PollutantKind::Pm25.index()] += imp.pm25 * scale;
        state.levels[PollutantKind::Pm10.index()] += imp.pm10 * scale;
    };
    match ev.label {
        ActivityLabel::Enter => {
            impulse(p.pm_enter, 1.0);
            state.occupancy += 1;
        }
        ActivityLabel::Exit => {
            impulse(p.pm_exit, 1.0);
            state.occupancy = state.occupancy.saturating_sub(1);
        }
        ActivityLabel::FanOn => {
            if !state.fan {
                impulse(p.pm_fan_on, 1.0);
            }
            state.fan = true;
        }
        ActivityLabel::FanOff => state.fan = false,
        ActivityLabel::AcOn => state.ac = true,
        ActivityLabel::AcOff => state.ac = false,
        ActivityLabel::Gathering => {
            let people = rng.gen_range(p.gathering_size[0]..=p.gathering_size[1]);
            let [lo, hi] = p.gathering_duration;
            let duration = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            impulse(p.pm_gathering_per_person, f64::from(people));
            state.occupancy += people;
            releases.push((ev.at + duration, people));
        }
        ActivityLabel::Eating => *eating_until = ev.at + p.eating_duration,
    }
}

/// Mean-one log-normal multiplier from a standard normal draw.
fn spread(sigma: f64, z: f64) -> f64 {
    (sigma * z - 0.5 * sigma * sigma).exp()
}

/// The noiseless zone trajectory as a one-device series named `zone`.
pub fn simulate_truth(sc: &Scenario, seed: u64) -> Result<AlignedSeries, SimError> {
    let mut out = integrate(sc, seed, &[(0, sc.cells())])?;
    Ok(out.remove(0))
}

/// Full-length observed telemetry for every device plus the script as annotations.
pub fn simulate_scenario(sc: &Scenario, seed: u64) -> Result<(AlignedSeries, Vec<ActivityAnnotation>), SimError> {
    let truth = simulate_truth(sc, seed)?;
    let observed = apply_sensor_model(&truth, &sc.zone.baseline(), &sc.devices, &sc.noise, seed);
    Ok((observed, sc.annotations()))
}

/// Observed telemetry only within `margin` seconds of each scripted event.
///
/// Every recorded cell is identical to the same cell of
/// [`simulate_scenario`]; long idle stretches are simply not materialized.
pub fn simulate_segments(
    sc: &Scenario,
    seed: u64,
    margin: f64,
) -> Result<(Vec<AlignedSeries>, Vec<ActivityAnnotation>), SimError> {
    sc.validate()?;
    let cells = sc.cells();
    let margin = margin.max(0.0).ceil() as usize;
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut times: Vec<f64> = sc.script.iter().map(|e| e.at).collect();
    times.sort_by(f64::total_cmp);
    for at in times {
        let centre = at.ceil() as usize;
        let a = centre.saturating_sub(margin);
        let b = (centre + margin).min(cells);
        match ranges.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => ranges.push((a, b)),
        }
    }
    let truths = integrate(sc, seed, &ranges)?;
    let base = sc.zone.baseline();
    let observed = truths
        .iter()
        .map(|t| apply_sensor_model(t, &base, &sc.devices, &sc.noise, seed))
        .collect();
    Ok((observed, sc.annotations()))
}

fn device_key(id: &DeviceId) -> u64 {
    hash_key(&id.as_str().bytes().map(u64::from).collect::<Vec<_>>())
}

/// Turns a one-device true series into per-device observations:
/// `baseline + bias + weight·(truth − baseline) + noise`, clamped to physical
/// ranges. Noise is addressed by absolute grid time, so any stretch of a trace
/// regenerates identically.
pub fn apply_sensor_model(
    truth: &AlignedSeries,
    baseline: &PerPollutant<f64>,
    devices: &[DevicePlacement],
    noise: &SensorNoise,
    seed: u64,
) -> AlignedSeries {
    let noise_seed = derive_seed(seed, "sim.noise");
    let bias_seed = derive_seed(seed, "sim.bias");
    let ids = devices.iter().map(|d| d.id.clone()).collect();
    let mut out = AlignedSeries::empty(ids, truth.t0(), truth.step(), truth.len());
    for (d, placement) in devices.iter().enumerate() {
        let dk = device_key(&placement.id);
        for kind in PollutantKind::ALL {
            let p = kind.index() as u64;
            let bias = noise.bias_sd.get(kind) * keyed_normal(&[bias_seed, dk, p]);
            let sigma = noise.sigma.get(kind);
            let base = baseline.get(kind);
            let src = truth.channel(0, kind);
            let dst = out.channel_mut(d, kind);
            for (k, (o, &x)) in dst.iter_mut().zip(src).enumerate() {
                if x.is_nan() {
                    continue;
                }
                let cell = (truth.time(k) / truth.step()).round() as i64 as u64;
                let e = if sigma > 0.0 {
                    sigma * keyed_normal(&[noise_seed, dk, p, cell])
                } else {
                    0.0
                };
                let v = base + bias + placement.weight * (x - base) + e;
                *o = match kind {
                    PollutantKind::Humidity => v.clamp(0.0, 100.0),
                    PollutantKind::Temperature => v,
                    _ => v.max(0.0),
                };
            }
        }
    }
    out
}

pub type ClassCounts = BTreeMap<ActivityLabel, usize>;

/// An approximate reading of the class mix of the three-month lab dataset:
/// 705 events, dominated by entering and leaving, then fan use, then AC use,
/// with gathering and eating rare.
pub fn lab_class_mix() -> ClassCounts {
    use ActivityLabel::*;
    [
        (Enter, 190),
        (Exit, 186),
        (FanOn, 93),
        (FanOff, 92),
        (AcOn, 45),
        (AcOff, 44),
        (Gathering, 25),
        (Eating, 30),
    ]
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Feature window length the schedule is spaced for, seconds.
    pub tau: f64,
    /// Preferred spacing is `2·tau`; it shrinks down to this floor if needed.
    pub min_spacing: f64,
    /// Soft cap on regular occupants.
    pub max_occupancy: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            tau: 600.0,
            min_spacing: 60.0,
            max_occupancy: 8,
        }
    }
}

/// A lab scenario with `counts` events spread over `duration` seconds.
pub fn generate_scenario(counts: &ClassCounts, duration: f64, seed: u64) -> Result<Scenario, SimError> {
    let template = Scenario {
        duration,
        start_ts: default_start_ts(),
        zone: ZoneParams::lab(),
        initial: InitialState::default(),
        script: Vec::new(),
        devices: default_devices(),
        noise: SensorNoise::default(),
    };
    generate_scenario_with(&template, counts, seed, &GeneratorConfig::default())
}

/// Fills `template.script` with a random schedule honouring state consistency:
/// nobody leaves an empty room, and the fan and AC alternate on and off while
/// both directions remain. Initial occupancy and appliance states are chosen
/// so that the counts can be satisfied.
pub fn generate_scenario_with(
    template: &Scenario,
    counts: &ClassCounts,
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<Scenario, SimError> {
    use ActivityLabel::*;
    let count = |l: ActivityLabel| counts.get(&l).copied().unwrap_or(0);
    let total: usize = ActivityLabel::ALL.iter().map(|&l| count(l)).sum();
    let mut sc = template.clone();
    sc.script.clear();
    sc.initial.occupancy = count(Exit).saturating_sub(count(Enter)) as u32;
    sc.initial.fan = count(FanOff) > count(FanOn);
    sc.initial.ac = count(AcOff) > count(AcOn);
    if !sc.initial.ac {
        sc.initial.levels.t = None;
    }
    if total == 0 {
        sc.validate()?;
        return Ok(sc);
    }

    let margin = cfg.tau;
    let usable = sc.duration - 2.0 * margin;
    let spacing = (2.0 * cfg.tau).min((usable / total as f64).floor());
    if !(usable > 0.0) || spacing < cfg.min_spacing {
        return Err(SimError::Infeasible(format!(
            "{total} events need at least {} s each but only {usable} s are usable",
            cfg.min_spacing
        )));
    }
    let mut rng = substream(seed, "scenario.schedule");
    let slack = usable - spacing * total as f64;
    let mut offsets: Vec<f64> = (0..total).map(|_| (rng.gen::<f64>() * slack).floor()).collect();
    offsets.sort_by(f64::total_cmp);
    let times: Vec<f64> = offsets
        .iter()
        .enumerate()
        .map(|(i, off)| margin + i as f64 * spacing + off)
        .collect();

    let mut remaining: BTreeMap<ActivityLabel, usize> = ActivityLabel::ALL.iter().map(|&l| (l, count(l))).collect();
    let (mut occupancy, mut fan, mut ac) = (sc.initial.occupancy, sc.initial.fan, sc.initial.ac);
    for at in times {
        let feasible = |l: ActivityLabel| match l {
            Enter => occupancy < cfg.max_occupancy,
            Exit => occupancy > 0,
            FanOn => !fan,
            FanOff => fan,
            AcOn => !ac,
            AcOff => ac,
            Gathering | Eating => true,
        };
        let mut pool: Vec<(ActivityLabel, usize)> = remaining
            .iter()
            .filter(|&(&l, &n)| n > 0 && feasible(l))
            .map(|(&l, &n)| (l, n))
            .collect();
        if pool.is_empty() {
            // Only constrained events remain; exits stay impossible in an empty room.
            pool = remaining
                .iter()
                .filter(|&(&l, &n)| n > 0 && (l != Exit || occupancy > 0))
                .map(|(&l, &n)| (l, n))
                .collect();
        }
        let weight: usize = pool.iter().map(|p| p.1).sum();
        if weight == 0 {
            return Err(SimError::Infeasible("no schedulable event remains".into()));
        }
        let mut pick = rng.gen_range(0..weight);
        let label = pool
            .iter()
            .find(|&&(_, n)| {
                if pick < n {
                    true
                } else {
                    pick -= n;
                    false
                }
            })
            .map(|p| p.0)
            .expect("pick within total weight");
        *remaining.get_mut(&label).expect("known label") -= 1;
        match label {
            Enter => occupancy += 1,
            Exit => occupancy -= 1,
            FanOn => fan = true,
            FanOff => fan = false,
            AcOn => ac = true,
            AcOff => ac = false,
            Gathering | Eating => {}
        }
        sc.script.push(ScriptEvent { at, label });
    }
    sc.validate()?;
    Ok(sc)
}

/// Named scenarios reproducing the pilot observations.
pub mod presets {
    use super::*;

    fn events(list: &[(f64, ActivityLabel, usize)]) -> Vec<ScriptEvent> {
        list.iter()
            .flat_map(|&(at, label, n)| std::iter::repeat_n(ScriptEvent { at, label }, n))
            .collect()
    }

    /// 40 students in a shut classroom for 2 h 15 min, then two more hours empty.
    pub fn exam() -> Scenario {
        Scenario {
            duration: EXAM_OCCUPIED_SECONDS + 7200.0,
            start_ts: default_start_ts(),
            zone: ZoneParams::classroom().steady(),
            initial: InitialState {
                ac: true,
                ..InitialState::default()
            },
            script: events(&[
                (0.0, ActivityLabel::Enter, EXAM_OCCUPANTS as usize),
                (EXAM_OCCUPIED_SECONDS, ActivityLabel::Exit, EXAM_OCCUPANTS as usize),
            ]),
            devices: default_devices(),
            noise: SensorNoise::default(),
        }
    }

    /// AC switched on at 10 min in a room at 26 °C, off again an hour later.
    pub fn ac() -> Scenario {
        Scenario {
            duration: 3.0 * 3600.0,
            start_ts: default_start_ts(),
            zone: ZoneParams::lab().steady(),
            initial: InitialState::default(),
            script: events(&[(600.0, ActivityLabel::AcOn, 1), (4200.0, ActivityLabel::AcOff, 1)]),
            devices: default_devices(),
            noise: SensorNoise::default(),
        }
    }

    /// One person eating near the sensors 10 min in.
    pub fn eating() -> Scenario {
        Scenario {
            duration: 3600.0,
            start_ts: default_start_ts(),
            zone: ZoneParams::lab().steady(),
            initial: InitialState::default(),
            script: events(&[(600.0, ActivityLabel::Eating, 1)]),
            devices: default_devices(),
            noise: SensorNoise::default(),
        }
    }

    /// Ninety days of lab activity with the reference class mix.
    pub fn lab_quarter(seed: u64) -> Result<Scenario, SimError> {
        generate_scenario(&lab_class_mix(), 90.0 * 86_400.0, seed)
    }

    pub fn by_name(name: &str, seed: u64) -> Result<Scenario, SimError> {
        match name {
            "exam" => Ok(exam()),
            "ac" => Ok(ac()),
            "eating" => Ok(eating()),
            "lab" => lab_quarter(seed),
            "lab-day" => {
                let mut counts = lab_class_mix();
                for v in counts.values_mut() {
                    *v = (*v).div_ceil(20);
                }
                generate_scenario(&counts, 86_400.0, seed)
            }
            other => Err(SimError::InvalidScenario(format!("unknown preset `{other}`"))),
        }
    }

    pub const NAMES: [&str; 5] = ["exam", "ac", "eating", "lab", "lab-day"];
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mut sc: Scenario) -> Scenario {
        sc.noise = SensorNoise::none();
        sc
    }

    fn state(p: &ZoneParams) -> ZoneState {
        ZoneState {
            t: 0.0,
            occupancy: 0,
            fan: false,
            ac: false,
            eating: false,
            levels: p.baseline().to_array(),
        }
    }

    #[test]
    fn rejects_non_positive_dt() {
        let p = ZoneParams::lab();
        assert_eq!(step_zone(&state(&p), &p, 0.0), Err(SimError::NonPositiveDt(0.0)));
    }

    #[test]
    fn empty_room_with_fan_decays() {
        let p = ZoneParams::lab();
        let mut s = state(&p);
        s.fan = true;
        s.levels[PollutantKind::Co2.index()] = 1500.0;
        let mut prev = 1500.0;
        for _ in 0..3600 {
            s = step_zone(&s, &p, 1.0).unwrap();
            let c = s.level(PollutantKind::Co2);
            assert!(c < prev && c > p.outdoor_co2);
            prev = c;
        }
    }

    #[test]
    fn euler_tracks_closed_form() {
        let p = ZoneParams::lab();
        let mut s = state(&p);
        s.occupancy = 5;
        s.levels[PollutantKind::Co2.index()] = 600.0;
        let mut max_err = 0.0f64;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 1..=14_400 {
            s = step_zone(&s, &p, 1.0).unwrap();
            let exact = co2_closed_form(&p, 5, p.air_exchange_base, 600.0, k as f64);
            max_err = max_err.max((s.level(PollutantKind::Co2) - exact).abs());
            lo = lo.min(exact);
            hi = hi.max(exact);
        }
        assert!(max_err < 0.01 * (hi - lo), "max error {max_err} over range {}", hi - lo);
    }

    #[test]
    fn calibration_constant_hits_exam_peak() {
        let p = ZoneParams::classroom();
        let c = co2_closed_form(&p, EXAM_OCCUPANTS, p.air_exchange_base, 400.0, EXAM_OCCUPIED_SECONDS);
        assert!((c - EXAM_PEAK_CO2).abs() < 1e-6);
        // roughly 0.0052 L/s of exhaled CO2 per person
        assert!((p.co2_per_person - 5.2).abs() < 0.1, "{}", p.co2_per_person);
    }

    #[test]
    fn empty_script_is_flat() {
        let mut sc = quiet(presets::eating());
        sc.script.clear();
        let (obs, anns) = simulate_scenario(&sc, 1).unwrap();
        assert!(anns.is_empty());
        let base = sc.zone.baseline();
        for d in 0..obs.devices().len() {
            for kind in PollutantKind::ALL {
                assert!(obs.channel(d, kind).iter().all(|&v| (v - base.get(kind)).abs() < 1e-9));
            }
        }
    }

    #[test]
    fn identity_sensor_model() {
        let sc = presets::eating();
        let truth = simulate_truth(&sc, 3).unwrap();
        let dev = vec![DevicePlacement {
            id: DeviceId::new("x").unwrap(),
            weight: 1.0,
        }];
        let obs = apply_sensor_model(&truth, &sc.zone.baseline(), &dev, &SensorNoise::none(), 3);
        for kind in PollutantKind::ALL {
            assert_eq!(obs.channel(0, kind), truth.channel(0, kind));
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let sc = presets::ac();
        let a = simulate_scenario(&sc, 11).unwrap();
        let b = simulate_scenario(&sc, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_scenario(&sc, 12).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn segments_match_full_run() {
        let counts: ClassCounts = [(ActivityLabel::Enter, 3), (ActivityLabel::Gathering, 2), (ActivityLabel::Exit, 2)]
            .into_iter()
            .collect();
        let sc = generate_scenario(&counts, 6.0 * 3600.0, 5).unwrap();
        let (full, _) = simulate_scenario(&sc, 5).unwrap();
        let (segs, anns) = simulate_segments(&sc, 5, 400.0).unwrap();
        assert_eq!(anns.len(), 7);
        for seg in &segs {
            let start = (seg.t0() - full.t0()) as usize;
            assert_eq!(full.slice(start, seg.len()).unwrap(), *seg);
        }
    }

    #[test]
    fn generator_is_deterministic_and_consistent() {
        let counts = lab_class_mix();
        let a = generate_scenario(&counts, 30.0 * 86_400.0, 9).unwrap();
        let b = generate_scenario(&counts, 30.0 * 86_400.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.script.len(), 705);
        let mut occ = a.initial.occupancy as i64;
        for e in &a.script {
            match e.label {
                ActivityLabel::Enter => occ += 1,
                ActivityLabel::Exit => occ -= 1,
                _ => {}
            }
            assert!(occ >= 0);
        }
        for w in a.script.windows(2) {
            assert!(w[1].at - w[0].at >= 60.0);
        }
        for label in ActivityLabel::ALL {
            let n = a.script.iter().filter(|e| e.label == label).count();
            assert_eq!(n, counts[&label]);
        }
    }

    #[test]
    fn generator_edge_cases() {
        let empty: ClassCounts = ActivityLabel::ALL.iter().map(|&l| (l, 0)).collect();
        assert!(generate_scenario(&empty, 3600.0, 1).unwrap().script.is_empty());
        let crowded: ClassCounts = [(ActivityLabel::Eating, 100)].into_iter().collect();
        assert!(matches!(
            generate_scenario(&crowded, 3600.0, 1),
            Err(SimError::Infeasible(_))
        ));
        // more exits than enters: start with people inside
        let exits: ClassCounts = [(ActivityLabel::Exit, 3)].into_iter().collect();
        let sc = generate_scenario(&exits, 86_400.0, 1).unwrap();
        assert_eq!(sc.initial.occupancy, 3);
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = presets::ac();
        sc.zone.ac_setpoint = 30.0;
        assert!(matches!(sc.validate(), Err(SimError::InvalidScenario(_))));
        let mut sc = presets::ac();
        sc.script.push(ScriptEvent {
            at: sc.duration,
            label: ActivityLabel::Enter,
        });
        assert!(sc.validate().is_err());
        let mut sc = presets::ac();
        sc.devices[0].weight = 0.0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn scenario_toml_round_trip() {
        let sc = presets::ac();
        let text = toml::to_string(&sc).unwrap();
        let back: Scenario = toml::from_str(&text).unwrap();
        assert_eq!(back, sc);
        let minimal: Scenario = toml::from_str("duration = 3600.0\n[[script]]\nat = 5.0\nlabel = \"fan on\"\n").unwrap();
        assert_eq!(minimal.script[0].label, ActivityLabel::FanOn);
        assert_eq!(minimal.devices.len(), 4);
    }
}
