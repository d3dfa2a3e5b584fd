//! Telemetry collector: a TCP service that accepts newline-delimited JSON
//! samples from sensing modules and appends them to per-device daily logs.
//!
//! Wire protocol: each LF-terminated line carries one sample object such as
//! `{"ts":1700000000,"dev":"d1","co2":412.0}` and receives exactly one reply
//! line, `OK` or `ERR <reason>`, where reason is one of `parse_error`,
//! `validation_error(<field>)`, `line_too_long` or `storage`. A record is
//! acknowledged only after it has been written to its log file; files are
//! fsynced every 100 records per device or once a second, whichever is first.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use airshadow_core::ingest::{parse_ndjson_sample, sample_to_ndjson};
use airshadow_core::{validate_sample, DeviceId, ModelError, PollutantSample};
use chrono::{DateTime, NaiveDate};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader as AsyncBufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub const DEFAULT_MAX_LINE: usize = 4096;
pub const SYNC_EVERY_RECORDS: usize = 100;
pub const SYNC_INTERVAL: Duration = Duration::from_secs(1);
pub const DATA_DIR_ENV: &str = "AIR_DATA_DIR";

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error("storage failure at {path}: {source}")]
    StorageFailure { path: PathBuf, source: io::Error },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn storage(path: &Path) -> impl FnOnce(io::Error) -> CollectorError + '_ {
    move |source| CollectorError::StorageFailure {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectorConfig {
    /// `host:port`. [`Collector::start`] also accepts port 0 (OS-assigned),
    /// which [`CollectorConfig::validate`] rejects.
    pub bind: String,
    pub data_dir: PathBuf,
    pub max_line: usize,
    /// Reject physically impossible readings instead of storing them as sent.
    pub strict: bool,
}

impl CollectorConfig {
    pub fn new(bind: impl Into<String>, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind: bind.into(),
            data_dir: data_dir.into(),
            max_line: DEFAULT_MAX_LINE,
            strict: false,
        }
    }

    /// Applies the `AIR_DATA_DIR` override if it is set and non-empty.
    pub fn with_env_override(mut self) -> Self {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            self.data_dir = PathBuf::from(dir);
        }
        self
    }

    pub fn validate(&self) -> Result<(), CollectorError> {
        self.check_line_limit()?;
        match self.bind.rsplit_once(':').and_then(|(_, p)| p.parse::<u16>().ok()) {
            Some(1..) => Ok(()),
            _ => Err(CollectorError::InvalidConfig(format!(
                "bind address `{}` needs a port in 1-65535",
                self.bind
            ))),
        }
    }

    fn check_line_limit(&self) -> Result<(), CollectorError> {
        if self.max_line == 0 {
            return Err(CollectorError::InvalidConfig("max line length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AckReason {
    ParseError,
    /// Names the offending field.
    ValidationError(String),
    LineTooLong,
    Storage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ack {
    Ok,
    Err(AckReason),
}

impl fmt::Display for Ack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ack::Ok => f.write_str("OK"),
            Ack::Err(AckReason::ParseError) => f.write_str("ERR parse_error"),
            Ack::Err(AckReason::ValidationError(field)) => write!(f, "ERR validation_error({field})"),
            Ack::Err(AckReason::LineTooLong) => f.write_str("ERR line_too_long"),
            Ack::Err(AckReason::Storage) => f.write_str("ERR storage"),
        }
    }
}

/// Position of an appended record: the UTC day file and the 0-based line in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RecordOffset {
    pub date: NaiveDate,
    pub index: u64,
}

fn utc_date(ts: f64) -> Option<NaiveDate> {
    let secs = ts.floor();
    if !(secs.is_finite() && secs.abs() < 1e15) {
        return None;
    }
    DateTime::from_timestamp(secs as i64, 0).map(|t| t.date_naive())
}

pub fn log_path(data_dir: &Path, device: &DeviceId, date: NaiveDate) -> PathBuf {
    data_dir.join(device.as_str()).join(format!("{}.ndjson", date.format("%Y-%m-%d")))
}

struct DeviceLog {
    date: NaiveDate,
    path: PathBuf,
    file: File,
    next_index: u64,
    unsynced: usize,
    last_sync: Instant,
}

impl DeviceLog {
    /// Opens a day file for appending. A torn final line (a write that never
    /// completed, hence never acknowledged) is cut off first.
    fn open(path: PathBuf, date: NaiveDate) -> io::Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut contents = Vec::new();
        file.read_to_end(&mut contents)?;
        let keep = contents.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if keep < contents.len() {
            log::warn!("{}: dropping {} bytes of incomplete record", path.display(), contents.len() - keep);
            file.set_len(keep as u64)?;
            file.seek(SeekFrom::End(0))?;
        }
        let next_index = contents[..keep].iter().filter(|&&b| b == b'\n').count() as u64;
        Ok(Self {
            date,
            path,
            file,
            next_index,
            unsynced: 0,
            last_sync: Instant::now(),
        })
    }

    fn sync(&mut self) -> io::Result<()> {
        if self.unsynced > 0 {
            self.file.sync_data()?;
            self.unsynced = 0;
        }
        self.last_sync = Instant::now();
        Ok(())
    }
}

/// Append-only per-device, per-UTC-day sample logs with one writer per device.
pub struct Store {
    dir: PathBuf,
    devices: Mutex<HashMap<DeviceId, Arc<Mutex<Option<DeviceLog>>>>>,
}

impl Store {
    /// Creates the directory if needed and checks that it is writable.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CollectorError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(storage(&dir))?;
        let probe = dir.join(".write-probe");
        File::create(&probe)
            .and_then(|_| fs::remove_file(&probe))
            .map_err(storage(&dir))?;
        Ok(Self {
            dir,
            devices: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn writer(&self, device: &DeviceId) -> Arc<Mutex<Option<DeviceLog>>> {
        let mut map = self.devices.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(device.clone()).or_default().clone()
    }

    /// Appends one canonical line to the device's log for the sample's UTC date.
    pub fn append(&self, sample: &PollutantSample) -> Result<RecordOffset, CollectorError> {
        let date = utc_date(sample.ts).ok_or_else(|| CollectorError::StorageFailure {
            path: self.dir.clone(),
            source: io::Error::new(io::ErrorKind::InvalidInput, "timestamp outside the calendar"),
        })?;
        let writer = self.writer(&sample.device);
        let mut guard = writer.lock().unwrap_or_else(|e| e.into_inner());
        if guard.as_ref().is_none_or(|w| w.date != date) {
            if let Some(old) = guard.as_mut() {
                old.sync().map_err(storage(&old.path.clone()))?;
            }
            let path = log_path(&self.dir, &sample.device, date);
            *guard = Some(DeviceLog::open(path.clone(), date).map_err(storage(&path))?);
        }
        let log = guard.as_mut().expect("writer opened above");
        let mut line = sample_to_ndjson(sample);
        line.push('\n');
        log.file.write_all(line.as_bytes()).map_err(storage(&log.path))?;
        let offset = RecordOffset {
            date,
            index: log.next_index,
        };
        log.next_index += 1;
        log.unsynced += 1;
        if log.unsynced >= SYNC_EVERY_RECORDS || log.last_sync.elapsed() >= SYNC_INTERVAL {
            log.sync().map_err(storage(&log.path.clone()))?;
        }
        Ok(offset)
    }

    /// Fsyncs every device with unsynced records.
    pub fn sync_all(&self) -> Result<(), CollectorError> {
        let writers: Vec<_> = self
            .devices
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        for w in writers {
            let mut guard = w.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(log) = guard.as_mut() {
                log.sync().map_err(storage(&log.path.clone()))?;
            }
        }
        Ok(())
    }
}

fn validation_field(e: &ModelError) -> String {
    match e {
        ModelError::NonFiniteTimestamp => "ts".into(),
        ModelError::NonFiniteReading(k) | ModelError::NegativeConcentration(k) => k.token().into(),
        ModelError::HumidityOutOfRange(_) => "rh".into(),
        ModelError::EmptyReadings => "readings".into(),
        ModelError::InvalidDeviceId(_) => "dev".into(),
        ModelError::UnknownLabel(_) | ModelError::UnknownPollutant(_) => "record".into(),
    }
}

/// Parses, validates and stores one record line (without its terminator).
pub fn ingest_line(store: &Store, line: &[u8], max_line: usize, strict: bool) -> Ack {
    if line.len() > max_line {
        return Ack::Err(AckReason::LineTooLong);
    }
    let Ok(text) = std::str::from_utf8(line) else {
        return Ack::Err(AckReason::ParseError);
    };
    let sample = match parse_ndjson_sample(text.trim_end_matches('\r')) {
        Ok(s) => s,
        Err(_) => return Ack::Err(AckReason::ParseError),
    };
    if sample.readings.is_empty() {
        return Ack::Err(AckReason::ValidationError("readings".into()));
    }
    if utc_date(sample.ts).is_none() {
        return Ack::Err(AckReason::ValidationError("ts".into()));
    }
    let sample = if strict {
        match validate_sample(sample) {
            Ok(v) => v.into_inner(),
            Err(e) => return Ack::Err(AckReason::ValidationError(validation_field(&e))),
        }
    } else {
        sample
    };
    match store.append(&sample) {
        Ok(_) => Ack::Ok,
        Err(e) => {
            log::error!("{e}");
            Ack::Err(AckReason::Storage)
        }
    }
}

/// A collector running on a background task.
pub struct Collector {
    addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<Result<(), CollectorError>>,
}

impl Collector {
    /// Binds and starts serving. Fails early if the address or data directory is unusable.
    pub async fn start(cfg: CollectorConfig) -> Result<Self, CollectorError> {
        cfg.check_line_limit()?;
        let store = Arc::new(Store::open(&cfg.data_dir)?);
        let listener = TcpListener::bind(&cfg.bind)
            .await
            .map_err(|source| CollectorError::BindFailure {
                addr: cfg.bind.clone(),
                source,
            })?;
        let addr = listener.local_addr().map_err(|source| CollectorError::BindFailure {
            addr: cfg.bind.clone(),
            source,
        })?;
        let (tx, rx) = watch::channel(false);
        let task = tokio::spawn(run(listener, store, cfg, rx));
        log::info!("collector listening on {addr}");
        Ok(Self {
            addr,
            shutdown: tx,
            task,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, lets open connections finish their current line and
    /// fsyncs everything.
    pub async fn shutdown(self) -> Result<(), CollectorError> {
        let _ = self.shutdown.send(true);
        match self.task.await {
            Ok(r) => r,
            Err(e) => Err(CollectorError::StorageFailure {
                path: PathBuf::new(),
                source: io::Error::other(e),
            }),
        }
    }
}

/// Runs until `stop` resolves.
pub async fn serve(cfg: CollectorConfig, stop: impl std::future::Future<Output = ()>) -> Result<(), CollectorError> {
    let collector = Collector::start(cfg).await?;
    stop.await;
    collector.shutdown().await
}

async fn run(
    listener: TcpListener,
    store: Arc<Store>,
    cfg: CollectorConfig,
    mut stop: watch::Receiver<bool>,
) -> Result<(), CollectorError> {
    let mut handlers = tokio::task::JoinSet::new();
    let mut ticker = tokio::time::interval(SYNC_INTERVAL);
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            _ = ticker.tick() => {
                if let Err(e) = store.sync_all() {
                    log::error!("{e}");
                }
            }
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    log::debug!("connection from {peer}");
                    handlers.spawn(handle(stream, store.clone(), cfg.max_line, cfg.strict, stop.clone()));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
            Some(_) = handlers.join_next(), if !handlers.is_empty() => {}
        }
    }
    drop(listener);
    while handlers.join_next().await.is_some() {}
    store.sync_all()
}

async fn handle(stream: TcpStream, store: Arc<Store>, max_line: usize, strict: bool, mut stop: watch::Receiver<bool>) {
    let _ = stream.set_nodelay(true);
    let (read, mut write) = stream.into_split();
    let mut reader = AsyncBufReader::new(read);
    let mut line = Vec::with_capacity(256);
    let mut overflow = false;
    loop {
        let chunk = tokio::select! {
            _ = stop.changed() => return,
            r = reader.fill_buf() => match r {
                Ok(buf) if buf.is_empty() => return,
                Ok(buf) => buf,
                Err(_) => return,
            },
        };
        let (take, complete) = match chunk.iter().position(|&b| b == b'\n') {
            Some(p) => (p + 1, true),
            None => (chunk.len(), false),
        };
        let data = if complete { &chunk[..take - 1] } else { chunk };
        if !overflow {
            if line.len() + data.len() > max_line {
                overflow = true;
                line.clear();
            } else {
                line.extend_from_slice(data);
            }
        }
        reader.consume(take);
        if !complete {
            continue;
        }
        let ack = if overflow {
            Ack::Err(AckReason::LineTooLong)
        } else {
            let store = store.clone();
            let record = std::mem::take(&mut line);
            match tokio::task::spawn_blocking(move || ingest_line(&store, &record, max_line, strict)).await {
                Ok(a) => a,
                Err(_) => Ack::Err(AckReason::Storage),
            }
        };
        overflow = false;
        line.clear();
        if write.write_all(format!("{ack}\n").as_bytes()).await.is_err() {
            return;
        }
    }
}

/// Reads back every record stored for `device`, in file-date then line order.
pub fn read_device_log(data_dir: &Path, device: &DeviceId) -> io::Result<Vec<PollutantSample>> {
    let dir = data_dir.join(device.as_str());
    let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    files.sort();
    let mut out = Vec::new();
    for path in files {
        for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
            let line = line?;
            let sample = parse_ndjson_sample(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            out.push(sample);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use airshadow_core::{PollutantKind, Readings};

    fn sample(ts: f64, dev: &str, co2: f64) -> PollutantSample {
        PollutantSample {
            ts,
            device: DeviceId::new(dev).unwrap(),
            readings: Readings::new().with(PollutantKind::Co2, co2),
        }
    }

    #[test]
    fn ack_wire_forms() {
        assert_eq!(Ack::Ok.to_string(), "OK");
        assert_eq!(
            Ack::Err(AckReason::ValidationError("rh".into())).to_string(),
            "ERR validation_error(rh)"
        );
        assert_eq!(Ack::Err(AckReason::LineTooLong).to_string(), "ERR line_too_long");
    }

    #[test]
    fn ingest_examples() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let ok = br#"{"ts":1700000000,"dev":"d1","co2":412.0}"#;
        assert_eq!(ingest_line(&store, ok, 4096, false), Ack::Ok);
        assert_eq!(ingest_line(&store, br#"{"ts":"x"}"#, 4096, false), Ack::Err(AckReason::ParseError));
        let wet = br#"{"ts":1700000000,"dev":"d1","rh":130}"#;
        assert_eq!(
            ingest_line(&store, wet, 4096, true),
            Ack::Err(AckReason::ValidationError("rh".into()))
        );
        assert_eq!(ingest_line(&store, wet, 4096, false), Ack::Ok);
        assert_eq!(ingest_line(&store, ok, 10, false), Ack::Err(AckReason::LineTooLong));
        assert_eq!(ingest_line(&store, &[0xff, 0xfe], 4096, false), Ack::Err(AckReason::ParseError));
        assert_eq!(
            ingest_line(&store, br#"{"ts":1,"dev":"../x","co2":1}"#, 4096, false),
            Ack::Err(AckReason::ParseError)
        );
    }

    #[test]
    fn offsets_and_day_files() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        // 2023-11-14T23:59:59Z then midnight
        let a = store.append(&sample(1_700_006_399.0, "d1", 400.0)).unwrap();
        let b = store.append(&sample(1_700_006_399.5, "d1", 401.0)).unwrap();
        let c = store.append(&sample(1_700_006_400.0, "d1", 402.0)).unwrap();
        assert_eq!((a.index, b.index, c.index), (0, 1, 0));
        assert!(a < b && b < c);
        assert_eq!(a.date.to_string(), "2023-11-14");
        assert_eq!(c.date.to_string(), "2023-11-15");
        assert!(log_path(dir.path(), &DeviceId::new("d1").unwrap(), c.date).exists());
        drop(store);

        // reopening continues the count of an existing file
        let store = Store::open(dir.path()).unwrap();
        let d = store.append(&sample(1_700_006_401.0, "d1", 403.0)).unwrap();
        assert_eq!(d.index, 1);
        let back = read_device_log(dir.path(), &DeviceId::new("d1").unwrap()).unwrap();
        assert_eq!(back.iter().map(|s| s.readings.get(PollutantKind::Co2).unwrap()).collect::<Vec<_>>(), vec![400.0, 401.0, 402.0, 403.0]);
    }

    #[test]
    fn torn_tail_is_dropped_on_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let dev = DeviceId::new("d2").unwrap();
        let store = Store::open(dir.path()).unwrap();
        let off = store.append(&sample(1_700_000_000.0, "d2", 500.0)).unwrap();
        drop(store);
        let path = log_path(dir.path(), &dev, off.date);
        OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"ts\":17").unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.append(&sample(1_700_000_001.0, "d2", 501.0)).unwrap().index, 1);
        assert_eq!(read_device_log(dir.path(), &dev).unwrap().len(), 2);
    }

    #[test]
    fn config_checks() {
        assert!(CollectorConfig::new("127.0.0.1:7007", "x").validate().is_ok());
        assert!(CollectorConfig::new("127.0.0.1", "x").validate().is_err());
        assert!(CollectorConfig::new("127.0.0.1:70000", "x").validate().is_err());
        assert!(CollectorConfig::new("127.0.0.1:0", "x").validate().is_err());
    }
}
