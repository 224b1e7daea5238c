//! Online scorer: JSON-lines over TCP, features from the store, one
//! immutable (model, threshold) snapshot per request.

use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use arc_swap::ArcSwapOption;
use serde::{Deserialize, Serialize};

use crate::detect::Model;
use crate::error::{Error, Result};
use crate::ingest::BASIC_FEATURES;
use crate::pipeline::DEFAULT_THRESHOLD;
use crate::store::{FeatureStore, OwnedRow};

const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub txn_id: String,
    pub transferor: String,
    pub transferee: String,
    pub amount: f64,
    pub timestamp: i64,
    /// Replaces the stored basic family for this request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basic_features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Interrupt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub txn_id: String,
    pub fraud_probability: f64,
    pub decision: Decision,
    pub model_version: String,
    pub feature_version: Option<String>,
    pub cold_start: bool,
    pub latency_micros: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_code: Option<String>,
}

/// One-line JSON encoding of a response.
pub fn response_json(r: &ScoreResponse) -> String {
    serde_json::to_string(r).expect("responses always serialise")
}

pub fn decide(probability: f64, threshold: f64) -> Decision {
    if probability >= threshold {
        Decision::Interrupt
    } else {
        Decision::Allow
    }
}

/// Where the scorer reads user features from.
pub trait FeatureSource: Send + Sync {
    /// `Ok(None)` for users absent from the latest version.
    fn latest_row(&self, user: &str) -> Result<Option<OwnedRow>>;
    /// Embedding width and date of the latest version.
    fn latest_shape(&self) -> Result<(usize, chrono::NaiveDate)>;
}

impl FeatureSource for FeatureStore {
    fn latest_row(&self, user: &str) -> Result<Option<OwnedRow>> {
        self.get_latest(user)
    }

    fn latest_shape(&self) -> Result<(usize, chrono::NaiveDate)> {
        let s = self.snapshot();
        let v = s.latest().ok_or(Error::NoVersions)?;
        Ok((v.dim(), v.date()))
    }
}

/// A loaded model and its serving parameters; swapped as a unit.
#[derive(Debug)]
pub struct ActiveModel {
    pub model: Model,
    pub version: String,
    pub threshold: f64,
}

pub struct Scorer {
    features: Arc<dyn FeatureSource>,
    active: ArcSwapOption<ActiveModel>,
}

impl Scorer {
    pub fn new(features: Arc<dyn FeatureSource>) -> Self {
        Scorer {
            features,
            active: ArcSwapOption::empty(),
        }
    }

    pub fn active(&self) -> Option<Arc<ActiveModel>> {
        self.active.load_full()
    }

    /// Installs `model` if its arity fits the store; otherwise keeps the
    /// current one and returns the error.
    pub fn install(&self, model: Model, threshold: f64) -> Result<Arc<ActiveModel>> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("threshold {threshold} not in [0, 1]")));
        }
        if let Ok((dim, _)) = self.features.latest_shape() {
            if model.feature_arity != BASIC_FEATURES + dim && model.feature_arity != BASIC_FEATURES {
                return Err(Error::Arity {
                    expected: BASIC_FEATURES + dim,
                    got: model.feature_arity,
                });
            }
        }
        let version = model
            .version_date
            .map_or_else(|| "unversioned".to_string(), |d| d.to_string());
        let active = Arc::new(ActiveModel {
            model,
            version,
            threshold,
        });
        self.active.store(Some(Arc::clone(&active)));
        Ok(active)
    }

    pub fn load_model(&self, path: &Path, threshold: f64) -> Result<Arc<ActiveModel>> {
        let file = std::fs::File::open(path)?;
        let model = Model::read(BufReader::new(file))?;
        self.install(model, threshold)
    }

    /// Changes the alert threshold, keeping the current model.
    pub fn set_threshold(&self, threshold: f64) -> Result<()> {
        let cur = self.active().ok_or(Error::NoModel)?;
        let model = cur.model.clone();
        self.install(model, threshold).map(|_| ())
    }

    /// Builds the model input for `req`; returns it with the row's version
    /// date (if any) and whether the user was missing.
    pub fn assemble(&self, req: &ScoreRequest, arity: usize) -> Result<(Vec<f64>, Option<String>, bool)> {
        let row = self.features.latest_row(&req.transferor)?;
        let cold_start = row.is_none();
        let feature_version = match &row {
            Some(r) => Some(r.date.to_string()),
            None => self.features.latest_shape().ok().map(|(_, d)| d.to_string()),
        };
        let mut x = Vec::with_capacity(arity);
        match (&req.basic_features, &row) {
            (Some(b), _) => {
                if b.len() != BASIC_FEATURES {
                    return Err(Error::Arity {
                        expected: BASIC_FEATURES,
                        got: b.len(),
                    });
                }
                x.extend_from_slice(b);
            }
            (None, Some(r)) => x.extend_from_slice(&r.basic),
            (None, None) => x.resize(BASIC_FEATURES, 0.0),
        }
        let dim = arity.saturating_sub(BASIC_FEATURES);
        if dim > 0 {
            match &row {
                Some(r) if r.embedding.len() == dim => x.extend_from_slice(&r.embedding),
                Some(r) => {
                    return Err(Error::Arity {
                        expected: dim,
                        got: r.embedding.len(),
                    })
                }
                None => x.resize(arity, 0.0),
            }
        }
        Ok((x, feature_version, cold_start))
    }

    pub fn score(&self, req: &ScoreRequest) -> ScoreResponse {
        let start = Instant::now();
        let fail = |code: &str, model_version: String| ScoreResponse {
            txn_id: req.txn_id.clone(),
            fraud_probability: 0.0,
            decision: Decision::Allow,
            model_version,
            feature_version: None,
            cold_start: false,
            latency_micros: start.elapsed().as_micros() as u64,
            error_code: Some(code.to_string()),
        };
        let Some(active) = self.active() else {
            return fail("no_model", String::new());
        };
        let (x, feature_version, cold_start) = match self.assemble(req, active.model.feature_arity) {
            Ok(v) => v,
            Err(Error::Arity { .. }) => return fail("bad_features", active.version.clone()),
            Err(_) => return fail("store_unavailable", active.version.clone()),
        };
        let p = match active.model.predict(&x) {
            Ok(p) => p,
            Err(_) => return fail("predict_failed", active.version.clone()),
        };
        ScoreResponse {
            txn_id: req.txn_id.clone(),
            fraud_probability: p,
            decision: decide(p, active.threshold),
            model_version: active.version.clone(),
            feature_version,
            cold_start,
            latency_micros: start.elapsed().as_micros() as u64,
            error_code: None,
        }
    }

    /// Scores one JSON request line; malformed input yields an error response.
    pub fn score_line(&self, line: &str) -> ScoreResponse {
        match serde_json::from_str::<ScoreRequest>(line) {
            Ok(req) => self.score(&req),
            Err(_) => ScoreResponse {
                txn_id: serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("txn_id").and_then(|t| t.as_str()).map(str::to_string))
                    .unwrap_or_default(),
                fraud_probability: 0.0,
                decision: Decision::Allow,
                model_version: self.active().map(|a| a.version.clone()).unwrap_or_default(),
                feature_version: None,
                cold_start: false,
                latency_micros: 0,
                error_code: Some("bad_request".into()),
            },
        }
    }
}

fn log_response(r: &ScoreResponse) {
    log::info!(
        target: "titant::request",
        "{} {} {:.6} {} {}",
        chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.6fZ"),
        r.txn_id,
        r.fraud_probability,
        match r.decision {
            Decision::Allow => "allow",
            Decision::Interrupt => "interrupt",
        },
        r.latency_micros
    );
}

fn handle_connection(scorer: &Scorer, stream: TcpStream, shutdown: &AtomicBool) -> std::io::Result<()> {
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut buf = Vec::new();
    loop {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return Ok(()),
            Ok(_) if buf.ends_with(b"\n") => {
                let line = String::from_utf8_lossy(&buf);
                let line = line.trim();
                if !line.is_empty() {
                    let resp = scorer.score_line(line);
                    log_response(&resp);
                    serde_json::to_writer(&mut writer, &resp)?;
                    writer.write_all(b"\n")?;
                    writer.flush()?;
                }
                buf.clear();
            }
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if shutdown.load(Ordering::SeqCst) && buf.is_empty() {
                    return Ok(());
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
}

/// A running server; dropping it without [`Server::shutdown`] leaves it running.
pub struct Server {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    acceptor: JoinHandle<()>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    /// Stops accepting, answers every request already received, then returns.
    pub fn shutdown(self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = self.acceptor.join();
    }

    pub fn wait(self) {
        let _ = self.acceptor.join();
    }
}

/// Binds and starts serving with `concurrency` connection handlers.
pub fn spawn_server(scorer: Arc<Scorer>, bind: &str, concurrency: usize) -> Result<Server> {
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&shutdown);
    let acceptor = thread::Builder::new()
        .name("titant-accept".into())
        .spawn(move || accept_loop(listener, scorer, concurrency.max(1), flag))?;
    log::info!("serving on {addr}");
    Ok(Server {
        addr,
        shutdown,
        acceptor,
    })
}

fn accept_loop(listener: TcpListener, scorer: Arc<Scorer>, concurrency: usize, shutdown: Arc<AtomicBool>) {
    let (tx, rx) = mpsc::channel::<TcpStream>();
    let rx = Arc::new(Mutex::new(rx));
    let workers: Vec<JoinHandle<()>> = (0..concurrency)
        .map(|i| {
            let rx = Arc::clone(&rx);
            let scorer = Arc::clone(&scorer);
            let shutdown = Arc::clone(&shutdown);
            thread::Builder::new()
                .name(format!("titant-worker-{i}"))
                .spawn(move || loop {
                    let next = rx.lock().unwrap_or_else(|e| e.into_inner()).recv();
                    let Ok(stream) = next else { return };
                    if let Err(e) = handle_connection(&scorer, stream, &shutdown) {
                        log::warn!("connection error: {e}");
                    }
                })
                .expect("spawn worker")
        })
        .collect();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                if tx.send(stream).is_err() {
                    break;
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    drop(tx);
    for w in workers {
        let _ = w.join();
    }
    log::info!("server drained");
}

/// Blocking form of [`spawn_server`] that returns once `shutdown` is set
/// and in-flight requests are answered.
pub fn serve_loop(scorer: Arc<Scorer>, bind: &str, concurrency: usize, shutdown: Arc<AtomicBool>) -> Result<()> {
    let server = spawn_server(scorer, bind, concurrency)?;
    while !shutdown.load(Ordering::SeqCst) {
        thread::sleep(POLL);
    }
    server.shutdown();
    Ok(())
}

pub fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
