//! The coordinating side of a distributed run.
//!
//! Session: each client sends HELLO and gets HELLO back. Then, per fold,
//! every client sends REGISTER; the server runs the rounds (GLOBAL_WEIGHTS
//! out, CLIENT_UPDATE back, aggregate), sends ROUND_ACK, and collects each
//! client's fold result in a ROUND_ACK reply. SHUTDOWN ends the session. Any
//! failure is broadcast as ERROR before the server returns.

use std::net::TcpListener;
use std::time::{Duration, Instant};

use fleeg_core::evaluation::FoldReport;
use fleeg_core::federation::{run_rounds, ClientUpdate, Cohort, Distribution, RoundReport, ServerState, TrainConfig};
use fleeg_core::{DatasetFormat, WeightSet};

use crate::conn::Conn;
use crate::error::{Result, TransportError};
use crate::frame::{encode_frame, Message, Registration, PROTOCOL_VERSION};

pub const DEFAULT_ROUND_TIMEOUT: Duration = Duration::from_secs(60);

pub struct ServerConfig {
    /// `(name, format)` per client id.
    pub clients: Vec<(String, DatasetFormat)>,
    pub train: TrainConfig,
    pub folds: usize,
    pub initial_global: WeightSet,
    /// Bound on each round, from broadcast to the last update.
    pub round_timeout: Duration,
    /// Bound on waiting for connections and registrations.
    pub join_timeout: Duration,
}

pub enum ServerEvent<'a> {
    /// A connection was turned away.
    Rejected(&'a str),
    Round {
        fold: usize,
        report: &'a RoundReport,
        theta_global: &'a WeightSet,
    },
    Fold(&'a FoldReport),
}

type Observer<'o> = dyn FnMut(ServerEvent<'_>) -> std::result::Result<(), fleeg_core::Error> + 'o;

struct TcpCohort<'a> {
    conns: &'a mut [Conn],
    registry: Vec<(usize, usize)>,
    timeout: Duration,
    failure: Option<TransportError>,
}

impl TcpCohort<'_> {
    fn exchange(&mut self, round: usize, theta: &WeightSet) -> Result<Vec<ClientUpdate>> {
        let frame = encode_frame(&Message::GlobalWeights {
            round,
            weights: theta.clone(),
        })
        .map_err(|e| TransportError::Protocol(e.to_string()))?;
        for c in self.conns.iter_mut() {
            c.send_raw(&frame)?;
        }
        let deadline = Instant::now() + self.timeout;
        let mut updates = Vec::with_capacity(self.conns.len());
        for (id, c) in self.conns.iter_mut().enumerate() {
            match c.recv(Some(deadline), round)? {
                Message::ClientUpdate {
                    round: r,
                    client,
                    weights,
                    losses,
                } if r == round && client == id => updates.push(ClientUpdate {
                    client,
                    theta_global: weights,
                    losses,
                }),
                Message::Error(text) => return Err(TransportError::Remote(format!("{}: {text}", c.peer()))),
                other => {
                    return Err(TransportError::Protocol(format!(
                        "round {round}: expected CLIENT_UPDATE from {}, got {}",
                        c.peer(),
                        other.kind().name()
                    )))
                }
            }
        }
        Ok(updates)
    }
}

impl Cohort for TcpCohort<'_> {
    fn registry(&self) -> Vec<(usize, usize)> {
        self.registry.clone()
    }

    fn run_round(&mut self, round: usize, input: Distribution<'_>) -> fleeg_core::Result<Vec<ClientUpdate>> {
        let Distribution::Shared(theta) = input else {
            return Err(fleeg_core::Error::Contract("distributed runs are federated only".into()));
        };
        self.exchange(round, theta).map_err(|e| {
            let reason = e.to_string();
            self.failure = Some(e);
            fleeg_core::Error::ClientFailed { client: usize::MAX, reason }
        })
    }
}

fn check_registration(cfg: &ServerConfig, r: &Registration, fold: usize) -> std::result::Result<(), String> {
    let Some((name, format)) = cfg.clients.get(r.client) else {
        return Err(format!("unknown client id {}", r.client));
    };
    if r.fold != fold {
        return Err(format!("{name} registered for fold {}, server is on fold {fold}", r.fold));
    }
    if &r.format != format {
        return Err(format!("{name} registered format {:?}, configuration says {:?}", r.format, format));
    }
    if r.n_train == 0 {
        return Err(format!("{name} registered with no training trials"));
    }
    Ok(())
}

/// Accepts connections until every client id has said HELLO and registered
/// for fold 0. Returns connections ordered by id and their sample counts.
fn join(listener: &TcpListener, cfg: &ServerConfig, observer: &mut Observer<'_>) -> Result<(Vec<Conn>, Vec<usize>)> {
    let k = cfg.clients.len();
    let mut slots: Vec<Option<(Conn, usize)>> = (0..k).map(|_| None).collect();
    let deadline = Instant::now() + cfg.join_timeout;
    listener.set_nonblocking(true)?;
    while slots.iter().any(Option::is_none) {
        let (stream, addr) = match listener.accept() {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    let missing: Vec<_> = (0..k).filter(|&i| slots[i].is_none()).map(|i| cfg.clients[i].0.clone()).collect();
                    return Err(TransportError::Timeout {
                        round: 0,
                        client: missing.join(", "),
                    });
                }
                std::thread::sleep(Duration::from_millis(5));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        stream.set_nonblocking(false)?;
        let mut conn = Conn::new(stream, addr.to_string())?;
        let reject = |conn: &mut Conn, why: String, observer: &mut Observer<'_>| {
            let _ = conn.send(&Message::Error(why.clone()));
            let _ = observer(ServerEvent::Rejected(&why));
        };
        match conn.recv(Some(deadline), 0) {
            Ok(Message::Hello { version }) if version == PROTOCOL_VERSION => {}
            Ok(other) => {
                reject(&mut conn, format!("expected HELLO v{PROTOCOL_VERSION}, got {other:?}"), observer);
                continue;
            }
            Err(e) => {
                reject(&mut conn, format!("handshake with {addr} failed: {e}"), observer);
                continue;
            }
        }
        conn.send(&Message::Hello {
            version: PROTOCOL_VERSION,
        })?;
        match conn.recv(Some(deadline), 0) {
            Ok(Message::Register(r)) => {
                if let Err(why) = check_registration(cfg, &r, 0) {
                    reject(&mut conn, why, observer);
                } else if slots[r.client].is_some() {
                    reject(&mut conn, format!("duplicate REGISTER for client id {}", r.client), observer);
                } else {
                    conn.set_peer(cfg.clients[r.client].0.clone());
                    slots[r.client] = Some((conn, r.n_train));
                }
            }
            Ok(other) => reject(&mut conn, format!("expected REGISTER, got {}", other.kind().name()), observer),
            Err(e) => reject(&mut conn, format!("registration from {addr} failed: {e}"), observer),
        }
    }
    Ok(slots.into_iter().map(Option::unwrap).unzip())
}

/// Receives a fold's REGISTER from every connection.
fn register(conns: &mut [Conn], cfg: &ServerConfig, fold: usize) -> Result<Vec<usize>> {
    let deadline = Instant::now() + cfg.join_timeout;
    let mut counts = Vec::with_capacity(conns.len());
    for (id, c) in conns.iter_mut().enumerate() {
        match c.recv(Some(deadline), 0)? {
            Message::Register(r) if r.client == id => {
                check_registration(cfg, &r, fold).map_err(TransportError::Protocol)?;
                counts.push(r.n_train);
            }
            Message::Error(text) => return Err(TransportError::Remote(format!("{}: {text}", c.peer()))),
            other => {
                return Err(TransportError::Protocol(format!(
                    "fold {fold}: expected REGISTER from {}, got {other:?}",
                    c.peer()
                )))
            }
        }
    }
    Ok(counts)
}

fn finish_fold(conns: &mut [Conn], cfg: &ServerConfig, fold: usize) -> Result<FoldReport> {
    for c in conns.iter_mut() {
        c.send(&Message::RoundAck { fold, result: None })?;
    }
    let deadline = Instant::now() + cfg.round_timeout;
    let mut clients = Vec::with_capacity(conns.len());
    for (id, c) in conns.iter_mut().enumerate() {
        match c.recv(Some(deadline), cfg.train.rounds)? {
            Message::RoundAck { fold: f, result: Some(r) } if f == fold && r.client == id => clients.push(r),
            Message::Error(text) => return Err(TransportError::Remote(format!("{}: {text}", c.peer()))),
            other => {
                return Err(TransportError::Protocol(format!(
                    "fold {fold}: expected ROUND_ACK with result from {}, got {}",
                    c.peer(),
                    other.kind().name()
                )))
            }
        }
    }
    Ok(FoldReport { fold, clients })
}

fn run_session(
    conns: &mut Vec<Conn>,
    first_counts: Vec<usize>,
    cfg: &ServerConfig,
    observer: &mut Observer<'_>,
) -> Result<Vec<FoldReport>> {
    let mut reports = Vec::with_capacity(cfg.folds);
    let mut counts = first_counts;
    for fold in 0..cfg.folds {
        if fold > 0 {
            counts = register(conns, cfg, fold)?;
        }
        let registry: Vec<(usize, usize)> = counts.iter().copied().enumerate().collect();
        let mut server = ServerState::new(cfg.initial_global.clone(), registry.clone())?;
        let mut cohort = TcpCohort {
            conns: conns.as_mut_slice(),
            registry,
            timeout: cfg.round_timeout,
            failure: None,
        };
        let mut on_round = |report: &RoundReport, theta: Option<&WeightSet>| {
            observer(ServerEvent::Round {
                fold,
                report,
                theta_global: theta.expect("federated"),
            })
        };
        let result = run_rounds(&mut cohort, Some(&mut server), &cfg.train, &mut on_round);
        if let Some(e) = cohort.failure.take() {
            return Err(e);
        }
        result?;
        let report = finish_fold(conns, cfg, fold)?;
        observer(ServerEvent::Fold(&report))?;
        reports.push(report);
    }
    for c in conns.iter_mut() {
        c.send(&Message::Shutdown)?;
    }
    Ok(reports)
}

/// Runs a complete distributed session on `listener`.
pub fn serve(
    listener: &TcpListener,
    cfg: &ServerConfig,
    observer: &mut dyn FnMut(ServerEvent<'_>) -> std::result::Result<(), fleeg_core::Error>,
) -> Result<Vec<FoldReport>> {
    if cfg.clients.is_empty() {
        return Err(TransportError::Protocol("server needs at least one client".into()));
    }
    cfg.train.validate()?;
    let (mut conns, counts) = join(listener, cfg, observer)?;
    let result = run_session(&mut conns, counts, cfg, observer);
    if let Err(e) = &result {
        let text = e.to_string();
        for c in &mut conns {
            let _ = c.send(&Message::Error(text.clone()));
        }
    }
    result
}
