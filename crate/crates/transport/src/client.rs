//! The participant side of a distributed run.

use std::net::{TcpStream, ToSocketAddrs};

use fleeg_core::data::ClientFold;
use fleeg_core::federation::{BestModel, ClientFoldResult, ClientState};

use crate::conn::Conn;
use crate::error::{Result, TransportError};
use crate::frame::{Message, Registration, PROTOCOL_VERSION};

/// Connects, trains `client` through every fold in `plans` as the server
/// directs, and returns its per-fold results. `on_fold` receives each fold's
/// result and best snapshot.
pub fn run_client(
    addr: impl ToSocketAddrs,
    client: &mut ClientState,
    plans: &[ClientFold],
    local_epochs: usize,
    on_fold: &mut dyn FnMut(usize, &ClientFoldResult, &BestModel) -> std::result::Result<(), fleeg_core::Error>,
) -> Result<Vec<ClientFoldResult>> {
    let stream = TcpStream::connect(addr)?;
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_else(|_| "server".into());
    let mut conn = Conn::new(stream, format!("server {peer}"))?;
    let mut result = session(&mut conn, client, plans, local_epochs, on_fold);
    if let Err(TransportError::Disconnected { .. }) = &result {
        // the server may have explained itself before closing
        let grace = std::time::Instant::now() + std::time::Duration::from_millis(200);
        if let Ok(Message::Error(text)) = conn.recv(Some(grace), 0) {
            result = Err(TransportError::Remote(text));
        }
    }
    if let Err(e) = &result {
        if !matches!(e, TransportError::Remote(_) | TransportError::Disconnected { .. }) {
            let _ = conn.send(&Message::Error(format!("client {}: {e}", client.id())));
        }
    }
    result
}

fn session(
    conn: &mut Conn,
    client: &mut ClientState,
    plans: &[ClientFold],
    epochs: usize,
    on_fold: &mut dyn FnMut(usize, &ClientFoldResult, &BestModel) -> std::result::Result<(), fleeg_core::Error>,
) -> Result<Vec<ClientFoldResult>> {
    conn.send(&Message::Hello {
        version: PROTOCOL_VERSION,
    })?;
    match conn.recv(None, 0)? {
        Message::Hello { version } if version == PROTOCOL_VERSION => {}
        Message::Error(text) => return Err(TransportError::Remote(text)),
        other => return Err(TransportError::Protocol(format!("expected HELLO, got {}", other.kind().name()))),
    }
    let mut results = Vec::with_capacity(plans.len());
    for (fold, plan) in plans.iter().enumerate() {
        client.begin_fold(fold, plan.clone())?;
        conn.send(&Message::Register(Registration {
            client: client.id(),
            fold,
            format: client.store().format().clone(),
            n_train: client.n_train(),
        }))?;
        loop {
            match conn.recv(None, 0)? {
                Message::GlobalWeights { round, weights } => {
                    let update = client.client_update(round, epochs, &weights)?;
                    conn.send(&Message::ClientUpdate {
                        round,
                        client: client.id(),
                        weights: update.theta_global,
                        losses: update.losses,
                    })?;
                }
                Message::RoundAck { fold: f, .. } if f == fold => {
                    let (result, best) = client.finish_fold()?;
                    on_fold(fold, &result, &best)?;
                    conn.send(&Message::RoundAck {
                        fold,
                        result: Some(result.clone()),
                    })?;
                    results.push(result);
                    break;
                }
                Message::Error(text) => return Err(TransportError::Remote(text)),
                other => {
                    return Err(TransportError::Protocol(format!(
                        "fold {fold}: unexpected {} from server",
                        other.kind().name()
                    )))
                }
            }
        }
    }
    match conn.recv(None, 0)? {
        Message::Shutdown => Ok(results),
        Message::Error(text) => Err(TransportError::Remote(text)),
        other => Err(TransportError::Protocol(format!("expected SHUTDOWN, got {}", other.kind().name()))),
    }
}
