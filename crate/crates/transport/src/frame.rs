//! Self-delimiting frames: magic `FLG1`, type `u8`, payload length `u32`,
//! payload, CRC-32 of the payload, all little-endian.

use fleeg_core::federation::{ClientFoldResult, ClientLosses};
use fleeg_core::DatasetFormat;
use fleeg_core::WeightSet;

use crate::codec::{Reader, Writer};
use crate::error::{CodecError, FrameError};

pub const MAGIC: [u8; 4] = *b"FLG1";
pub const HEADER_LEN: usize = 4 + 1 + 4;
pub const TRAILER_LEN: usize = 4;
/// Largest payload a peer may declare.
pub const MAX_PAYLOAD: usize = 256 << 20;
pub const PROTOCOL_VERSION: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    Register = 2,
    GlobalWeights = 3,
    ClientUpdate = 4,
    RoundAck = 5,
    Shutdown = 6,
    Error = 7,
}

impl MessageType {
    pub fn from_u8(v: u8) -> Option<Self> {
        use MessageType::*;
        [Hello, Register, GlobalWeights, ClientUpdate, RoundAck, Shutdown, Error]
            .into_iter()
            .find(|t| *t as u8 == v)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::Hello => "HELLO",
            MessageType::Register => "REGISTER",
            MessageType::GlobalWeights => "GLOBAL_WEIGHTS",
            MessageType::ClientUpdate => "CLIENT_UPDATE",
            MessageType::RoundAck => "ROUND_ACK",
            MessageType::Shutdown => "SHUTDOWN",
            MessageType::Error => "ERROR",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registration {
    pub client: usize,
    pub fold: usize,
    pub format: DatasetFormat,
    pub n_train: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello {
        version: usize,
    },
    Register(Registration),
    GlobalWeights {
        round: usize,
        weights: WeightSet,
    },
    ClientUpdate {
        round: usize,
        client: usize,
        weights: WeightSet,
        losses: ClientLosses,
    },
    /// From the server: fold finished. From a client: its result for that fold.
    RoundAck {
        fold: usize,
        result: Option<ClientFoldResult>,
    },
    Shutdown,
    Error(String),
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::Register(_) => MessageType::Register,
            Message::GlobalWeights { .. } => MessageType::GlobalWeights,
            Message::ClientUpdate { .. } => MessageType::ClientUpdate,
            Message::RoundAck { .. } => MessageType::RoundAck,
            Message::Shutdown => MessageType::Shutdown,
            Message::Error(_) => MessageType::Error,
        }
    }

    fn payload(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        match self {
            Message::Hello { version } => w.u32(*version)?,
            Message::Register(r) => {
                w.u32(r.client)?;
                w.u32(r.fold)?;
                w.u32(r.n_train)?;
                let f = &r.format;
                w.str(&f.name)?;
                w.u32(f.channels)?;
                w.f64(f.sample_rate)?;
                w.u32(f.trial_samples)?;
                w.u32(f.subjects)?;
                w.u32(f.trials_per_subject)?;
            }
            Message::GlobalWeights { round, weights } => {
                w.u32(*round)?;
                w.weights(weights)?;
            }
            Message::ClientUpdate {
                round,
                client,
                weights,
                losses,
            } => {
                w.u32(*round)?;
                w.u32(*client)?;
                w.f64(losses.train_loss)?;
                w.f64(losses.val_loss)?;
                w.f64(losses.val_acc)?;
                w.weights(weights)?;
            }
            Message::RoundAck { fold, result } => {
                w.u32(*fold)?;
                match result {
                    None => w.u8(0),
                    Some(r) => {
                        w.u8(1);
                        w.u32(r.client)?;
                        w.u32(r.held_out)?;
                        w.f64(r.test_acc)?;
                        w.u32(r.best_round)?;
                        w.f64(r.best_val_loss)?;
                    }
                }
            }
            Message::Shutdown => {}
            Message::Error(text) => w.str(text)?,
        }
        Ok(w.into_bytes())
    }

    fn parse(kind: MessageType, payload: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(payload);
        let msg = match kind {
            MessageType::Hello => Message::Hello { version: r.u32()? },
            MessageType::Register => {
                let (client, fold, n_train) = (r.u32()?, r.u32()?, r.u32()?);
                let format = DatasetFormat {
                    name: r.str()?,
                    channels: r.u32()?,
                    sample_rate: r.f64()?,
                    trial_samples: r.u32()?,
                    subjects: r.u32()?,
                    trials_per_subject: r.u32()?,
                };
                Message::Register(Registration {
                    client,
                    fold,
                    format,
                    n_train,
                })
            }
            MessageType::GlobalWeights => Message::GlobalWeights {
                round: r.u32()?,
                weights: r.weights()?,
            },
            MessageType::ClientUpdate => {
                let (round, client) = (r.u32()?, r.u32()?);
                let losses = ClientLosses {
                    train_loss: r.f64()?,
                    val_loss: r.f64()?,
                    val_acc: r.f64()?,
                };
                Message::ClientUpdate {
                    round,
                    client,
                    losses,
                    weights: r.weights()?,
                }
            }
            MessageType::RoundAck => {
                let fold = r.u32()?;
                let result = match r.u8()? {
                    0 => None,
                    1 => Some(ClientFoldResult {
                        client: r.u32()?,
                        held_out: r.u32()?,
                        test_acc: r.f64()?,
                        best_round: r.u32()?,
                        best_val_loss: r.f64()?,
                    }),
                    other => return Err(CodecError::Invalid(format!("result flag {other}"))),
                };
                Message::RoundAck { fold, result }
            }
            MessageType::Shutdown => Message::Shutdown,
            MessageType::Error => Message::Error(r.str()?),
        };
        r.finish()?;
        Ok(msg)
    }
}

/// Serializes one message into a complete frame.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let payload = msg.payload()?;
    if payload.len() > MAX_PAYLOAD {
        return Err(CodecError::Overflow(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

/// Parses the first frame of `buf`.
///
/// `Ok(None)` means `buf` is a valid prefix that needs more bytes; otherwise
/// returns the message and the number of bytes it occupied.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Message, usize)>, FrameError> {
    let m = buf.len().min(4);
    if buf[..m] != MAGIC[..m] {
        return Err(FrameError::BadMagic(buf[..m].to_vec()));
    }
    if buf.len() < 5 {
        return Ok(None);
    }
    let kind = MessageType::from_u8(buf[4]).ok_or(FrameError::UnknownType(buf[4]))?;
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    let len = u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(len));
    }
    let total = HEADER_LEN + len + TRAILER_LEN;
    if buf.len() < total {
        return Ok(None);
    }
    let payload = &buf[HEADER_LEN..HEADER_LEN + len];
    let declared = u32::from_le_bytes(buf[HEADER_LEN + len..total].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if declared != actual {
        return Err(FrameError::Checksum { declared, actual });
    }
    let msg = Message::parse(kind, payload).map_err(|source| FrameError::Payload {
        kind: kind.name(),
        source,
    })?;
    Ok(Some((msg, total)))
}
