//! Edge↔cloud message framing.
//!
//! A frame is a 4-byte little-endian payload length, a 1-byte message kind,
//! then the payload: the text tensor serialization of the carried object.
//!
//! | kind   | message        | payload                               |
//! |--------|----------------|---------------------------------------|
//! | `0x01` | `UploadImage`  | `IM` image                            |
//! | `0x02` | `MaskResult`   | `RM` region mask set                  |
//! | `0x03` | `ModelUpdate`  | `EW` edge weights, optionally `GW` gate weights |

use thiserror::Error;

use crate::gating::Gate;
use crate::models::TrainableEdgeModel;
use crate::tensor::{Image, RegionMaskSet};
use crate::text::TextTensor;

pub const HEADER_LEN: usize = 5;
pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;

pub const KIND_UPLOAD_IMAGE: u8 = 0x01;
pub const KIND_MASK_RESULT: u8 = 0x02;
pub const KIND_MODEL_UPDATE: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("frame declares {declared} payload bytes but carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),
    #[error("unknown message kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("payload is not valid UTF-8")]
    NotUtf8,
    #[error("bad payload: {0}")]
    Payload(String),
    #[error("unexpected message kind 0x{got:02x}, expected 0x{expected:02x}")]
    UnexpectedKind { expected: u8, got: u8 },
}

/// Edge weights pushed to the edge after a training round, with the gate
/// weights when the gate was retrained too.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub edge: TrainableEdgeModel,
    pub gate: Option<Gate>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    UploadImage(Image),
    MaskResult(RegionMaskSet),
    ModelUpdate(ModelUpdate),
}

impl WireMessage {
    pub fn kind(&self) -> u8 {
        match self {
            WireMessage::UploadImage(_) => KIND_UPLOAD_IMAGE,
            WireMessage::MaskResult(_) => KIND_MASK_RESULT,
            WireMessage::ModelUpdate(_) => KIND_MODEL_UPDATE,
        }
    }

    fn payload(&self) -> String {
        match self {
            WireMessage::UploadImage(img) => img.to_text(),
            WireMessage::MaskResult(masks) => masks.to_text(),
            WireMessage::ModelUpdate(update) => {
                let mut text = update.edge.to_text();
                if let Some(gate) = &update.gate {
                    text.push_str(&gate.to_text());
                }
                text
            }
        }
    }
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let payload = msg.payload();
    if payload.len() > MAX_PAYLOAD {
        return Err(WireError::TooLarge(payload.len()));
    }
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.push(msg.kind());
    frame.extend_from_slice(payload.as_bytes());
    Ok(frame)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<WireMessage, WireError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(WireError::LengthMismatch {
            declared: used - HEADER_LEN,
            actual: bytes.len() - HEADER_LEN,
        });
    }
    Ok(msg)
}

/// Decodes the frame at the start of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(WireMessage, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let declared = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if declared > MAX_PAYLOAD {
        return Err(WireError::TooLarge(declared));
    }
    let kind = bytes[4];
    if !matches!(
        kind,
        KIND_UPLOAD_IMAGE | KIND_MASK_RESULT | KIND_MODEL_UPDATE
    ) {
        return Err(WireError::UnknownKind(kind));
    }
    let end = HEADER_LEN + declared;
    if bytes.len() < end {
        return Err(WireError::Truncated {
            needed: end,
            have: bytes.len(),
        });
    }
    let text = std::str::from_utf8(&bytes[HEADER_LEN..end]).map_err(|_| WireError::NotUtf8)?;
    let bad = |e: crate::Error| WireError::Payload(e.to_string());
    let msg = match kind {
        KIND_UPLOAD_IMAGE => WireMessage::UploadImage(Image::from_text(text).map_err(bad)?),
        KIND_MASK_RESULT => WireMessage::MaskResult(RegionMaskSet::from_text(text).map_err(bad)?),
        _ => WireMessage::ModelUpdate(parse_update(text).map_err(bad)?),
    };
    Ok((msg, end))
}

fn parse_update(text: &str) -> crate::Result<ModelUpdate> {
    let gate_start = text
        .match_indices("GW")
        .map(|(i, _)| i)
        .find(|&i| i == 0 || text.as_bytes()[i - 1] == b'\n');
    let (edge_text, gate_text) = match gate_start {
        Some(i) => (&text[..i], Some(&text[i..])),
        None => (text, None),
    };
    Ok(ModelUpdate {
        edge: TrainableEdgeModel::from_text(edge_text)?,
        gate: gate_text.map(Gate::from_text).transpose()?,
    })
}
