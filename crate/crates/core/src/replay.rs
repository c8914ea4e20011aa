//! The `.farp` frame-action replay format.
//!
//! One file holds the per-tick stream of a single player's viewpoint in one
//! match. Layout (all integers little-endian):
//!
//! ```text
//! magic        4  b"FARP"
//! version      u16
//! player_id    u16 length + UTF-8 bytes
//! match_id     u16 length + UTF-8 bytes
//! tick_rate    u16
//! frame_count  u32
//! records      frame_count x 33 bytes
//! ```
//!
//! Each record is `tick u32, mouse_x f32, mouse_y f32, buttons u8,
//! pos_x f32, pos_y f32, yaw f32, kills u16, deaths u16, damage u32`, with the
//! button bitmask ordered attack/forward/backward/left/right from the LSB.
//! Records are fixed-size so a frame can be located without scanning.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionValues;

pub const MAGIC: [u8; 4] = *b"FARP";
pub const FORMAT_VERSION: u16 = 1;
pub const RECORD_SIZE: usize = 33;
pub const DEFAULT_TICK_RATE: u16 = 35;
pub const FILE_EXTENSION: &str = "farp";

const BUTTON_MASK: u8 = 0b1_1111;

/// Controls for one tick. Mouse deltas are stored as-is (degrees per tick,
/// neither normalised nor clipped).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionVector {
    pub mouse_x: f32,
    pub mouse_y: f32,
    pub attack: bool,
    pub move_forward: bool,
    pub move_backward: bool,
    pub move_left: bool,
    pub move_right: bool,
}

impl ActionVector {
    pub fn buttons(&self) -> u8 {
        [
            self.attack,
            self.move_forward,
            self.move_backward,
            self.move_left,
            self.move_right,
        ]
        .iter()
        .enumerate()
        .fold(0u8, |acc, (bit, &on)| acc | (u8::from(on) << bit))
    }

    pub fn with_buttons(mouse_x: f32, mouse_y: f32, buttons: u8) -> Self {
        let bit = |i: u8| buttons & (1 << i) != 0;
        Self {
            mouse_x,
            mouse_y,
            attack: bit(0),
            move_forward: bit(1),
            move_backward: bit(2),
            move_left: bit(3),
            move_right: bit(4),
        }
    }

    pub fn to_values(&self) -> ActionValues {
        let b = |on: bool| if on { 1.0 } else { 0.0 };
        ActionValues {
            mouse_x: f64::from(self.mouse_x),
            mouse_y: f64::from(self.mouse_y),
            attack: b(self.attack),
            move_forward: b(self.move_forward),
            move_backward: b(self.move_backward),
            move_left: b(self.move_left),
            move_right: b(self.move_right),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameRecord {
    pub tick: u32,
    pub action: ActionVector,
    pub pos_x: f32,
    pub pos_y: f32,
    pub yaw: f32,
    pub kills: u16,
    pub deaths: u16,
    pub damage: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub player_id: String,
    pub match_id: String,
    pub tick_rate: u16,
    pub frames: Vec<FrameRecord>,
}

impl Replay {
    pub fn new(player_id: impl Into<String>, match_id: impl Into<String>) -> Self {
        Self {
            player_id: player_id.into(),
            match_id: match_id.into(),
            tick_rate: DEFAULT_TICK_RATE,
            frames: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn actions(&self) -> Vec<ActionVector> {
        self.frames.iter().map(|f| f.action).collect()
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.frames
            .iter()
            .map(|f| (f64::from(f.pos_x), f64::from(f.pos_y)))
            .collect()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / f64::from(self.tick_rate.max(1))
    }

    pub fn last_frame(&self) -> Option<&FrameRecord> {
        self.frames.last()
    }
}

/// One failed invariant, located by frame index (or header field when
/// `frame` is `None`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub frame: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("empty replay")]
    Empty,
    #[error("invalid replay: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {found} at offset {offset} (expected {FORMAT_VERSION})")]
    Version { found: u16, offset: usize },
    #[error("truncated {what} at offset {offset}: need {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid UTF-8 in {field} at offset {offset}")]
    Utf8 { field: &'static str, offset: usize },
    #[error("corrupt {field} at offset {offset}: {reason}")]
    Corrupt {
        field: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("{count} trailing bytes at offset {offset}")]
    Trailing { offset: usize, count: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks every invariant of a replay and reports each failure.
pub fn validate_replay(replay: &Replay) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut header = |field: &'static str, message: String| {
        out.push(Violation {
            frame: None,
            field,
            message,
        })
    };
    if replay.frames.is_empty() {
        header("frames", "empty replay".to_string());
    }
    if replay.tick_rate == 0 {
        header("tick_rate", "tick_rate must be positive".to_string());
    }
    if replay.player_id.len() > usize::from(u16::MAX) {
        header("player_id", "player_id longer than 65535 bytes".to_string());
    }
    if replay.match_id.len() > usize::from(u16::MAX) {
        header("match_id", "match_id longer than 65535 bytes".to_string());
    }
    if replay.frames.len() > u32::MAX as usize {
        header("frames", "more than u32::MAX frames".to_string());
    }

    for (i, f) in replay.frames.iter().enumerate() {
        let mut at = |field: &'static str, message: String| {
            out.push(Violation {
                frame: Some(i),
                field,
                message,
            })
        };
        for (field, v) in [
            ("mouse_x", f.action.mouse_x),
            ("mouse_y", f.action.mouse_y),
            ("pos_x", f.pos_x),
            ("pos_y", f.pos_y),
            ("yaw", f.yaw),
        ] {
            if !v.is_finite() {
                at(field, format!("non-finite {field} at index {i}"));
            }
        }
        if i == 0 {
            continue;
        }
        let prev = &replay.frames[i - 1];
        if f.tick <= prev.tick {
            at("tick", format!("non-increasing tick at index {i}"));
        }
        if f.kills < prev.kills {
            at("kills", format!("kills decreased at index {i}"));
        }
        if f.deaths < prev.deaths {
            at("deaths", format!("deaths decreased at index {i}"));
        }
        if f.damage < prev.damage {
            at("damage", format!("damage decreased at index {i}"));
        }
    }
    out
}

fn check(replay: &Replay) -> Result<(), ReplayError> {
    if replay.frames.is_empty() {
        return Err(ReplayError::Empty);
    }
    let violations = validate_replay(replay);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ReplayError::Invalid(violations))
    }
}

pub fn header_len(player_id_len: usize, match_id_len: usize) -> usize {
    4 + 2 + 2 + player_id_len + 2 + match_id_len + 2 + 4
}

pub fn encode_replay(replay: &Replay) -> Result<Vec<u8>, ReplayError> {
    check(replay)?;
    let hlen = header_len(replay.player_id.len(), replay.match_id.len());
    let mut buf = Vec::with_capacity(hlen + RECORD_SIZE * replay.frames.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for s in [&replay.player_id, &replay.match_id] {
        buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    }
    buf.extend_from_slice(&replay.tick_rate.to_le_bytes());
    buf.extend_from_slice(&(replay.frames.len() as u32).to_le_bytes());
    for f in &replay.frames {
        buf.extend_from_slice(&f.tick.to_le_bytes());
        buf.extend_from_slice(&f.action.mouse_x.to_le_bytes());
        buf.extend_from_slice(&f.action.mouse_y.to_le_bytes());
        buf.push(f.action.buttons());
        buf.extend_from_slice(&f.pos_x.to_le_bytes());
        buf.extend_from_slice(&f.pos_y.to_le_bytes());
        buf.extend_from_slice(&f.yaw.to_le_bytes());
        buf.extend_from_slice(&f.kills.to_le_bytes());
        buf.extend_from_slice(&f.deaths.to_le_bytes());
        buf.extend_from_slice(&f.damage.to_le_bytes());
    }
    debug_assert_eq!(buf.len(), hlen + RECORD_SIZE * replay.frames.len());
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ReplayError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(ReplayError::Truncated {
                what,
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, ReplayError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ReplayError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, field: &'static str) -> Result<String, ReplayError> {
        let len = usize::from(self.u16("header")?);
        let offset = self.pos;
        let raw = self.take(len, "header")?;
        String::from_utf8(raw.to_vec()).map_err(|_| ReplayError::Utf8 { field, offset })
    }
}

struct Header {
    player_id: String,
    match_id: String,
    tick_rate: u16,
    frame_count: usize,
    len: usize,
}

fn decode_header(bytes: &[u8]) -> Result<Header, ReplayError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur
        .take(4, "header")
        .map_err(|_| ReplayError::BadMagic { offset: 0 })?;
    if magic != MAGIC {
        return Err(ReplayError::BadMagic { offset: 0 });
    }
    let version_offset = cur.pos;
    let version = cur.u16("header")?;
    if version != FORMAT_VERSION {
        return Err(ReplayError::Version {
            found: version,
            offset: version_offset,
        });
    }
    let player_id = cur.string("player_id")?;
    let match_id = cur.string("match_id")?;
    let tick_rate_offset = cur.pos;
    let tick_rate = cur.u16("header")?;
    if tick_rate == 0 {
        return Err(ReplayError::Corrupt {
            field: "tick_rate",
            offset: tick_rate_offset,
            reason: "tick_rate must be positive".into(),
        });
    }
    let frame_count = cur.u32("header")? as usize;
    Ok(Header {
        player_id,
        match_id,
        tick_rate,
        frame_count,
        len: cur.pos,
    })
}

fn read_f32(rec: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(rec[at..at + 4].try_into().unwrap())
}

fn decode_record(rec: &[u8], offset: usize) -> Result<FrameRecord, ReplayError> {
    let u16_at = |at: usize| u16::from_le_bytes(rec[at..at + 2].try_into().unwrap());
    let u32_at = |at: usize| u32::from_le_bytes(rec[at..at + 4].try_into().unwrap());
    let buttons = rec[12];
    if buttons & !BUTTON_MASK != 0 {
        return Err(ReplayError::Corrupt {
            field: "buttons",
            offset: offset + 12,
            reason: format!("reserved button bits set ({buttons:#04x})"),
        });
    }
    let frame = FrameRecord {
        tick: u32_at(0),
        action: ActionVector::with_buttons(read_f32(rec, 4), read_f32(rec, 8), buttons),
        pos_x: read_f32(rec, 13),
        pos_y: read_f32(rec, 17),
        yaw: read_f32(rec, 21),
        kills: u16_at(25),
        deaths: u16_at(27),
        damage: u32_at(29),
    };
    for (field, at, v) in [
        ("mouse_x", 4, frame.action.mouse_x),
        ("mouse_y", 8, frame.action.mouse_y),
        ("pos_x", 13, frame.pos_x),
        ("pos_y", 17, frame.pos_y),
        ("yaw", 21, frame.yaw),
    ] {
        if !v.is_finite() {
            return Err(ReplayError::Corrupt {
                field,
                offset: offset + at,
                reason: format!("non-finite value {v}"),
            });
        }
    }
    Ok(frame)
}

pub fn decode_replay(bytes: &[u8]) -> Result<Replay, ReplayError> {
    let header = decode_header(bytes)?;
    if header.frame_count == 0 {
        return Err(ReplayError::Empty);
    }
    let body = &bytes[header.len..];
    let needed = header
        .frame_count
        .checked_mul(RECORD_SIZE)
        .ok_or(ReplayError::Corrupt {
            field: "frame_count",
            offset: header.len - 4,
            reason: "frame count overflows".into(),
        })?;
    if body.len() < needed {
        let complete = body.len() / RECORD_SIZE;
        return Err(ReplayError::Truncated {
            what: "record",
            offset: header.len + complete * RECORD_SIZE,
            needed: RECORD_SIZE,
            available: body.len() - complete * RECORD_SIZE,
        });
    }
    if body.len() > needed {
        return Err(ReplayError::Trailing {
            offset: header.len + needed,
            count: body.len() - needed,
        });
    }

    let frames = body
        .chunks_exact(RECORD_SIZE)
        .enumerate()
        .map(|(i, rec)| decode_record(rec, header.len + i * RECORD_SIZE))
        .collect::<Result<Vec<_>, _>>()?;
    let replay = Replay {
        player_id: header.player_id,
        match_id: header.match_id,
        tick_rate: header.tick_rate,
        frames,
    };
    if let Some(v) = validate_replay(&replay).into_iter().next() {
        let offset = v.frame.map_or(0, |i| header.len + i * RECORD_SIZE);
        return Err(ReplayError::Corrupt {
            field: v.field,
            offset,
            reason: v.message,
        });
    }
    Ok(replay)
}

/// Reads a single frame straight out of an encoded replay.
pub fn frame_at(bytes: &[u8], index: usize) -> Result<FrameRecord, ReplayError> {
    let header = decode_header(bytes)?;
    if index >= header.frame_count {
        return Err(ReplayError::Corrupt {
            field: "frame_count",
            offset: header.len - 4,
            reason: format!("frame {index} out of range ({} frames)", header.frame_count),
        });
    }
    let offset = header.len + index * RECORD_SIZE;
    let mut cur = Cursor { bytes, pos: offset };
    let rec = cur.take(RECORD_SIZE, "record")?;
    decode_record(rec, offset)
}

pub fn read_replay_file(path: impl AsRef<Path>) -> Result<Replay, ReplayError> {
    decode_replay(&fs::read(path)?)
}

pub fn write_replay_file(path: impl AsRef<Path>, replay: &Replay) -> Result<(), ReplayError> {
    fs::write(path, encode_replay(replay)?)?;
    Ok(())
}

/// Drops the first `n` frames (match start-up). Fails if nothing would remain.
pub fn trim_start(replay: &Replay, n: usize) -> Result<Replay, ReplayError> {
    if n >= replay.frames.len() {
        return Err(ReplayError::Empty);
    }
    Ok(Replay {
        frames: replay.frames[n..].to_vec(),
        ..replay.clone()
    })
}
