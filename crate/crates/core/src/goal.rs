//! Time-discretized goal matrices.
//!
//! A [`GoalMatrix`] is a T x 89 binary grid: columns 0..=87 say which keys
//! must sound at each control step and column 88 carries the sustain pedal
//! target. Rows are sampled at step midpoints: step `t` is active for a note
//! interval `[start, end)` exactly when `start <= (t + 0.5) * dt < end`,
//! which reproduces ordinary rounding at both interval ends.
//!
//! The on-disk form is the "PFGM" container described at [`GoalMatrix::save`];
//! [`GoalMatrix::to_debug_json`] emits a human-readable dump of the same data.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::midi::{EventKind, MidiClip};
use crate::{Real, GOAL_WIDTH, KEY_COUNT};

/// Goal rows visible to the policy: the current step plus ten future steps.
pub const DEFAULT_LOOKAHEAD: usize = 11;

/// Control timestep in seconds.
pub const DEFAULT_CONTROL_DT: Real = 0.05;

/// Tempo stretch applied during ingestion for training data.
pub const DEFAULT_STRETCH: Real = 1.25;

/// Episode chunk length in control steps (27.5 s at the default timestep).
pub const DEFAULT_CHUNK_LEN: usize = 550;

const PFGM_MAGIC: &[u8; 4] = b"PFGM";
const PFGM_VERSION: u32 = 1;
const ROW_BYTES: usize = 12;

#[derive(Debug, Error)]
pub enum GoalError {
    #[error("clip produces no active goal rows")]
    EmptyClip,
    #[error("goal file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad goal file: {0}")]
    Format(String),
}

/// Binary goal grid for one song or chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalMatrix {
    pub name: String,
    pub chunk_index: u32,
    /// Number of control steps T.
    pub steps: usize,
    /// Default window length used by `goal_window` callers.
    pub lookahead: usize,
    pub control_dt: Real,
    /// Row-major T x 89 entries, each 0 or 1.
    data: Vec<u8>,
}

impl GoalMatrix {
    /// All-zero matrix with the given shape.
    pub fn new(name: &str, steps: usize, lookahead: usize, control_dt: Real) -> Self {
        assert!(steps > 0 && lookahead >= 1 && control_dt > 0.0);
        GoalMatrix {
            name: name.to_string(),
            chunk_index: 0,
            steps,
            lookahead,
            control_dt,
            data: vec![0; steps * GOAL_WIDTH],
        }
    }

    pub fn get(&self, t: usize, col: usize) -> bool {
        self.data[t * GOAL_WIDTH + col] != 0
    }

    pub fn set(&mut self, t: usize, col: usize, on: bool) {
        self.data[t * GOAL_WIDTH + col] = u8::from(on);
    }

    /// One row as raw 0/1 bytes, length 89.
    pub fn row(&self, t: usize) -> &[u8] {
        &self.data[t * GOAL_WIDTH..(t + 1) * GOAL_WIDTH]
    }

    /// Key indices active at step `t` (sustain column excluded).
    pub fn active_keys(&self, t: usize) -> Vec<usize> {
        (0..KEY_COUNT).filter(|&k| self.get(t, k)).collect()
    }

    pub fn sustain(&self, t: usize) -> bool {
        self.get(t, KEY_COUNT)
    }

    /// Count of set entries over the whole matrix, sustain included.
    pub fn active_count(&self) -> usize {
        self.data.iter().map(|&b| usize::from(b)).sum()
    }

    /// Concatenation of rows `t..t + len`, zero-padded past the end.
    pub fn goal_window(&self, t: usize, len: usize) -> Vec<Real> {
        assert!(t < self.steps, "window start {} out of {} steps", t, self.steps);
        let mut out = vec![0.0; len * GOAL_WIDTH];
        for (i, chunk) in out.chunks_mut(GOAL_WIDTH).enumerate() {
            if let Some(row) = (t + i < self.steps).then(|| self.row(t + i)) {
                for (dst, &src) in chunk.iter_mut().zip(row) {
                    *dst = Real::from(src);
                }
            }
        }
        out
    }

    /// Splits into consecutive chunks of `chunk_len` rows; the final chunk
    /// is zero-padded to full length. Chunks inherit name, lookahead, and
    /// timestep, and are numbered in order.
    pub fn chunk(&self, chunk_len: usize) -> Vec<GoalMatrix> {
        assert!(chunk_len > 0);
        let n = self.steps.div_ceil(chunk_len);
        (0..n)
            .map(|i| {
                let lo = i * chunk_len;
                let hi = ((i + 1) * chunk_len).min(self.steps);
                let mut data = self.data[lo * GOAL_WIDTH..hi * GOAL_WIDTH].to_vec();
                data.resize(chunk_len * GOAL_WIDTH, 0);
                GoalMatrix {
                    name: self.name.clone(),
                    chunk_index: i as u32,
                    steps: chunk_len,
                    lookahead: self.lookahead,
                    control_dt: self.control_dt,
                    data,
                }
            })
            .collect()
    }

    /// Writes the PFGM container:
    /// magic "PFGM", u32 version, u32 T, u32 default lookahead, f64
    /// control_dt, then T rows of 89 bits packed LSB-first into 12 bytes,
    /// then a u32 name length, the UTF-8 name, and the u32 chunk index.
    /// All integers and the float are little-endian.
    pub fn save(&self, path: &Path) -> Result<(), GoalError> {
        let mut out = Vec::with_capacity(24 + self.steps * ROW_BYTES + self.name.len());
        out.extend(PFGM_MAGIC);
        out.extend(PFGM_VERSION.to_le_bytes());
        out.extend((self.steps as u32).to_le_bytes());
        out.extend((self.lookahead as u32).to_le_bytes());
        out.extend(self.control_dt.to_le_bytes());
        for t in 0..self.steps {
            let mut packed = [0u8; ROW_BYTES];
            for (col, &v) in self.row(t).iter().enumerate() {
                if v != 0 {
                    packed[col / 8] |= 1 << (col % 8);
                }
            }
            out.extend(packed);
        }
        out.extend((self.name.len() as u32).to_le_bytes());
        out.extend(self.name.as_bytes());
        out.extend(self.chunk_index.to_le_bytes());
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    /// Reads a PFGM container written by [`GoalMatrix::save`].
    pub fn load(path: &Path) -> Result<Self, GoalError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_pfgm_bytes(&bytes)
    }

    pub fn from_pfgm_bytes(bytes: &[u8]) -> Result<Self, GoalError> {
        let bad = |msg: &str| GoalError::Format(msg.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], GoalError> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| bad("file shorter than declared contents"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != PFGM_MAGIC {
            return Err(bad("missing PFGM magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != PFGM_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let steps = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let lookahead = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let control_dt = Real::from_le_bytes(take(8)?.try_into().unwrap());
        if steps == 0 || lookahead == 0 || control_dt <= 0.0 || control_dt.is_nan() {
            return Err(bad("invalid header fields"));
        }
        if bytes.len() < 24 + steps.saturating_mul(ROW_BYTES) {
            return Err(bad("file shorter than declared contents"));
        }
        let mut data = vec![0u8; steps * GOAL_WIDTH];
        for t in 0..steps {
            let packed = take(ROW_BYTES)?;
            for col in 0..GOAL_WIDTH {
                data[t * GOAL_WIDTH + col] = (packed[col / 8] >> (col % 8)) & 1;
            }
            // Bits beyond column 88 must be zero in a well-formed file.
            if packed[11] & !0x01 != 0 {
                return Err(bad("nonzero padding bits in row"));
            }
        }
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| bad("name is not UTF-8"))?;
        let chunk_index = u32::from_le_bytes(take(4)?.try_into().unwrap());
        Ok(GoalMatrix {
            name,
            chunk_index,
            steps,
            lookahead,
            control_dt,
            data,
        })
    }

    /// Human-readable dump: one entry per row listing active keys and the
    /// sustain flag.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = (0..self.steps)
            .map(|t| {
                serde_json::json!({
                    "t": t,
                    "keys": self.active_keys(t),
                    "sustain": self.sustain(t),
                })
            })
            .collect();
        serde_json::json!({
            "name": self.name,
            "chunk_index": self.chunk_index,
            "steps": self.steps,
            "lookahead": self.lookahead,
            "control_dt": self.control_dt,
            "rows": rows,
        })
    }
}

/// Step index of the first midpoint at or after `time`.
fn first_step(time: Real, dt: Real) -> usize {
    let t = (time / dt - 0.5).ceil();
    if t <= 0.0 {
        0
    } else {
        t as usize
    }
}

/// Step index of the last midpoint strictly before `time`, or None.
fn last_step(time: Real, dt: Real) -> Option<usize> {
    // Strictly-before semantics: a midpoint exactly at the interval end
    // is excluded, so an integral bound already names one past the last
    // active step and ceil covers both cases.
    let t = (time / dt - 0.5).ceil();
    if t <= 0.0 {
        None
    } else {
        Some(t as usize - 1)
    }
}

/// Discretizes a parsed clip into a goal matrix.
///
/// Note intervals are scaled by `stretch` (values above 1 slow the song
/// down), then sampled at step midpoints. With `trim_silence` set, leading
/// and trailing all-zero rows are removed.
pub fn to_goal_matrix(
    clip: &MidiClip,
    control_dt: Real,
    stretch: Real,
    trim_silence: bool,
) -> Result<GoalMatrix, GoalError> {
    assert!(control_dt > 0.0 && stretch > 0.0);
    // Pair on/off events into [start, end) second intervals per column.
    let mut open: [Option<Real>; GOAL_WIDTH] = [None; GOAL_WIDTH];
    let mut intervals: Vec<(usize, Real, Real)> = Vec::new();
    for ev in &clip.events {
        let time = clip.tick_to_seconds(ev.tick) * stretch;
        let (col, on) = match ev.kind {
            EventKind::NoteOn => (usize::from(ev.key), true),
            EventKind::NoteOff => (usize::from(ev.key), false),
            EventKind::SustainOn => (KEY_COUNT, true),
            EventKind::SustainOff => (KEY_COUNT, false),
        };
        if on {
            open[col] = Some(time);
        } else if let Some(start) = open[col].take() {
            intervals.push((col, start, time));
        }
    }
    let mut rows = 0usize;
    let spans: Vec<(usize, usize, usize)> = intervals
        .iter()
        .filter_map(|&(col, start, end)| {
            let lo = first_step(start, control_dt);
            let hi = last_step(end, control_dt)?;
            (lo <= hi).then_some((col, lo, hi))
        })
        .collect();
    for &(_, _, hi) in &spans {
        rows = rows.max(hi + 1);
    }
    if rows == 0 {
        return Err(GoalError::EmptyClip);
    }
    let mut goal = GoalMatrix::new(&clip.name, rows, DEFAULT_LOOKAHEAD, control_dt);
    for (col, lo, hi) in spans {
        for t in lo..=hi {
            goal.set(t, col, true);
        }
    }
    if trim_silence {
        let nonzero = |t: usize| goal.row(t).iter().any(|&v| v != 0);
        let first = (0..goal.steps).find(|&t| nonzero(t)).ok_or(GoalError::EmptyClip)?;
        let last = (0..goal.steps).rev().find(|&t| nonzero(t)).unwrap();
        let data = goal.data[first * GOAL_WIDTH..(last + 1) * GOAL_WIDTH].to_vec();
        goal.steps = last + 1 - first;
        goal.data = data;
    }
    Ok(goal)
}
