//! Standard MIDI File ingestion.
//!
//! Parses SMF format 0 and 1 byte streams into a flat, tick-ordered event
//! list covering the 88-key range plus the sustain pedal. The parser is
//! total over arbitrary byte input: every input either yields a clip or one
//! of the declared [`MidiError`] variants, and it never allocates based on
//! untrusted length fields beyond the actual buffer size.
//!
//! Reduction rules applied to the raw stream:
//! - MIDI notes 21..=108 map to keys 0..=87; notes outside that range are
//!   dropped and counted in [`MidiClip::dropped_notes`].
//! - A note-on with velocity 0 is a note-off.
//! - Overlapping note-ons on one key merge into a single active interval.
//! - Control change 64 with value >= 64 is sustain-on, below 64 sustain-off;
//!   only transitions are recorded.
//! - Notes and pedal still active at end of file are closed at the final
//!   tick so every on event has a later matching off event.
//!
//! Note and pedal events are accepted from every track and channel; all
//! other message kinds are skipped. Tempo meta events from every track are
//! collected into [`MidiClip::tempo_map`].

use thiserror::Error;

use crate::KEY_COUNT;

/// MIDI note number of the lowest piano key (A0).
pub const LOWEST_MIDI_NOTE: u8 = 21;

/// MIDI note number of the highest piano key (C8).
pub const HIGHEST_MIDI_NOTE: u8 = 108;

/// Default tempo when a file declares none: 500000 us per beat (120 BPM).
pub const DEFAULT_TEMPO: u32 = 500_000;

const SUSTAIN_CONTROLLER: u8 = 64;
const MAX_NAME_BYTES: usize = 256;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated or corrupt track: {0}")]
    TruncatedTrack(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
}

/// What happened at a given tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    NoteOn,
    NoteOff,
    SustainOn,
    SustainOff,
}

/// One reduced event. `key` is a piano key index in 0..88 for note events
/// and 0 for sustain events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MidiEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub key: u8,
}

/// A parsed clip: tick-ordered events plus the timing data needed to place
/// them in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct MidiClip {
    pub name: String,
    pub events: Vec<MidiEvent>,
    pub ticks_per_beat: u32,
    /// (tick, microseconds per beat), sorted by tick, first entry at tick 0.
    pub tempo_map: Vec<(u64, u32)>,
    /// Note events outside the 88-key range that were discarded.
    pub dropped_notes: usize,
}

impl MidiClip {
    /// Converts an absolute tick to seconds by integrating the tempo map.
    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        let tpb = f64::from(self.ticks_per_beat);
        let mut seconds = 0.0;
        for (i, &(seg_tick, tempo)) in self.tempo_map.iter().enumerate() {
            if seg_tick >= tick {
                break;
            }
            let seg_end = match self.tempo_map.get(i + 1) {
                Some(&(next_tick, _)) => next_tick.min(tick),
                None => tick,
            };
            seconds += (seg_end - seg_tick) as f64 * f64::from(tempo) / (tpb * 1e6);
        }
        seconds
    }

    /// Checks the ordering and pairing invariants. Used by tests.
    pub fn validate(&self) -> Result<(), String> {
        let mut active = [false; KEY_COUNT];
        let mut pedal = false;
        let mut last_tick = 0u64;
        for ev in &self.events {
            if ev.tick < last_tick {
                return Err(format!("events out of order at tick {}", ev.tick));
            }
            last_tick = ev.tick;
            match ev.kind {
                EventKind::NoteOn | EventKind::NoteOff => {
                    let k = ev.key as usize;
                    if k >= KEY_COUNT {
                        return Err(format!("key {} out of range", ev.key));
                    }
                    let on = ev.kind == EventKind::NoteOn;
                    if active[k] == on {
                        return Err(format!("unpaired {:?} for key {}", ev.kind, ev.key));
                    }
                    active[k] = on;
                }
                EventKind::SustainOn | EventKind::SustainOff => {
                    let on = ev.kind == EventKind::SustainOn;
                    if pedal == on {
                        return Err("unpaired sustain transition".into());
                    }
                    pedal = on;
                }
            }
        }
        if active.iter().any(|&a| a) || pedal {
            return Err("dangling note or pedal at end of clip".into());
        }
        Ok(())
    }
}

fn note_to_key(note: u8) -> Option<usize> {
    if (LOWEST_MIDI_NOTE..=HIGHEST_MIDI_NOTE).contains(&note) {
        Some(usize::from(note - LOWEST_MIDI_NOTE))
    } else {
        None
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Cursor { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn u8(&mut self) -> Option<u8> {
        let b = *self.data.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn u16(&mut self) -> Option<u16> {
        let hi = self.u8()?;
        let lo = self.u8()?;
        Some(u16::from_be_bytes([hi, lo]))
    }

    fn u32(&mut self) -> Option<u32> {
        let b: [u8; 4] = self.take(4)?.try_into().ok()?;
        Some(u32::from_be_bytes(b))
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    /// Variable-length quantity, at most 4 bytes per the SMF standard.
    fn vlq(&mut self) -> Option<u32> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Some(value);
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy)]
enum RawKind {
    NoteOn(u8),
    NoteOff(u8),
    Sustain(bool),
}

#[derive(Debug, Clone, Copy)]
struct RawEvent {
    tick: u64,
    seq: u64,
    kind: RawKind,
}

struct TrackParse {
    events: Vec<RawEvent>,
    tempos: Vec<(u64, u64, u32)>,
    end_tick: u64,
    name: Option<String>,
}

/// Parses one MTrk chunk body. `seq` numbers events globally so the later
/// merge sort is stable across tracks.
fn parse_track(body: &[u8], seq: &mut u64) -> Result<TrackParse, MidiError> {
    let corrupt = |msg: &str| MidiError::TruncatedTrack(msg.to_string());
    let mut cur = Cursor::new(body);
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut out = TrackParse {
        events: Vec::new(),
        tempos: Vec::new(),
        end_tick: 0,
        name: None,
    };
    loop {
        if cur.remaining() == 0 {
            // Track body ended cleanly without an end-of-track meta; accept
            // what was parsed.
            out.end_tick = tick;
            return Ok(out);
        }
        let delta = cur.vlq().ok_or_else(|| corrupt("bad delta time"))?;
        tick += u64::from(delta);
        let status = match cur.peek().ok_or_else(|| corrupt("missing status"))? {
            b if b >= 0x80 => {
                cur.pos += 1;
                if b < 0xF0 {
                    running = Some(b);
                } else {
                    running = None;
                }
                b
            }
            _ => running.ok_or_else(|| corrupt("data byte without running status"))?,
        };
        let mut push = |kind: RawKind| {
            out.events.push(RawEvent {
                tick,
                seq: *seq,
                kind,
            });
            *seq += 1;
        };
        match status & 0xF0 {
            0x80 => {
                let note = cur.u8().ok_or_else(|| corrupt("short note-off"))?;
                cur.u8().ok_or_else(|| corrupt("short note-off"))?;
                push(RawKind::NoteOff(note));
            }
            0x90 => {
                let note = cur.u8().ok_or_else(|| corrupt("short note-on"))?;
                let vel = cur.u8().ok_or_else(|| corrupt("short note-on"))?;
                if vel == 0 {
                    push(RawKind::NoteOff(note));
                } else {
                    push(RawKind::NoteOn(note));
                }
            }
            0xA0 | 0xE0 => {
                cur.take(2).ok_or_else(|| corrupt("short two-byte message"))?;
            }
            0xB0 => {
                let controller = cur.u8().ok_or_else(|| corrupt("short control change"))?;
                let value = cur.u8().ok_or_else(|| corrupt("short control change"))?;
                if controller == SUSTAIN_CONTROLLER {
                    push(RawKind::Sustain(value >= 64));
                }
            }
            0xC0 | 0xD0 => {
                cur.u8().ok_or_else(|| corrupt("short one-byte message"))?;
            }
            0xF0 => match status {
                0xFF => {
                    let meta = cur.u8().ok_or_else(|| corrupt("short meta event"))?;
                    let len = cur.vlq().ok_or_else(|| corrupt("bad meta length"))? as usize;
                    let data = cur.take(len).ok_or_else(|| corrupt("meta past track end"))?;
                    match meta {
                        0x2F => {
                            out.end_tick = tick;
                            return Ok(out);
                        }
                        0x51 if len == 3 => {
                            let tempo =
                                u32::from_be_bytes([0, data[0], data[1], data[2]]);
                            if tempo > 0 {
                                out.tempos.push((tick, *seq, tempo));
                                *seq += 1;
                            }
                        }
                        0x03 if out.name.is_none() && !data.is_empty() => {
                            let cut = data.len().min(MAX_NAME_BYTES);
                            out.name =
                                Some(String::from_utf8_lossy(&data[..cut]).into_owned());
                        }
                        _ => {}
                    }
                }
                0xF0 | 0xF7 => {
                    let len = cur.vlq().ok_or_else(|| corrupt("bad sysex length"))? as usize;
                    cur.take(len).ok_or_else(|| corrupt("sysex past track end"))?;
                }
                _ => return Err(corrupt("unexpected system status byte")),
            },
            _ => unreachable!("status bytes are >= 0x80 here"),
        }
    }
}

/// Parses an SMF byte buffer into a [`MidiClip`].
pub fn parse_midi(bytes: &[u8]) -> Result<MidiClip, MidiError> {
    let mut cur = Cursor::new(bytes);
    let magic = cur
        .take(4)
        .ok_or_else(|| MidiError::MalformedHeader("file shorter than header".into()))?;
    if magic != b"MThd" {
        return Err(MidiError::MalformedHeader("missing MThd magic".into()));
    }
    let header_len = cur
        .u32()
        .ok_or_else(|| MidiError::MalformedHeader("missing header length".into()))?
        as usize;
    if header_len < 6 {
        return Err(MidiError::MalformedHeader("header length below 6".into()));
    }
    let format = cur
        .u16()
        .ok_or_else(|| MidiError::MalformedHeader("missing format field".into()))?;
    let declared_tracks = cur
        .u16()
        .ok_or_else(|| MidiError::MalformedHeader("missing track count".into()))?;
    let division = cur
        .u16()
        .ok_or_else(|| MidiError::MalformedHeader("missing division".into()))?;
    match format {
        0 | 1 => {}
        2 => return Err(MidiError::UnsupportedFormat("SMF type 2".into())),
        other => {
            return Err(MidiError::UnsupportedFormat(format!("SMF type {other}")));
        }
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedFormat("SMPTE division".into()));
    }
    if division == 0 {
        return Err(MidiError::MalformedHeader("zero ticks per beat".into()));
    }
    cur.take(header_len - 6)
        .ok_or_else(|| MidiError::MalformedHeader("header length past end of file".into()))?;

    let mut seq = 0u64;
    let mut tracks: Vec<TrackParse> = Vec::new();
    while tracks.len() < usize::from(declared_tracks) {
        let chunk_type = match cur.take(4) {
            Some(t) => t,
            None if cur.remaining() == 0 => {
                return Err(MidiError::TruncatedTrack(format!(
                    "header declares {} tracks, found {}",
                    declared_tracks,
                    tracks.len()
                )));
            }
            None => return Err(MidiError::TruncatedTrack("dangling chunk header".into())),
        };
        let chunk_len = cur
            .u32()
            .ok_or_else(|| MidiError::TruncatedTrack("missing chunk length".into()))?
            as usize;
        let body = cur
            .take(chunk_len)
            .ok_or_else(|| MidiError::TruncatedTrack("chunk length past end of file".into()))?;
        if chunk_type == b"MTrk" {
            tracks.push(parse_track(body, &mut seq)?);
        }
        // Unknown chunk types are skipped per the SMF standard.
    }

    // Merge raw events across tracks; seq keeps the sort stable so files
    // parse identically on every run.
    let mut merged: Vec<RawEvent> = tracks.iter().flat_map(|t| t.events.clone()).collect();
    merged.sort_by_key(|e| (e.tick, e.seq));

    let mut tempo_entries: Vec<(u64, u64, u32)> =
        tracks.iter().flat_map(|t| t.tempos.clone()).collect();
    tempo_entries.sort_by_key(|&(tick, s, _)| (tick, s));
    let mut tempo_map: Vec<(u64, u32)> = Vec::new();
    for (tick, _, tempo) in tempo_entries {
        match tempo_map.last_mut() {
            Some(last) if last.0 == tick => last.1 = tempo,
            _ => tempo_map.push((tick, tempo)),
        }
    }
    if tempo_map.first().is_none_or(|&(t, _)| t > 0) {
        tempo_map.insert(0, (0, DEFAULT_TEMPO));
    }

    let file_end = tracks
        .iter()
        .map(|t| t.end_tick)
        .chain(merged.last().map(|e| e.tick))
        .max()
        .unwrap_or(0);

    let mut events: Vec<MidiEvent> = Vec::with_capacity(merged.len());
    let mut active_since: [Option<u64>; KEY_COUNT] = [None; KEY_COUNT];
    let mut pedal = false;
    let mut dropped = 0usize;
    for raw in &merged {
        match raw.kind {
            RawKind::NoteOn(note) => match note_to_key(note) {
                Some(k) if active_since[k].is_none() => {
                    active_since[k] = Some(raw.tick);
                    events.push(MidiEvent {
                        tick: raw.tick,
                        kind: EventKind::NoteOn,
                        key: k as u8,
                    });
                }
                Some(_) => {}
                None => dropped += 1,
            },
            RawKind::NoteOff(note) => {
                if let Some(k) = note_to_key(note) {
                    if active_since[k].is_some() {
                        active_since[k] = None;
                        events.push(MidiEvent {
                            tick: raw.tick,
                            kind: EventKind::NoteOff,
                            key: k as u8,
                        });
                    }
                }
            }
            RawKind::Sustain(on) => {
                if on != pedal {
                    pedal = on;
                    events.push(MidiEvent {
                        tick: raw.tick,
                        kind: if on {
                            EventKind::SustainOn
                        } else {
                            EventKind::SustainOff
                        },
                        key: 0,
                    });
                }
            }
        }
    }

    // Close anything still sounding so the pairing invariant holds. The off
    // tick is strictly after the on tick even when the on sits at file end.
    let mut closers: Vec<MidiEvent> = Vec::new();
    for (k, since) in active_since.iter().enumerate() {
        if let Some(on_tick) = since {
            closers.push(MidiEvent {
                tick: file_end.max(on_tick + 1),
                kind: EventKind::NoteOff,
                key: k as u8,
            });
        }
    }
    if pedal {
        closers.push(MidiEvent {
            tick: file_end,
            kind: EventKind::SustainOff,
            key: 0,
        });
    }
    closers.sort_by_key(|e| e.tick);
    events.extend(closers);

    let name = tracks.iter().find_map(|t| t.name.clone()).unwrap_or_default();
    Ok(MidiClip {
        name,
        events,
        ticks_per_beat: u32::from(division),
        tempo_map,
        dropped_notes: dropped,
    })
}
