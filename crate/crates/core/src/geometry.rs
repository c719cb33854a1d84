//! Keyboard layout and contact zones.
//!
//! The 88 keys start at A0. White keys form a contiguous strip of 52
//! fixed-width footprints along x; black keys sit in a rear band centered
//! on the boundary between their neighboring white keys. Each key's
//! playable footprint is a half-open rectangle, so footprints partition the
//! board and a point press is never ambiguous: white keys own the front
//! band `y in [0, white_zone_depth)`, black keys the rear band
//! `y in [white_zone_depth, total_depth)`.
//!
//! A key's contact point (used for assignment costs) is the center of its
//! playable footprint.

use crate::{Real, KEY_COUNT};

/// Number of white keys on an 88-key board.
pub const WHITE_KEY_COUNT: usize = 52;

/// Key classes within the repeating 12-key octave, indexed from A.
/// `true` marks a black key (A#, C#, D#, F#, G#).
const BLACK_IN_OCTAVE: [bool; 12] = [
    false, true, false, false, true, false, true, false, false, true, false, true,
];

#[derive(Debug, Clone)]
pub struct KeyboardGeometry {
    pub white_key_width: Real,
    pub black_key_width: Real,
    /// Front band depth owned by white-key footprints.
    pub white_zone_depth: Real,
    /// Rear edge of the black-key band.
    pub total_depth: Real,
    /// Contact point per key, ordered by key index.
    key_positions: Vec<(Real, Real)>,
}

impl KeyboardGeometry {
    /// Real-piano dimensions: 23.5 mm white keys, 13.7 mm black keys,
    /// 150 mm key depth with a 60 mm unobstructed white front band.
    pub fn standard() -> Self {
        Self::with_dimensions(0.0235, 0.0137, 0.06, 0.15)
    }

    pub fn with_dimensions(
        white_key_width: Real,
        black_key_width: Real,
        white_zone_depth: Real,
        total_depth: Real,
    ) -> Self {
        assert!(white_key_width > 0.0 && black_key_width > 0.0);
        assert!(black_key_width < 2.0 * white_key_width, "black keys must not overlap");
        assert!(0.0 < white_zone_depth && white_zone_depth < total_depth);
        let mut key_positions = Vec::with_capacity(KEY_COUNT);
        let mut white_index = 0usize;
        for key in 0..KEY_COUNT {
            if is_black(key) {
                // Centered on the boundary between the surrounding whites.
                let x = white_index as Real * white_key_width;
                let y = (white_zone_depth + total_depth) / 2.0;
                key_positions.push((x, y));
            } else {
                let x = (white_index as Real + 0.5) * white_key_width;
                let y = white_zone_depth / 2.0;
                key_positions.push((x, y));
                white_index += 1;
            }
        }
        debug_assert_eq!(white_index, WHITE_KEY_COUNT);
        KeyboardGeometry {
            white_key_width,
            black_key_width,
            white_zone_depth,
            total_depth,
            key_positions,
        }
    }

    /// Total board extent along x.
    pub fn width(&self) -> Real {
        WHITE_KEY_COUNT as Real * self.white_key_width
    }

    pub fn contact_point(&self, key: usize) -> (Real, Real) {
        self.key_positions[key]
    }

    /// Half-open playable footprint `[x_lo, x_hi) x [y_lo, y_hi)`.
    ///
    /// White edges come from the integer strip index so neighboring keys
    /// share the exact same boundary value.
    pub fn footprint(&self, key: usize) -> ((Real, Real), (Real, Real)) {
        if is_black(key) {
            let (cx, _) = self.key_positions[key];
            (
                (cx - self.black_key_width / 2.0, self.white_zone_depth),
                (cx + self.black_key_width / 2.0, self.total_depth),
            )
        } else {
            let i = white_index_of(key) as Real;
            (
                (i * self.white_key_width, 0.0),
                ((i + 1.0) * self.white_key_width, self.white_zone_depth),
            )
        }
    }

    /// The key whose playable footprint contains the point, if any.
    pub fn key_at(&self, x: Real, y: Real) -> Option<usize> {
        if x < 0.0 || x >= self.width() || y < 0.0 || y >= self.total_depth {
            return None;
        }
        if y < self.white_zone_depth {
            let white = (x / self.white_key_width) as usize;
            return white_to_key(white);
        }
        // Rear band: the candidate boundary is the nearest white-key edge.
        let boundary = (x / self.white_key_width).round();
        let cx = boundary * self.white_key_width;
        if x < cx - self.black_key_width / 2.0 || x >= cx + self.black_key_width / 2.0 {
            return None;
        }
        let b = boundary as usize;
        if b == 0 || b >= WHITE_KEY_COUNT {
            return None;
        }
        // The black key between white b-1 and white b, when the octave
        // pattern has one there.
        let left = white_to_key(b - 1).expect("white index in range");
        let candidate = left + 1;
        (candidate < KEY_COUNT && is_black(candidate)).then_some(candidate)
    }
}

/// Whether a key index is a black key.
pub fn is_black(key: usize) -> bool {
    BLACK_IN_OCTAVE[key % 12]
}

/// Position of a white key within the 52-key white strip.
fn white_index_of(key: usize) -> usize {
    debug_assert!(!is_black(key));
    let octave = key / 12;
    let within = (0..key % 12).filter(|&i| !BLACK_IN_OCTAVE[i]).count();
    octave * 7 + within
}

/// Key index of the n-th white key.
fn white_to_key(white: usize) -> Option<usize> {
    if white >= WHITE_KEY_COUNT {
        return None;
    }
    // Whites repeat 7 per octave starting from A0 = key 0.
    const WHITE_OFFSETS: [usize; 7] = [0, 2, 3, 5, 7, 8, 10];
    let octave = white / 7;
    let within = white % 7;
    Some(octave * 12 + WHITE_OFFSETS[within])
}
