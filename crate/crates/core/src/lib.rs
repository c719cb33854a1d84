//! Task substrate for bimanual robotic piano playing.
//!
//! The crate covers the full path from a Standard MIDI File to a shaped
//! per-step reward signal:
//!
//! - [`midi`] parses SMF bytes into key/sustain event streams.
//! - [`goal`] discretizes events into binary goal matrices with lookahead
//!   windows, chunking, and a versioned on-disk format.
//! - [`geometry`] lays out an 88-key keyboard and its contact zones.
//! - [`sim`] is a kinematic point-finger environment over that keyboard,
//!   exposing the flat observation vector and the bounded action interface.
//! - [`assignment`] solves the per-step finger-to-key optimal transport
//!   problem exactly and converts its cost into a shaped reward.
//! - [`reward`] combines press, sustain, collision, and energy terms into
//!   the composite step reward, and scores episodes with precision/recall/F1.
//!
//! Numeric kernels are generic over [`Scalar`]; the environment and file
//! formats are fixed to [`Real`] (`f64`).

pub mod assignment;
pub mod geometry;
pub mod goal;
pub mod midi;
pub mod reward;
pub mod scalar;
pub mod scripted;
pub mod sim;

pub use assignment::{Assignment, AssignmentProblem};
pub use geometry::KeyboardGeometry;
pub use goal::GoalMatrix;
pub use midi::MidiClip;
pub use reward::{EpisodeScore, RewardBreakdown};
pub use scalar::Scalar;
pub use sim::{Action, EnvConfig, EnvState, Observation, PianoEnv, StepResult};

/// Scalar type used by the environment, file formats, and trainers.
pub type Real = f64;

/// Number of piano keys.
pub const KEY_COUNT: usize = 88;

/// Width of one goal row: 88 keys plus the sustain pedal channel.
pub const GOAL_WIDTH: usize = 89;
