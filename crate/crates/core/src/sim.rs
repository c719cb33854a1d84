//! Kinematic bimanual piano environment.
//!
//! Two hands of point fingertips hover over the keyboard from
//! [`crate::geometry`]. Each hand is a forearm position, five finger
//! offsets inside per-finger reach boxes, five press depths, and a wrist
//! spread factor that scales the lateral offsets. Keys are first-order
//! springs: contact by a pressed fingertip drives a key toward 1, release
//! lets it decay geometrically.
//!
//! # Action layout (39 channels by default)
//!
//! Per hand (left block first), all commands in `[-1, 1]`:
//!
//! | offset        | meaning                                            |
//! |---------------|----------------------------------------------------|
//! | 0, 1          | forearm x/y velocity command                       |
//! | 2+3i .. 4+3i  | finger i: offset x/y velocity, press target        |
//! | 2+3F          | wrist spread velocity command                      |
//! | 3+3F          | auxiliary lateral velocity for the outermost finger|
//!
//! followed by one sustain-pedal target channel. Press and sustain targets
//! clamp to `[0, 1]`, so a non-positive command releases. The auxiliary
//! channel mirrors the extra abduction freedom of the human little finger
//! and adds to finger F-1's lateral rate (two commands, one joint).
//!
//! # Observation layout (1144 entries by default)
//!
//! goal window `89 * L` | key states `88` | sustain `1` | fingertips
//! `3 * 2F` (x, y, press depth) | hand block `2 * (2 + 2F + F + F + 1)`
//! (forearm, offsets, press depths, press velocities, spread).
//!
//! Episodes run for the goal's length (or a configured override); `done`
//! fires exactly when `t` reaches that horizon. Given a seed, a goal, and
//! an action sequence, trajectories are bit-for-bit deterministic.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assignment;
use crate::geometry::KeyboardGeometry;
use crate::goal::GoalMatrix;
use crate::reward::{self, RewardBreakdown};
use crate::{Real, GOAL_WIDTH, KEY_COUNT};

/// Action channels with the default five-finger hands.
pub const ACTION_DIM: usize = 39;

/// Observation length with the default config.
pub const OBS_DIM: usize = 1144;

/// Flat observation vector; layout documented at the module level.
pub type Observation = Vec<Real>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("action has {got} channels, expected {expected}")]
    WrongActionLength { expected: usize, got: usize },
    #[error("step called on a finished episode (t = {t}, horizon = {horizon})")]
    EpisodeOver { t: usize, horizon: usize },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Environment parameters. The defaults reproduce the documented action
/// and observation sizes (39 and 1144).
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Goal rows visible to the policy, current step included.
    pub lookahead: usize,
    /// Control timestep in seconds.
    pub control_dt: Real,
    pub fingers_per_hand: usize,
    /// Episode length override; 0 plays the whole goal.
    pub episode_len: usize,
    /// Max fingertip offset speed (m/s).
    pub fingertip_speed: Real,
    /// Max forearm speed (m/s).
    pub forearm_speed: Real,
    /// Press depth and sustain slew rate (units/s).
    pub press_rate: Real,
    /// Wrist spread slew rate (units/s).
    pub spread_rate: Real,
    pub spread_min: Real,
    pub spread_max: Real,
    /// Fraction of the remaining travel a contacted key gains per step.
    pub key_attack: Real,
    /// Multiplicative decay of a released key per step.
    pub key_decay: Real,
    /// Press depth needed before a fingertip actuates a key.
    pub contact_press_min: Real,
    /// Key state at or above this counts as pressed.
    pub activation_threshold: Real,
    pub collision_radius: Real,
    /// Uniform forearm jitter applied at reset (meters, each axis).
    pub reset_jitter: Real,
    /// Half-extent of each finger's reach box around its home offset.
    pub reach_half: Real,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            lookahead: 11,
            control_dt: 0.05,
            fingers_per_hand: 5,
            episode_len: 0,
            fingertip_speed: 0.4,
            forearm_speed: 0.25,
            press_rate: 10.0,
            spread_rate: 1.0,
            spread_min: 0.7,
            spread_max: 1.3,
            key_attack: 0.6,
            key_decay: 0.7,
            contact_press_min: 0.5,
            activation_threshold: 0.5,
            collision_radius: reward::COLLISION_RADIUS,
            reset_jitter: 0.005,
            reach_half: 0.05,
        }
    }
}

macro_rules! config_fields {
    ($macro:ident) => {
        $macro!(
            (lookahead, usize),
            (control_dt, Real),
            (fingers_per_hand, usize),
            (episode_len, usize),
            (fingertip_speed, Real),
            (forearm_speed, Real),
            (press_rate, Real),
            (spread_rate, Real),
            (spread_min, Real),
            (spread_max, Real),
            (key_attack, Real),
            (key_decay, Real),
            (contact_press_min, Real),
            (activation_threshold, Real),
            (collision_radius, Real),
            (reset_jitter, Real),
            (reach_half, Real)
        );
    };
}

impl EnvConfig {
    pub fn action_dim(&self) -> usize {
        2 * (3 * self.fingers_per_hand + 4) + 1
    }

    pub fn obs_dim(&self) -> usize {
        let f = self.fingers_per_hand;
        GOAL_WIDTH * self.lookahead + KEY_COUNT + 1 + 3 * 2 * f + 2 * (2 + 2 * f + f + f + 1)
    }

    /// Parses a `key = value` file; `#` starts a comment. Every key must be
    /// a known field.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = EnvConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: idx + 1,
                msg: format!("expected key = value, got {raw:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            macro_rules! apply {
                ($(($field:ident, $ty:ty)),*) => {
                    match key {
                        $(stringify!($field) => {
                            cfg.$field = value.parse::<$ty>().map_err(|e| ConfigError::Parse {
                                line: idx + 1,
                                msg: format!("bad value for {key}: {e}"),
                            })?;
                        })*
                        _ => {
                            return Err(ConfigError::Parse {
                                line: idx + 1,
                                msg: format!("unknown key {key:?}"),
                            })
                        }
                    }
                };
            }
            config_fields!(apply);
        }
        cfg.validate().map_err(|msg| ConfigError::Parse { line: 0, msg })?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Emits the config in the same `key = value` format `from_str` reads.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($(($field:ident, $ty:ty)),*) => {
                $(out.push_str(&format!("{} = {}\n", stringify!($field), self.$field));)*
            };
        }
        config_fields!(emit);
        out
    }

    fn validate(&self) -> Result<(), String> {
        if self.lookahead == 0 {
            return Err("lookahead must be at least 1".into());
        }
        if self.control_dt <= 0.0 || self.control_dt.is_nan() {
            return Err("control_dt must be positive".into());
        }
        if self.fingers_per_hand == 0 {
            return Err("fingers_per_hand must be at least 1".into());
        }
        if self.spread_min > self.spread_max || self.spread_min <= 0.0 {
            return Err("spread range must be positive and ordered".into());
        }
        if !(0.0..=1.0).contains(&self.key_attack) || !(0.0..=1.0).contains(&self.key_decay) {
            return Err("key dynamics factors must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// One hand's state. Fingertip i sits at
/// `forearm + (spread * offsets[i].x, offsets[i].y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HandState {
    pub forearm: (Real, Real),
    pub offsets: Vec<(Real, Real)>,
    pub press: Vec<Real>,
    pub press_vel: Vec<Real>,
    pub spread: Real,
}

/// Full environment state. `t` counts completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub hands: [HandState; 2],
    pub key_states: Vec<Real>,
    pub sustain: Real,
    pub t: usize,
}

impl EnvState {
    /// All fingertip positions, left hand first.
    pub fn fingertips(&self) -> Vec<(Real, Real)> {
        self.hands
            .iter()
            .flat_map(|h| {
                h.offsets
                    .iter()
                    .map(|&(ox, oy)| (h.forearm.0 + h.spread * ox, h.forearm.1 + oy))
            })
            .collect()
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub pressed: Vec<usize>,
    pub false_positives: usize,
    /// Transport distance of the solved assignment; None on silent rows.
    pub d_ot: Option<Real>,
    /// True when the goal row had more active keys than fingers.
    pub over_capacity: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
}

/// A validated action vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Action(pub Vec<Real>);

impl Action {
    pub fn zero(dim: usize) -> Self {
        Action(vec![0.0; dim])
    }

    pub fn from_slice(values: &[Real], expected: usize) -> Result<Self, SimError> {
        if values.len() != expected {
            return Err(SimError::WrongActionLength {
                expected,
                got: values.len(),
            });
        }
        Ok(Action(values.to_vec()))
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.0
    }
}

/// Fractions of the board width where the forearms rest.
const HOME_X_FRACTIONS: [Real; 2] = [0.35, 0.65];

/// Home offset of finger `i` relative to the forearm, without an env.
pub fn home_offset(config: &EnvConfig, geometry: &KeyboardGeometry, i: usize) -> (Real, Real) {
    let f = config.fingers_per_hand as Real;
    let centered = i as Real - (f - 1.0) / 2.0;
    (centered * geometry.white_key_width, 0.0)
}

/// Rest position of a hand's forearm, without an env.
pub fn home_forearm(geometry: &KeyboardGeometry, hand: usize) -> (Real, Real) {
    (
        HOME_X_FRACTIONS[hand] * geometry.width(),
        geometry.white_zone_depth / 2.0,
    )
}

pub struct PianoEnv {
    pub config: EnvConfig,
    pub geometry: KeyboardGeometry,
    pub goal: GoalMatrix,
    pub state: EnvState,
}

impl PianoEnv {
    pub fn new(config: EnvConfig, goal: GoalMatrix) -> Self {
        let geometry = KeyboardGeometry::standard();
        let state = home_state(&config, &geometry);
        PianoEnv {
            config,
            geometry,
            goal,
            state,
        }
    }

    /// Episode length: the configured override, or the goal length.
    pub fn horizon(&self) -> usize {
        if self.config.episode_len == 0 {
            self.goal.steps
        } else {
            self.config.episode_len
        }
    }

    /// Home offset of finger `i` relative to the forearm: fingers fan out
    /// one white key apart, centered on the forearm.
    pub fn home_offset(&self, i: usize) -> (Real, Real) {
        home_offset(&self.config, &self.geometry, i)
    }

    /// Rest position of a hand's forearm.
    pub fn home_forearm(&self, hand: usize) -> (Real, Real) {
        home_forearm(&self.geometry, hand)
    }

    /// Replaces the goal without touching hand state; callers reset after.
    pub fn set_goal(&mut self, goal: GoalMatrix) {
        self.goal = goal;
    }

    /// Moves hands to the home pose plus seeded forearm jitter, clears all
    /// keys and the pedal, and returns the initial observation.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = home_state(&self.config, &self.geometry);
        let j = self.config.reset_jitter;
        for hand in self.state.hands.iter_mut() {
            let dx = (rng.gen::<Real>() * 2.0 - 1.0) * j;
            let dy = (rng.gen::<Real>() * 2.0 - 1.0) * j;
            hand.forearm.0 += dx;
            hand.forearm.1 += dy;
        }
        self.observe()
    }

    /// Row `t` of the goal, or a silent row past its end (episodes may be
    /// configured longer than the goal).
    fn goal_row(&self, t: usize) -> Vec<u8> {
        if t < self.goal.steps {
            self.goal.row(t).to_vec()
        } else {
            vec![0; GOAL_WIDTH]
        }
    }

    /// Advances one control step. The returned reward scores the post-step
    /// state against the goal row the agent was shown when it chose the
    /// action.
    pub fn step(&mut self, action: &[Real]) -> Result<StepResult, SimError> {
        let cfg = self.config.clone();
        let dim = cfg.action_dim();
        if action.len() != dim {
            return Err(SimError::WrongActionLength {
                expected: dim,
                got: action.len(),
            });
        }
        let horizon = self.horizon();
        if self.state.t >= horizon {
            return Err(SimError::EpisodeOver {
                t: self.state.t,
                horizon,
            });
        }
        let dt = cfg.control_dt;
        let f = cfg.fingers_per_hand;
        let per_hand = 3 * f + 4;
        let a: Vec<Real> = action.iter().map(|&x| x.clamp(-1.0, 1.0)).collect();

        let prev_channels = self.channel_states();

        let board_width = self.geometry.width();
        let y_lo = -0.06;
        let y_hi = self.geometry.total_depth + 0.03;
        for h in 0..2 {
            let b = h * per_hand;
            let home: Vec<(Real, Real)> = (0..f).map(|i| self.home_offset(i)).collect();
            let hand = &mut self.state.hands[h];
            hand.forearm.0 = (hand.forearm.0 + a[b] * cfg.forearm_speed * dt).clamp(0.0, board_width);
            hand.forearm.1 = (hand.forearm.1 + a[b + 1] * cfg.forearm_speed * dt).clamp(y_lo, y_hi);
            hand.spread = (hand.spread + a[b + 2 + 3 * f] * cfg.spread_rate * dt)
                .clamp(cfg.spread_min, cfg.spread_max);
            let aux = a[b + 3 + 3 * f];
            for i in 0..f {
                let vx = a[b + 2 + 3 * i] + if i == f - 1 { aux } else { 0.0 };
                let vy = a[b + 3 + 3 * i];
                let (hx, hy) = home[i];
                hand.offsets[i].0 = (hand.offsets[i].0 + vx * cfg.fingertip_speed * dt)
                    .clamp(hx - cfg.reach_half, hx + cfg.reach_half);
                hand.offsets[i].1 = (hand.offsets[i].1 + vy * cfg.fingertip_speed * dt)
                    .clamp(hy - cfg.reach_half, hy + cfg.reach_half);
                let target = a[b + 4 + 3 * i].max(0.0);
                let delta = (target - hand.press[i]).clamp(-cfg.press_rate * dt, cfg.press_rate * dt);
                hand.press[i] += delta;
                hand.press_vel[i] = delta / dt;
            }
        }
        let sustain_target = a[dim - 1].max(0.0);
        let sustain_delta =
            (sustain_target - self.state.sustain).clamp(-cfg.press_rate * dt, cfg.press_rate * dt);
        self.state.sustain += sustain_delta;

        // Key dynamics: contact needs a sufficiently pressed fingertip
        // inside the key's footprint.
        let tips = self.state.fingertips();
        let depths: Vec<Real> = self.state.hands.iter().flat_map(|h| h.press.clone()).collect();
        let mut contact = [false; KEY_COUNT];
        for (&(x, y), &depth) in tips.iter().zip(&depths) {
            if depth >= cfg.contact_press_min {
                if let Some(k) = self.geometry.key_at(x, y) {
                    contact[k] = true;
                }
            }
        }
        for (s, &touched) in self.state.key_states.iter_mut().zip(&contact) {
            if touched {
                *s += cfg.key_attack * (1.0 - *s);
            } else {
                *s *= cfg.key_decay;
            }
        }

        // Reward against the row the agent acted on.
        let t_now = self.state.t;
        let row = self.goal_row(t_now);
        let active: Vec<usize> = (0..KEY_COUNT).filter(|&k| row[k] != 0).collect();
        let (assignment, ot, over_capacity) =
            assignment::assign_and_reward(&self.state, &row, &self.geometry);
        let pressed_mask = self.key_pressed();
        let pressed: Vec<usize> = (0..KEY_COUNT).filter(|&k| pressed_mask[k]).collect();
        let false_positives = pressed.iter().filter(|&&k| row[k] == 0).count();
        let press = reward::press_reward(&self.state.key_states, &active, false_positives > 0);
        let sustain = reward::sustain_reward(self.state.sustain, Real::from(row[KEY_COUNT]));
        let collision = reward::collision_penalty(&self.state, cfg.collision_radius);
        let next_channels = self.channel_states();
        let velocities: Vec<Real> = prev_channels
            .iter()
            .zip(&next_channels)
            .map(|(p, n)| (n - p) / dt)
            .collect();
        let energy = reward::energy_penalty(&a, &velocities);
        let breakdown = RewardBreakdown::compose(ot, press, sustain, collision, energy);

        self.state.t += 1;
        let done = self.state.t >= horizon;
        Ok(StepResult {
            observation: self.observe(),
            reward: breakdown,
            done,
            info: StepInfo {
                pressed,
                false_positives,
                d_ot: assignment.map(|asg| asg.total_cost),
                over_capacity,
            },
        })
    }

    /// The state variable each action channel drives, in channel order.
    /// The auxiliary lateral channel shares finger F-1's x offset, so both
    /// channels report that joint's motion.
    fn channel_states(&self) -> Vec<Real> {
        let f = self.config.fingers_per_hand;
        let mut out = Vec::with_capacity(self.config.action_dim());
        for hand in &self.state.hands {
            out.push(hand.forearm.0);
            out.push(hand.forearm.1);
            for i in 0..f {
                out.push(hand.offsets[i].0);
                out.push(hand.offsets[i].1);
                out.push(hand.press[i]);
            }
            out.push(hand.spread);
            out.push(hand.offsets[f - 1].0);
        }
        out.push(self.state.sustain);
        out
    }

    /// Flattens the state into the documented observation layout.
    pub fn observe(&self) -> Observation {
        let cfg = &self.config;
        let mut o = Vec::with_capacity(cfg.obs_dim());
        if self.state.t < self.goal.steps {
            o.extend(self.goal.goal_window(self.state.t, cfg.lookahead));
        } else {
            o.extend(std::iter::repeat_n(0.0, GOAL_WIDTH * cfg.lookahead));
        }
        o.extend(&self.state.key_states);
        o.push(self.state.sustain);
        let tips = self.state.fingertips();
        let depths: Vec<Real> = self.state.hands.iter().flat_map(|h| h.press.clone()).collect();
        for (&(x, y), &d) in tips.iter().zip(&depths) {
            o.extend([x, y, d]);
        }
        for hand in &self.state.hands {
            o.extend([hand.forearm.0, hand.forearm.1]);
            for &(ox, oy) in &hand.offsets {
                o.extend([ox, oy]);
            }
            o.extend(&hand.press);
            o.extend(&hand.press_vel);
            o.push(hand.spread);
        }
        debug_assert_eq!(o.len(), cfg.obs_dim());
        o
    }

    /// Key i is pressed when its state reaches the activation threshold.
    pub fn key_pressed(&self) -> Vec<bool> {
        self.state
            .key_states
            .iter()
            .map(|&k| k >= self.config.activation_threshold)
            .collect()
    }
}

/// Hands at rest over the board, keys and pedal silent.
fn home_state(cfg: &EnvConfig, geometry: &KeyboardGeometry) -> EnvState {
    let f = cfg.fingers_per_hand;
    let contact_y = geometry.white_zone_depth / 2.0;
    let hands = std::array::from_fn(|h| HandState {
        forearm: (HOME_X_FRACTIONS[h] * geometry.width(), contact_y),
        offsets: (0..f)
            .map(|i| {
                let centered = i as Real - (f as Real - 1.0) / 2.0;
                (centered * geometry.white_key_width, 0.0)
            })
            .collect(),
        press: vec![0.0; f],
        press_vel: vec![0.0; f],
        spread: 1.0,
    });
    EnvState {
        hands,
        key_states: vec![0.0; KEY_COUNT],
        sustain: 0.0,
        t: 0,
    }
}
