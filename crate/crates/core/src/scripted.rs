//! Hand-written controller for the piano environment.
//!
//! The controller reads the goal a few rows ahead, assigns one finger per
//! upcoming key with the exact transport solver, steers each assigned
//! finger toward its key's contact point, and presses once the fingertip is
//! inside the right footprint.
//!
//! Press timing compensates the plant's latencies: a press command reaches
//! the contact threshold within one step, and a released key needs two
//! steps to fall below the activation threshold (one to break contact, one
//! of decay). Pressing exactly while the key is active in the current and
//! next two rows starts notes on time and releases them so the key drops
//! below threshold on the first silent row. Notes shorter than three steps
//! are skipped by this rule; the controller is a baseline, not an optimum.

use crate::assignment::solve_lsap;
use crate::geometry::KeyboardGeometry;
use crate::sim::{home_forearm, home_offset, EnvConfig, PianoEnv};
use crate::{Real, GOAL_WIDTH, KEY_COUNT};

/// Goal rows (current included) scanned for upcoming targets. Reading
/// this far ahead buys the forearm travel time on large jumps while
/// staying inside the goal window the environment itself exposes.
const PREVIEW: usize = 8;

/// Forearm corrections below this are suppressed (meters).
const FOREARM_DEADBAND: Real = 0.001;

/// One control action for the current state of `env`.
pub fn scripted_action(env: &PianoEnv) -> Vec<Real> {
    scripted_action_from_obs(&env.observe(), &env.config, &env.geometry)
}

/// The controller as a pure function of one observation vector, so the
/// same action can be recomputed later from stored data. Reads only the
/// goal window, fingertip positions, forearms, and spreads; the preview
/// is capped at the window the observation exposes. On-time releases need
/// a lookahead of at least 3 rows; below that, presses still happen but
/// each release trails the goal by the missing rows.
pub fn scripted_action_from_obs(
    obs: &[Real],
    cfg: &EnvConfig,
    geometry: &KeyboardGeometry,
) -> Vec<Real> {
    assert_eq!(obs.len(), cfg.obs_dim(), "observation width mismatch");
    let f = cfg.fingers_per_hand;
    let per_hand = 3 * f + 4;
    let dim = cfg.action_dim();
    let dt = cfg.control_dt;
    let lookahead = cfg.lookahead;
    let mut action = vec![0.0; dim];

    // Observation layout offsets (see the env's observe).
    let tips_base = GOAL_WIDTH * lookahead + KEY_COUNT + 1;
    let hands_base = tips_base + 3 * 2 * f;
    let hand_stride = 4 * f + 3;

    let active_at =
        |row: usize, key: usize| row < lookahead && obs[GOAL_WIDTH * row + key] > 0.5;
    let tip = |finger: usize| (obs[tips_base + 3 * finger], obs[tips_base + 3 * finger + 1]);
    let forearm_of =
        |hand: usize| (obs[hands_base + hand * hand_stride], obs[hands_base + hand * hand_stride + 1]);
    let spread_of = |hand: usize| obs[hands_base + hand * hand_stride + hand_stride - 1];

    // Current keys first, then previewed ones, deduplicated; at most one
    // target per finger.
    let mut targets: Vec<usize> = Vec::new();
    for row in 0..PREVIEW.min(lookahead) {
        for key in 0..KEY_COUNT {
            if active_at(row, key) && !targets.contains(&key) {
                targets.push(key);
            }
        }
    }
    targets.truncate(2 * f);

    let tips: Vec<(Real, Real)> = (0..2 * f).map(tip).collect();
    let mut assigned: Vec<(usize, usize)> = Vec::new();
    if !targets.is_empty() {
        let mut cost = Vec::with_capacity(targets.len() * tips.len());
        for &key in &targets {
            let (kx, ky) = geometry.contact_point(key);
            for &(fx, fy) in &tips {
                cost.push(((fx - kx).powi(2) + (fy - ky).powi(2)).sqrt());
            }
        }
        let cols = solve_lsap(&cost, targets.len(), tips.len())
            .expect("distances are finite");
        assigned = targets.iter().copied().zip(cols).collect();
    }

    // Forearms track the centroid that would center each assigned finger's
    // target at its home offset; idle hands return home. Each hand's motion
    // over the coming step is recorded so fingertip corrections can aim at
    // where the target will sit relative to the moved arm, not the old one.
    let mut arm_step = [(0.0, 0.0); 2];
    for (hand, astep) in arm_step.iter_mut().enumerate() {
        let b = hand * per_hand;
        let spread = spread_of(hand);
        let mine: Vec<&(usize, usize)> =
            assigned.iter().filter(|&&(_, fg)| fg / f == hand).collect();
        let desired = if mine.is_empty() {
            home_forearm(geometry, hand)
        } else {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for &&(key, finger) in &mine {
                let (kx, ky) = geometry.contact_point(key);
                let home = home_offset(cfg, geometry, finger % f);
                sx += kx - spread * home.0;
                sy += ky - home.1;
            }
            (sx / mine.len() as Real, sy / mine.len() as Real)
        };
        let (cx, cy) = forearm_of(hand);
        let dx = desired.0 - cx;
        let dy = desired.1 - cy;
        let reach = cfg.forearm_speed * dt;
        if dx.abs() > FOREARM_DEADBAND {
            action[b] = (dx / reach).clamp(-1.0, 1.0);
            astep.0 = action[b] * reach;
        }
        if dy.abs() > FOREARM_DEADBAND {
            action[b + 1] = (dy / reach).clamp(-1.0, 1.0);
            astep.1 = action[b + 1] * reach;
        }
    }

    for &(key, finger) in &assigned {
        let hand = finger / f;
        let i = finger % f;
        let b = hand * per_hand;
        let spread = spread_of(hand);
        let (kx, ky) = geometry.contact_point(key);
        let (fx, fy) = tips[finger];
        // Offsets move the fingertip by spread * delta laterally; the
        // forearm's own step is subtracted so both motions together land
        // the tip on the contact point instead of overshooting past it.
        let need_x = (kx - fx - arm_step[hand].0) / spread;
        let need_y = ky - fy - arm_step[hand].1;
        action[b + 2 + 3 * i] = (need_x / (cfg.fingertip_speed * dt)).clamp(-1.0, 1.0);
        action[b + 3 + 3 * i] = (need_y / (cfg.fingertip_speed * dt)).clamp(-1.0, 1.0);
        let hold = (0..3.min(lookahead)).all(|row| active_at(row, key));
        let in_place = geometry.key_at(fx, fy) == Some(key);
        action[b + 4 + 3 * i] = if hold && in_place { 1.0 } else { 0.0 };
    }

    if obs[KEY_COUNT] > 0.5 {
        action[dim - 1] = 1.0;
    }
    action
}
