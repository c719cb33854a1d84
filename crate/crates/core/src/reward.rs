//! Composite step reward and episode scoring.
//!
//! The per-step reward is
//! `r = r_ot + r_press + r_sustain + ALPHA_COLLISION * r_collision +
//! ALPHA_ENERGY * r_energy`, where the press and sustain terms reuse one
//! shaping primitive: [`tolerance`], a Gaussian falloff that is 1 inside a
//! bound interval and [`VALUE_AT_MARGIN`] at one [`TOLERANCE_MARGIN`]
//! outside it.
//!
//! Episode quality is a micro-averaged key-level F1: true/false positives
//! and false negatives are accumulated over every (step, key) pair before
//! precision and recall are formed.

use thiserror::Error;

use crate::goal::GoalMatrix;
use crate::scalar::Scalar;
use crate::sim::EnvState;
use crate::{Real, KEY_COUNT};

/// Weight of the collision term in the composite reward.
pub const ALPHA_COLLISION: Real = 0.5;

/// Weight of the energy term in the composite reward.
pub const ALPHA_ENERGY: Real = 5e-3;

/// Fingertip pairs closer than this are in collision (meters).
pub const COLLISION_RADIUS: Real = 0.008;

/// Normalized distance at which [`tolerance`] reads [`VALUE_AT_MARGIN`].
pub const TOLERANCE_MARGIN: Real = 0.1;

/// Tolerance value one margin outside the bounds.
pub const VALUE_AT_MARGIN: Real = 0.1;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("trajectory has {got} steps but the goal has {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Gaussian-sigmoid shaping: 1 inside `[lo, hi]`, then
/// `exp(ln(value_at_margin) * (d / margin)^2)` where `d` is the distance to
/// the nearest bound. A zero margin degenerates to the indicator of the
/// interval.
pub fn tolerance<S: Scalar>(x: S, (lo, hi): (S, S), margin: S, value_at_margin: S) -> S {
    debug_assert!(lo <= hi);
    debug_assert!(margin >= S::zero());
    debug_assert!(value_at_margin > S::zero() && value_at_margin < S::one());
    if x >= lo && x <= hi {
        return S::one();
    }
    if margin == S::zero() {
        return S::zero();
    }
    let d = if x < lo { lo - x } else { x - hi } / margin;
    (value_at_margin.ln() * d * d).exp()
}

/// Shaping applied to key and sustain errors: a point target at 0 with the
/// default margin.
fn g(x: Real) -> Real {
    tolerance(x, (0.0, 0.0), TOLERANCE_MARGIN, VALUE_AT_MARGIN)
}

/// Press term: half for driving every active key to the bottom of its
/// travel, half for touching no inactive key. With no active keys the
/// average is vacuous and the first half is granted in full.
pub fn press_reward(key_states: &[Real], active: &[usize], any_false_positive: bool) -> Real {
    let depth_term = if active.is_empty() {
        1.0
    } else {
        active
            .iter()
            .map(|&k| g((key_states[k] - 1.0).abs()))
            .sum::<Real>()
            / active.len() as Real
    };
    0.5 * depth_term + 0.5 * if any_false_positive { 0.0 } else { 1.0 }
}

/// Sustain term: shaped distance between the pedal state and its target.
pub fn sustain_reward(s: Real, target: Real) -> Real {
    g(s - target)
}

/// 1 when all fingertip pairs are at least `radius` apart, else 0. The
/// comparison is strict: pairs at exactly the radius do not collide.
pub fn collision_penalty(state: &EnvState, radius: Real) -> Real {
    let tips = state.fingertips();
    for i in 0..tips.len() {
        for j in (i + 1)..tips.len() {
            let dx = tips[i].0 - tips[j].0;
            let dy = tips[i].1 - tips[j].1;
            if (dx * dx + dy * dy).sqrt() < radius {
                return 0.0;
            }
        }
    }
    1.0
}

/// Energy term: minus the inner product of per-channel command effort and
/// the magnitude of the velocity each channel's joint actually achieved.
pub fn energy_penalty(efforts: &[Real], velocities: &[Real]) -> Real {
    assert_eq!(efforts.len(), velocities.len());
    -efforts
        .iter()
        .zip(velocities)
        .map(|(e, v)| e.abs() * v.abs())
        .sum::<Real>()
}

/// One step's reward terms plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub ot: Real,
    pub press: Real,
    pub sustain: Real,
    pub collision: Real,
    pub energy: Real,
    pub total: Real,
    /// (collision weight, energy weight).
    pub weights: (Real, Real),
}

impl RewardBreakdown {
    pub fn compose(ot: Real, press: Real, sustain: Real, collision: Real, energy: Real) -> Self {
        let weights = (ALPHA_COLLISION, ALPHA_ENERGY);
        RewardBreakdown {
            ot,
            press,
            sustain,
            collision,
            energy,
            total: ot + press + sustain + weights.0 * collision + weights.1 * energy,
            weights,
        }
    }

    /// Re-derives the total from the stored parts; used to audit that the
    /// stored total never drifts from its definition.
    pub fn recompute_total(&self) -> Real {
        self.ot
            + self.press
            + self.sustain
            + self.weights.0 * self.collision
            + self.weights.1 * self.energy
    }
}

/// Micro-averaged precision/recall/F1 over all (step, key) pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeScore {
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl EpisodeScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as Real / den as Real
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EpisodeScore {
            precision,
            recall,
            f1,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        }
    }
}

/// Scores a pressed-key pattern against the goal's key columns. The sustain
/// column does not participate; the metric is about keys.
pub fn score_episode(pressed: &[Vec<bool>], goal: &GoalMatrix) -> Result<EpisodeScore, ScoreError> {
    if pressed.len() != goal.steps {
        return Err(ScoreError::LengthMismatch {
            expected: goal.steps,
            got: pressed.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (t, row) in pressed.iter().enumerate() {
        assert_eq!(row.len(), KEY_COUNT, "pressed pattern must cover all keys");
        for (k, &down) in row.iter().enumerate() {
            match (down, goal.get(t, k)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(EpisodeScore::from_counts(tp, fp, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_is_one_inside_bounds() {
        assert_eq!(tolerance(0.5, (0.0, 1.0), 0.1, 0.1), 1.0);
        assert_eq!(tolerance(0.0, (0.0, 1.0), 0.1, 0.1), 1.0);
        assert_eq!(tolerance(1.0, (0.0, 1.0), 0.1, 0.1), 1.0);
    }

    #[test]
    fn tolerance_hits_value_at_margin() {
        // One margin past the upper bound the curve reads the configured
        // value; evaluated from the exponential form directly.
        let v: Real = tolerance(1.1, (0.0, 1.0), 0.1, 0.1);
        assert!((v - 0.1).abs() < 1e-12);
        let v: Real = tolerance(-0.25, (0.0, 1.0), 0.25, 0.37);
        assert!((v - 0.37).abs() < 1e-12);
    }

    #[test]
    fn zero_margin_is_an_indicator() {
        assert_eq!(tolerance(1.0001, (0.0, 1.0), 0.0, 0.1), 0.0);
        assert_eq!(tolerance(-0.0001, (0.0, 1.0), 0.0, 0.1), 0.0);
        assert_eq!(tolerance(0.3, (0.0, 1.0), 0.0, 0.1), 1.0);
    }

    #[test]
    fn tolerance_is_continuous() {
        // Finite-difference continuity scan across both bounds.
        let h = 1e-7;
        for i in 0..4000 {
            let x = -1.0 + i as Real * 5e-4;
            let a = tolerance(x, (0.0, 1.0), 0.1, 0.1);
            let b = tolerance(x + h, (0.0, 1.0), 0.1, 0.1);
            assert!((a - b).abs() < 1e-4, "jump at {x}");
        }
    }

    #[test]
    fn tolerance_works_in_single_precision() {
        let v = tolerance(1.1f32, (0.0, 1.0), 0.1, 0.1);
        assert!((v - 0.1).abs() < 1e-5);
    }

    #[test]
    fn press_reward_maximal_when_perfect() {
        let mut keys = vec![0.0; KEY_COUNT];
        keys[10] = 1.0;
        keys[20] = 1.0;
        assert_eq!(press_reward(&keys, &[10, 20], false), 1.0);
    }

    #[test]
    fn false_positive_zeroes_the_second_half() {
        let mut keys = vec![0.0; KEY_COUNT];
        keys[10] = 1.0;
        assert_eq!(press_reward(&keys, &[10], true), 0.5);
    }

    #[test]
    fn half_pressed_key_matches_direct_evaluation() {
        let mut keys = vec![0.0; KEY_COUNT];
        keys[3] = 0.5;
        let got = press_reward(&keys, &[3], false);
        // Oracle: 0.5 * exp(ln(0.1) * (0.5/0.1)^2) + 0.5, written out.
        let expected = 0.5 * (0.1_f64.ln() * 25.0).exp() + 0.5;
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn silent_step_variant() {
        let keys = vec![0.0; KEY_COUNT];
        assert_eq!(press_reward(&keys, &[], false), 1.0);
        assert_eq!(press_reward(&keys, &[], true), 0.5);
    }

    #[test]
    fn press_reward_monotone_in_key_state() {
        let mut prev = -1.0;
        for i in 0..=100 {
            let mut keys = vec![0.0; KEY_COUNT];
            keys[0] = i as Real / 100.0;
            let r = press_reward(&keys, &[0], false);
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn sustain_reward_cases() {
        assert_eq!(sustain_reward(1.0, 1.0), 1.0);
        assert_eq!(sustain_reward(0.0, 0.0), 1.0);
        let far = sustain_reward(0.0, 1.0);
        // g(1) with margin 0.1 is 0.1^100: astronomically small but positive.
        assert!(far > 0.0 && far < 1e-50);
    }

    #[test]
    fn energy_penalty_cases() {
        assert_eq!(energy_penalty(&[0.0; 4], &[0.0; 4]), 0.0);
        assert_eq!(energy_penalty(&[1.0, 0.0], &[0.4, 9.9]), -0.4);
        // Independent dot-product loop over random vectors.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let e: Vec<Real> = (0..39).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<Real> = (0..39).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut expected = 0.0;
        for i in 0..39 {
            expected -= e[i].abs() * v[i].abs();
        }
        assert!((energy_penalty(&e, &v) - expected).abs() < 1e-15);
        assert!(energy_penalty(&e, &v) <= 0.0);
    }

    #[test]
    fn breakdown_total_matches_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let b = RewardBreakdown::compose(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
                -rng.gen_range(0.0..5.0),
            );
            assert!((b.total - b.recompute_total()).abs() < 1e-12);
            assert_eq!(b.weights, (0.5, 5e-3));
        }
    }

    fn goal_from_rows(rows: &[&[usize]]) -> GoalMatrix {
        let mut g = GoalMatrix::new("score", rows.len(), 11, 0.05);
        for (t, keys) in rows.iter().enumerate() {
            for &k in *keys {
                g.set(t, k, true);
            }
        }
        g
    }

    fn pattern(rows: &[&[usize]]) -> Vec<Vec<bool>> {
        rows.iter()
            .map(|keys| {
                let mut row = vec![false; KEY_COUNT];
                for &k in *keys {
                    row[k] = true;
                }
                row
            })
            .collect()
    }

    #[test]
    fn perfect_play_scores_one() {
        let goal = goal_from_rows(&[&[1, 2], &[3], &[]]);
        let s = score_episode(&pattern(&[&[1, 2], &[3], &[]]), &goal).unwrap();
        assert_eq!(s.f1, 1.0);
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 1.0);
    }

    #[test]
    fn pressing_nothing_scores_zero() {
        let goal = goal_from_rows(&[&[1], &[2]]);
        let s = score_episode(&pattern(&[&[], &[]]), &goal).unwrap();
        assert_eq!(s.recall, 0.0);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn mixed_counts_follow_the_formula() {
        // TP=2, FP=2, FN=0: precision 1/2, recall 1, f1 2/3.
        let goal = goal_from_rows(&[&[1], &[2]]);
        let s = score_episode(&pattern(&[&[1, 3], &[2, 4]]), &goal).unwrap();
        assert_eq!(s.true_positives, 2);
        assert_eq!(s.false_positives, 2);
        assert_eq!(s.false_negatives, 0);
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn swapping_prediction_and_goal_swaps_precision_and_recall() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let steps = rng.gen_range(1..10);
            let a: Vec<Vec<usize>> = (0..steps)
                .map(|_| (0..KEY_COUNT).filter(|_| rng.gen_bool(0.05)).collect())
                .collect();
            let b: Vec<Vec<usize>> = (0..steps)
                .map(|_| (0..KEY_COUNT).filter(|_| rng.gen_bool(0.05)).collect())
                .collect();
            let a_rows: Vec<&[usize]> = a.iter().map(|r| r.as_slice()).collect();
            let b_rows: Vec<&[usize]> = b.iter().map(|r| r.as_slice()).collect();
            let fwd = score_episode(&pattern(&a_rows), &goal_from_rows(&b_rows)).unwrap();
            let rev = score_episode(&pattern(&b_rows), &goal_from_rows(&a_rows)).unwrap();
            assert!((fwd.precision - rev.recall).abs() < 1e-15);
            assert!((fwd.recall - rev.precision).abs() < 1e-15);
            assert!((fwd.f1 - rev.f1).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let goal = goal_from_rows(&[&[1], &[2]]);
        assert!(matches!(
            score_episode(&pattern(&[&[1]]), &goal),
            Err(ScoreError::LengthMismatch { expected: 2, got: 1 })
        ));
    }
}
