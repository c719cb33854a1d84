//! Finger-to-key assignment and its shaped reward.
//!
//! Each control step poses a small transport problem: every active key must
//! be pressed by exactly one fingertip, no fingertip may take two keys, and
//! the total fingertip-to-key distance is minimized. [`solve`] computes the
//! exact optimum with a shortest-augmenting-path method (the rectangular
//! Jonker-Volgenant variant), which at the 10 x 10 sizes seen here runs in
//! a few microseconds.
//!
//! The minimal distance converts to a reward through [`ot_reward`]: 1 within
//! the activation distance `delta`, then a Gaussian tail that passes through
//! [`VALUE_AT_MARGIN`] at `delta +` [`TOLERANCE_MARGIN`].

use thiserror::Error;

use crate::geometry::KeyboardGeometry;
use crate::reward::{TOLERANCE_MARGIN, VALUE_AT_MARGIN};
use crate::scalar::Scalar;
use crate::sim::EnvState;
use crate::{Real, KEY_COUNT};

/// Distance below which a finger counts as on the key (meters).
pub const DELTA_KEY: Real = 0.01;

/// Tail curvature calibrated so `ot_reward(delta + margin) = value_at_margin`:
/// `c = ln(value_at_margin) / margin^2`, about -230.2585.
pub fn default_ot_c() -> Real {
    VALUE_AT_MARGIN.ln() / (TOLERANCE_MARGIN * TOLERANCE_MARGIN)
}

#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error("{keys} active keys exceed {fingers} fingers")]
    TooManyKeys { keys: usize, fingers: usize },
    /// Unreachable for finite costs with keys <= fingers; kept so callers
    /// never see a silent wrong answer if an invariant is violated.
    #[error("no feasible assignment")]
    Infeasible,
}

/// Costs of assigning each active key (row) to each finger (column).
#[derive(Debug, Clone)]
pub struct AssignmentProblem {
    /// Row-major |keys| x |fingers| distances, all finite and nonnegative.
    pub cost: Vec<Real>,
    pub key_ids: Vec<usize>,
    pub finger_ids: Vec<usize>,
}

impl AssignmentProblem {
    pub fn keys(&self) -> usize {
        self.key_ids.len()
    }

    pub fn fingers(&self) -> usize {
        self.finger_ids.len()
    }

    pub fn at(&self, key_row: usize, finger_col: usize) -> Real {
        self.cost[key_row * self.fingers() + finger_col]
    }
}

/// An optimal injective key-to-finger matching.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// (key_id, finger_id) pairs in key order, covering every key once.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the selected cost entries (the transport distance).
    pub total_cost: Real,
}

/// Builds the distance matrix from the current fingertips to the contact
/// points of the active keys.
pub fn build_problem(
    state: &EnvState,
    active_keys: &[usize],
    geometry: &KeyboardGeometry,
) -> Result<AssignmentProblem, AssignmentError> {
    let tips = state.fingertips();
    if active_keys.is_empty() || active_keys.len() > tips.len() {
        return Err(AssignmentError::TooManyKeys {
            keys: active_keys.len(),
            fingers: tips.len(),
        });
    }
    let mut cost = Vec::with_capacity(active_keys.len() * tips.len());
    for &key in active_keys {
        let (kx, ky) = geometry.contact_point(key);
        for &(fx, fy) in &tips {
            cost.push(((fx - kx).powi(2) + (fy - ky).powi(2)).sqrt());
        }
    }
    Ok(AssignmentProblem {
        cost,
        key_ids: active_keys.to_vec(),
        finger_ids: (0..tips.len()).collect(),
    })
}

/// Exact minimum-cost solution via shortest augmenting paths with dual
/// potentials. Columns are scanned in ascending finger order and improved
/// only on strict decrease, so among equal-cost optima the lowest finger
/// indices win deterministically.
pub fn solve(problem: &AssignmentProblem) -> Result<Assignment, AssignmentError> {
    let n = problem.keys();
    let m = problem.fingers();
    if n > m {
        return Err(AssignmentError::TooManyKeys { keys: n, fingers: m });
    }
    let matched = solve_lsap::<Real>(&problem.cost, n, m).ok_or(AssignmentError::Infeasible)?;
    let mut pairs = Vec::with_capacity(n);
    let mut total = 0.0;
    for (row, col) in matched.iter().enumerate() {
        pairs.push((problem.key_ids[row], problem.finger_ids[*col]));
        total += problem.at(row, *col);
    }
    Ok(Assignment {
        pairs,
        total_cost: total,
    })
}

/// Rectangular linear sum assignment on a row-major `n x m` cost matrix
/// with `n <= m`. Returns the matched column per row, or None if any cost
/// is not finite.
pub fn solve_lsap<S: Scalar>(cost: &[S], n: usize, m: usize) -> Option<Vec<usize>> {
    assert_eq!(cost.len(), n * m);
    assert!(n <= m);
    if cost.iter().any(|c| !c.is_finite()) {
        return None;
    }
    let inf = S::infinity();
    // 1-indexed duals and matching; p[j] is the row matched to column j.
    let mut u = vec![S::zero(); n + 1];
    let mut v = vec![S::zero(); m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // Walk the augmenting path backwards, flipping matches.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    debug_assert!(row_to_col.iter().all(|&c| c != usize::MAX));
    Some(row_to_col)
}

/// Shaped reward for a transport distance `d`.
pub fn ot_reward<S: Scalar>(d: S, delta: S, c: S) -> S {
    debug_assert!(d >= S::zero() && delta > S::zero() && c < S::zero());
    if d < delta {
        S::one()
    } else {
        let gap = d - delta;
        (c * gap * gap).exp()
    }
}

/// Per-step entry point: extracts active keys from a goal row, solves the
/// assignment, and shapes the distance into a reward.
///
/// Silent rows return `(None, 1.0, false)`. Rows with more active keys than
/// fingers keep the lowest key indices up to the finger count and report the
/// truncation in the returned flag.
pub fn assign_and_reward(
    state: &EnvState,
    goal_row: &[u8],
    geometry: &KeyboardGeometry,
) -> (Option<Assignment>, Real, bool) {
    let fingers = state.fingertips().len();
    let mut active: Vec<usize> = (0..KEY_COUNT).filter(|&k| goal_row[k] != 0).collect();
    let over_capacity = active.len() > fingers;
    active.truncate(fingers);
    if active.is_empty() {
        return (None, 1.0, over_capacity);
    }
    let problem = build_problem(state, &active, geometry)
        .expect("active keys were truncated to the finger count");
    let assignment = solve(&problem).expect("finite costs are always feasible");
    let reward = ot_reward(assignment.total_cost, DELTA_KEY, default_ot_c());
    (Some(assignment), reward, over_capacity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(cost: &[&[Real]]) -> AssignmentProblem {
        let rows = cost.len();
        let cols = cost[0].len();
        AssignmentProblem {
            cost: cost.iter().flat_map(|r| r.iter().copied()).collect(),
            key_ids: (0..rows).collect(),
            finger_ids: (0..cols).collect(),
        }
    }

    /// Brute force over all injective row-to-column maps.
    fn enumerate_best(cost: &[Real], n: usize, m: usize) -> Real {
        fn rec(cost: &[Real], n: usize, m: usize, row: usize, used: &mut Vec<bool>) -> Real {
            if row == n {
                return 0.0;
            }
            let mut best = Real::INFINITY;
            for col in 0..m {
                if !used[col] {
                    used[col] = true;
                    let c = cost[row * m + col] + rec(cost, n, m, row + 1, used);
                    if c < best {
                        best = c;
                    }
                    used[col] = false;
                }
            }
            best
        }
        rec(cost, n, m, 0, &mut vec![false; m])
    }

    #[test]
    fn single_key_takes_the_nearest_finger() {
        let p = problem(&[&[3.0, 0.5, 2.0, 0.9]]);
        let a = solve(&p).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.total_cost, 0.5);
    }

    #[test]
    fn beats_greedy_nearest_first() {
        // Greedy would send key 0 to finger 0 (cost 1) and key 1 to finger
        // 1 (cost 10); the optimum is the swap at total 3.
        let p = problem(&[&[1.0, 2.0], &[1.0, 10.0]]);
        let a = solve(&p).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.total_cost, 3.0);
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let n = rng.gen_range(1..=5);
            let m = 10;
            let cost: Vec<Real> = (0..n * m).map(|_| rng.gen_range(0.0..2.0)).collect();
            let p = AssignmentProblem {
                cost: cost.clone(),
                key_ids: (0..n).collect(),
                finger_ids: (0..m).collect(),
            };
            let a = solve(&p).unwrap();
            let best = enumerate_best(&cost, n, m);
            assert!(
                (a.total_cost - best).abs() < 1e-9,
                "solver {} vs enumeration {}",
                a.total_cost,
                best
            );
        }
    }

    #[test]
    fn assignment_is_feasible() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..=8);
            let m = rng.gen_range(n..=10);
            let cost: Vec<Real> = (0..n * m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p = AssignmentProblem {
                cost: cost.clone(),
                key_ids: (0..n).collect(),
                finger_ids: (0..m).collect(),
            };
            let a = solve(&p).unwrap();
            // Every key exactly once, fingers distinct, cost adds up.
            assert_eq!(a.pairs.len(), n);
            let keys: std::collections::BTreeSet<_> = a.pairs.iter().map(|&(k, _)| k).collect();
            assert_eq!(keys.len(), n);
            let fingers: std::collections::BTreeSet<_> =
                a.pairs.iter().map(|&(_, f)| f).collect();
            assert_eq!(fingers.len(), n);
            let sum: Real = a.pairs.iter().map(|&(k, f)| cost[k * m + f]).sum();
            assert!((sum - a.total_cost).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_break_toward_lower_finger_indices() {
        let p = problem(&[&[1.0, 1.0, 1.0]]);
        assert_eq!(solve(&p).unwrap().pairs, vec![(0, 0)]);
        // Two keys, all costs equal: identity matching wins.
        let p = problem(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        assert_eq!(solve(&p).unwrap().pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn permuting_fingers_permutes_the_assignment() {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let m = 10;
            let cost: Vec<Real> = (0..n * m)
                .map(|_| (rng.gen_range(0..10_000) as Real) / 100.0)
                .collect();
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut rng);
            // permuted[i][j] = cost[i][perm[j]]
            let permuted: Vec<Real> = (0..n)
                .flat_map(|i| perm.iter().map(move |&j| (i, j)))
                .map(|(i, j)| cost[i * m + j])
                .collect();
            let base = solve(&AssignmentProblem {
                cost: cost.clone(),
                key_ids: (0..n).collect(),
                finger_ids: (0..m).collect(),
            })
            .unwrap();
            let shuffled = solve(&AssignmentProblem {
                cost: permuted,
                key_ids: (0..n).collect(),
                finger_ids: (0..m).collect(),
            })
            .unwrap();
            assert!((base.total_cost - shuffled.total_cost).abs() < 1e-9);
            // Ties may resolve to different but equal-cost matchings, so
            // compare costs through the permutation instead of pair lists.
            let unpermuted_cost: Real = shuffled
                .pairs
                .iter()
                .map(|&(k, f)| cost[k * m + perm[f]])
                .sum();
            assert!((unpermuted_cost - base.total_cost).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_costs_scales_the_optimum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let n = 5;
        let m = 10;
        let cost: Vec<Real> = (0..n * m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let lambda = 3.75;
        let scaled: Vec<Real> = cost.iter().map(|&c| c * lambda).collect();
        let a = solve(&AssignmentProblem {
            cost,
            key_ids: (0..n).collect(),
            finger_ids: (0..m).collect(),
        })
        .unwrap();
        let b = solve(&AssignmentProblem {
            cost: scaled,
            key_ids: (0..n).collect(),
            finger_ids: (0..m).collect(),
        })
        .unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert!((b.total_cost - lambda * a.total_cost).abs() < 1e-9);
    }

    #[test]
    fn reward_branches_and_calibration() {
        let c = default_ot_c();
        assert!((c - (-230.25850929940458)).abs() < 1e-9);
        assert_eq!(ot_reward(0.0, DELTA_KEY, c), 1.0);
        // At the boundary the exponential branch starts at exp(0) = 1.
        assert_eq!(ot_reward(DELTA_KEY, DELTA_KEY, c), 1.0);
        // One margin past delta the tail reads exactly value-at-margin.
        let at_margin = ot_reward(DELTA_KEY + TOLERANCE_MARGIN, DELTA_KEY, c);
        assert!((at_margin - VALUE_AT_MARGIN).abs() < 1e-12);
        // Monotone non-increasing.
        let mut prev = 1.0;
        for i in 0..200 {
            let d = i as Real * 0.002;
            let r = ot_reward(d, DELTA_KEY, c);
            assert!(r <= prev + 1e-15);
            assert!(r > 0.0);
            prev = r;
        }
    }

    #[test]
    fn reward_is_continuous_at_delta() {
        let c = default_ot_c();
        for exp in 1..12 {
            let eps = (10.0 as Real).powi(-exp);
            let r = ot_reward(DELTA_KEY + eps, DELTA_KEY, c);
            assert!((r - 1.0).abs() < 1e-3_f64.max(300.0 * eps * eps));
        }
    }

    #[test]
    fn lsap_works_in_single_precision() {
        let cost: Vec<f32> = vec![1.0, 2.0, 1.0, 10.0];
        let cols = solve_lsap::<f32>(&cost, 2, 2).unwrap();
        assert_eq!(cols, vec![1, 0]);
    }

    #[test]
    fn non_finite_costs_are_rejected() {
        let cost: Vec<Real> = vec![1.0, Real::NAN];
        assert!(solve_lsap::<Real>(&cost, 1, 2).is_none());
    }

    use crate::sim::{EnvState, HandState};

    /// State whose ten fingertips sit at the given positions (spread 1, so
    /// offsets are absolute around a zero forearm).
    fn state_with_tips(tips: [(Real, Real); 10]) -> EnvState {
        let hand = |slice: &[(Real, Real)]| HandState {
            forearm: (0.0, 0.0),
            offsets: slice.to_vec(),
            press: vec![0.0; 5],
            press_vel: vec![0.0; 5],
            spread: 1.0,
        };
        EnvState {
            hands: [hand(&tips[..5]), hand(&tips[5..])],
            key_states: vec![0.0; KEY_COUNT],
            sustain: 0.0,
            t: 0,
        }
    }

    #[test]
    fn cost_is_zero_on_the_contact_point_and_follows_the_triangle() {
        // Custom dimensions put key 0's contact point at (0.13, 0.04); a
        // fingertip at (0.1, 0) is then 0.05 away (3-4-5 triangle).
        let g = KeyboardGeometry::with_dimensions(0.26, 0.1, 0.08, 0.2);
        assert_eq!(g.contact_point(0), (0.13, 0.04));
        let mut tips = [(2.0, 0.0); 10];
        tips[0] = (0.1, 0.0);
        tips[1] = (0.13, 0.04);
        let state = state_with_tips(tips);
        let p = build_problem(&state, &[0], &g).unwrap();
        assert!((p.at(0, 0) - 0.05).abs() < 1e-15);
        assert_eq!(p.at(0, 1), 0.0);
    }

    #[test]
    fn cost_matrix_matches_elementwise_recomputation() {
        use rand::{Rng, SeedableRng};
        let g = KeyboardGeometry::standard();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let mut tips = [(0.0, 0.0); 10];
            for tip in tips.iter_mut() {
                *tip = (rng.gen_range(0.0..1.2), rng.gen_range(-0.05..0.2));
            }
            let state = state_with_tips(tips);
            let n = rng.gen_range(1..=10);
            let mut keys: Vec<usize> = (0..KEY_COUNT).collect();
            use rand::seq::SliceRandom;
            keys.shuffle(&mut rng);
            keys.truncate(n);
            let p = build_problem(&state, &keys, &g).unwrap();
            for (i, &key) in keys.iter().enumerate() {
                for (j, &(fx, fy)) in tips.iter().enumerate() {
                    let (kx, ky) = g.contact_point(key);
                    let expected = ((fx - kx) * (fx - kx) + (fy - ky) * (fy - ky)).sqrt();
                    assert_eq!(p.at(i, j), expected);
                }
            }
        }
    }

    #[test]
    fn build_problem_rejects_too_many_keys() {
        let g = KeyboardGeometry::standard();
        let state = state_with_tips([(0.5, 0.03); 10]);
        let keys: Vec<usize> = (0..11).collect();
        assert!(matches!(
            build_problem(&state, &keys, &g),
            Err(AssignmentError::TooManyKeys { keys: 11, fingers: 10 })
        ));
        assert!(build_problem(&state, &[], &g).is_err());
    }

    #[test]
    fn silent_rows_saturate_the_reward() {
        let g = KeyboardGeometry::standard();
        let state = state_with_tips([(0.5, 0.03); 10]);
        let row = vec![0u8; crate::GOAL_WIDTH];
        let (assignment, reward, flag) = assign_and_reward(&state, &row, &g);
        assert!(assignment.is_none());
        assert_eq!(reward, 1.0);
        assert!(!flag);
    }

    #[test]
    fn resting_fingertip_on_the_active_key_earns_full_reward() {
        let g = KeyboardGeometry::standard();
        let mut tips = [(2.0, 0.0); 10];
        tips[3] = g.contact_point(39);
        let state = state_with_tips(tips);
        let mut row = vec![0u8; crate::GOAL_WIDTH];
        row[39] = 1;
        let (assignment, reward, _) = assign_and_reward(&state, &row, &g);
        let a = assignment.unwrap();
        assert_eq!(a.pairs, vec![(39, 3)]);
        assert_eq!(a.total_cost, 0.0);
        assert_eq!(reward, 1.0);
    }

    #[test]
    fn chord_reward_matches_the_enumeration_oracle() {
        let g = KeyboardGeometry::standard();
        let mut tips = [(0.0, 0.0); 10];
        for (i, tip) in tips.iter_mut().enumerate() {
            *tip = (0.35 + 0.03 * i as Real, 0.02 + 0.01 * (i % 3) as Real);
        }
        let state = state_with_tips(tips);
        let keys = [20usize, 24, 27];
        let mut row = vec![0u8; crate::GOAL_WIDTH];
        for &k in &keys {
            row[k] = 1;
        }
        let (assignment, reward, _) = assign_and_reward(&state, &row, &g);
        let p = build_problem(&state, &keys, &g).unwrap();
        let best = enumerate_best(&p.cost, 3, 10);
        let a = assignment.unwrap();
        assert!((a.total_cost - best).abs() < 1e-12);
        let expected = ot_reward(best, DELTA_KEY, default_ot_c());
        assert!((reward - expected).abs() < 1e-12);
    }

    #[test]
    fn dense_chords_keep_the_lowest_keys_and_flag_the_event() {
        let g = KeyboardGeometry::standard();
        let state = state_with_tips([(0.5, 0.03); 10]);
        let mut row = vec![0u8; crate::GOAL_WIDTH];
        for k in [3, 9, 14, 20, 22, 30, 33, 41, 47, 52, 60, 68] {
            row[k] = 1;
        }
        let (assignment, _, over_capacity) = assign_and_reward(&state, &row, &g);
        assert!(over_capacity);
        let a = assignment.unwrap();
        let mut covered: Vec<usize> = a.pairs.iter().map(|&(k, _)| k).collect();
        covered.sort_unstable();
        assert_eq!(covered, vec![3, 9, 14, 20, 22, 30, 33, 41, 47, 52]);
    }
}
