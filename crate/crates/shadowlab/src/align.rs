//! Monotone time-alignment between a chain's concatenated pseudo-orbit and
//! a candidate orbit: the discretized form of "there is a
//! reparametrization g with d(x_0 * t, X_{g(t)}(z)) <= eps for all t".
//!
//! Weak alignment is the discrete-Frechet value over unit-step monotone
//! staircases anchored at (0,0) with a free orbit-side end (g(0) = 0, the
//! warp may end anywhere on the orbit). Strong alignment restricts the
//! induced witness's chord slopes to [1-eps, 1+eps] via banded segment
//! transitions. By construction every strong transition's charged cells
//! are realizable by a weak staircase, so weak <= strong holds exactly on
//! any cost matrix.

use crate::chain::FiniteChain;
use crate::error::{Error, Result};
use crate::flow::{State, Trajectory};
use crate::reparam::Reparametrization;

/// Cost access shared by the production grid and test matrices.
pub trait AlignCost {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn dist(&self, i: usize, j: usize) -> f64;
    fn tau(&self, i: usize) -> f64;
    fn s(&self, j: usize) -> f64;
}

/// Distance grid between chain-time samples (every junction S_i is a
/// node) and orbit-time samples of a candidate trajectory.
pub struct AlignmentGrid {
    pub tau: Vec<f64>,
    pub chain_pts: Vec<State>,
    pub s: Vec<f64>,
    pub z_pts: Vec<State>,
    /// Half the largest adjacent-sample movement on each side; the
    /// discretization slack added to any continuous-time claim. Junction
    /// jumps are genuine discontinuities and are excluded.
    pub modulus: f64,
}

impl AlignCost for AlignmentGrid {
    fn rows(&self) -> usize {
        self.tau.len()
    }
    fn cols(&self) -> usize {
        self.s.len()
    }
    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        (self.chain_pts[i] - self.z_pts[j]).norm()
    }
    fn tau(&self, i: usize) -> f64 {
        self.tau[i]
    }
    fn s(&self, j: usize) -> f64 {
        self.s[j]
    }
}

/// Plain matrix cost for oracle tests.
pub struct MatrixCost {
    pub d: Vec<Vec<f64>>,
    pub tau: Vec<f64>,
    pub s: Vec<f64>,
}

impl MatrixCost {
    pub fn with_unit_times(d: Vec<Vec<f64>>) -> Self {
        let n = d.len();
        let m = d[0].len();
        Self {
            d,
            tau: (0..n).map(|i| i as f64).collect(),
            s: (0..m).map(|j| j as f64).collect(),
        }
    }
}

impl AlignCost for MatrixCost {
    fn rows(&self) -> usize {
        self.d.len()
    }
    fn cols(&self) -> usize {
        self.d[0].len()
    }
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.d[i][j]
    }
    fn tau(&self, i: usize) -> f64 {
        self.tau[i]
    }
    fn s(&self, j: usize) -> f64 {
        self.s[j]
    }
}

impl AlignmentGrid {
    /// Sample both curves at spatial resolution `arc_step` and take the
    /// orbit grid as the union of its arc nodes with the chain times (so
    /// the identity warp is always representable).
    pub fn build(chain: &FiniteChain, ztraj: &Trajectory, arc_step: f64) -> Result<Self> {
        if arc_step <= 0.0 {
            return Err(Error::BadParameter("arc_step must be positive".into()));
        }
        let total = chain.total_duration();
        let eta = 1e-9 * total.max(1.0);

        let mut tau = Vec::new();
        let mut chain_pts = Vec::new();
        let mut chain_move: f64 = 0.0;
        for i in 0..chain.segment_count() {
            let s0 = chain.clock.sums[i];
            let s1 = chain.clock.sums[i + 1];
            let last_segment = i + 1 == chain.segment_count();
            let local = chain.segment(i).arc_resample(arc_step);
            let mut prev: Option<State> = None;
            for (k, &(tl, p)) in local.iter().enumerate() {
                let mut t = s0 + tl;
                if !last_segment {
                    // Keep the pre-jump value strictly before the junction.
                    if k + 1 == local.len() {
                        t = s1 - eta;
                    } else if t >= s1 - eta {
                        continue;
                    }
                }
                if let Some(q) = prev {
                    chain_move = chain_move.max((p - q).norm());
                }
                prev = Some(p);
                tau.push(t);
                chain_pts.push(p);
            }
        }
        debug_assert!(tau.windows(2).all(|w| w[0] < w[1]));

        // Orbit grid: arc samples united with chain times inside the span.
        let arc = ztraj.arc_resample(arc_step);
        let mut s: Vec<f64> = arc.iter().map(|&(t, _)| t).collect();
        for &t in &tau {
            if t <= ztraj.t_end {
                s.push(t);
            }
        }
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * ztraj.t_end.max(1.0));
        let z_pts: Vec<State> = s.iter().map(|&t| ztraj.flow_at(t)).collect::<Result<_>>()?;
        let z_move = z_pts
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0f64, f64::max);

        Ok(AlignmentGrid {
            tau,
            chain_pts,
            s,
            z_pts,
            modulus: 0.5 * chain_move + 0.5 * z_move,
        })
    }

    /// Indices of the chain grid nodes equal to junction times.
    pub fn junction_nodes(&self, chain: &FiniteChain) -> Vec<usize> {
        chain.clock.sums[1..chain.segment_count()]
            .iter()
            .map(|&sj| self.tau.partition_point(|&t| t < sj))
            .collect()
    }
}

/// Minimal over monotone staircase paths of the maximal matched distance.
pub fn align_weak_value<C: AlignCost>(c: &C) -> f64 {
    let (n, m) = (c.rows(), c.cols());
    let mut prev = vec![0.0f64; m];
    prev[0] = c.dist(0, 0);
    for j in 1..m {
        prev[j] = prev[j - 1].max(c.dist(0, j));
    }
    let mut cur = vec![0.0f64; m];
    for i in 1..n {
        cur[0] = prev[0].max(c.dist(i, 0));
        for j in 1..m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = best.max(c.dist(i, j));
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Weak alignment with witness reconstruction: the matched pairs of the
/// optimal staircase. Values are streamed two rows at a time; only the
/// byte-sized parent table is kept whole.
pub fn align_weak_witness<C: AlignCost>(c: &C) -> (f64, Vec<(usize, usize)>) {
    let (n, m) = (c.rows(), c.cols());
    let mut parent = vec![0u8; n * m]; // 0 diag, 1 up (i-1), 2 left (j-1)
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    prev[0] = c.dist(0, 0);
    for j in 1..m {
        prev[j] = prev[j - 1].max(c.dist(0, j));
        parent[j] = 2;
    }
    for i in 1..n {
        cur[0] = prev[0].max(c.dist(i, 0));
        parent[i * m] = 1;
        for j in 1..m {
            let (mut best, mut par) = (prev[j - 1], 0u8);
            if prev[j] < best {
                best = prev[j];
                par = 1;
            }
            if cur[j - 1] < best {
                best = cur[j - 1];
                par = 2;
            }
            cur[j] = best.max(c.dist(i, j));
            parent[i * m + j] = par;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (mut j, mut best) = (0usize, f64::INFINITY);
    for jj in 0..m {
        if prev[jj] < best {
            best = prev[jj];
            j = jj;
        }
    }
    let mut path = Vec::new();
    let mut i = n - 1;
    loop {
        path.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        match parent[i * m + j] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
    }
    path.reverse();
    (best, path)
}

const SLOPE_TOL: f64 = 1e-9;

/// Cost of the banded transition (i, j) -> (i+1, j'): the witness sweeps
/// the orbit nodes (j, j'] during chain interval i; each is charged to
/// row i or i+1 through the best monotone split (stay on row i through
/// column c, then row i+1). The arrival cell (i+1, j') is always charged.
/// This makes an unconstrained band reduce exactly to the weak staircase.
fn strong_transition_cost<C: AlignCost>(c: &C, i: usize, j: usize, j2: usize) -> f64 {
    let arrival = c.dist(i + 1, j2);
    if j2 == j {
        return arrival;
    }
    // prefix_a[k] = max over row-i cells (j, j+k]; computed on the fly.
    let mut best = f64::INFINITY;
    for split in j..=j2 {
        let mut v = arrival;
        for m in (j + 1)..=split {
            v = v.max(c.dist(i, m));
        }
        for m in (split + 1)..=j2 {
            v = v.max(c.dist(i + 1, m));
        }
        if v < best {
            best = v;
        }
    }
    best
}

fn strong_dp<C: AlignCost>(
    c: &C,
    eps_rep: f64,
    mut record_parent: Option<&mut Vec<Vec<u32>>>,
) -> Vec<f64> {
    let (n, m) = (c.rows(), c.cols());
    let mut dp = vec![f64::INFINITY; m];
    dp[0] = c.dist(0, 0);
    for i in 0..n - 1 {
        let dt = c.tau(i + 1) - c.tau(i);
        let lo = (1.0 - eps_rep) * dt - SLOPE_TOL * dt.max(1.0);
        let hi = (1.0 + eps_rep) * dt + SLOPE_TOL * dt.max(1.0);
        let mut next = vec![f64::INFINITY; m];
        for j in 0..m {
            if !dp[j].is_finite() {
                continue;
            }
            for j2 in j..m {
                if j2 > j {
                    let ds = c.s(j2) - c.s(j);
                    if ds > hi {
                        break;
                    }
                    if ds < lo {
                        continue;
                    }
                } else if eps_rep < 1.0 {
                    // A stall has chord slope 0; |0 - 1| <= eps needs eps >= 1.
                    continue;
                }
                let v = dp[j].max(strong_transition_cost(c, i, j, j2));
                if v < next[j2] {
                    next[j2] = v;
                    if let Some(parent) = record_parent.as_deref_mut() {
                        parent[i + 1][j2] = j as u32;
                    }
                }
            }
        }
        dp = next;
    }
    dp
}

/// Banded alignment: transitions (i, j) -> (i+1, j') whose witness chord
/// slope (s_{j'} - s_j) / (tau_{i+1} - tau_i) lies in [1-eps, 1+eps].
/// A stalling transition (j' = j) is admissible only when eps >= 1.
/// Returns +inf when no admissible path exists. The feasible witnesses
/// are a subset of the weak staircases, so the value never drops below
/// the weak one.
pub fn align_strong_value<C: AlignCost>(c: &C, eps_rep: f64) -> f64 {
    strong_dp(c, eps_rep, None).into_iter().fold(f64::INFINITY, f64::min)
}

/// Strong alignment with the witness: one matched orbit node per chain
/// node along the optimal banded transition sequence.
pub fn align_strong_witness<C: AlignCost>(c: &C, eps_rep: f64) -> (f64, Vec<(usize, usize)>) {
    let (n, m) = (c.rows(), c.cols());
    let mut parent = vec![vec![u32::MAX; m]; n];
    parent[0][0] = 0;
    let dp = strong_dp(c, eps_rep, Some(&mut parent));
    let (mut j_best, mut best) = (usize::MAX, f64::INFINITY);
    for j in 0..m {
        if dp[j] < best {
            best = dp[j];
            j_best = j;
        }
    }
    if !best.is_finite() {
        return (f64::INFINITY, Vec::new());
    }
    let mut pairs = vec![(n - 1, j_best)];
    let mut j = j_best;
    for i in (1..n).rev() {
        j = parent[i][j] as usize;
        pairs.push((i - 1, j));
    }
    pairs.reverse();
    (best, pairs)
}

/// Witness g through the matched pairs (chain time, orbit time).
pub fn witness_from_path<C: AlignCost>(c: &C, path: &[(usize, usize)]) -> Result<Reparametrization> {
    // Collapse to the last orbit node matched at each chain node.
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for &(i, j) in path {
        let u = c.tau(i);
        let g = c.s(j);
        match pairs.last_mut() {
            Some(last) if last.0 == u => last.1 = last.1.max(g),
            _ => pairs.push((u, g)),
        }
    }
    // A vertical run at the first chain node fast-forwards the orbit right
    // after t = 0; keep the g(0) = 0 anchor and ramp steeply instead.
    let s_start = c.s(path[0].1);
    if pairs[0].1 > s_start {
        let u0 = pairs[0].0;
        let next_u = pairs.get(1).map(|p| p.0).unwrap_or(u0 + 1.0);
        let ramp_end = u0 + 1e-6 * (next_u - u0).max(1e-9);
        let first_val = pairs[0].1;
        pairs[0] = (u0, s_start);
        pairs.insert(1, (ramp_end, first_val));
    }
    Reparametrization::from_pairs(&pairs, 1.0)
}

/// Exhaustive reference implementations. These stay independent of the DP
/// above: values come from literally enumerating paths. Exponential; only
/// usable on small grids.
pub mod oracle {
    use super::AlignCost;

    /// Min-max over all monotone unit-step staircases from (0,0) with a
    /// free orbit end.
    pub fn weak_by_enumeration<C: AlignCost>(c: &C) -> f64 {
        let (n, m) = (c.rows(), c.cols());
        assert!(n <= 8 && m <= 8, "enumeration oracle is exponential");
        let mut best = f64::INFINITY;
        fn dfs<C: AlignCost>(c: &C, i: usize, j: usize, v: f64, best: &mut f64) {
            let v = v.max(c.dist(i, j));
            let (n, m) = (c.rows(), c.cols());
            if i == n - 1 {
                *best = (*best).min(v);
            }
            if i + 1 < n {
                dfs(c, i + 1, j, v, best);
                if j + 1 < m {
                    dfs(c, i + 1, j + 1, v, best);
                }
            }
            if j + 1 < m {
                dfs(c, i, j + 1, v, best);
            }
        }
        dfs(c, 0, 0, f64::NEG_INFINITY, &mut best);
        best
    }

    /// Min-max over admissible banded transition sequences, the slope
    /// filter and the row-split charging both applied literally to every
    /// candidate (sequence, split assignment) pair.
    pub fn strong_by_enumeration<C: AlignCost>(c: &C, eps: f64) -> f64 {
        let (n, m) = (c.rows(), c.cols());
        assert!(n <= 8 && m <= 8, "enumeration oracle is exponential");
        let mut best = f64::INFINITY;
        fn dfs<C: AlignCost>(c: &C, eps: f64, i: usize, j: usize, v: f64, best: &mut f64) {
            let (n, m) = (c.rows(), c.cols());
            if i == n - 1 {
                *best = (*best).min(v);
                return;
            }
            let dt = c.tau(i + 1) - c.tau(i);
            for j2 in j..m {
                let slope = (c.s(j2) - c.s(j)) / dt;
                let admissible = if j2 == j {
                    eps >= 1.0
                } else {
                    slope >= 1.0 - eps - 1e-9 && slope <= 1.0 + eps + 1e-9
                };
                if !admissible {
                    continue;
                }
                // Enumerate every split of the swept nodes between the
                // departure row and the arrival row.
                let mut charged = f64::INFINITY;
                for split in j..=j2 {
                    let mut w = c.dist(i + 1, j2);
                    for mm in (j + 1)..=split {
                        w = w.max(c.dist(i, mm));
                    }
                    for mm in (split + 1)..=j2 {
                        w = w.max(c.dist(i + 1, mm));
                    }
                    charged = charged.min(w);
                }
                dfs(c, eps, i + 1, j2, v.max(charged), best);
            }
        }
        dfs(c, eps, 0, 0, c.dist(0, 0), &mut best);
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(rng: &mut impl Rng, n: usize, m: usize) -> MatrixCost {
        let d = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(0.0..10.0)).collect())
            .collect();
        MatrixCost::with_unit_times(d)
    }

    #[test]
    fn weak_matches_enumeration_on_3x3() {
        let d = vec![
            vec![1.0, 5.0, 9.0],
            vec![4.0, 2.0, 6.0],
            vec![7.0, 3.0, 1.5],
        ];
        let c = MatrixCost::with_unit_times(d);
        let dp = align_weak_value(&c);
        let oracle = oracle::weak_by_enumeration(&c);
        assert_eq!(dp, oracle);
    }

    #[test]
    fn weak_and_strong_match_enumeration_randomized() {
        let mut rng = crate::rng::stream(3, "align-oracle", 0);
        for iter in 0..200 {
            let n = rng.gen_range(2..=6);
            let m = rng.gen_range(2..=6);
            let c = random_matrix(&mut rng, n, m);
            let w_dp = align_weak_value(&c);
            let w_or = oracle::weak_by_enumeration(&c);
            assert_eq!(w_dp, w_or, "weak mismatch at iter {iter}");
            for eps in [0.0, 0.25, 1.0, 2.5] {
                let s_dp = align_strong_value(&c, eps);
                let s_or = oracle::strong_by_enumeration(&c, eps);
                assert_eq!(s_dp, s_or, "strong mismatch at iter {iter}, eps {eps}");
            }
        }
    }

    #[test]
    fn strong_eps_zero_forces_identity_on_shared_times() {
        // tau == s: the only admissible path is the diagonal.
        let mut rng = crate::rng::stream(4, "align-eps0", 0);
        let n = 5;
        let c = random_matrix(&mut rng, n, n);
        let v = align_strong_value(&c, 0.0);
        let diag = (0..n).map(|i| c.d[i][i]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(v, diag);
    }

    #[test]
    fn strong_infeasible_band_is_infinite() {
        // Orbit grid twice as coarse: slope 2 everywhere, band 0.5 too thin.
        let d = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let c = MatrixCost { d, tau: vec![0.0, 1.0], s: vec![0.0, 2.0] };
        assert!(align_strong_value(&c, 0.5).is_infinite());
        assert!(align_strong_value(&c, 1.5).is_finite());
    }

    #[test]
    fn witnesses_reproduce_values() {
        let mut rng = crate::rng::stream(5, "align-witness", 0);
        for _ in 0..50 {
            let n = rng.gen_range(2..=6);
            let m = rng.gen_range(2..=6);
            let c = random_matrix(&mut rng, n, m);
            let (v, path) = align_weak_witness(&c);
            assert_eq!(v, align_weak_value(&c));
            let replay = path.iter().map(|&(i, j)| c.dist(i, j)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(replay, v);
            let g = witness_from_path(&c, &path).unwrap();
            assert!(g.classify(f64::INFINITY).in_rep);

            let (sv, spath) = align_strong_witness(&c, 1.25);
            assert_eq!(sv, align_strong_value(&c, 1.25));
            if sv.is_finite() {
                assert_eq!(spath.len(), n);
            }
        }
    }

    proptest! {
        /// weak <= strong on arbitrary cost matrices, any band width.
        #[test]
        fn weak_never_exceeds_strong(
            rows in proptest::collection::vec(
                proptest::collection::vec(0.0f64..10.0, 4), 4),
            eps in 0.0f64..3.0,
        ) {
            let c = MatrixCost::with_unit_times(rows);
            let w = align_weak_value(&c);
            let s = align_strong_value(&c, eps);
            prop_assert!(w <= s + 1e-12);
        }

        /// A wide-enough band makes strong equal weak.
        #[test]
        fn strong_relaxes_to_weak(
            rows in proptest::collection::vec(
                proptest::collection::vec(0.0f64..10.0, 5), 4),
        ) {
            let c = MatrixCost::with_unit_times(rows);
            let aspect = 6.0; // > max moves per unit time on this grid
            let w = align_weak_value(&c);
            let s = align_strong_value(&c, aspect);
            prop_assert!((w - s).abs() <= 1e-12);
        }
    }
}
