//! `(n, ε)`-separated sets on a candidate grid, entropy-at-scale curves and
//! the counting inequalities that bracket them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ball::Ball;
use crate::circle::{circle_dist, forward_gap, CircleMap};
use crate::error::{Error, Result};
use crate::group::Word;

/// Relative slack on the `≥ ε` comparison, absorbing grid rounding.
const SEPARATION_SLACK: f64 = 1e-12;

/// Upper bound on stored probe images per layer (f64 count).
const IMAGE_BUDGET: usize = 40_000_000;

pub const DEFAULT_EXACT_CAP: usize = 24;

#[inline]
fn far_enough(d: f64, epsilon: f64) -> bool {
    d >= epsilon * (1.0 - SEPARATION_SLACK)
}

/// `ceil(1/spacing)` equally spaced points starting at `t = 0`.
pub fn uniform_grid(spacing: f64) -> Vec<f64> {
    let g = (1.0 / spacing - 1e-9).ceil().max(1.0) as usize;
    (0..g).map(|j| j as f64 / g as f64).collect()
}

/// First element of `B(n)` (canonical order) mapping `x` and `y` at least `ε`
/// apart.
pub fn is_separated(x: f64, y: f64, ball: &Ball, n: usize, epsilon: f64) -> Option<usize> {
    if circle_dist(x, y) == 0.0 {
        return None;
    }
    (0..ball.size_at(n)).find(|&i| far_enough(circle_dist(ball.apply(i, x), ball.apply(i, y)), epsilon))
}

/// For every candidate pair closer than `ε`, the first ball element that
/// separates it (pairs at distance `≥ ε` are separated by the identity).
#[derive(Debug, Clone)]
pub struct SeparationTable {
    epsilon: f64,
    candidates: Vec<f64>,
    /// Sorted close pairs `(i, j)` with `i < j`.
    pairs: Vec<(u32, u32)>,
    witness: Vec<Option<u32>>,
    witness_norm: Vec<usize>,
    n_max: usize,
}

impl SeparationTable {
    pub fn build(ball: &Ball, candidates: Vec<f64>, epsilon: f64, n_max: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::Config(format!("epsilon {epsilon} outside (0, 1/2)")));
        }
        if ball.radius() < n_max {
            return Err(Error::Config(format!(
                "ball radius {} below requested n = {n_max}",
                ball.radius()
            )));
        }
        if candidates.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("candidates must be sorted and distinct".into()));
        }
        let m = candidates.len();
        let mut pairs = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                if !far_enough(circle_dist(candidates[i], candidates[j]), epsilon) {
                    pairs.push((i as u32, j as u32));
                }
            }
        }
        let mut witness: Vec<Option<u32>> = vec![None; pairs.len()];
        let mut active: Vec<usize> = (0..pairs.len()).collect();
        let system = ball.system();

        // Images of the active points under the previous layer, if stored.
        let mut prev: Option<(Vec<usize>, Vec<f64>)> = None;
        for depth in 1..=n_max {
            if active.is_empty() {
                break;
            }
            let mut pts: Vec<usize> = active
                .iter()
                .flat_map(|&k| [pairs[k].0 as usize, pairs[k].1 as usize])
                .collect();
            pts.sort_unstable();
            pts.dedup();
            let p = pts.len();
            let layer = ball.layer(depth);
            let start = layer.start;
            let count = layer.len();
            let store = count.saturating_mul(p) <= IMAGE_BUDGET;

            let prev_cols: Option<Vec<usize>> = prev.as_ref().map(|(prev_pts, _)| {
                pts.iter()
                    .map(|q| prev_pts.binary_search(q).expect("active points only shrink"))
                    .collect()
            });
            let images: Option<Vec<f64>> = if store {
                let prev_layer = ball.layer(depth - 1);
                let imgs: Vec<f64> = layer
                    .clone()
                    .into_par_iter()
                    .flat_map_iter(|e| {
                        let el = ball.element(e);
                        let parent = el.parent.expect("non-root element has a parent");
                        let letter = *el.word.letters().last().expect("non-empty word");
                        let g = &system.generator(letter).map;
                        let from_prev: Option<Vec<f64>> = match (&prev, &prev_cols) {
                            (Some((prev_pts, prev_imgs)), Some(cols)) => {
                                let row = (parent - prev_layer.start) * prev_pts.len();
                                Some(cols.iter().map(|&col| g.eval(prev_imgs[row + col])).collect())
                            }
                            _ => None,
                        };
                        from_prev.unwrap_or_else(|| {
                            let wm = system.word_map(&el.word);
                            pts.iter().map(|&q| wm.eval(candidates[q])).collect()
                        })
                    })
                    .collect();
                Some(imgs)
            } else {
                None
            };

            let found: Vec<Option<u32>> = active
                .par_iter()
                .map(|&k| {
                    let (a, b) = pairs[k];
                    match &images {
                        Some(imgs) => {
                            let ca = pts.binary_search(&(a as usize)).unwrap();
                            let cb = pts.binary_search(&(b as usize)).unwrap();
                            (0..count)
                                .find(|&e| far_enough(circle_dist(imgs[e * p + ca], imgs[e * p + cb]), epsilon))
                                .map(|e| (start + e) as u32)
                        }
                        None => (start..start + count)
                            .find(|&e| {
                                far_enough(
                                    circle_dist(
                                        ball.apply(e, candidates[a as usize]),
                                        ball.apply(e, candidates[b as usize]),
                                    ),
                                    epsilon,
                                )
                            })
                            .map(|e| e as u32),
                    }
                })
                .collect();
            let mut still = Vec::with_capacity(active.len());
            for (&k, w) in active.iter().zip(found) {
                match w {
                    Some(e) => witness[k] = Some(e),
                    None => still.push(k),
                }
            }
            active = still;
            prev = images.map(|imgs| (pts, imgs));
        }
        let witness_norm = witness
            .iter()
            .map(|w| w.map_or(usize::MAX, |e| ball.element(e as usize).norm))
            .collect();
        Ok(SeparationTable {
            epsilon,
            candidates,
            pairs,
            witness,
            witness_norm,
            n_max,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Witness separating candidates `i` and `j` within `B(n)`.
    pub fn witness(&self, i: usize, j: usize, n: usize) -> Option<usize> {
        if i == j {
            return None;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        match self.pairs.binary_search(&(a as u32, b as u32)) {
            Err(_) => Some(0),
            Ok(k) => {
                if self.witness_norm[k] <= n {
                    self.witness[k].map(|e| e as usize)
                } else {
                    None
                }
            }
        }
    }

    pub fn separated(&self, i: usize, j: usize, n: usize) -> bool {
        self.witness(i, j, n).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeparationMode {
    GreedyLower,
    ExhaustiveExact,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparatedSet {
    pub points: Vec<f64>,
    /// Candidate indices of `points`.
    pub indices: Vec<usize>,
    /// For each consecutive pair of `points` (cyclically), the ball element
    /// separating them.
    pub witnesses: Vec<usize>,
    pub mode: SeparationMode,
    /// Set when the grid spacing exceeds `ε`.
    pub coarse_grid: bool,
}

impl SeparatedSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn adjacent_witnesses(table: &SeparationTable, idx: &[usize], n: usize) -> Vec<usize> {
    if idx.len() < 2 {
        return Vec::new();
    }
    (0..idx.len())
        .map(|k| {
            table
                .witness(idx[k], idx[(k + 1) % idx.len()], n)
                .expect("admitted points are separated")
        })
        .collect()
}

fn coarse(candidates: &[f64], epsilon: f64) -> bool {
    let m = candidates.len();
    m == 0 || (0..m).any(|i| forward_gap(candidates[i], candidates[(i + 1) % m]) > epsilon)
}

/// Single sweep in increasing `t`, admitting a candidate iff it is separated
/// from every admitted point. The result is maximal under inclusion.
pub fn max_separated_greedy(table: &SeparationTable, n: usize) -> SeparatedSet {
    let c = &table.candidates;
    let eps = table.epsilon;
    let mut admitted: Vec<usize> = Vec::new();
    for i in 0..c.len() {
        let mut ok = true;
        for &j in admitted.iter().rev() {
            if c[i] - c[j] >= eps {
                break;
            }
            if !table.separated(i, j, n) {
                ok = false;
                break;
            }
        }
        if ok {
            for &j in &admitted {
                if c[j] + 1.0 - c[i] >= eps {
                    break;
                }
                if !table.separated(i, j, n) {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            admitted.push(i);
        }
    }
    SeparatedSet {
        points: admitted.iter().map(|&i| c[i]).collect(),
        witnesses: adjacent_witnesses(table, &admitted, n),
        indices: admitted,
        mode: SeparationMode::GreedyLower,
        coarse_grid: coarse(c, eps),
    }
}

/// Exact maximum separated subset: maximum clique of the separation graph
/// by branch and bound over bitmasks.
pub fn max_separated_exact(table: &SeparationTable, n: usize, cap: usize) -> Result<SeparatedSet> {
    let m = table.candidates.len();
    if m > cap.min(64) {
        return Err(Error::ExactCapExceeded { candidates: m, cap });
    }
    let adj: Vec<u64> = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| table.separated(i, j, n))
                .fold(0u64, |acc, j| acc | (1 << j))
        })
        .collect();
    let mut best = 0u64;
    let all = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    clique(&adj, 0, all, &mut best);
    let idx: Vec<usize> = (0..m).filter(|&i| best >> i & 1 == 1).collect();
    Ok(SeparatedSet {
        points: idx.iter().map(|&i| table.candidates[i]).collect(),
        witnesses: adjacent_witnesses(table, &idx, n),
        indices: idx,
        mode: SeparationMode::ExhaustiveExact,
        coarse_grid: coarse(&table.candidates, table.epsilon),
    })
}

fn clique(adj: &[u64], current: u64, mut candidates: u64, best: &mut u64) {
    if candidates == 0 {
        if current.count_ones() > best.count_ones() {
            *best = current;
        }
        return;
    }
    while candidates != 0 {
        if current.count_ones() + candidates.count_ones() <= best.count_ones() {
            return;
        }
        let v = candidates.trailing_zeros() as usize;
        candidates &= !(1 << v);
        clique(adj, current | (1 << v), candidates & adj[v], best);
    }
    if current.count_ones() > best.count_ones() {
        *best = current;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub n: usize,
    pub s_lower: usize,
    /// `(1/ε)·#B_Γ(n)`.
    pub ball_ceiling: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyCurve {
    pub epsilon: f64,
    pub grid_spacing: f64,
    pub candidates: usize,
    pub rows: Vec<EntropyRow>,
    pub slope: f64,
    pub tail_window: (usize, usize),
    pub coarse_grid: bool,
}

impl EntropyCurve {
    pub fn row(&self, n: usize) -> Option<&EntropyRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// Every row respects `s ≤ (1/ε)·#B(n)`.
    pub fn ball_ceiling_holds(&self) -> bool {
        self.rows.iter().all(|r| r.s_lower as f64 <= r.ball_ceiling)
    }

    pub fn to_csv_rows(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{}\n",
                    self.epsilon, r.n, r.s_lower, r.ball_ceiling, self.tail_window.0, self.tail_window.1, self.slope
                )
            })
            .collect()
    }
}

pub const CURVE_CSV_HEADER: &str = "epsilon,n,s_lower,ball_ceiling,slope_window_lo,slope_window_hi,slope\n";

/// Least-squares slope of `log s` over `n ∈ [⌈n_hi/2⌉, n_hi]`.
pub fn tail_slope(rows: &[EntropyRow]) -> (f64, (usize, usize)) {
    let n_hi = rows.iter().map(|r| r.n).max().unwrap_or(0);
    let n_lo = n_hi.div_ceil(2);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.n >= n_lo && r.s_lower > 0)
        .map(|r| (r.n as f64, (r.s_lower as f64).ln()))
        .collect();
    if pts.len() < 2 {
        return (0.0, (n_lo, n_hi));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxy / sxx, (n_lo, n_hi))
}

/// Greedy rows `n = 1..=n_max` read off a built table.
pub fn curve_from_table(ball: &Ball, table: &SeparationTable, spacing: f64) -> EntropyCurve {
    let n_max = table.n_max;
    let rows: Vec<EntropyRow> = (1..=n_max)
        .into_par_iter()
        .map(|n| EntropyRow {
            n,
            s_lower: max_separated_greedy(table, n).len(),
            ball_ceiling: ball.size_at(n) as f64 / table.epsilon,
        })
        .collect();
    let (slope, tail_window) = tail_slope(&rows);
    EntropyCurve {
        epsilon: table.epsilon,
        grid_spacing: spacing,
        candidates: table.candidates.len(),
        rows,
        slope,
        tail_window,
        coarse_grid: coarse(&table.candidates, table.epsilon),
    }
}

/// Greedy lower bounds on `s(n, ε)` for `n = 1..=n_max` over a uniform grid.
pub fn entropy_at_scale(ball: &Ball, epsilon: f64, n_max: usize, spacing: f64) -> Result<EntropyCurve> {
    if spacing > epsilon / 4.0 * (1.0 + 1e-9) {
        return Err(Error::Config(format!(
            "grid spacing {spacing} exceeds ε/4 = {}",
            epsilon / 4.0
        )));
    }
    let table = SeparationTable::build(ball, uniform_grid(spacing), epsilon, n_max)?;
    Ok(curve_from_table(ball, &table, spacing))
}

/// As [`entropy_at_scale`], with candidates restricted to grid points where
/// `keep` holds.
pub fn restricted_entropy(
    ball: &Ball,
    epsilon: f64,
    n_max: usize,
    spacing: f64,
    keep: impl Fn(f64) -> bool,
) -> Result<EntropyCurve> {
    if spacing > epsilon / 4.0 * (1.0 + 1e-9) {
        return Err(Error::Config(format!(
            "grid spacing {spacing} exceeds ε/4 = {}",
            epsilon / 4.0
        )));
    }
    let candidates: Vec<f64> = uniform_grid(spacing).into_iter().filter(|&t| keep(t)).collect();
    if candidates.is_empty() {
        return Err(Error::EmptyRestriction);
    }
    let table = SeparationTable::build(ball, candidates, epsilon, n_max)?;
    Ok(curve_from_table(ball, &table, spacing))
}

#[derive(Debug, Clone, Serialize)]
pub struct FundamentalRow {
    pub n: usize,
    pub s_full: usize,
    pub s_omega: usize,
    pub p: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FundamentalReport {
    pub epsilon: f64,
    pub form: String,
    pub rows: Vec<FundamentalRow>,
    pub all_hold: bool,
    pub caveat: &'static str,
}

pub const LOWER_BOUND_CAVEAT: &str = "both sides use greedy lower bounds: a consistency check, not a proof";

/// Row-wise `s(n) ≤ p(n)·s_Ω(n) + p(n)`.
pub fn check_fundamental_inequality(
    full: &EntropyCurve,
    omega: &EntropyCurve,
    form: &str,
    n_max: usize,
    p: impl Fn(usize) -> Result<f64>,
) -> Result<FundamentalReport> {
    if full.epsilon != omega.epsilon || full.grid_spacing != omega.grid_spacing {
        return Err(Error::Config("curves computed at different ε or grid".into()));
    }
    let ns_full: Vec<usize> = full.rows.iter().map(|r| r.n).collect();
    let ns_omega: Vec<usize> = omega.rows.iter().map(|r| r.n).collect();
    if ns_full != ns_omega {
        return Err(Error::Config("curves cover different n ranges".into()));
    }
    let mut rows = Vec::new();
    for (f, o) in full.rows.iter().zip(&omega.rows) {
        if f.n > n_max {
            break;
        }
        let pv = p(f.n)?;
        let holds = f.s_lower as f64 <= pv * o.s_lower as f64 + pv;
        rows.push(FundamentalRow {
            n: f.n,
            s_full: f.s_lower,
            s_omega: o.s_lower,
            p: pv,
            holds,
        });
    }
    Ok(FundamentalReport {
        epsilon: full.epsilon,
        form: form.to_string(),
        all_hold: rows.iter().all(|r| r.holds),
        rows,
        caveat: LOWER_BOUND_CAVEAT,
    })
}

/// Outcome of walking a separating word letter by letter on the short arc
/// from `x` to `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Propagation {
    /// Prefix length at which the image arc first reaches length `ε`.
    pub step: usize,
    pub length: f64,
    /// The arc at `step` is at most 1/2 long, so its length is the circle
    /// distance of its endpoints.
    pub below_half: bool,
}

/// The short arc joining `x` and `y`, oriented so it runs forward.
pub fn short_arc(x: f64, y: f64) -> (f64, f64) {
    if forward_gap(x, y) <= 0.5 {
        (x, y)
    } else {
        (y, x)
    }
}

/// Walk the prefixes of `word` on the arc running forward from `from` to
/// `to`; `None` if no prefix stretches it to length `ε`.
pub fn propagate(ball: &Ball, word: &Word, from: f64, to: f64, epsilon: f64) -> Option<Propagation> {
    let system = ball.system();
    let (mut a, mut b) = (from, to);
    for step in 0..=word.len() {
        if step > 0 {
            let g = &system.generator(word.letters()[step - 1]).map;
            a = g.eval(a);
            b = g.eval(b);
        }
        let length = forward_gap(a, b);
        if far_enough(length, epsilon) {
            return Some(Propagation {
                step,
                length,
                below_half: length <= 0.5,
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::FingerprintSpec;
    use crate::circle::PrimitiveMap;
    use crate::group::GeneratingSystem;

    fn hyperbolic_ball(n: usize) -> Ball {
        let g = GeneratingSystem::from_pairs(&[("g", "G", PrimitiveMap::hyperbolic(2f64.sqrt()).unwrap())]).unwrap();
        Ball::enumerate(&g, n, FingerprintSpec::default(), 10_000).unwrap()
    }

    fn identity_ball() -> Ball {
        let g = GeneratingSystem::from_pairs(&[("a", "A", PrimitiveMap::rotation(0.1))]).unwrap();
        Ball::enumerate(&g, 0, FingerprintSpec::default(), 10).unwrap()
    }

    #[test]
    fn trivial_separation_cases() {
        let b = identity_ball();
        assert_eq!(is_separated(0.3, 0.3, &b, 0, 0.1), None);
        assert_eq!(is_separated(0.1, 0.3, &b, 0, 0.1), Some(0));
        assert_eq!(is_separated(0.1, 0.15, &b, 0, 0.1), None);
    }

    #[test]
    fn hyperbolic_expansion_separates_close_points() {
        // Near the repelling point t = 1/2 each application of g doubles
        // distances; iterate the map to find the needed depth.
        let eps = 0.05;
        let (x, y) = (0.5 + 0.001, 0.5 + 0.001 + eps / 4.0);
        let g = PrimitiveMap::hyperbolic(2f64.sqrt()).unwrap();
        let (mut a, mut c, mut k) = (x, y, 0);
        while circle_dist(a, c) < eps {
            a = g.eval(a);
            c = g.eval(c);
            k += 1;
        }
        let b = hyperbolic_ball(k + 2);
        let w = is_separated(x, y, &b, k, eps).expect("separated at depth k");
        assert_eq!(b.element(w).norm, k);
        assert_eq!(b.element(w).word.len(), k);
        assert!(is_separated(x, y, &b, k - 1, eps).is_none());
    }

    #[test]
    fn identity_ball_gives_epsilon_net() {
        let b = identity_ball();
        for eps in [0.01, 0.05, 0.1, 0.125, 0.25] {
            let table = SeparationTable::build(&b, uniform_grid(eps / 4.0), eps, 0).unwrap();
            let s = max_separated_greedy(&table, 0);
            assert_eq!(s.len(), (1.0 / eps + 1e-9).floor() as usize, "eps={eps}");
        }
    }

    #[test]
    fn exact_on_extremes() {
        let b = identity_ball();
        // all pairs separated
        let c: Vec<f64> = (0..5).map(|i| i as f64 / 5.0).collect();
        let t = SeparationTable::build(&b, c, 0.2, 0).unwrap();
        assert_eq!(max_separated_exact(&t, 0, 24).unwrap().len(), 5);
        // no pairs separated
        let c: Vec<f64> = (0..5).map(|i| i as f64 / 100.0).collect();
        let t = SeparationTable::build(&b, c, 0.2, 0).unwrap();
        assert_eq!(max_separated_exact(&t, 0, 24).unwrap().len(), 1);
        let c: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        let t = SeparationTable::build(&b, c, 0.2, 0).unwrap();
        assert!(matches!(
            max_separated_exact(&t, 0, 24),
            Err(Error::ExactCapExceeded { .. })
        ));
    }

    /// Brute force over all subsets of a 12-point grid.
    #[test]
    fn greedy_below_subset_oracle() {
        let b = hyperbolic_ball(2);
        let cands: Vec<f64> = (0..12).map(|i| 0.37 + i as f64 * 0.011).collect();
        let eps = 0.05;
        let t = SeparationTable::build(&b, cands.clone(), eps, 2).unwrap();
        let mut best = 0;
        for mask in 1u32..(1 << 12) {
            let idx: Vec<usize> = (0..12).filter(|&i| mask >> i & 1 == 1).collect();
            let ok = idx.iter().enumerate().all(|(a, &i)| {
                idx[a + 1..]
                    .iter()
                    .all(|&j| is_separated(cands[i], cands[j], &b, 2, eps).is_some())
            });
            if ok {
                best = best.max(idx.len());
            }
        }
        let g = max_separated_greedy(&t, 2).len();
        let e = max_separated_exact(&t, 2, 24).unwrap().len();
        assert_eq!(e, best);
        assert!(g <= e);
    }

    #[test]
    fn table_agrees_with_direct_search() {
        let b = hyperbolic_ball(6);
        let cands = uniform_grid(0.0125);
        let eps = 0.05;
        let t = SeparationTable::build(&b, cands.clone(), eps, 6).unwrap();
        for i in (0..cands.len()).step_by(3) {
            for j in (i + 1)..(i + 6).min(cands.len()) {
                for n in [0, 2, 6] {
                    assert_eq!(t.witness(i, j, n), is_separated(cands[i], cands[j], &b, n, eps));
                }
            }
        }
    }

    #[test]
    fn slope_of_exponential_rows() {
        let rows: Vec<EntropyRow> = (1..=10)
            .map(|n| EntropyRow {
                n,
                s_lower: 3usize.pow(n as u32),
                ball_ceiling: f64::INFINITY,
            })
            .collect();
        let (s, w) = tail_slope(&rows);
        assert_eq!(w, (5, 10));
        assert!((s - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn propagation_stays_below_half() {
        let b = hyperbolic_ball(8);
        let eps = 0.2; // below 1/(2L) = 1/4
        let w = b.system().parse_word("gggggg").unwrap();
        let p = propagate(&b, &w, 0.49, 0.499, eps).unwrap();
        assert!(p.below_half && p.length >= eps);
    }

    #[test]
    fn antipodal_points_separate_at_step_zero() {
        let b = hyperbolic_ball(2);
        let w = b.system().parse_word("gg").unwrap();
        let p = propagate(&b, &w, 0.1, 0.6, 0.2).unwrap();
        assert_eq!(p.step, 0);
        assert!(p.below_half && p.length == 0.5);
    }

    #[test]
    fn restriction_errors_when_empty() {
        let b = identity_ball();
        assert!(matches!(
            restricted_entropy(&b, 0.1, 0, 0.025, |_| false),
            Err(Error::EmptyRestriction)
        ));
    }
}
