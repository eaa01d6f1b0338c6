//! Outer approximation of the non-wandering set on a grid, the gaps of its
//! complement, and their type-1 / type-2 classification.
//!
//! A grid point `x` is certified wandering when no non-identity element of
//! `B(N)` makes `]x − δ, x + δ[` meet itself. Everything not certified is
//! kept. Deepening `N` can only add kept points, since more elements must
//! be ruled out; refining `δ` dyadically can only remove them.

use rayon::prelude::*;
use serde::Serialize;

use crate::ball::Ball;
use crate::circle::{circle_dist, forward_gap, reduce, Arc, CircleMap};
use crate::error::{Error, Result};
use crate::group::{GeneratingSystem, Word};

/// A closed arc `[left, left + length]`; `length = 1` is the whole circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedArc {
    pub left: f64,
    pub length: f64,
}

impl ClosedArc {
    pub fn contains(&self, t: f64) -> bool {
        self.length >= 1.0 || forward_gap(self.left, t) <= self.length
    }

    pub fn right(&self) -> f64 {
        reduce(self.left + self.length)
    }

    pub fn midpoint(&self) -> f64 {
        reduce(self.left + self.length / 2.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NonWanderingApprox {
    pub depth: usize,
    pub delta: f64,
    /// Grid points `j/G` with `G = ⌈1/δ⌉`.
    pub grid: Vec<f64>,
    /// `true` where the grid point was not certified wandering.
    pub kept: Vec<bool>,
    /// Pairwise disjoint arcs in increasing order of their left endpoint.
    pub arcs: Vec<ClosedArc>,
    pub ball_ref: String,
}

impl NonWanderingApprox {
    pub fn is_full(&self) -> bool {
        self.kept.iter().all(|&k| k)
    }

    pub fn is_empty(&self) -> bool {
        !self.kept.iter().any(|&k| k)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.arcs.iter().any(|a| a.contains(t))
    }

    pub fn total_length(&self) -> f64 {
        self.arcs.iter().map(|a| a.length).sum::<f64>().min(1.0)
    }

    /// Kept grid points, in increasing order.
    pub fn kept_points(&self) -> Vec<f64> {
        self.grid
            .iter()
            .zip(&self.kept)
            .filter(|(_, &k)| k)
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("left,length\n");
        for a in &self.arcs {
            out.push_str(&format!("{},{}\n", a.left, a.length));
        }
        out
    }
}

fn certified_wandering(ball: &Ball, depth: usize, x: f64, delta: f64) -> bool {
    let u = Arc::new(x - delta, 2.0 * delta).expect("δ < 1/2");
    let system = ball.system();
    // endpoint images, each from its parent's by the last letter
    let n = ball.size_at(depth);
    let mut images = Vec::with_capacity(n);
    images.push((x - delta, x + delta));
    for i in 1..n {
        let e = ball.element(i);
        let (l, r) = images[e.parent.expect("non-identity element has a parent")];
        let g = &system.generator(*e.word.letters().last().expect("non-empty word")).map;
        let (l, r) = (g.eval(l), g.eval(r));
        match Arc::between(l, r) {
            Ok(img) if !img.intersects(&u) => images.push((l, r)),
            // image meets U, or wraps to (numerically) the whole circle or a point
            _ => return false,
        }
    }
    true
}

pub fn approximate_nonwandering(ball: &Ball, depth: usize, delta: f64) -> Result<NonWanderingApprox> {
    if depth < 1 || !(delta > 0.0 && delta < 0.25) {
        return Err(Error::Config(format!(
            "non-wandering approximation needs N ≥ 1 and 0 < δ < 1/4 (N = {depth}, δ = {delta})"
        )));
    }
    if ball.radius() < depth {
        return Err(Error::Config(format!(
            "ball radius {} below N = {depth}",
            ball.radius()
        )));
    }
    let g = (1.0 / delta - 1e-9).ceil() as usize;
    let grid: Vec<f64> = (0..g).map(|j| j as f64 / g as f64).collect();
    let kept: Vec<bool> = grid
        .par_iter()
        .map(|&x| !certified_wandering(ball, depth, x, delta))
        .collect();
    let arcs = coalesce(&kept, g);
    Ok(NonWanderingApprox {
        depth,
        delta,
        grid,
        kept,
        arcs,
        ball_ref: ball.spec().describe(),
    })
}

/// Union of `[x − 1/(2G), x + 1/(2G)]` over kept grid points, as maximal
/// cyclic runs.
fn coalesce(kept: &[bool], g: usize) -> Vec<ClosedArc> {
    if kept.iter().all(|&k| k) {
        return vec![ClosedArc { left: 0.0, length: 1.0 }];
    }
    let h = 1.0 / g as f64;
    // start scanning just after a wandering point so no run is split
    let first_gap = kept.iter().position(|&k| !k).expect("not all kept");
    let mut arcs = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    for s in 1..=g {
        let j = (first_gap + s) % g;
        match (kept[j], run) {
            (true, None) => run = Some((j, 1)),
            (true, Some((st, len))) => run = Some((st, len + 1)),
            (false, Some((st, len))) => {
                arcs.push(ClosedArc {
                    left: reduce(st as f64 * h - h / 2.0),
                    length: len as f64 * h,
                });
                run = None;
            }
            (false, None) => {}
        }
    }
    arcs.sort_by(|a, b| a.left.total_cmp(&b.left));
    arcs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GapKind {
    /// No non-identity element of the searched ball fixes the gap.
    Type1,
    /// Fixed by a non-identity element (stabilizer infinite cyclic).
    Type2,
    Undetermined,
}

impl GapKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GapKind::Type1 => "type1",
            GapKind::Type2 => "type2",
            GapKind::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapComponent {
    pub arc: Arc,
    pub kind: GapKind,
    /// Ball index of the stabilizer generator `h`, oriented so `h(x) > x`.
    pub stabilizer: Option<usize>,
    pub stabilizer_word: Option<Word>,
    /// Radius of the ball searched for a stabilizer.
    pub search_depth: Option<usize>,
    /// Length at least `ε`.
    pub k_flag: bool,
}

/// Complementary arcs of the approximation, flagged when at least `ε` long.
pub fn gap_components(approx: &NonWanderingApprox, epsilon: f64) -> Result<Vec<GapComponent>> {
    if approx.is_full() {
        return Ok(Vec::new());
    }
    if approx.is_empty() {
        return Err(Error::Inconsistency(format!(
            "every grid point certified wandering at N = {}; deepen N",
            approx.depth
        )));
    }
    let m = approx.arcs.len();
    let mut gaps = Vec::with_capacity(m);
    for i in 0..m {
        let left = approx.arcs[i].right();
        let right = approx.arcs[(i + 1) % m].left;
        let arc = Arc::between(left, right)?;
        gaps.push(GapComponent {
            arc,
            kind: GapKind::Undetermined,
            stabilizer: None,
            stabilizer_word: None,
            search_depth: None,
            k_flag: arc.length() >= epsilon,
        });
    }
    gaps.sort_by(|a, b| a.arc.left().total_cmp(&b.arc.left()));
    Ok(gaps)
}

/// Endpoint tolerance for matching a gap: `τ_fix`, tightened for short gaps.
pub fn match_tolerance(gap: &Arc, tau_fix: f64) -> f64 {
    tau_fix.min(gap.length() / 4.0)
}

/// Whether `image` coincides with `gap` up to the matching tolerance.
pub fn arcs_match(image: &Arc, gap: &Arc, tau_fix: f64) -> bool {
    let tol = match_tolerance(gap, tau_fix);
    circle_dist(image.left(), gap.left()) <= tol
        && circle_dist(image.right(), gap.right()) <= tol
        && (image.length() - gap.length()).abs() <= 2.0 * tol
}

/// Index of the gap matched by `image`, preferring the closest endpoints.
pub fn match_gap(gaps: &[GapComponent], image: &Arc, tau_fix: f64) -> Option<usize> {
    gaps.iter()
        .enumerate()
        .filter(|(_, g)| arcs_match(image, &g.arc, tau_fix))
        .min_by(|(_, a), (_, b)| {
            let da = circle_dist(image.left(), a.arc.left()) + circle_dist(image.right(), a.arc.right());
            let db = circle_dist(image.left(), b.arc.left()) + circle_dist(image.right(), b.arc.right());
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
}

const INTERIOR_SAMPLES: usize = 64;

/// Signed forward displacement of the interior samples of `gap` under `map`.
fn interior_displacements<M: CircleMap>(gap: &Arc, map: &M) -> Vec<f64> {
    (0..INTERIOR_SAMPLES)
        .map(|k| {
            let off = gap.length() * (k as f64 + 0.5) / INTERIOR_SAMPLES as f64;
            let x = reduce(gap.left() + off);
            let y = map.eval(x);
            let d = reduce(y - x);
            if d > 0.5 {
                d - 1.0
            } else {
                d
            }
        })
        .collect()
}

/// Search `B(depth)` for the least-norm non-identity element fixing the gap.
pub fn classify_component(gap: &GapComponent, ball: &Ball, depth: usize, tau_fix: f64) -> Result<GapComponent> {
    let depth = depth.min(ball.radius());
    let mut out = gap.clone();
    out.search_depth = Some(depth);
    let system = ball.system();
    let found = (1..ball.size_at(depth)).find(|&i| {
        gap.arc
            .image(&system.word_map(&ball.element(i).word))
            .map(|img| arcs_match(&img, &gap.arc, tau_fix))
            .unwrap_or(false)
    });
    let Some(i) = found else {
        out.kind = GapKind::Type1;
        out.stabilizer = None;
        out.stabilizer_word = None;
        return Ok(out);
    };
    let disp = interior_displacements(&gap.arc, &system.word_map(&ball.element(i).word));
    let forward = disp.iter().all(|&d| d > 0.0);
    let backward = disp.iter().all(|&d| d < 0.0);
    if !forward && !backward {
        return Err(Error::Inconsistency(format!(
            "element {} fixes gap at {:.6} setwise but has an interior fixed point",
            system.format_word(&ball.element(i).word),
            gap.arc.left()
        )));
    }
    let h = if forward {
        i
    } else {
        ball.inverse_index(i)
            .ok_or_else(|| Error::Inconsistency("inverse of a ball element missing from the ball".into()))?
    };
    out.kind = GapKind::Type2;
    out.stabilizer = Some(h);
    out.stabilizer_word = Some(ball.element(h).word.clone());
    Ok(out)
}

pub fn classify_all(gaps: &[GapComponent], ball: &Ball, depth: usize, tau_fix: f64) -> Result<Vec<GapComponent>> {
    gaps.par_iter()
        .map(|g| classify_component(g, ball, depth, tau_fix))
        .collect()
}

/// One row per gap and scale: `epsilon,left,length,kind,stabilizer_word,k_flag`.
pub fn gaps_to_csv(per_scale: &[(f64, Vec<GapComponent>)], system: &GeneratingSystem) -> String {
    let mut out = String::from("epsilon,left,length,kind,stabilizer_word,k_flag\n");
    for (eps, gaps) in per_scale {
        for g in gaps {
            let w = g
                .stabilizer_word
                .as_ref()
                .map(|w| system.format_word(w))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                eps,
                g.arc.left(),
                g.arc.length(),
                g.kind.as_str(),
                w,
                g.k_flag
            ));
        }
    }
    out
}

/// The gaps with `k_flag` recomputed for another scale.
pub fn with_scale(gaps: &[GapComponent], epsilon: f64) -> Vec<GapComponent> {
    gaps.iter()
        .map(|g| GapComponent {
            k_flag: g.arc.length() >= epsilon,
            ..g.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StructureCheck {
    pub instances_checked: usize,
    pub violations: Vec<String>,
}

/// Type invariance along the ball: whenever `f(I)` is again a gap `J`, a
/// type-2 stabilizer `h` of `I` conjugates to `f h f⁻¹` fixing `J`, and a
/// type-2 stabilizer of `J` pulls back to one fixing `I`.
pub fn check_type_invariance(gaps: &[GapComponent], ball: &Ball, depth: usize, tau_fix: f64) -> StructureCheck {
    let system = ball.system();
    let mut check = StructureCheck::default();
    for gi in gaps.iter().filter(|g| g.kind != GapKind::Undetermined) {
        for f in 0..ball.size_at(depth.min(ball.radius())) {
            let fw = &ball.element(f).word;
            let Ok(img) = gi.arc.image(&system.word_map(fw)) else {
                continue;
            };
            let Some(j) = match_gap(gaps, &img, tau_fix) else {
                continue;
            };
            let gj = &gaps[j];
            check.instances_checked += 1;
            let conj_fixes = |h: &Word, gap: &Arc, outer: &Word| {
                let c = outer.after(h).after(&outer.inverse(system));
                gap.image(&system.word_map(&c))
                    .map(|x| arcs_match(&x, gap, tau_fix))
                    .unwrap_or(false)
            };
            if let Some(h) = &gi.stabilizer_word {
                if !conj_fixes(h, &gj.arc, fw) {
                    check.violations.push(format!(
                        "f = {}: conjugate of stabilizer of gap {:.6} does not fix its image",
                        system.format_word(fw),
                        gi.arc.left()
                    ));
                }
            }
            if let Some(hj) = &gj.stabilizer_word {
                if !conj_fixes(hj, &gi.arc, &fw.inverse(system)) {
                    check.violations.push(format!(
                        "f = {}: stabilizer of image gap {:.6} does not pull back",
                        system.format_word(fw),
                        gj.arc.left()
                    ));
                }
            }
        }
    }
    check
}

/// For type-1 gaps `I`, `J`: at most one element of `B(depth / 2)` maps `I`
/// onto `J`. Two such elements `f ≠ g` would give the stabilizer `g⁻¹f` in
/// `B(depth)`, contradicting a type-1 classification at `depth`.
pub fn check_type1_uniqueness(gaps: &[GapComponent], ball: &Ball, depth: usize, tau_fix: f64) -> StructureCheck {
    let system = ball.system();
    let type1: Vec<usize> = (0..gaps.len()).filter(|&i| gaps[i].kind == GapKind::Type1).collect();
    let mut check = StructureCheck::default();
    for &i in &type1 {
        let mut hits = vec![0usize; gaps.len()];
        for f in 0..ball.size_at((depth / 2).min(ball.radius())) {
            let Ok(img) = gaps[i].arc.image(&system.word_map(&ball.element(f).word)) else {
                continue;
            };
            if let Some(j) = match_gap(gaps, &img, tau_fix) {
                if gaps[j].kind == GapKind::Type1 {
                    hits[j] += 1;
                }
            }
        }
        for &j in &type1 {
            check.instances_checked += 1;
            if hits[j] > 1 {
                check.violations.push(format!(
                    "{} elements map type-1 gap {:.6} onto gap {:.6}",
                    hits[j],
                    gaps[i].arc.left(),
                    gaps[j].arc.left()
                ));
            }
        }
    }
    check
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::FingerprintSpec;
    use crate::circle::PrimitiveMap;
    use crate::group::GeneratingSystem;

    fn ball_of(map: PrimitiveMap, n: usize) -> Ball {
        let g = GeneratingSystem::from_pairs(&[("g", "G", map)]).unwrap();
        Ball::enumerate(&g, n, FingerprintSpec::default(), 100_000).unwrap()
    }

    #[test]
    fn small_rotation_is_nonwandering_everywhere() {
        let b = ball_of(PrimitiveMap::rotation(2f64.sqrt() / 1000.0), 6);
        let a = approximate_nonwandering(&b, 6, 1e-3).unwrap();
        assert!(a.is_full());
        assert!(gap_components(&a, 0.01).unwrap().is_empty());
    }

    #[test]
    fn hyperbolic_has_two_thin_arcs_and_two_stabilized_gaps() {
        let b = ball_of(PrimitiveMap::hyperbolic(2f64.sqrt()).unwrap(), 6);
        let delta = 1e-3;
        let a = approximate_nonwandering(&b, 6, delta).unwrap();
        assert_eq!(a.arcs.len(), 2);
        for arc in &a.arcs {
            assert!(arc.length <= 10.0 * delta);
            assert!(arc.contains(0.0) || arc.contains(0.5));
        }
        let gaps = gap_components(&a, 0.05).unwrap();
        assert_eq!(gaps.len(), 2);
        assert!(gaps.iter().all(|g| g.k_flag));
        let classified = classify_all(&gaps, &b, 6, 10.0 * delta).unwrap();
        for g in &classified {
            assert_eq!(g.kind, GapKind::Type2);
            let w = g.stabilizer_word.as_ref().unwrap();
            assert_eq!(w.len(), 1);
            // h moves the midpoint forward
            let m = g.arc.midpoint();
            let hm = b.system().word_map(w).eval(m);
            assert!(g.arc.offset(hm) > g.arc.offset(m));
        }
        let inv = check_type_invariance(&classified, &b, 6, 10.0 * delta);
        assert!(inv.instances_checked > 0 && inv.violations.is_empty());
    }

    #[test]
    fn deeper_balls_never_shrink_the_approximation() {
        let b = ball_of(PrimitiveMap::hyperbolic(1.3).unwrap(), 8);
        let mut prev: Option<Vec<bool>> = None;
        for n in 1..=8 {
            let a = approximate_nonwandering(&b, n, 2e-3).unwrap();
            if let Some(p) = &prev {
                assert!(a.kept.iter().zip(p).all(|(&now, &before)| now || !before));
            }
            prev = Some(a.kept);
        }
    }

    #[test]
    fn parent_chain_matches_word_evaluation() {
        let b = ball_of(PrimitiveMap::hyperbolic(1.3).unwrap(), 6);
        for j in 0..200 {
            let x = j as f64 / 200.0;
            let direct = (1..b.size_at(6)).all(|i| {
                let u = Arc::new(x - 2e-3, 4e-3).unwrap();
                Arc::between(b.apply(i, x - 2e-3), b.apply(i, x + 2e-3)).is_ok_and(|img| !img.intersects(&u))
            });
            assert_eq!(certified_wandering(&b, 6, x, 2e-3), direct, "x = {x}");
        }
    }

    #[test]
    fn dyadic_refinement_never_grows_the_approximation() {
        let b = ball_of(PrimitiveMap::hyperbolic(1.3).unwrap(), 5);
        let coarse = approximate_nonwandering(&b, 5, 1.0 / 256.0).unwrap();
        let fine = approximate_nonwandering(&b, 5, 1.0 / 512.0).unwrap();
        for t in fine.kept_points() {
            assert!(coarse.contains(t), "t = {t}");
        }
        assert!(fine.total_length() <= coarse.total_length() + 1e-12);
    }

    #[test]
    fn full_circle_and_empty_edge_cases() {
        let full = NonWanderingApprox {
            depth: 1,
            delta: 0.25,
            grid: vec![0.0, 0.5],
            kept: vec![true, true],
            arcs: coalesce(&[true, true], 2),
            ball_ref: String::new(),
        };
        assert!(gap_components(&full, 0.1).unwrap().is_empty());
        let empty = NonWanderingApprox {
            kept: vec![false, false],
            arcs: vec![],
            ..full
        };
        assert!(gap_components(&empty, 0.1).is_err());
    }

    #[test]
    fn coalesce_wraps_around_zero() {
        let kept = [true, false, false, true];
        let arcs = coalesce(&kept, 4);
        assert_eq!(arcs.len(), 1);
        assert!((arcs[0].length - 0.5).abs() < 1e-15);
        assert!(arcs[0].contains(0.0) && arcs[0].contains(0.75));
        assert!(!arcs[0].contains(0.5));
    }
}
