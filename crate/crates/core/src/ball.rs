//! Word balls `B_Γ(n)` enumerated breadth-first over reduced words, with
//! elements identified by a functional fingerprint (images of fixed probes).

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circle::{circle_dist, CircleMap};
use crate::error::{Error, Result};
use crate::group::{GeneratingSystem, Word};

pub const DEFAULT_MAX_BALL_SIZE: usize = 5_000_000;

/// How elements are compared: `k` probe points from a seeded golden-ratio
/// sequence, equal when every probe image agrees within `tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerprintSpec {
    pub seed: u64,
    pub k: usize,
    pub tolerance: f64,
}

impl Default for FingerprintSpec {
    fn default() -> Self {
        FingerprintSpec {
            seed: 1729,
            k: 64,
            tolerance: 1e-8,
        }
    }
}

impl FingerprintSpec {
    pub fn probes(&self) -> Vec<f64> {
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let offset: f64 = ChaCha8Rng::seed_from_u64(self.seed).gen();
        (0..self.k).map(|i| (offset + i as f64 * golden).fract()).collect()
    }

    pub fn describe(&self) -> String {
        format!("seed={};k={};tol={:e}", self.seed, self.k, self.tolerance)
    }

    pub fn same(&self, a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(&x, &y)| circle_dist(x, y) <= self.tolerance)
    }

    /// Scalar key, Lipschitz with constant `2π` in each probe coordinate.
    fn key(&self, fp: &[f64]) -> f64 {
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        fp.iter()
            .enumerate()
            .map(|(i, &t)| (2.0 * PI * (t + i as f64 * golden)).sin())
            .sum()
    }

    fn bucket_width(&self) -> f64 {
        (5.0 * PI * self.k as f64 * self.tolerance).max(1e-12)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BallElement {
    /// Shortest representative found (first in canonical order).
    pub word: Word,
    pub fingerprint: Vec<f64>,
    pub norm: usize,
    /// Element whose word is `word` minus its last letter.
    pub parent: Option<usize>,
}

/// A candidate merged into an existing element: a relation in the group, or
/// a false merge at the fingerprint resolution.
#[derive(Debug, Clone, Serialize)]
pub struct Collision {
    pub depth: usize,
    pub word: Word,
    pub existing: usize,
}

const COLLISION_LOG_CAP: usize = 256;

#[derive(Debug, Clone)]
pub struct Ball {
    system: GeneratingSystem,
    spec: FingerprintSpec,
    probes: Vec<f64>,
    cap: usize,
    elements: Vec<BallElement>,
    /// `layer_end[n]` is the number of elements of norm `≤ n`.
    layer_end: Vec<usize>,
    index: HashMap<i64, Vec<usize>>,
    collisions: Vec<Collision>,
    collision_count: usize,
}

impl Ball {
    /// The ball of radius 0: just the identity.
    pub fn new(system: &GeneratingSystem, spec: FingerprintSpec, cap: usize) -> Self {
        let probes = spec.probes();
        let mut ball = Ball {
            system: system.clone(),
            spec,
            probes: probes.clone(),
            cap,
            elements: Vec::new(),
            layer_end: Vec::new(),
            index: HashMap::new(),
            collisions: Vec::new(),
            collision_count: 0,
        };
        ball.insert(BallElement {
            word: Word::identity(),
            fingerprint: probes,
            norm: 0,
            parent: None,
        });
        ball.layer_end.push(1);
        ball
    }

    /// Enumerate `B_Γ(n)`.
    pub fn enumerate(system: &GeneratingSystem, n: usize, spec: FingerprintSpec, cap: usize) -> Result<Self> {
        let mut ball = Ball::new(system, spec, cap);
        ball.extend_to(n)?;
        Ok(ball)
    }

    /// Grow the ball until its radius is at least `n`.
    pub fn extend_to(&mut self, n: usize) -> Result<()> {
        while self.radius() < n {
            self.extend_one()?;
        }
        Ok(())
    }

    fn extend_one(&mut self) -> Result<()> {
        let depth = self.radius() + 1;
        let frontier = self.layer(depth - 1);
        let system = &self.system;
        let elements = &self.elements;
        // Children in canonical order: parents in (norm, word) order, then
        // letters in index order.
        let children: Vec<(usize, usize, Vec<f64>)> = frontier
            .into_par_iter()
            .flat_map_iter(|p| {
                let parent = &elements[p];
                let last = parent.word.letters().last().copied();
                (0..system.len())
                    .filter(move |&l| last.is_none_or(|x| system.inverse_of(x) != l))
                    .map(move |l| {
                        let map = &system.generator(l).map;
                        let fp = parent.fingerprint.iter().map(|&t| map.eval(t)).collect();
                        (p, l, fp)
                    })
            })
            .collect();
        for (p, l, fp) in children {
            if let Some(existing) = self.lookup(&fp) {
                self.collision_count += 1;
                if self.collisions.len() < COLLISION_LOG_CAP {
                    let mut word = self.elements[p].word.clone();
                    word = Word::letter(l).after(&word);
                    self.collisions.push(Collision { depth, word, existing });
                }
                continue;
            }
            let word = Word::letter(l).after(&self.elements[p].word);
            self.insert(BallElement {
                word,
                fingerprint: fp,
                norm: depth,
                parent: Some(p),
            });
            if self.elements.len() > self.cap {
                return Err(Error::ResourceLimit {
                    depth,
                    size: self.elements.len(),
                    cap: self.cap,
                });
            }
        }
        self.layer_end.push(self.elements.len());
        Ok(())
    }

    fn bucket(&self, fp: &[f64]) -> i64 {
        (self.spec.key(fp) / self.spec.bucket_width()).floor() as i64
    }

    fn insert(&mut self, e: BallElement) {
        let b = self.bucket(&e.fingerprint);
        self.index.entry(b).or_default().push(self.elements.len());
        self.elements.push(e);
    }

    /// Element with a matching fingerprint, if any.
    pub fn lookup(&self, fp: &[f64]) -> Option<usize> {
        let b = self.bucket(fp);
        (b - 1..=b + 1)
            .filter_map(|k| self.index.get(&k))
            .flat_map(|v| v.iter().copied())
            .filter(|&i| self.spec.same(&self.elements[i].fingerprint, fp))
            .min()
    }

    pub fn fingerprint_of(&self, word: &Word) -> Vec<f64> {
        let m = self.system.word_map(word);
        self.probes.iter().map(|&t| m.eval(t)).collect()
    }

    /// Index of the element represented by `word`, if it lies in the ball.
    pub fn find(&self, word: &Word) -> Option<usize> {
        self.lookup(&self.fingerprint_of(word))
    }

    /// `‖word‖` if at most the current radius.
    pub fn norm_of(&self, word: &Word) -> Option<usize> {
        self.find(word).map(|i| self.elements[i].norm)
    }

    pub fn inverse_index(&self, i: usize) -> Option<usize> {
        self.find(&self.elements[i].word.inverse(&self.system))
    }

    pub fn is_identity(&self, i: usize) -> bool {
        i == 0
    }

    pub fn radius(&self) -> usize {
        self.layer_end.len() - 1
    }

    /// `#B_Γ(n)` for `n ≤ radius`.
    pub fn size_at(&self, n: usize) -> usize {
        self.layer_end[n.min(self.radius())]
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Index range of elements of norm exactly `n`.
    pub fn layer(&self, n: usize) -> std::ops::Range<usize> {
        let start = if n == 0 { 0 } else { self.layer_end[n - 1] };
        start..self.layer_end[n]
    }

    pub fn elements(&self) -> &[BallElement] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &BallElement {
        &self.elements[i]
    }

    pub fn system(&self) -> &GeneratingSystem {
        &self.system
    }

    pub fn spec(&self) -> &FingerprintSpec {
        &self.spec
    }

    pub fn probes(&self) -> &[f64] {
        &self.probes
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn collision_count(&self) -> usize {
        self.collision_count
    }

    pub fn collisions(&self) -> &[Collision] {
        &self.collisions
    }

    /// Image of `t` under element `i`.
    pub fn apply(&self, i: usize, t: f64) -> f64 {
        self.system.word_map(&self.elements[i].word).eval(t)
    }

    /// Whether the ball up to radius `n` has the size of the free group on
    /// its generator pairs, i.e. no relation was observed.
    pub fn collision_free_at(&self, n: usize) -> bool {
        self.size_at(n) as u128 == free_ball_count(self.system.pairs(), n)
    }

    /// CSV dump with columns `norm,word,fingerprint_hash`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("norm,word,fingerprint_hash\n");
        for e in &self.elements {
            out.push_str(&format!(
                "{},{},{}\n",
                e.norm,
                self.system.format_word(&e.word),
                fingerprint_hash(&e.fingerprint, self.spec.tolerance)
            ));
        }
        out
    }
}

/// Hash of a fingerprint quantized at 100× the dedup tolerance.
pub fn fingerprint_hash(fp: &[f64], tolerance: f64) -> String {
    let q = (tolerance * 100.0).max(f64::MIN_POSITIVE);
    let mut h = Sha256::new();
    for &t in fp {
        h.update(((t / q).round() as i64).to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// `1 + Σ_{j=1}^{n} 2p(2p−1)^{j−1}`: reduced words of length `≤ n` on `p` pairs.
pub fn free_ball_count(p: usize, n: usize) -> u128 {
    let p = p as u128;
    let mut total: u128 = 1;
    let mut layer: u128 = 2 * p;
    for _ in 0..n {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul((2 * p).saturating_sub(1));
    }
    total
}

/// Closed form of [`free_ball_count`]: `1 + (p/(p−1))((2p−1)^n − 1)` for
/// `p ≥ 2`, `1 + 2n` for `p = 1`.
pub fn free_ball_closed_form(p: usize, n: usize) -> f64 {
    match p {
        0 => 1.0,
        1 => 1.0 + 2.0 * n as f64,
        _ => {
            let p = p as f64;
            1.0 + (p / (p - 1.0)) * ((2.0 * p - 1.0).powi(n as i32) - 1.0)
        }
    }
}

/// `‖word‖` searched up to `n_max`; `None` when it exceeds `n_max`.
pub fn word_norm(
    system: &GeneratingSystem,
    word: &Word,
    n_max: usize,
    spec: FingerprintSpec,
    cap: usize,
) -> Result<Option<usize>> {
    let mut ball = Ball::new(system, spec, cap);
    let fp = ball.fingerprint_of(word);
    loop {
        if let Some(i) = ball.lookup(&fp) {
            return Ok(Some(ball.elements[i].norm));
        }
        if ball.radius() >= n_max.min(word.len()) {
            return Ok(None);
        }
        ball.extend_one()?;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthRate {
    /// `(n, log(#B(n))/n)` for `n = 1..=n_max`.
    pub rows: Vec<(usize, f64)>,
    pub estimate: f64,
}

pub fn growth_rate(ball: &Ball, n_max: usize) -> Result<GrowthRate> {
    if n_max < 1 {
        return Err(Error::Config("growth rate needs n_max ≥ 1".into()));
    }
    let rows: Vec<(usize, f64)> = (1..=n_max.min(ball.radius()))
        .map(|n| (n, (ball.size_at(n) as f64).ln() / n as f64))
        .collect();
    let estimate = rows.last().map_or(0.0, |r| r.1);
    Ok(GrowthRate { rows, estimate })
}

/// `‖h^r‖` for `r = 1..=r_max` and the least non-decreasing staircase
/// `q̂` with `q̂(‖h^r‖) ≥ r` on the computed range.
#[derive(Debug, Clone, Serialize)]
pub struct DistortionProfile {
    /// `(r, ‖h^r‖)`; `None` marks a censored entry (norm beyond the ball).
    pub rows: Vec<(usize, Option<usize>)>,
    /// `staircase[m] = q̂(m)` for `m = 0..=n_max`.
    pub staircase: Vec<usize>,
}

impl DistortionProfile {
    pub fn q_hat(&self, m: usize) -> Result<usize> {
        self.staircase.get(m).copied().ok_or(Error::Censored {
            needed: m,
            available: self.staircase.len().saturating_sub(1),
        })
    }

    /// Pointwise maximum; the staircase for a family of elements.
    pub fn combine(profiles: &[DistortionProfile]) -> Option<Vec<usize>> {
        let len = profiles.iter().map(|p| p.staircase.len()).min()?;
        Some(
            (0..len)
                .map(|m| profiles.iter().map(|p| p.staircase[m]).max().unwrap_or(0))
                .collect(),
        )
    }

    /// The undistorted staircase `q̂(m) = m`.
    pub fn linear(n_max: usize) -> Vec<usize> {
        (0..=n_max).collect()
    }
}

pub fn distortion_profile(ball: &Ball, h: &Word, r_max: usize) -> Result<DistortionProfile> {
    if ball.find(h) == Some(0) {
        return Err(Error::Config("distortion profile of the identity".into()));
    }
    let n_max = ball.radius();
    let system = ball.system();
    let mut rows = Vec::with_capacity(r_max);
    let mut staircase = vec![0usize; n_max + 1];
    for r in 1..=r_max {
        let norm = ball.norm_of(&h.pow(r as i64, system).reduced(system));
        if let Some(m) = norm {
            for q in &mut staircase[m..] {
                *q = (*q).max(r);
            }
        }
        rows.push((r, norm));
    }
    Ok(DistortionProfile { rows, staircase })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::PrimitiveMap;

    fn rotation_pair(alpha: f64) -> GeneratingSystem {
        GeneratingSystem::from_pairs(&[("a", "A", PrimitiveMap::rotation(alpha))]).unwrap()
    }

    fn spec() -> FingerprintSpec {
        FingerprintSpec::default()
    }

    #[test]
    fn radius_zero_is_identity() {
        let b = Ball::enumerate(&rotation_pair(0.1), 0, spec(), 100).unwrap();
        assert_eq!(b.len(), 1);
        assert!(b.element(0).word.is_empty());
    }

    #[test]
    fn irrational_rotation_ball() {
        // brute force: R_{kα} for |k| ≤ 5 compared pairwise
        let alpha = 2f64.sqrt() / 10.0;
        let mut distinct: Vec<f64> = Vec::new();
        for k in -5i32..=5 {
            let v = (k as f64 * alpha).rem_euclid(1.0);
            if distinct.iter().all(|&d| circle_dist(d, v) > 1e-8) {
                distinct.push(v);
            }
        }
        let b = Ball::enumerate(&rotation_pair(alpha), 5, spec(), 1000).unwrap();
        assert_eq!(b.len(), distinct.len());
        assert_eq!(b.len(), 11);
    }

    #[test]
    fn trivial_group_collapses() {
        let g = rotation_pair(0.0);
        let b = Ball::enumerate(&g, 4, spec(), 1000).unwrap();
        assert_eq!(b.len(), 1);
        assert!(b.collision_count() > 0);
        let gr = growth_rate(&b, 4).unwrap();
        assert!(gr.rows.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn resource_limit_names_depth() {
        let g = GeneratingSystem::from_pairs(&[
            ("a", "A", PrimitiveMap::hyperbolic(3.0).unwrap()),
            ("b", "B", PrimitiveMap::mobius(1.5, 1.0, 1.0, 4.0 / 3.0).unwrap()),
        ])
        .unwrap();
        match Ball::enumerate(&g, 6, spec(), 50) {
            Err(Error::ResourceLimit { depth, .. }) => assert_eq!(depth, 3),
            other => panic!("expected resource limit, got {other:?}"),
        }
    }

    #[test]
    fn free_counts() {
        assert_eq!(free_ball_count(2, 3), 53);
        assert_eq!(free_ball_count(1, 7), 15);
        for p in 1..4 {
            for n in 0..8 {
                assert!((free_ball_count(p, n) as f64 - free_ball_closed_form(p, n)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cyclic_norms_and_profile() {
        let g = rotation_pair(2f64.sqrt() / 1000.0);
        let b = Ball::enumerate(&g, 12, spec(), 1000).unwrap();
        let a = g.parse_word("a").unwrap();
        assert_eq!(b.norm_of(&Word::identity()), Some(0));
        assert_eq!(b.norm_of(&a), Some(1));
        let p = distortion_profile(&b, &a, 15).unwrap();
        for &(r, n) in &p.rows {
            assert_eq!(n, if r <= 12 { Some(r) } else { None });
        }
        assert_eq!(p.staircase, DistortionProfile::linear(12));
        assert!(p.q_hat(13).is_err());
        assert_eq!(word_norm(&g, &a.pow(3, &g), 10, spec(), 1000).unwrap(), Some(3));
        assert_eq!(word_norm(&g, &a.pow(11, &g), 10, spec(), 1000).unwrap(), None);
    }
}
