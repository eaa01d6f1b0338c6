//! Fundamental-domain counting `ℓ_I` on type-2 gaps and the bounds built on
//! it: the family sup `ℓ_ε`, `c_ε`, the distortion box and its effective
//! `L(V)`, the orbit ceiling, the linear and distortion-driven counting
//! bounds, and `p_ε(n)`.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::ball::Ball;
use crate::circle::{forward_gap, full_circle_variation, log_derivative_variation, reduce, Arc, CircleMap};
use crate::error::{Error, Result};
use crate::group::{GeneratingSystem, Word};
use crate::separation::{is_separated, propagate, short_arc, SeparatedSet};
use crate::wandering::{GapComponent, GapKind, NonWanderingApprox};

pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Ties in the fundamental-domain order are resolved within this distance.
pub const ORDER_TOLERANCE: f64 = 1e-9;
/// Relative slack on the distortion-box containment.
pub const BOX_SLACK: f64 = 1e-6;

/// Position of `x` along `arc`, continued a little past both endpoints.
fn lift(arc: &Arc, x: f64) -> f64 {
    let o = forward_gap(arc.left(), x);
    if o > (arc.length() + 1.0) / 2.0 {
        o - 1.0
    } else {
        o
    }
}

/// A type-2 gap with its midpoint and forward-moving stabilizer word.
#[derive(Debug, Clone, Serialize)]
pub struct EllContext {
    pub gap: usize,
    pub arc: Arc,
    pub p: f64,
    pub h: Word,
    pub max_iter: usize,
}

/// Signed count `r` and the gap index of `f(I)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EllValue {
    pub r: i64,
    pub image_gap: usize,
}

impl EllValue {
    pub fn ell(&self) -> usize {
        self.r.unsigned_abs() as usize
    }
}

/// The gap `J` with `f⁻¹(p_J)` inside `source`, i.e. `f(source) ⊂ J`.
pub fn image_gap(gaps: &[GapComponent], source: &Arc, f: &Word, system: &GeneratingSystem) -> Option<usize> {
    let inv = f.inverse(system);
    let map = system.word_map(&inv);
    gaps.iter().position(|g| {
        let o = lift(source, map.eval(g.arc.midpoint()));
        o > 0.0 && o < source.length()
    })
}

impl EllContext {
    pub fn new(gaps: &[GapComponent], gap: usize, max_iter: usize) -> Result<Self> {
        let g = gaps
            .get(gap)
            .ok_or_else(|| Error::Config(format!("no gap with index {gap}")))?;
        match (&g.kind, &g.stabilizer_word) {
            (GapKind::Type2, Some(h)) => Ok(EllContext {
                gap,
                arc: g.arc,
                p: g.arc.midpoint(),
                h: h.clone(),
                max_iter,
            }),
            _ => Err(Error::NotApplicable(format!(
                "gap at {:.6} is not a classified type-2 gap",
                g.arc.left()
            ))),
        }
    }

    /// Context on `f(I) = J` with stabilizer `f h f⁻¹`.
    pub fn conjugate(&self, f: &Word, target: usize, gaps: &[GapComponent], system: &GeneratingSystem) -> Self {
        let h = f.after(&self.h).after(&f.inverse(system)).reduced(system);
        EllContext {
            gap: target,
            arc: gaps[target].arc,
            p: gaps[target].arc.midpoint(),
            h,
            max_iter: self.max_iter,
        }
    }

    /// The integer `r` with `h^r(y) ≤ p < h^{r+1}(y)`.
    pub fn domain_index(&self, system: &GeneratingSystem, y: f64) -> Result<i64> {
        let fwd = system.word_map(&self.h);
        let h_inv = self.h.inverse(system);
        let bwd = system.word_map(&h_inv);
        let target = lift(&self.arc, self.p) + ORDER_TOLERANCE;
        let mut z = y;
        let mut r = 0i64;
        if lift(&self.arc, z) <= target {
            loop {
                let next = fwd.eval(z);
                if lift(&self.arc, next) > target {
                    return Ok(r);
                }
                z = next;
                r += 1;
                if r as usize > self.max_iter {
                    return Err(Error::UnboundedEll {
                        max_iter: self.max_iter,
                    });
                }
            }
        }
        while lift(&self.arc, z) > target {
            z = bwd.eval(z);
            r -= 1;
            if r.unsigned_abs() as usize > self.max_iter {
                return Err(Error::UnboundedEll {
                    max_iter: self.max_iter,
                });
            }
        }
        Ok(r)
    }

    /// Whether `y` lies in the gap, including the part of the true gap hidden
    /// in the adjacent approximation fringe: outside the approximate arc, `h`
    /// (near the left end) or `h⁻¹` (near the right end) must bring `y`
    /// strictly inward at every step until it enters.
    pub fn contains(&self, system: &GeneratingSystem, y: f64) -> bool {
        let len = self.arc.length();
        let mut o = lift(&self.arc, y);
        if o > 0.0 && o < len {
            return true;
        }
        let step_word = if o <= 0.0 {
            self.h.clone()
        } else {
            self.h.inverse(system)
        };
        let step = system.word_map(&step_word);
        let mut z = y;
        for _ in 0..self.max_iter {
            z = step.eval(z);
            let next = lift(&self.arc, z);
            let inward = if o <= 0.0 { next > o } else { next < o };
            if !inward {
                return false;
            }
            if next > 0.0 && next < len {
                return true;
            }
            o = next;
        }
        false
    }

    /// The gap `J` with `f⁻¹(p_J)` in this gap, using [`EllContext::contains`].
    pub fn image_gap(&self, gaps: &[GapComponent], system: &GeneratingSystem, f: &Word) -> Option<(usize, f64)> {
        let inv = f.inverse(system);
        let map = system.word_map(&inv);
        let ys: Vec<f64> = gaps.iter().map(|g| map.eval(g.arc.midpoint())).collect();
        ys.iter()
            .position(|&y| {
                let o = lift(&self.arc, y);
                o > 0.0 && o < self.arc.length()
            })
            .or_else(|| ys.iter().position(|&y| self.contains(system, y)))
            .map(|j| (j, ys[j]))
    }

    /// `ℓ_I(f)` with its sign; `None` when `f(I)` is not a resolved gap.
    pub fn ell_signed(&self, gaps: &[GapComponent], system: &GeneratingSystem, f: &Word) -> Result<Option<EllValue>> {
        let Some((j, y)) = self.image_gap(gaps, system, f) else {
            return Ok(None);
        };
        let r = self.domain_index(system, y)?;
        Ok(Some(EllValue { r, image_gap: j }))
    }

    pub fn ell(&self, gaps: &[GapComponent], system: &GeneratingSystem, f: &Word) -> Result<Option<usize>> {
        Ok(self.ell_signed(gaps, system, f)?.map(|v| v.ell()))
    }

    /// Indices `j` of the domains `]h^j(p), h^{j+1}(p)]` meeting the lifted
    /// interval `[c, d]`.
    fn domains_meeting(&self, system: &GeneratingSystem, c: f64, d: f64) -> Result<(i64, i64)> {
        let fwd = system.word_map(&self.h);
        let h_inv = self.h.inverse(system);
        let bwd = system.word_map(&h_inv);
        let o = |x: f64| lift(&self.arc, x);
        let guard = |steps: usize| {
            if steps > self.max_iter {
                Err(Error::UnboundedEll {
                    max_iter: self.max_iter,
                })
            } else {
                Ok(())
            }
        };
        // largest j with o(h^j p) < d
        let j_max = if o(self.p) < d {
            let (mut j, mut z) = (0i64, self.p);
            loop {
                let next = fwd.eval(z);
                if o(next) >= d {
                    break j;
                }
                z = next;
                j += 1;
                guard(j as usize)?;
            }
        } else {
            let (mut j, mut z) = (0i64, self.p);
            while o(z) >= d {
                z = bwd.eval(z);
                j -= 1;
                guard(j.unsigned_abs() as usize)?;
            }
            j
        };
        // smallest j with o(h^{j+1} p) ≥ c
        let j_min = if o(self.p) >= c {
            let (mut j, mut z) = (-1i64, bwd.eval(self.p));
            while o(z) >= c {
                z = bwd.eval(z);
                j -= 1;
                guard(j.unsigned_abs() as usize)?;
            }
            j
        } else {
            let (mut j, mut z) = (0i64, fwd.eval(self.p));
            while o(z) < c {
                z = fwd.eval(z);
                j += 1;
                guard(j as usize)?;
            }
            j
        };
        Ok((j_min, j_max))
    }

    /// `L(V)`: the largest `|r|` over domains meeting the box of margin
    /// `|I|/(2e^V)`, plus one.
    pub fn effective_l(&self, system: &GeneratingSystem, v: f64) -> Result<usize> {
        let margin = self.arc.length() / (2.0 * v.max(0.0).exp());
        let (j_min, j_max) = self.domains_meeting(
            system,
            margin - ORDER_TOLERANCE,
            self.arc.length() - margin - ORDER_TOLERANCE,
        )?;
        let r_of = |j: i64| (-j - 1).unsigned_abs() as usize;
        Ok(r_of(j_min).max(r_of(j_max)) + 1)
    }
}

/// A gap in the truncated orbit of the family with its context.
#[derive(Debug, Clone, Serialize)]
pub struct OrbitMember {
    pub ctx: EllContext,
    /// Index into `family` of the gap it is an image of.
    pub base: usize,
    pub via: Word,
}

#[derive(Debug, Clone, Serialize)]
pub struct EllFamilyContext {
    pub epsilon: f64,
    /// Number of gaps of length at least `ε`, of either type.
    pub k: usize,
    /// Contexts of the `ε`-large type-2 gaps.
    pub family: Vec<EllContext>,
    pub orbit: Vec<OrbitMember>,
    pub orbit_truncation_depth: usize,
    pub c_eps: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FamilyValue {
    pub value: usize,
    pub members_evaluated: usize,
    pub truncation_depth: usize,
}

impl EllFamilyContext {
    pub fn build(
        gaps: &[GapComponent],
        ball: &Ball,
        epsilon: f64,
        orbit_depth: usize,
        max_iter: usize,
    ) -> Result<Self> {
        let system = ball.system();
        let k = gaps.iter().filter(|g| g.arc.length() >= epsilon).count();
        let family = gaps
            .iter()
            .enumerate()
            .filter(|(_, g)| g.arc.length() >= epsilon && g.kind == GapKind::Type2)
            .map(|(i, _)| EllContext::new(gaps, i, max_iter))
            .collect::<Result<Vec<_>>>()?;
        let depth = orbit_depth.min(ball.radius());
        let images: Vec<Vec<Option<usize>>> = (0..ball.size_at(depth))
            .into_par_iter()
            .map(|u| {
                family
                    .iter()
                    .map(|c| c.image_gap(gaps, system, &ball.element(u).word).map(|(j, _)| j))
                    .collect()
            })
            .collect();
        let mut seen = vec![false; gaps.len()];
        let mut orbit = Vec::new();
        for (u, row) in images.iter().enumerate() {
            for (b, j) in row.iter().enumerate() {
                if let Some(j) = *j {
                    if !seen[j] {
                        seen[j] = true;
                        let via = ball.element(u).word.clone();
                        orbit.push(OrbitMember {
                            ctx: family[b].conjugate(&via, j, gaps, system),
                            base: b,
                            via,
                        });
                    }
                }
            }
        }
        let mut fctx = EllFamilyContext {
            epsilon,
            k,
            family,
            orbit,
            orbit_truncation_depth: depth,
            c_eps: 0,
        };
        let mut c = 0;
        for l in 0..system.len() {
            c = c.max(fctx.ell_family(gaps, system, &Word::letter(l))?.value);
        }
        fctx.c_eps = c;
        Ok(fctx)
    }

    pub fn type2_count(&self) -> usize {
        self.family.len()
    }

    /// `ℓ_ε(f)`: the max of `ℓ_J(f)` over the truncated orbit.
    pub fn ell_family(&self, gaps: &[GapComponent], system: &GeneratingSystem, f: &Word) -> Result<FamilyValue> {
        let values = self
            .orbit
            .par_iter()
            .map(|m| m.ctx.ell(gaps, system, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(FamilyValue {
            value: values.iter().flatten().copied().max().unwrap_or(0),
            members_evaluated: values.iter().flatten().count(),
            truncation_depth: self.orbit_truncation_depth,
        })
    }
}

/// Outcome of a lemma sweep, serialized into `lemmas.json`.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub instances_checked: usize,
    pub skipped: usize,
    pub violations: Vec<String>,
    pub parameters: serde_json::Value,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn from_outcomes(lemma: &str, parameters: serde_json::Value, outcomes: Vec<Outcome>) -> Self {
        let mut r = LemmaReport {
            lemma: lemma.to_string(),
            instances_checked: 0,
            skipped: 0,
            violations: Vec::new(),
            parameters,
        };
        for o in outcomes {
            match o {
                Outcome::Pass => r.instances_checked += 1,
                Outcome::Skip => r.skipped += 1,
                Outcome::Fail(msg) => {
                    r.instances_checked += 1;
                    r.violations.push(msg);
                }
            }
        }
        r
    }
}

enum Outcome {
    Pass,
    Skip,
    Fail(String),
}

fn type2_contexts(gaps: &[GapComponent], max_iter: usize) -> Vec<EllContext> {
    (0..gaps.len())
        .filter_map(|i| EllContext::new(gaps, i, max_iter).ok())
        .collect()
}

/// `ℓ_I(gf) ≤ ℓ_{f(I)}(g) + ℓ_I(f) + 1`, and `ℓ_I(gf) ∈ {|r+s|, |r+s+1|}`,
/// over all type-2 gaps and all pairs in `B(depth)`.
pub fn check_quasi_subadditivity(
    gaps: &[GapComponent],
    ball: &Ball,
    depth: usize,
    max_iter: usize,
) -> Result<LemmaReport> {
    let system = ball.system();
    let m = ball.size_at(depth.min(ball.radius()));
    let ctxs = type2_contexts(gaps, max_iter);
    let jobs: Vec<(usize, usize, usize)> = (0..ctxs.len())
        .flat_map(|c| (0..m).flat_map(move |f| (0..m).map(move |g| (c, f, g))))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(c, fi, gi)| -> Result<Outcome> {
            let ctx = &ctxs[c];
            let f = &ball.element(fi).word;
            let g = &ball.element(gi).word;
            let Some(rv) = ctx.ell_signed(gaps, system, f)? else {
                return Ok(Outcome::Skip);
            };
            let ctx_j = ctx.conjugate(f, rv.image_gap, gaps, system);
            let Some(sv) = ctx_j.ell_signed(gaps, system, g)? else {
                return Ok(Outcome::Skip);
            };
            let gf = g.after(f).reduced(system);
            let Some(tv) = ctx.ell_signed(gaps, system, &gf)? else {
                return Ok(Outcome::Skip);
            };
            let (r, s, t) = (rv.r, sv.r, tv.ell() as i64);
            let sharp = t == (r + s).abs() || t == (r + s + 1).abs();
            let weak = t <= r.abs() + s.abs() + 1;
            let consistent = tv.image_gap == sv.image_gap;
            if sharp && weak && consistent {
                Ok(Outcome::Pass)
            } else {
                Ok(Outcome::Fail(format!(
                    "gap {:.9}: f = {}, g = {}, r = {r}, s = {s}, l(gf) = {t}, image gaps {} / {}",
                    ctx.arc.left(),
                    system.format_word(f),
                    system.format_word(g),
                    sv.image_gap,
                    tv.image_gap
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::from_outcomes(
        "quasi-subadditivity",
        json!({ "depth": depth, "gaps": ctxs.len(), "order_tolerance": ORDER_TOLERANCE }),
        outcomes,
    ))
}

/// `|ℓ_I(f) − ℓ_{f(I)}(f⁻¹)| ≤ 1` over all type-2 gaps and `f ∈ B(depth)`.
pub fn check_inverse_bound(gaps: &[GapComponent], ball: &Ball, depth: usize, max_iter: usize) -> Result<LemmaReport> {
    let system = ball.system();
    let m = ball.size_at(depth.min(ball.radius()));
    let ctxs = type2_contexts(gaps, max_iter);
    let jobs: Vec<(usize, usize)> = (0..ctxs.len()).flat_map(|c| (0..m).map(move |f| (c, f))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(c, fi)| -> Result<Outcome> {
            let ctx = &ctxs[c];
            let f = &ball.element(fi).word;
            let Some(rv) = ctx.ell_signed(gaps, system, f)? else {
                return Ok(Outcome::Skip);
            };
            let ctx_j = ctx.conjugate(f, rv.image_gap, gaps, system);
            let Some(sv) = ctx_j.ell_signed(gaps, system, &f.inverse(system))? else {
                return Ok(Outcome::Skip);
            };
            let diff = (rv.ell() as i64 - sv.ell() as i64).abs();
            if diff <= 1 && sv.image_gap == ctx.gap {
                Ok(Outcome::Pass)
            } else {
                Ok(Outcome::Fail(format!(
                    "gap {:.9}: f = {}, l(f) = {}, l(f^-1) = {}, returns to gap {}",
                    ctx.arc.left(),
                    system.format_word(f),
                    rv.ell(),
                    sv.ell(),
                    sv.image_gap
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::from_outcomes(
        "inverse-bound",
        json!({ "depth": depth, "gaps": ctxs.len() }),
        outcomes,
    ))
}

/// Containment of `g⁻¹(midpoint of g(I))` in `[a + |I|/(2e^V), b − |I|/(2e^V)]`.
#[derive(Debug, Clone, Serialize)]
pub struct BoxCheck {
    pub word: String,
    pub v: f64,
    pub c: f64,
    pub d: f64,
    pub y: f64,
    pub slack_left: f64,
    pub slack_right: f64,
    pub l_eff: usize,
    pub holds: bool,
}

pub fn distortion_box(ctx: &EllContext, system: &GeneratingSystem, g: &Word, samples: usize) -> Result<BoxCheck> {
    let map = system.word_map(g);
    let v = log_derivative_variation(&map, &ctx.arc, samples)
        .map_err(|e| Error::NotApplicable(format!("variation of {}: {e}", system.format_word(g))))?
        .value;
    let image = ctx.arc.image(&map)?;
    let inv = g.inverse(system);
    let y = system.word_map(&inv).eval(image.midpoint());
    let len = ctx.arc.length();
    let margin = len / (2.0 * v.exp());
    let oy = lift(&ctx.arc, y);
    let floor = margin * (1.0 - BOX_SLACK);
    Ok(BoxCheck {
        word: system.format_word(g),
        v,
        c: reduce(ctx.arc.left() + margin),
        d: reduce(ctx.arc.left() + len - margin),
        y,
        slack_left: oy - margin,
        slack_right: len - oy - margin,
        l_eff: ctx.effective_l(system, v)?,
        holds: oy >= floor && len - oy >= floor,
    })
}

/// Distortion-box containment over all type-2 gaps and `g ∈ B(depth)` with
/// `g(I)` a resolved gap.
pub fn check_distortion_boxes(
    gaps: &[GapComponent],
    ball: &Ball,
    depth: usize,
    samples: usize,
    max_iter: usize,
) -> Result<LemmaReport> {
    let system = ball.system();
    let m = ball.size_at(depth.min(ball.radius()));
    let ctxs = type2_contexts(gaps, max_iter);
    let jobs: Vec<(usize, usize)> = (0..ctxs.len()).flat_map(|c| (0..m).map(move |g| (c, g))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(c, gi)| -> Result<Outcome> {
            let ctx = &ctxs[c];
            let g = &ball.element(gi).word;
            if ctx.image_gap(gaps, system, g).is_none() {
                return Ok(Outcome::Skip);
            }
            let b = distortion_box(ctx, system, g, samples)?;
            if b.holds {
                Ok(Outcome::Pass)
            } else {
                Ok(Outcome::Fail(format!(
                    "gap {:.9}: g = {}, V = {}, y = {}, slack = ({:e}, {:e})",
                    ctx.arc.left(),
                    b.word,
                    b.v,
                    b.y,
                    b.slack_left,
                    b.slack_right
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::from_outcomes(
        "distortion-box",
        json!({ "depth": depth, "gaps": ctxs.len(), "variation_samples": samples, "slack": BOX_SLACK }),
        outcomes,
    ))
}

/// `W`: summed full-circle variation of `log g′` over the generators.
pub fn generator_variation_sum(system: &GeneratingSystem, samples: usize) -> Result<f64> {
    (0..system.len())
        .map(|l| {
            full_circle_variation(&system.generator(l).map, samples)
                .map(|v| v.value)
                .map_err(|e| Error::NotApplicable(format!("generator variation: {e}")))
        })
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct CeilingCheck {
    pub word: String,
    pub w: f64,
    pub v: f64,
    /// `L(W) + L(W+V) + 2` per family gap.
    pub ceilings: Vec<usize>,
    /// `(orbit gap, family index, ℓ_J(f))`.
    pub observed: Vec<(usize, usize, usize)>,
    pub holds: bool,
}

pub fn orbit_ceiling(
    fctx: &EllFamilyContext,
    gaps: &[GapComponent],
    system: &GeneratingSystem,
    f: &Word,
    w: f64,
    samples: usize,
) -> Result<CeilingCheck> {
    let map = system.word_map(f);
    let v = full_circle_variation(&map, samples)
        .map_err(|e| Error::NotApplicable(format!("variation of {}: {e}", system.format_word(f))))?
        .value;
    let ceilings = fctx
        .family
        .iter()
        .map(|c| Ok(c.effective_l(system, w)? + c.effective_l(system, w + v)? + 2))
        .collect::<Result<Vec<_>>>()?;
    let mut observed = Vec::new();
    for m in &fctx.orbit {
        if let Some(l) = m.ctx.ell(gaps, system, f)? {
            observed.push((m.ctx.gap, m.base, l));
        }
    }
    let holds = observed.iter().all(|&(_, b, l)| l <= ceilings[b]);
    Ok(CeilingCheck {
        word: system.format_word(f),
        w,
        v,
        ceilings,
        observed,
        holds,
    })
}

/// Orbit-ceiling dominance for every `f ∈ B(depth)`.
pub fn check_orbit_ceiling(
    fctx: &EllFamilyContext,
    gaps: &[GapComponent],
    ball: &Ball,
    depth: usize,
    samples: usize,
) -> Result<LemmaReport> {
    let system = ball.system();
    let w = generator_variation_sum(system, samples)?;
    let m = ball.size_at(depth.min(ball.radius()));
    let outcomes = (0..m)
        .into_par_iter()
        .map(|fi| -> Result<Outcome> {
            let c = orbit_ceiling(fctx, gaps, system, &ball.element(fi).word, w, samples)?;
            if c.observed.is_empty() {
                Ok(Outcome::Skip)
            } else if c.holds {
                Ok(Outcome::Pass)
            } else {
                Ok(Outcome::Fail(format!(
                    "f = {}: observed {:?} above ceilings {:?} (W = {}, V = {})",
                    c.word, c.observed, c.ceilings, c.w, c.v
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::from_outcomes(
        "orbit-ceiling",
        json!({
            "depth": depth,
            "w": w,
            "orbit_gaps": fctx.orbit.len(),
            "truncation_depth": fctx.orbit_truncation_depth,
            "variation_samples": samples,
        }),
        outcomes,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountingBound {
    pub a: f64,
    pub b: f64,
    pub bound: f64,
}

/// `A = (4k + 4k/ε)(1 + c)`, `B = −(k + k/ε)` and `k(1/ε + 1)(4nc + 4n − 1)`.
pub fn counting_bound_a(k: usize, epsilon: f64, c_eps: usize, n: usize) -> CountingBound {
    let (k, c, n) = (k as f64, c_eps as f64, n as f64);
    CountingBound {
        a: (4.0 * k + 4.0 * k / epsilon) * (1.0 + c),
        b: -(k + k / epsilon),
        bound: k * (1.0 / epsilon + 1.0) * (4.0 * n * c + 4.0 * n - 1.0),
    }
}

/// `k(1/ε + 1)(2q̂(2n) + 1)`.
pub fn counting_bound_b(k: usize, epsilon: f64, q_hat: &[usize], n: usize) -> Result<f64> {
    let q = staircase_at(q_hat, 2 * n)?;
    Ok(k as f64 * (1.0 / epsilon + 1.0) * (2.0 * q as f64 + 1.0))
}

fn staircase_at(q_hat: &[usize], m: usize) -> Result<usize> {
    q_hat.get(m).copied().ok_or(Error::Censored {
        needed: m,
        available: q_hat.len().saturating_sub(1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundForm {
    Linear,
    Distortion,
}

/// `2k(1 + 1/ε)(4nc + 4n − 1) + 1` or `2k(1 + 1/ε)(2q̂(2n) + 1) + 1`.
pub fn p_epsilon(
    k: usize,
    epsilon: f64,
    n: usize,
    form: BoundForm,
    c_eps: usize,
    q_hat: Option<&[usize]>,
) -> Result<f64> {
    let kf = k as f64;
    let inner = match form {
        BoundForm::Linear => 4.0 * n as f64 * c_eps as f64 + 4.0 * n as f64 - 1.0,
        BoundForm::Distortion => {
            let q = q_hat.ok_or_else(|| Error::Config("distortion form needs a distortion staircase".into()))?;
            2.0 * staircase_at(q, 2 * n)? as f64 + 1.0
        }
    };
    Ok(2.0 * kf * (1.0 + 1.0 / epsilon) * inner + 1.0)
}

/// Elements of `B(n)` carrying a gap onto a family gap differ by powers of
/// its stabilizer, with exponents within `2nc + 2n − 1` (and `q̂(2n)` when a
/// staircase is given), and there are at most `4nc + 4n − 1` of them.
pub fn check_stabilizer_cosets(
    fctx: &EllFamilyContext,
    gaps: &[GapComponent],
    ball: &Ball,
    n: usize,
    q_hat: Option<&[usize]>,
) -> Result<LemmaReport> {
    let system = ball.system();
    let m = ball.size_at(n.min(ball.radius()));
    let r_bound = (2 * n * fctx.c_eps + 2 * n).saturating_sub(1);
    let count_bound = (4 * n * fctx.c_eps + 4 * n).saturating_sub(1);
    let q2n = q_hat.map(|q| staircase_at(q, 2 * n)).transpose()?;
    let per_source = (0..gaps.len())
        .into_par_iter()
        .map(|src| -> Result<Vec<Outcome>> {
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); fctx.family.len()];
            for fi in 0..m {
                if let Some(j) = image_gap(gaps, &gaps[src].arc, &ball.element(fi).word, system) {
                    if let Some(i) = fctx.family.iter().position(|c| c.gap == j) {
                        groups[i].push(fi);
                    }
                }
            }
            let mut out = Vec::new();
            for (i, members) in groups.iter().enumerate() {
                let Some((&f0, rest)) = members.split_first() else {
                    continue;
                };
                let ctx = &fctx.family[i];
                let f0_inv = ball.element(f0).word.inverse(system);
                if members.len() > count_bound {
                    out.push(Outcome::Fail(format!(
                        "{} elements of B({n}) carry gap {:.9} onto gap {:.9}; bound {count_bound}",
                        members.len(),
                        gaps[src].arc.left(),
                        ctx.arc.left()
                    )));
                }
                for &gi in rest {
                    let w = ball.element(gi).word.after(&f0_inv).reduced(system);
                    let y = system.word_map(&w.inverse(system)).eval(ctx.p);
                    let r = ctx.domain_index(system, y)?;
                    let power = ctx.h.pow(r, system).reduced(system);
                    let same = ball.spec().same(&ball.fingerprint_of(&w), &ball.fingerprint_of(&power));
                    let within = r.unsigned_abs() as usize <= r_bound;
                    let within_q = q2n.is_none_or(|q| r.unsigned_abs() as usize <= q);
                    if same && within && within_q {
                        out.push(Outcome::Pass);
                    } else {
                        out.push(Outcome::Fail(format!(
                            "gap {:.9} -> {:.9}: g = {}, f = {}, r = {r}, power match {same}, bounds ({r_bound}, {:?})",
                            gaps[src].arc.left(),
                            ctx.arc.left(),
                            system.format_word(&ball.element(gi).word),
                            system.format_word(&ball.element(f0).word),
                            q2n
                        )));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::from_outcomes(
        "stabilizer-cosets",
        json!({
            "n": n,
            "c_eps": fctx.c_eps,
            "exponent_bound": r_bound,
            "count_bound": count_bound,
            "q_hat_2n": q2n,
        }),
        per_source.into_iter().flatten().collect(),
    ))
}

/// One pair of the constructed set with its separating evidence.
#[derive(Debug, Clone, Serialize)]
pub struct TPair {
    pub i: usize,
    pub j: usize,
    pub direct_witness: Option<String>,
    pub propagation_step: Option<usize>,
    pub propagated_length: Option<f64>,
    pub below_half: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TSet {
    /// Gaps containing points of `S`, in circular order.
    pub gaps_hit: Vec<usize>,
    pub points: Vec<f64>,
    pub pairs: Vec<TPair>,
    pub all_separated: bool,
}

impl TSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One kept grid point between each odd and even gap hit by `S`; the
/// result is checked pairwise by direct search and by walking a witness of
/// two `S`-points lying on the short arc between them.
pub fn t_set_construction(
    s: &SeparatedSet,
    approx: &NonWanderingApprox,
    gaps: &[GapComponent],
    ball: &Ball,
    n: usize,
    epsilon: f64,
) -> Result<TSet> {
    let gaps_hit: Vec<usize> = (0..gaps.len())
        .filter(|&g| s.points.iter().any(|&x| gaps[g].arc.contains(x)))
        .collect();
    let kept = approx.kept_points();
    let mut points = Vec::with_capacity(gaps_hit.len() / 2);
    for i in 0..gaps_hit.len() / 2 {
        let from = gaps[gaps_hit[2 * i]].arc.right();
        let span = forward_gap(from, gaps[gaps_hit[2 * i + 1]].arc.left());
        let t = kept
            .iter()
            .copied()
            .filter(|&x| forward_gap(from, x) < span)
            .min_by(|a, b| forward_gap(from, *a).total_cmp(&forward_gap(from, *b)))
            .ok_or(Error::ConstructionGap(2 * i + 1, 2 * i + 2))?;
        points.push(t);
    }
    let system = ball.system();
    let mut pairs = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let direct = is_separated(points[i], points[j], ball, n, epsilon);
            let (a, b) = short_arc(points[i], points[j]);
            let inside: Vec<f64> = s
                .points
                .iter()
                .copied()
                .filter(|&x| forward_gap(a, x) < forward_gap(a, b))
                .collect();
            let prop = if inside.len() >= 2 {
                is_separated(inside[0], inside[1], ball, n, epsilon)
                    .and_then(|w| propagate(ball, &ball.element(w).word, a, b, epsilon))
            } else {
                None
            };
            pairs.push(TPair {
                i,
                j,
                direct_witness: direct.map(|w| system.format_word(&ball.element(w).word)),
                propagation_step: prop.map(|p| p.step),
                propagated_length: prop.map(|p| p.length),
                below_half: prop.is_some_and(|p| p.below_half),
            });
        }
    }
    let all_separated = pairs
        .iter()
        .all(|p| p.direct_witness.is_some() && p.propagation_step.is_some() && p.below_half);
    Ok(TSet {
        gaps_hit,
        points,
        pairs,
        all_separated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::{distortion_profile, FingerprintSpec};
    use crate::circle::PrimitiveMap;
    use crate::separation::{max_separated_greedy, uniform_grid, SeparationTable};
    use crate::wandering::{approximate_nonwandering, classify_all, gap_components};

    const DELTA: f64 = 1e-3;

    struct Fixture {
        ball: Ball,
        approx: NonWanderingApprox,
        gaps: Vec<GapComponent>,
    }

    fn hyperbolic(n: usize) -> Fixture {
        let g = GeneratingSystem::from_pairs(&[("g", "G", PrimitiveMap::hyperbolic(2f64.sqrt()).unwrap())]).unwrap();
        let ball = Ball::enumerate(&g, n, FingerprintSpec::default(), 100_000).unwrap();
        let approx = approximate_nonwandering(&ball, 6, DELTA).unwrap();
        let gaps = gap_components(&approx, 0.05).unwrap();
        let gaps = classify_all(&gaps, &ball, 6, 10.0 * DELTA).unwrap();
        Fixture { ball, approx, gaps }
    }

    #[test]
    fn identity_has_zero_count() {
        let fx = hyperbolic(6);
        let ctx = EllContext::new(&fx.gaps, 0, DEFAULT_MAX_ITER).unwrap();
        let v = ctx
            .ell_signed(&fx.gaps, fx.ball.system(), &Word::identity())
            .unwrap()
            .unwrap();
        assert_eq!(v, EllValue { r: 0, image_gap: 0 });
    }

    #[test]
    fn powers_of_the_stabilizer_count_exactly() {
        let fx = hyperbolic(6);
        let system = fx.ball.system();
        for gap in 0..2 {
            let ctx = EllContext::new(&fx.gaps, gap, DEFAULT_MAX_ITER).unwrap();
            let h = &system.generator(ctx.h.letters()[0]).map;
            for r in 1..=20i64 {
                for sign in [1, -1] {
                    let w = ctx.h.pow(sign * r, system);
                    // oracle: pull p back by h^{sign r} one letter at a time, then
                    // count forward steps of h that stay at or below p
                    let mut y = ctx.p;
                    let back = if sign > 0 { h.inverse() } else { h.clone() };
                    for _ in 0..r {
                        y = back.eval(y);
                    }
                    let mut count = 0i64;
                    let mut z = y;
                    let o = |x: f64| lift(&ctx.arc, x);
                    if o(z) <= o(ctx.p) + ORDER_TOLERANCE {
                        while o(h.eval(z)) <= o(ctx.p) + ORDER_TOLERANCE {
                            z = h.eval(z);
                            count += 1;
                        }
                    } else {
                        while o(z) > o(ctx.p) + ORDER_TOLERANCE {
                            z = h.inverse().eval(z);
                            count -= 1;
                        }
                    }
                    let v = ctx.ell_signed(&fx.gaps, system, &w).unwrap().unwrap();
                    assert_eq!(v.r, count);
                    assert_eq!(v.ell(), r as usize);
                }
            }
        }
    }

    #[test]
    fn generator_count_matches_orbit_walk() {
        let fx = hyperbolic(6);
        let system = fx.ball.system();
        let g = Word::letter(system.letter("g").unwrap());
        for gap in 0..2 {
            let ctx = EllContext::new(&fx.gaps, gap, DEFAULT_MAX_ITER).unwrap();
            // fundamental domains of h between g⁻¹(p) and p
            let h = system.word_map(&ctx.h);
            let start = system.word_map(&g.inverse(system)).eval(ctx.p);
            let (lo, hi) = (lift(&ctx.arc, start), lift(&ctx.arc, ctx.p));
            let (mut z, mut steps) = (if lo < hi { start } else { ctx.p }, 0usize);
            let end = lo.max(hi);
            while lift(&ctx.arc, h.eval(z)) <= end + ORDER_TOLERANCE {
                z = h.eval(z);
                steps += 1;
            }
            assert_eq!(ctx.ell(&fx.gaps, system, &g).unwrap(), Some(steps));
            assert_eq!(steps, 1);
        }
    }

    #[test]
    fn family_constant_and_ceiling() {
        let fx = hyperbolic(6);
        let fctx = EllFamilyContext::build(&fx.gaps, &fx.ball, 0.05, 6, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(fctx.k, 2);
        assert_eq!(fctx.orbit.len(), 2);
        assert_eq!(fctx.c_eps, 1);
        assert_eq!(
            fctx.ell_family(&fx.gaps, fx.ball.system(), &Word::identity())
                .unwrap()
                .value,
            0
        );
        let report = check_orbit_ceiling(&fctx, &fx.gaps, &fx.ball, 3, 4096).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
        assert!(report.instances_checked > 0);
    }

    #[test]
    fn lemma_sweeps_have_no_violations() {
        let fx = hyperbolic(6);
        let q = check_quasi_subadditivity(&fx.gaps, &fx.ball, 4, DEFAULT_MAX_ITER).unwrap();
        assert!(q.passed() && q.instances_checked == 2 * 9 * 9, "{q:?}");
        let inv = check_inverse_bound(&fx.gaps, &fx.ball, 6, DEFAULT_MAX_ITER).unwrap();
        assert!(inv.passed() && inv.instances_checked == 2 * 13, "{inv:?}");
        let boxes = check_distortion_boxes(&fx.gaps, &fx.ball, 5, 4096, DEFAULT_MAX_ITER).unwrap();
        assert!(boxes.passed() && boxes.instances_checked == 2 * 11, "{boxes:?}");
    }

    #[test]
    fn undistorted_box_collapses_to_the_midpoint() {
        let fx = hyperbolic(6);
        let ctx = EllContext::new(&fx.gaps, 0, DEFAULT_MAX_ITER).unwrap();
        let system = fx.ball.system();
        assert_eq!(ctx.effective_l(system, 0.0).unwrap(), 1);
        let b = distortion_box(&ctx, system, &Word::identity(), 64).unwrap();
        assert_eq!(b.v, 0.0);
        assert!((b.y - ctx.p).abs() < 1e-15 && b.holds);
        assert!(ctx.effective_l(system, 3.0).unwrap() > 1);
    }

    #[test]
    fn counting_formulas() {
        let z = counting_bound_a(0, 0.1, 3, 5);
        assert_eq!(z.bound, 0.0);
        for n in 1..20 {
            let b = counting_bound_a(2, 0.05, 1, n);
            let expanded = 2.0 * (1.0 + 1.0 / 0.05) * (4.0 * n as f64 * 2.0 - 1.0);
            assert!((b.a * n as f64 + b.b - expanded).abs() < 1e-9 * expanded);
        }
        let lin = crate::ball::DistortionProfile::linear(40);
        for form in [BoundForm::Linear, BoundForm::Distortion] {
            assert_eq!(p_epsilon(0, 0.05, 7, form, 4, Some(&lin)).unwrap(), 1.0);
        }
        let n = 8;
        let expected = 2.0 * 2.0 * 21.0 * (4.0 * n as f64 + 1.0) + 1.0;
        let pb = p_epsilon(2, 0.05, n, BoundForm::Distortion, 0, Some(&lin)).unwrap();
        assert!((pb - expected).abs() < 1e-9);
        assert!(matches!(
            p_epsilon(2, 0.05, 30, BoundForm::Distortion, 0, Some(&lin)),
            Err(Error::Censored { needed: 60, .. })
        ));
        assert!(counting_bound_b(1, 0.1, &lin, 21).is_err());
    }

    #[test]
    fn in_gap_sets_respect_both_bounds() {
        let fx = hyperbolic(12);
        let fctx = EllFamilyContext::build(&fx.gaps, &fx.ball, 0.05, 6, DEFAULT_MAX_ITER).unwrap();
        let n = 6;
        let gap = fx.gaps[0].arc;
        let candidates: Vec<f64> = uniform_grid(0.0125).into_iter().filter(|&t| gap.contains(t)).collect();
        let table = SeparationTable::build(&fx.ball, candidates, 0.05, n).unwrap();
        let m = max_separated_greedy(&table, n).len() as f64;
        assert!(m <= counting_bound_a(fctx.k, 0.05, fctx.c_eps, n).bound);
        let h = &fctx.family[0].h;
        let q = distortion_profile(&fx.ball, h, 24).unwrap();
        assert!(m <= counting_bound_b(fctx.k, 0.05, &q.staircase, n).unwrap());
        let cosets = check_stabilizer_cosets(&fctx, &fx.gaps, &fx.ball, n, Some(&q.staircase)).unwrap();
        assert!(cosets.passed() && cosets.instances_checked > 0, "{cosets:?}");
    }

    #[test]
    fn t_set_between_two_gaps() {
        let fx = hyperbolic(6);
        let pts = [fx.gaps[0].arc.midpoint(), fx.gaps[1].arc.midpoint()];
        let s = SeparatedSet {
            points: pts.to_vec(),
            indices: vec![0, 1],
            witnesses: vec![0, 0],
            mode: crate::separation::SeparationMode::GreedyLower,
            coarse_grid: false,
        };
        let t = t_set_construction(&s, &fx.approx, &fx.gaps, &fx.ball, 6, 0.05).unwrap();
        assert_eq!(t.gaps_hit.len(), 2);
        assert_eq!(t.len(), 1);
        assert!(fx.approx.contains(t.points[0]));
        let near_fixed = crate::circle::circle_dist(t.points[0], 0.5).min(crate::circle::circle_dist(t.points[0], 0.0));
        assert!(near_fixed <= fx.approx.arcs[0].length / 2.0);
        let one = SeparatedSet {
            points: vec![pts[0]],
            ..s
        };
        assert!(t_set_construction(&one, &fx.approx, &fx.gaps, &fx.ball, 6, 0.05)
            .unwrap()
            .is_empty());
    }
}
