//! Points, arcs and primitive orientation-preserving homeomorphisms of the
//! circle `S¹ = ℝ/ℤ` with its normalized length (total circumference 1).
//!
//! Möbius maps act on `ℝP¹` through the chart `x = tan(π(t − 1/2))`. They are
//! evaluated in homogeneous coordinates `v = (sin θ, cos θ)` with
//! `θ = π(t − 1/2)`, so the point `t = 0` (`x = ∞`) needs no special branch and
//! the derivative is the closed form `1 / |M v|²`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pointwise identity tolerance for round trips.
pub const TAU_ID: f64 = 1e-9;

/// Default number of samples per arc for log-derivative variation.
pub const DEFAULT_VARIATION_SAMPLES: usize = 4096;

/// Reduce a real coordinate into `[0, 1)`.
#[inline]
pub fn reduce(t: f64) -> f64 {
    let r = t.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Circle distance `min(|x − y|, 1 − |x − y|)`.
#[inline]
pub fn circle_dist(x: f64, y: f64) -> f64 {
    let d = reduce(x - y);
    d.min(1.0 - d)
}

/// Positive (counter-clockwise) displacement from `from` to `to`, in `[0, 1)`.
#[inline]
pub fn forward_gap(from: f64, to: f64) -> f64 {
    reduce(to - from)
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct CirclePoint(f64);

impl CirclePoint {
    pub fn new(t: f64) -> Self {
        CirclePoint(reduce(t))
    }

    pub fn t(self) -> f64 {
        self.0
    }

    pub fn dist(self, other: CirclePoint) -> f64 {
        circle_dist(self.0, other.0)
    }
}

/// The positively oriented open arc `]left, left + length[`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    left: f64,
    length: f64,
}

impl Arc {
    pub fn new(left: f64, length: f64) -> Result<Self> {
        if !(length > 0.0 && length < 1.0) || !left.is_finite() {
            return Err(Error::InvalidMap(format!(
                "arc length must lie in (0, 1), got {length}"
            )));
        }
        Ok(Arc {
            left: reduce(left),
            length,
        })
    }

    /// Arc running counter-clockwise from `left` to `right`.
    pub fn between(left: f64, right: f64) -> Result<Self> {
        Arc::new(left, forward_gap(left, right))
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        reduce(self.left + self.length)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn midpoint(&self) -> f64 {
        reduce(self.left + self.length / 2.0)
    }

    /// Offset of `t` from the left endpoint, measured forward.
    pub fn offset(&self, t: f64) -> f64 {
        forward_gap(self.left, t)
    }

    /// Open containment.
    pub fn contains(&self, t: f64) -> bool {
        let o = self.offset(t);
        o > 0.0 && o < self.length
    }

    /// Sample `samples` points of the closed arc, endpoints included.
    pub fn sample_grid(&self, samples: usize) -> Vec<f64> {
        let m = (samples.max(2) - 1) as f64;
        (0..samples.max(2))
            .map(|i| reduce(self.left + self.length * i as f64 / m))
            .collect()
    }

    /// Image of the arc under an orientation-preserving homeomorphism.
    pub fn image<M: CircleMap + ?Sized>(&self, map: &M) -> Result<Arc> {
        let l = map.eval(self.left);
        let r = map.eval(self.right());
        Arc::between(l, r)
    }

    /// Whether two open arcs share a point.
    pub fn intersects(&self, other: &Arc) -> bool {
        // Two open arcs meet iff one's left endpoint lies in the other (or
        // they share the left endpoint).
        let d = forward_gap(self.left, other.left);
        d < self.length || forward_gap(other.left, self.left) < other.length || d == 0.0
    }
}

/// An orientation-preserving circle homeomorphism that can be evaluated and
/// differentiated. Implemented by primitive maps and by composed words.
pub trait CircleMap {
    fn eval(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    Rotation {
        alpha: f64,
    },
    Mobius {
        a: f64,
        b: f64,
        c: f64,
        d: f64,
    },
    /// Breakpoints `(t_i, lift(t_i))`; the lift is linear in between and
    /// extended by `lift(t + 1) = lift(t) + 1`.
    PiecewiseLinear {
        breakpoints: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimitiveMap {
    kind: MapKind,
}

impl PrimitiveMap {
    pub fn rotation(alpha: f64) -> Self {
        PrimitiveMap {
            kind: MapKind::Rotation { alpha },
        }
    }

    /// Möbius map from a matrix with positive determinant, normalized to
    /// determinant 1.
    pub fn mobius(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let det = a * d - b * c;
        if !(det > 0.0) || ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidMap(format!(
                "Möbius matrix must have positive determinant, got {det}"
            )));
        }
        let s = det.sqrt();
        Ok(PrimitiveMap {
            kind: MapKind::Mobius {
                a: a / s,
                b: b / s,
                c: c / s,
                d: d / s,
            },
        })
    }

    /// Hyperbolic Möbius map `diag(λ, 1/λ)`: repelling fixed point at `t = 1/2`,
    /// attracting fixed point at `t = 0` when `λ > 1`.
    pub fn hyperbolic(lambda: f64) -> Result<Self> {
        PrimitiveMap::mobius(lambda, 0.0, 0.0, 1.0 / lambda)
    }

    pub fn piecewise_linear(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        validate_pl(&breakpoints)?;
        Ok(PrimitiveMap {
            kind: MapKind::PiecewiseLinear { breakpoints },
        })
    }

    pub fn from_kind(kind: MapKind) -> Result<Self> {
        match kind {
            MapKind::Rotation { alpha } => {
                if !alpha.is_finite() {
                    return Err(Error::InvalidMap("rotation angle is not finite".into()));
                }
                Ok(PrimitiveMap::rotation(alpha))
            }
            MapKind::Mobius { a, b, c, d } => PrimitiveMap::mobius(a, b, c, d),
            MapKind::PiecewiseLinear { breakpoints } => PrimitiveMap::piecewise_linear(breakpoints),
        }
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn inverse(&self) -> PrimitiveMap {
        let kind = match &self.kind {
            MapKind::Rotation { alpha } => MapKind::Rotation { alpha: -alpha },
            &MapKind::Mobius { a, b, c, d } => MapKind::Mobius {
                a: d,
                b: -b,
                c: -c,
                d: a,
            },
            MapKind::PiecewiseLinear { breakpoints } => {
                let mut inv: Vec<(f64, f64)> = breakpoints
                    .iter()
                    .map(|&(x, y)| {
                        let m = y.floor();
                        (y - m, x - m)
                    })
                    .collect();
                inv.sort_by(|p, q| p.0.total_cmp(&q.0));
                MapKind::PiecewiseLinear { breakpoints: inv }
            }
        };
        PrimitiveMap { kind }
    }

    /// Derivative at `t`; for piecewise-linear maps at a breakpoint, the
    /// right derivative together with `true`.
    pub fn derivative_one_sided(&self, t: f64) -> (f64, bool) {
        match &self.kind {
            MapKind::PiecewiseLinear { breakpoints } => {
                let (i, _) = pl_segment(breakpoints, reduce(t));
                let at_break = breakpoints.iter().any(|&(x, _)| x == reduce(t));
                (pl_slope(breakpoints, i), at_break)
            }
            _ => (self.derivative(t), false),
        }
    }

    /// Supremum of the derivative over the circle (a Lipschitz constant).
    pub fn lipschitz(&self) -> f64 {
        match &self.kind {
            MapKind::Rotation { .. } => 1.0,
            &MapKind::Mobius { a, b, c, d } => {
                // Largest singular value squared, with det = 1.
                let s = a * a + b * b + c * c + d * d;
                (s + (s * s - 4.0).max(0.0).sqrt()) / 2.0
            }
            MapKind::PiecewiseLinear { breakpoints } => (0..breakpoints.len())
                .map(|i| pl_slope(breakpoints, i))
                .fold(0.0, f64::max),
        }
    }
}

impl CircleMap for PrimitiveMap {
    fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            MapKind::Rotation { alpha } => reduce(t + alpha),
            &MapKind::Mobius { a, b, c, d } => {
                let theta = PI * (t - 0.5);
                let (s, co) = theta.sin_cos();
                let w0 = a * s + b * co;
                let w1 = c * s + d * co;
                reduce(w0.atan2(w1) / PI + 0.5)
            }
            MapKind::PiecewiseLinear { breakpoints } => {
                let t = reduce(t);
                let (i, u) = pl_segment(breakpoints, t);
                let (x0, y0) = pl_node(breakpoints, i);
                reduce(y0 + pl_slope(breakpoints, i) * (u - x0))
            }
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        match &self.kind {
            MapKind::Rotation { .. } => 1.0,
            &MapKind::Mobius { a, b, c, d } => {
                let theta = PI * (t - 0.5);
                let (s, co) = theta.sin_cos();
                let w0 = a * s + b * co;
                let w1 = c * s + d * co;
                1.0 / (w0 * w0 + w1 * w1)
            }
            MapKind::PiecewiseLinear { .. } => self.derivative_one_sided(t).0,
        }
    }
}

fn validate_pl(bp: &[(f64, f64)]) -> Result<()> {
    if bp.is_empty() {
        return Err(Error::InvalidMap("piecewise-linear map needs breakpoints".into()));
    }
    if bp.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidMap("non-finite breakpoint".into()));
    }
    if bp.iter().any(|&(x, _)| !(0.0..1.0).contains(&x)) {
        return Err(Error::InvalidMap("breakpoint abscissae must lie in [0, 1)".into()));
    }
    for w in bp.windows(2) {
        if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
            return Err(Error::InvalidMap("breakpoints must be strictly increasing".into()));
        }
    }
    let (x0, y0) = bp[0];
    let (xl, yl) = bp[bp.len() - 1];
    if !(xl < x0 + 1.0 && yl < y0 + 1.0) {
        return Err(Error::InvalidMap("breakpoints must span less than one turn".into()));
    }
    Ok(())
}

/// Node `i`, with index `len` wrapping to node 0 shifted by one turn.
fn pl_node(bp: &[(f64, f64)], i: usize) -> (f64, f64) {
    if i == bp.len() {
        (bp[0].0 + 1.0, bp[0].1 + 1.0)
    } else {
        bp[i]
    }
}

fn pl_slope(bp: &[(f64, f64)], i: usize) -> f64 {
    let (x0, y0) = pl_node(bp, i);
    let (x1, y1) = pl_node(bp, i + 1);
    (y1 - y0) / (x1 - x0)
}

/// Segment index containing `t` and the lifted coordinate of `t` in
/// `[x_0, x_0 + 1)`.
fn pl_segment(bp: &[(f64, f64)], t: f64) -> (usize, f64) {
    let u = if t < bp[0].0 { t + 1.0 } else { t };
    let i = bp.partition_point(|&(x, _)| x <= u).saturating_sub(1);
    (i, u)
}

/// Total variation of `log f′` sampled on an arc, with the sample count used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Variation {
    pub value: f64,
    pub samples: usize,
}

fn log_derivative<M: CircleMap + ?Sized>(map: &M, t: f64) -> Result<f64> {
    let d = map.derivative(t);
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::InvalidMap(format!("derivative {d} at t = {t}")));
    }
    Ok(d.ln())
}

/// `Σ |log f′(x_{i+1}) − log f′(x_i)|` over a uniform grid of the closed arc.
pub fn log_derivative_variation<M: CircleMap + ?Sized>(map: &M, arc: &Arc, samples: usize) -> Result<Variation> {
    if samples < 2 {
        return Err(Error::Config("variation needs at least 2 samples".into()));
    }
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for x in arc.sample_grid(samples) {
        let l = log_derivative(map, x)?;
        if let Some(p) = prev {
            total += (l - p).abs();
        }
        prev = Some(l);
    }
    Ok(Variation { value: total, samples })
}

/// Variation of `log f′` around the whole circle (cyclic sampling).
pub fn full_circle_variation<M: CircleMap + ?Sized>(map: &M, samples: usize) -> Result<Variation> {
    if samples < 2 {
        return Err(Error::Config("variation needs at least 2 samples".into()));
    }
    let logs = (0..samples)
        .map(|i| log_derivative(map, i as f64 / samples as f64))
        .collect::<Result<Vec<_>>>()?;
    let value = (0..samples).map(|i| (logs[(i + 1) % samples] - logs[i]).abs()).sum();
    Ok(Variation { value, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_slope_pl() -> PrimitiveMap {
        // slope 2 on [0, 1/3), slope 1/2 on [1/3, 1)
        PrimitiveMap::piecewise_linear(vec![(0.0, 0.0), (1.0 / 3.0, 2.0 / 3.0)]).unwrap()
    }

    #[test]
    fn rotation_examples() {
        let r = PrimitiveMap::rotation(0.25);
        assert!((r.eval(0.9) - 0.15).abs() < 1e-15);
        let id = PrimitiveMap::rotation(0.0);
        for t in [0.0, 0.3, 0.999] {
            assert_eq!(id.eval(t), t);
        }
        assert_eq!(r.derivative(0.4), 1.0);
    }

    #[test]
    fn mobius_fixed_points() {
        let m = PrimitiveMap::hyperbolic(2f64.sqrt()).unwrap();
        // Projective fixed points of diag(λ, 1/λ) are x = 0 and x = ∞.
        for p in [0.0, 0.5] {
            assert!(circle_dist(m.eval(p), p) < 1e-12);
        }
    }

    #[test]
    fn mobius_derivative_matches_finite_difference() {
        let lam = 1.7;
        let m = PrimitiveMap::hyperbolic(lam).unwrap();
        // repelling fixed point t = 1/2 has derivative λ²
        assert!((m.derivative(0.5) - lam * lam).abs() < 1e-12);
        let h = 1e-7;
        for &x in &[0.5, 0.1, 0.37, 0.8] {
            let fd = (m.eval(x + h) - m.eval(x - h)).rem_euclid(1.0) / (2.0 * h);
            assert!((fd - m.derivative(x)).abs() < 1e-5, "x={x}");
        }
    }

    #[test]
    fn pl_slopes_and_breakpoint_flag() {
        let f = two_slope_pl();
        assert!((f.derivative(0.1) - 2.0).abs() < 1e-12);
        assert!((f.derivative(0.6) - 0.5).abs() < 1e-12);
        let (d, flag) = f.derivative_one_sided(1.0 / 3.0);
        assert!(flag);
        assert!((d - 0.5).abs() < 1e-12);
        assert_eq!(f.lipschitz(), 2.0);
    }

    #[test]
    fn malformed_pl_rejected_at_construction() {
        assert!(PrimitiveMap::piecewise_linear(vec![(0.0, 0.0), (0.5, 0.2), (0.4, 0.3)]).is_err());
        assert!(PrimitiveMap::piecewise_linear(vec![(0.0, 0.0), (0.5, 1.2)]).is_err());
        assert!(PrimitiveMap::mobius(1.0, 2.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn variation_examples() {
        let arc = Arc::new(0.2, 0.3).unwrap();
        let r = PrimitiveMap::rotation(0.3);
        assert_eq!(log_derivative_variation(&r, &arc, 100).unwrap().value, 0.0);
        let v = log_derivative_variation(&two_slope_pl(), &arc, 101).unwrap();
        assert!((v.value - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(v.samples, 101);
    }

    #[test]
    fn mobius_variation_converges_to_dense_oracle() {
        let m = PrimitiveMap::hyperbolic(2.0).unwrap();
        let arc = Arc::new(0.05, 0.6).unwrap();
        let dense = log_derivative_variation(&m, &arc, 100_001).unwrap().value;
        // Cauchy refinement: successive nested grids settle within 1e-4.
        let mut prev = log_derivative_variation(&m, &arc, 3).unwrap().value;
        let mut n = 3;
        while n < 100_001 {
            n = 2 * n - 1;
            let cur = log_derivative_variation(&m, &arc, n).unwrap().value;
            assert!(cur + 1e-12 >= prev, "nested refinement must not decrease");
            prev = cur;
        }
        assert!((log_derivative_variation(&m, &arc, 4096).unwrap().value - dense).abs() < 1e-4);
        let _ = prev;
    }

    #[test]
    fn arc_basics() {
        let a = Arc::new(0.9, 0.2).unwrap();
        assert!((a.right() - 0.1).abs() < 1e-15);
        assert!(a.contains(a.midpoint()));
        assert!(a.contains(0.95) && a.contains(0.05) && !a.contains(0.5));
        let b = Arc::new(0.05, 0.3).unwrap();
        assert!(a.intersects(&b) && b.intersects(&a));
        let c = Arc::new(0.3, 0.1).unwrap();
        assert!(!a.intersects(&c));
        assert!(Arc::new(0.1, 1.0).is_err());
    }

    #[test]
    fn full_circle_variation_of_hyperbolic() {
        // log f′ sweeps [−2 log λ, 2 log λ] twice around the circle.
        let lam: f64 = 2.0;
        let m = PrimitiveMap::hyperbolic(lam).unwrap();
        let v = full_circle_variation(&m, 4096).unwrap().value;
        assert!((v - 8.0 * lam.ln()).abs() < 1e-6);
    }
}
