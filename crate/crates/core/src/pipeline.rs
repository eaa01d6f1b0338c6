//! Scenario runs: balls, entropy curves, the non-wandering approximation,
//! gap classification, `ℓ` machinery, lemma sweeps and the inequality
//! checks, followed by the CSV/JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ball::{distortion_profile, Ball, DistortionProfile};
use crate::error::{Error, Result};
use crate::quasimorphism::{
    check_distortion_boxes, check_inverse_bound, check_orbit_ceiling, check_quasi_subadditivity,
    check_stabilizer_cosets, counting_bound_a, counting_bound_b, p_epsilon, t_set_construction, BoundForm,
    EllFamilyContext, LemmaReport, TSet,
};
use crate::scenario::{DistortionConfig, Scenario};
use crate::separation::{
    check_fundamental_inequality, curve_from_table, max_separated_exact, max_separated_greedy, uniform_grid,
    EntropyCurve, FundamentalReport, SeparationTable, CURVE_CSV_HEADER,
};
use crate::wandering::{
    approximate_nonwandering, check_type1_uniqueness, check_type_invariance, classify_all, gap_components, gaps_to_csv,
    with_scale, ClosedArc, GapComponent, GapKind, NonWanderingApprox, StructureCheck,
};

pub const CONSISTENCY_NOTE: &str = "finite-scale consistency check of slope equality, not a proof";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePair {
    pub epsilon: f64,
    pub full: EntropyCurve,
    pub omega: EntropyCurve,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveComparison {
    pub epsilon: f64,
    pub slope_a: f64,
    pub slope_b: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub verdict: &'static str,
    pub note: &'static str,
}

/// Slope difference of two curves at the same scale and `n` range.
pub fn compare_curves(a: &EntropyCurve, b: &EntropyCurve, tolerance: f64) -> Result<CurveComparison> {
    let ns = |c: &EntropyCurve| c.rows.iter().map(|r| r.n).collect::<Vec<_>>();
    if a.epsilon != b.epsilon || ns(a) != ns(b) {
        return Err(Error::Config(format!(
            "curves not comparable: ε {} vs {}, n ranges {:?} vs {:?}",
            a.epsilon,
            b.epsilon,
            a.rows.last().map(|r| r.n),
            b.rows.last().map(|r| r.n)
        )));
    }
    let difference = (a.slope - b.slope).abs();
    Ok(CurveComparison {
        epsilon: a.epsilon,
        slope_a: a.slope,
        slope_b: b.slope,
        difference,
        tolerance,
        verdict: if difference <= tolerance {
            "consistent"
        } else {
            "inconsistent"
        },
        note: CONSISTENCY_NOTE,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BallStats {
    pub radius: usize,
    /// `#B(n)` for `n = 0..=radius`.
    pub sizes: Vec<usize>,
    pub collision_count: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OmegaSummary {
    pub depth: usize,
    pub delta: f64,
    pub arcs: Vec<ClosedArc>,
    pub total_length: f64,
    pub full_circle: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub left: f64,
    pub length: f64,
    pub kind: GapKind,
    pub stabilizer: Option<String>,
    pub search_depth: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistortionSummary {
    pub mode: String,
    /// `q̂(m)` for `m = 0..`.
    pub staircase: Vec<usize>,
    pub profiles: Vec<(String, DistortionProfile)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CountingCheck {
    pub n: usize,
    pub bound_linear: f64,
    pub bound_distortion: Option<f64>,
    /// `(gap left endpoint, greedy in-gap cardinality)`.
    pub measured: Vec<(f64, usize)>,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TSetCheck {
    pub n: usize,
    pub s_points: usize,
    pub result: std::result::Result<TSet, String>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleReport {
    pub epsilon: f64,
    pub k: usize,
    pub type2_large: usize,
    pub c_eps: usize,
    pub orbit_gaps: usize,
    pub orbit_truncation_depth: usize,
    pub counting: CountingCheck,
    pub fundamental_linear: FundamentalReport,
    pub fundamental_distortion: Option<FundamentalReport>,
    pub t_set: TSetCheck,
    pub comparison: CurveComparison,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub lipschitz: f64,
    pub ball: BallStats,
    pub curves: Vec<CurvePair>,
    pub omega: OmegaSummary,
    pub gaps: Vec<GapRow>,
    pub distortion: Option<DistortionSummary>,
    pub scales: Vec<ScaleReport>,
    pub lemmas: Vec<LemmaReport>,
    pub checks: Vec<Verdict>,
    pub all_passed: bool,
}

/// Artifacts written so far, with their SHA-256 digests.
struct ArtifactSink {
    dir: Option<PathBuf>,
    written: Vec<(String, String)>,
}

impl ArtifactSink {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(ArtifactSink {
            dir: dir.map(Path::to_path_buf),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        if let Some(d) = &self.dir {
            fs::write(d.join(name), contents)?;
            let digest = Sha256::digest(contents.as_bytes());
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            self.written.push((name.to_string(), hex));
        }
        Ok(())
    }

    fn finish(&self, error: Option<&str>) -> Result<()> {
        let Some(d) = &self.dir else { return Ok(()) };
        let mut m = String::new();
        match error {
            None => m.push_str("status: complete\n"),
            Some(e) => m.push_str(&format!("status: incomplete\nerror: {e}\n")),
        }
        for (name, hex) in &self.written {
            m.push_str(&format!("{hex}  {name}\n"));
        }
        fs::write(d.join("MANIFEST"), m)?;
        Ok(())
    }
}

/// Wall-clock seconds per stage; kept out of the deterministic artifacts.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timing {
    pub stages: Vec<(String, f64)>,
}

impl Timing {
    fn record(&mut self, stage: &str, start: Instant) {
        self.stages.push((stage.to_string(), start.elapsed().as_secs_f64()));
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    pub timing: Timing,
}

/// Run every stage; with `out` set, artifacts and a `MANIFEST` are written
/// there (the manifest marks a failed run as incomplete).
pub fn run_scenario(scenario: &Scenario, out: Option<&Path>) -> Result<RunOutcome> {
    let mut sink = ArtifactSink::new(out)?;
    let mut timing = Timing::default();
    let result = run_stages(scenario, &mut sink, &mut timing);
    if let Some(d) = out {
        fs::write(d.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    }
    match result {
        Ok(report) => {
            sink.write("lemmas.json", &serde_json::to_string_pretty(&report.lemmas)?)?;
            sink.write("report.json", &serde_json::to_string_pretty(&report)?)?;
            sink.finish(None)?;
            Ok(RunOutcome { report, timing })
        }
        Err(e) => {
            sink.finish(Some(&e.to_string()))?;
            Err(e)
        }
    }
}

pub fn run_scenario_file(path: &Path, out: Option<&Path>) -> Result<RunOutcome> {
    let scenario = Scenario::load(path).map_err(|e| e.in_module("cli-harness"))?;
    run_scenario(&scenario, out)
}

fn structure_report(name: &str, c: StructureCheck, depth: usize) -> LemmaReport {
    LemmaReport {
        lemma: name.to_string(),
        instances_checked: c.instances_checked,
        skipped: 0,
        violations: c.violations,
        parameters: serde_json::json!({ "depth": depth }),
    }
}

fn verdict(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

fn run_stages(sc: &Scenario, sink: &mut ArtifactSink, timing: &mut Timing) -> Result<RunReport> {
    const GROUP: &str = "group-words";
    const SEP: &str = "separation-entropy";
    const WAND: &str = "wandering-structure";
    const QM: &str = "quasimorphism";
    let t = &sc.tolerances;

    let start = Instant::now();
    let system = sc.system().map_err(|e| e.in_module(GROUP))?;
    let ball = Ball::enumerate(&system, sc.n_max, sc.fingerprint(), t.max_ball_size).map_err(|e| e.in_module(GROUP))?;
    let stats = BallStats {
        radius: ball.radius(),
        sizes: (0..=ball.radius()).map(|n| ball.size_at(n)).collect(),
        collision_count: ball.collision_count(),
        fingerprint: sc.fingerprint().describe(),
    };
    timing.record("ball", start);

    let start = Instant::now();
    let approx = approximate_nonwandering(&ball, sc.n_omega, sc.delta).map_err(|e| e.in_module(WAND))?;
    sink.write("omega.csv", &approx.to_csv())?;
    let raw_gaps = gap_components(&approx, sc.epsilon_list[0]).map_err(|e| e.in_module(WAND))?;
    let gaps = classify_all(&raw_gaps, &ball, sc.classification_depth, sc.tau_fix()).map_err(|e| e.in_module(WAND))?;
    let per_scale: Vec<(f64, Vec<GapComponent>)> = sc.epsilon_list.iter().map(|&e| (e, with_scale(&gaps, e))).collect();
    sink.write("gaps.csv", &gaps_to_csv(&per_scale, &system))?;
    timing.record("omega", start);

    let start = Instant::now();
    let mut curves = Vec::new();
    let mut full_tables = Vec::new();
    let mut curves_csv = format!("set,{CURVE_CSV_HEADER}");
    for &eps in &sc.epsilon_list {
        let spacing = sc.grid_spacing(eps);
        let full_table =
            SeparationTable::build(&ball, uniform_grid(spacing), eps, sc.n_max).map_err(|e| e.in_module(SEP))?;
        let full = curve_from_table(&ball, &full_table, spacing);
        let omega_candidates: Vec<f64> = uniform_grid(spacing)
            .into_iter()
            .filter(|&x| approx.contains(x))
            .collect();
        if omega_candidates.is_empty() {
            return Err(Error::EmptyRestriction.in_module(SEP));
        }
        let omega_table =
            SeparationTable::build(&ball, omega_candidates, eps, sc.n_max).map_err(|e| e.in_module(SEP))?;
        let mut omega = curve_from_table(&ball, &omega_table, spacing);
        if omega_table.candidates().len() <= t.exact_cap {
            for row in &mut omega.rows {
                row.s_lower = max_separated_exact(&omega_table, row.n, t.exact_cap)
                    .map_err(|e| e.in_module(SEP))?
                    .len();
            }
        }
        for (set, c) in [("full", &full), ("omega", &omega)] {
            for line in c.to_csv_rows().lines() {
                curves_csv.push_str(&format!("{set},{line}\n"));
            }
        }
        curves.push(CurvePair {
            epsilon: eps,
            full,
            omega,
        });
        full_tables.push(full_table);
    }
    sink.write("curves.csv", &curves_csv)?;
    timing.record("curves", start);

    let start = Instant::now();
    let mut lemmas = Vec::new();
    let ld = &sc.lemma_depths;
    lemmas.push(
        check_quasi_subadditivity(&gaps, &ball, ld.quasi_subadditivity, t.max_iter).map_err(|e| e.in_module(QM))?,
    );
    lemmas.push(check_inverse_bound(&gaps, &ball, ld.inverse_bound, t.max_iter).map_err(|e| e.in_module(QM))?);
    lemmas.push(
        check_distortion_boxes(&gaps, &ball, ld.distortion_box, t.variation_samples, t.max_iter)
            .map_err(|e| e.in_module(QM))?,
    );
    lemmas.push(structure_report(
        "type-invariance",
        check_type_invariance(&gaps, &ball, sc.classification_depth, sc.tau_fix()),
        sc.classification_depth,
    ));
    lemmas.push(structure_report(
        "type1-uniqueness",
        check_type1_uniqueness(&gaps, &ball, sc.classification_depth, sc.tau_fix()),
        sc.classification_depth / 2,
    ));
    timing.record("lemmas", start);

    let start = Instant::now();
    let fctxs = per_scale
        .iter()
        .map(|(eps, g)| EllFamilyContext::build(g, &ball, *eps, sc.orbit_depth(), t.max_iter))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_module(QM))?;
    let mut ceiling = check_orbit_ceiling(&fctxs[0], &per_scale[0].1, &ball, ld.orbit_ceiling, t.variation_samples)
        .map_err(|e| e.in_module(QM))?;
    ceiling.parameters["epsilon"] = serde_json::json!(sc.epsilon_list[0]);
    lemmas.push(ceiling);

    let distortion = distortion_summary(sc, &system, &fctxs).map_err(|e| e.in_module(QM))?;
    let staircase = distortion.as_ref().map(|d| d.staircase.as_slice());
    let mut scales = Vec::new();
    for (((eps, g), fctx), (pair, full_table)) in per_scale.iter().zip(&fctxs).zip(curves.iter().zip(&full_tables)) {
        let eps = *eps;
        let n = sc.counting_n();
        let counting =
            counting_check(&ball, g, fctx, eps, sc.grid_spacing(eps), n, staircase).map_err(|e| e.in_module(QM))?;
        let mut cosets = check_stabilizer_cosets(fctx, g, &ball, n, staircase).map_err(|e| e.in_module(QM))?;
        cosets.parameters["epsilon"] = serde_json::json!(eps);
        lemmas.push(cosets);
        let fnm = sc.fundamental_n_max();
        let (k, c) = (fctx.k, fctx.c_eps);
        let fundamental_linear = check_fundamental_inequality(&pair.full, &pair.omega, "linear", fnm, |n| {
            p_epsilon(k, eps, n, BoundForm::Linear, c, None)
        })
        .map_err(|e| e.in_module(QM))?;
        let fundamental_distortion = match staircase {
            Some(q) => Some(
                check_fundamental_inequality(&pair.full, &pair.omega, "distortion", fnm, |n| {
                    p_epsilon(k, eps, n, BoundForm::Distortion, c, Some(q))
                })
                .map_err(|e| e.in_module(QM))?,
            ),
            None => None,
        };
        let s = max_separated_greedy(full_table, fnm);
        let t_result = t_set_construction(&s, &approx, g, &ball, fnm, eps).map_err(|e| e.to_string());
        let t_set = TSetCheck {
            n: fnm,
            s_points: s.len(),
            passed: t_result.as_ref().is_ok_and(|t| t.all_separated),
            result: t_result,
        };
        let comparison = compare_curves(&pair.full, &pair.omega, t.slope_tolerance).map_err(|e| e.in_module(SEP))?;
        scales.push(ScaleReport {
            epsilon: eps,
            k,
            type2_large: fctx.type2_count(),
            c_eps: c,
            orbit_gaps: fctx.orbit.len(),
            orbit_truncation_depth: fctx.orbit_truncation_depth,
            counting,
            fundamental_linear,
            fundamental_distortion,
            t_set,
            comparison,
        });
    }
    timing.record("inequalities", start);

    let checks = collect_verdicts(&curves, &lemmas, &scales);
    let all_passed = checks.iter().all(|v| v.passed);
    Ok(RunReport {
        scenario: sc.clone(),
        lipschitz: system.lipschitz(),
        ball: stats,
        curves,
        omega: omega_summary(&approx),
        gaps: gaps
            .iter()
            .map(|g| GapRow {
                left: g.arc.left(),
                length: g.arc.length(),
                kind: g.kind,
                stabilizer: g.stabilizer_word.as_ref().map(|w| system.format_word(w)),
                search_depth: g.search_depth,
            })
            .collect(),
        distortion,
        scales,
        lemmas,
        checks,
        all_passed,
    })
}

fn omega_summary(a: &NonWanderingApprox) -> OmegaSummary {
    OmegaSummary {
        depth: a.depth,
        delta: a.delta,
        arcs: a.arcs.clone(),
        total_length: a.total_length(),
        full_circle: a.is_full(),
    }
}

/// Staircase covering `2·max(counting_n, fundamental_n_max)`, profiled on a
/// dedicated ball when requested.
fn distortion_summary(
    sc: &Scenario,
    system: &crate::group::GeneratingSystem,
    fctxs: &[EllFamilyContext],
) -> Result<Option<DistortionSummary>> {
    let need = 2 * sc.counting_n().max(sc.fundamental_n_max());
    match &sc.distortion {
        None => Ok(None),
        Some(DistortionConfig::Linear) => Ok(Some(DistortionSummary {
            mode: "linear".into(),
            staircase: DistortionProfile::linear(need),
            profiles: Vec::new(),
        })),
        Some(DistortionConfig::Profile { r_max }) => {
            let ball = Ball::enumerate(system, need, sc.fingerprint(), sc.tolerances.max_ball_size)?;
            let mut seen: Vec<String> = Vec::new();
            let mut profiles = Vec::new();
            for f in fctxs {
                for c in &f.family {
                    let name = system.format_word(&c.h);
                    if !seen.contains(&name) {
                        profiles.push((name.clone(), distortion_profile(&ball, &c.h, *r_max)?));
                        seen.push(name);
                    }
                }
            }
            let ps: Vec<DistortionProfile> = profiles.iter().map(|(_, p)| p.clone()).collect();
            let staircase = DistortionProfile::combine(&ps).unwrap_or_else(|| vec![0; need + 1]);
            Ok(Some(DistortionSummary {
                mode: "profile".into(),
                staircase,
                profiles,
            }))
        }
    }
}

fn counting_check(
    ball: &Ball,
    gaps: &[GapComponent],
    fctx: &EllFamilyContext,
    eps: f64,
    spacing: f64,
    n: usize,
    staircase: Option<&[usize]>,
) -> Result<CountingCheck> {
    let bound_linear = counting_bound_a(fctx.k, eps, fctx.c_eps, n).bound;
    let bound_distortion = staircase.map(|q| counting_bound_b(fctx.k, eps, q, n)).transpose()?;
    let mut measured = Vec::new();
    for c in &fctx.family {
        let arc = gaps[c.gap].arc;
        let cands: Vec<f64> = uniform_grid(spacing).into_iter().filter(|&x| arc.contains(x)).collect();
        let m = if cands.is_empty() {
            0
        } else {
            let table = SeparationTable::build(ball, cands, eps, n)?;
            max_separated_greedy(&table, n).len()
        };
        measured.push((arc.left(), m));
    }
    let holds = measured
        .iter()
        .all(|&(_, m)| m as f64 <= bound_linear && bound_distortion.is_none_or(|b| m as f64 <= b));
    Ok(CountingCheck {
        n,
        bound_linear,
        bound_distortion,
        measured,
        holds,
    })
}

fn collect_verdicts(curves: &[CurvePair], lemmas: &[LemmaReport], scales: &[ScaleReport]) -> Vec<Verdict> {
    let mut v = Vec::new();
    for c in curves {
        v.push(verdict(
            format!("ball-ceiling eps={}", c.epsilon),
            c.full.ball_ceiling_holds() && c.omega.ball_ceiling_holds(),
            format!("full slope {:.6}, omega slope {:.6}", c.full.slope, c.omega.slope),
        ));
    }
    for l in lemmas {
        v.push(verdict(
            l.lemma.clone(),
            l.passed(),
            format!(
                "{} checked, {} skipped, {} violations",
                l.instances_checked,
                l.skipped,
                l.violations.len()
            ),
        ));
    }
    for s in scales {
        let e = s.epsilon;
        v.push(verdict(
            format!("counting-bounds eps={e}"),
            s.counting.holds,
            format!(
                "{:?} vs {} / {:?}",
                s.counting.measured, s.counting.bound_linear, s.counting.bound_distortion
            ),
        ));
        v.push(verdict(
            format!("fundamental-linear eps={e}"),
            s.fundamental_linear.all_hold,
            s.fundamental_linear.caveat,
        ));
        if let Some(b) = &s.fundamental_distortion {
            v.push(verdict(format!("fundamental-distortion eps={e}"), b.all_hold, b.caveat));
        }
        v.push(verdict(
            format!("t-set eps={e}"),
            s.t_set.passed,
            match &s.t_set.result {
                Ok(t) => format!("{} points from {} gaps", t.len(), t.gaps_hit.len()),
                Err(err) => err.clone(),
            },
        ));
        v.push(verdict(
            format!("slope-consistency eps={e}"),
            s.comparison.verdict == "consistent",
            format!("|Δslope| = {:.6}", s.comparison.difference),
        ));
    }
    v
}

/// The curve section of a report, enough for `compare`.
#[derive(Debug, Clone, Deserialize)]
pub struct ReportCurves {
    pub curves: Vec<CurvePair>,
}

impl ReportCurves {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Full-curve slopes of two reports, matched by `ε`.
pub fn compare_reports(a: &ReportCurves, b: &ReportCurves, tolerance: f64) -> Result<Vec<CurveComparison>> {
    if a.curves.len() != b.curves.len() {
        return Err(Error::Config("reports cover different scale lists".into()));
    }
    a.curves
        .iter()
        .map(|ca| {
            let cb = b
                .curves
                .iter()
                .find(|c| c.epsilon == ca.epsilon)
                .ok_or_else(|| Error::Config(format!("ε = {} missing from second report", ca.epsilon)))?;
            compare_curves(&ca.full, &cb.full, tolerance)
        })
        .collect()
}
