//! The experiment drivers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::ConeTolerance;
use crate::error::{LabError, Result};
use crate::fit::spearman;
use crate::grid::GridFunction;
use crate::linalg::{svd, SolverConfig};
use crate::operators::GridOperator;
use crate::random::{ball_bump, irreducible_metzler, permutation, rng, LabRng};
use crate::resolvent::{scan_window, OffsetLadder, Side, Window, WindowMode};
use crate::semigroup::{domination_index, DominationOptions, DominationStudy, DominationVerdict};
use crate::spectral::{check_spectral_assumption, leading_eigenpair, SpectralReport};

use super::spec::{gaussian_matrix, ConcentrationSpec, EquivalenceSpec, InputSpec, ThresholdCell, ThresholdSpec, Trend};

/// Largest offset of a plain or strong scan on each side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPair {
    pub left: f64,
    pub right: f64,
}

impl WindowPair {
    pub fn both_nonempty(&self) -> bool {
        self.left > 0.0 && self.right > 0.0
    }
}

fn scan_pair(op: &GridOperator, report: &SpectralReport, f: &GridFunction, mode: WindowMode, ladder: &OffsetLadder, tol: &ConeTolerance, cfg: &SolverConfig) -> Result<WindowPair> {
    let u = report.space().ones();
    let left = scan_window(op, report, f, Side::Left, mode, &u, ladder, tol, cfg)?;
    let right = scan_window(op, report, f, Side::Right, mode, &u, ladder, tol, cfg)?;
    Ok(WindowPair {
        left: left.delta,
        right: right.delta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    /// Random irreducible Metzler matrix.
    Random,
    /// Two copies of one block, hidden by a permutation.
    BlockDiagonal,
    /// `[[B, 0], [C, B]]` with `C ≥ 0`, hidden by a permutation.
    BlockTriangular,
}

/// One matrix of an equivalence suite, with enough data to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCase {
    pub index: usize,
    pub kind: CaseKind,
    pub side: usize,
    pub lambda0: f64,
    pub assumption: bool,
    pub plain: Vec<WindowPair>,
    pub strong: Vec<WindowPair>,
    /// Random cases: assumption and all plain windows; violations: some strong window empty.
    pub passed: bool,
    /// Row-major matrix entries (witness).
    pub matrix: Vec<f64>,
    /// The inputs that were scanned (witnesses).
    pub inputs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub cases: Vec<EquivalenceCase>,
    pub random_passed: usize,
    pub random_total: usize,
    pub violations_detected: usize,
    pub violations_total: usize,
}

impl EquivalenceReport {
    pub fn all_passed(&self) -> bool {
        self.random_passed == self.random_total && self.violations_detected == self.violations_total
    }
}

fn engineered(rng: &mut LabRng, kind: CaseKind, block: usize, density: f64) -> DMatrix<f64> {
    let b = irreducible_metzler(rng, block, density);
    let n = 2 * block;
    let mut m = DMatrix::zeros(n, n);
    m.view_mut((0, 0), (block, block)).copy_from(&b);
    m.view_mut((block, block), (block, block)).copy_from(&b);
    if kind == CaseKind::BlockTriangular {
        for i in 0..block {
            for j in 0..block {
                if rng.random::<f64>() < density.max(0.2) {
                    m[(block + i, j)] = rng.random::<f64>();
                }
            }
        }
        m[(block, 0)] += 1.0;
    }
    let p = permutation(rng, n);
    &p * m * p.transpose()
}

fn run_case(
    index: usize,
    kind: CaseKind,
    m: DMatrix<f64>,
    rng: &mut LabRng,
    spec: &EquivalenceSpec,
    cfg: &SolverConfig,
) -> Result<EquivalenceCase> {
    let tol = ConeTolerance::relative(spec.tol_rel)?;
    let op = GridOperator::custom(&m, format!("{}_{index}", match kind {
        CaseKind::Random => "metzler",
        CaseKind::BlockDiagonal => "block_diagonal",
        CaseKind::BlockTriangular => "block_triangular",
    }))?;
    let u = op.space().ones();
    let (report, verdict) = check_spectral_assumption(&op, &u, &tol, cfg)?;
    let inputs = InputSpec::Mixed {
        count: spec.inputs_per_matrix,
    }
    .generate(op.space(), rng);
    let mut plain = Vec::new();
    let mut strong = Vec::new();
    for f in &inputs {
        match kind {
            CaseKind::Random => plain.push(scan_pair(&op, &report, f, WindowMode::Plain, &spec.ladder, &tol, cfg)?),
            _ => strong.push(scan_pair(&op, &report, f, WindowMode::Strong, &spec.ladder, &tol, cfg)?),
        }
    }
    let passed = match kind {
        CaseKind::Random => verdict.overall && plain.iter().all(WindowPair::both_nonempty),
        _ => strong.iter().any(|w| !w.both_nonempty()),
    };
    Ok(EquivalenceCase {
        index,
        kind,
        side: m.nrows(),
        lambda0: report.lambda0,
        assumption: verdict.overall,
        plain,
        strong,
        passed,
        matrix: m.transpose().as_slice().to_vec(),
        inputs: inputs.iter().map(|f| f.as_slice().to_vec()).collect(),
    })
}

/// Random irreducible Metzler matrices must satisfy the spectral assumption and
/// have nonempty plain windows on both sides; engineered violations of
/// simplicity must break the strong two-sided conclusion for some input.
pub fn run_equivalence_suite(seed: u64, spec: &EquivalenceSpec, cfg: &SolverConfig) -> Result<EquivalenceReport> {
    if spec.count == 0 {
        return Err(LabError::domain("equivalence suites need count >= 1"));
    }
    let mut master = rng(seed);
    let total = spec.count + spec.violations;
    // one independent stream per case keeps the suite reproducible under parallelism
    let jobs: Vec<(usize, CaseKind, usize, u64)> = (0..total)
        .map(|i| {
            let (kind, side) = if i < spec.count {
                (CaseKind::Random, master.random_range(spec.min_side..=spec.max_side))
            } else {
                let kind = if (i - spec.count).is_multiple_of(2) {
                    CaseKind::BlockDiagonal
                } else {
                    CaseKind::BlockTriangular
                };
                let lo = (spec.min_side / 2).max(2);
                let hi = (spec.max_side / 2).max(lo);
                (kind, master.random_range(lo..=hi))
            };
            (i, kind, side, master.random())
        })
        .collect();
    let cases: Vec<EquivalenceCase> = jobs
        .par_iter()
        .map(|&(i, kind, side, s)| {
            let mut r = rng(s);
            let m = match kind {
                CaseKind::Random => irreducible_metzler(&mut r, side, spec.density),
                _ => engineered(&mut r, kind, side, spec.density),
            };
            run_case(i, kind, m, &mut r, spec, cfg)
        })
        .collect::<Result<_>>()?;
    let count = |k: bool| cases.iter().filter(|c| (c.kind == CaseKind::Random) == k).count();
    let ok = |k: bool| cases.iter().filter(|c| (c.kind == CaseKind::Random) == k && c.passed).count();
    Ok(EquivalenceReport {
        random_passed: ok(true),
        random_total: count(true),
        violations_detected: ok(false),
        violations_total: count(false),
        cases,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellVerdict {
    Robust,
    Degenerate,
    Skipped,
}

impl CellVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellVerdict::Robust => "robust",
            CellVerdict::Degenerate => "degenerate",
            CellVerdict::Skipped => "skipped",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOutcome {
    pub d: usize,
    pub p: f64,
    pub k: u32,
    pub verdict: CellVerdict,
    pub growth_exponent: Option<f64>,
    pub predicted_robust: Option<bool>,
    /// Nonempty anti-maximum windows on the finest mesh, out of the inputs scanned.
    pub windows: Option<(usize, usize)>,
    pub study: Option<DominationStudy>,
    pub skipped_reason: Option<String>,
}

impl ThresholdOutcome {
    /// Whether the verdict agrees with the predicted threshold (skipped cells count as agreeing).
    pub fn agrees(&self) -> bool {
        match (self.verdict, self.predicted_robust) {
            (CellVerdict::Skipped, _) | (_, None) => true,
            (v, Some(r)) => (v == CellVerdict::Robust) == r,
        }
    }
}

fn run_cell(cell: &ThresholdCell, spec: &ThresholdSpec, rng: &mut LabRng, cfg: &SolverConfig) -> Result<ThresholdOutcome> {
    let opts = DominationOptions {
        p: cell.p,
        n_max: cell.n_max,
        sigma: cell.sigma,
        mode: cell.norm,
        threshold: cell.threshold,
    };
    let study = domination_index(|n| cell.operator.build(n), &cell.mesh, &opts, cfg)?;
    let first = &study.diagnostics[0];
    let verdict = match first.verdict {
        DominationVerdict::Robust => CellVerdict::Robust,
        DominationVerdict::Degenerate => CellVerdict::Degenerate,
    };
    let windows = if cell.window {
        let op = cell.operator.build(*cell.mesh.last().expect("validated"))?;
        let report = leading_eigenpair(&op, cfg)?;
        let u = op.space().ones();
        let tol = ConeTolerance::relative(spec.tol_rel)?;
        let inputs = spec.inputs.generate(op.space(), rng);
        let mut ok = 0;
        for f in &inputs {
            if !scan_window(&op, &report, f, Side::Left, WindowMode::Plain, &u, &spec.ladder, &tol, cfg)?.is_empty() {
                ok += 1;
            }
        }
        Some((ok, inputs.len()))
    } else {
        None
    };
    Ok(ThresholdOutcome {
        d: cell.operator.dim(),
        p: cell.p,
        k: cell.operator.power(),
        verdict,
        growth_exponent: Some(first.growth_exponent),
        predicted_robust: cell.operator.predicted_robust(cell.p),
        windows,
        study: Some(study),
        skipped_reason: None,
    })
}

/// Domination verdicts (and optionally anti-maximum windows) per `(d, p, k)` cell.
/// Cells that fail for reasons of scale are marked skipped with the reason.
pub fn run_threshold_study(seed: u64, spec: &ThresholdSpec, cfg: &SolverConfig) -> Result<Vec<ThresholdOutcome>> {
    let mut master = rng(seed);
    let seeds: Vec<u64> = spec.cells.iter().map(|_| master.random()).collect();
    spec.cells
        .iter()
        .zip(seeds)
        .map(|(cell, s)| match run_cell(cell, spec, &mut rng(s), cfg) {
            Ok(out) => Ok(out),
            Err(e @ (LabError::Domain(_) | LabError::Precondition(_) | LabError::Solver { .. })) => Ok(ThresholdOutcome {
                d: cell.operator.dim(),
                p: cell.p,
                k: cell.operator.power(),
                verdict: CellVerdict::Skipped,
                growth_exponent: None,
                predicted_robust: cell.operator.predicted_robust(cell.p),
                windows: None,
                study: None,
                skipped_reason: Some(e.to_string()),
            }),
            Err(e) => Err(e),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationOutcome {
    pub levels: Vec<usize>,
    pub distances: Vec<f64>,
    pub deltas: Vec<f64>,
    pub spearman: f64,
    pub trend: Trend,
    pub passed: bool,
}

/// Bumps of a fixed radius centred at distance `2^{-j}` from the boundary.
pub fn concentrating_family(op: &GridOperator, spec: &ConcentrationSpec) -> Result<Vec<GridFunction>> {
    let dim = op.space().dim;
    let axis = spec.axis.unwrap_or(dim - 1);
    (1..=spec.levels)
        .map(|j| {
            let mut c = [0.5; 3];
            c[axis] = 0.5f64.powi(j as i32);
            ball_bump(op.space(), c, spec.radius, spec.p)
        })
        .collect()
}

/// Window widths along a family of inputs and their trend in the family index.
pub fn run_concentration_study(op: &GridOperator, family: &[GridFunction], spec: &ConcentrationSpec, cfg: &SolverConfig) -> Result<ConcentrationOutcome> {
    let report = leading_eigenpair(op, cfg)?;
    let u = op.space().ones();
    let tol = ConeTolerance::relative(spec.tol_rel)?;
    let deltas: Vec<f64> = family
        .iter()
        .map(|f| Ok(scan_window(op, &report, f, spec.side, spec.mode, &u, &spec.ladder, &tol, cfg)?.delta))
        .collect::<Result<_>>()?;
    let levels: Vec<usize> = (1..=family.len()).collect();
    let x: Vec<f64> = levels.iter().map(|&j| j as f64).collect();
    let rho = spearman(&x, &deltas)?;
    let passed = match spec.expect {
        Trend::Decreasing => rho <= -0.9,
        Trend::Constant => {
            let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = deltas.iter().copied().fold(0.0, f64::max);
            lo > 0.0 && hi <= lo * spec.ladder.ratio * (1.0 + 1e-12)
        }
    };
    Ok(ConcentrationOutcome {
        distances: levels.iter().map(|&j| 0.5f64.powi(j as i32)).collect(),
        levels,
        deltas,
        spearman: rho,
        trend: spec.expect,
        passed,
    })
}

/// Relative threshold for numerical ranks.
const RANK_TOL: f64 = 1e-10;
/// Projection residual below which a vector counts as lying in the subspace.
const MEMBER_TOL: f64 = 1e-10;

/// Orthonormal basis of the column span and its numerical rank.
fn column_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() == 0 {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    let (u, s, _) = svd(m)?;
    let top = s.first().copied().unwrap_or(0.0);
    let rank = s.iter().filter(|&&x| x > RANK_TOL * top.max(f64::MIN_POSITIVE) * m.nrows().max(m.ncols()) as f64).count();
    Ok(u.columns(0, rank).into_owned())
}

/// `‖x - Q Qᵀ x‖ / ‖x‖` for an orthonormal `Q`.
pub fn projection_residual(q: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let norm = x.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (x - q * (q.transpose() * x)).norm() / norm
}

/// Why no member of the family has its range inside `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// A vector `f` with `T_k f ∉ V` for every `k`: the covering hypothesis fails.
    HypothesisFails { f: Vec<f64>, residuals: Vec<f64> },
    /// Every sample was covered yet no range lies in `V` (impossible in finite dimensions).
    Anomaly { samples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringOutcome {
    /// First `k` (0-based) with `range T_k ⊆ V`.
    pub index: Option<usize>,
    pub rank_v: usize,
    /// `rank [V | T_k]` per member.
    pub ranks: Vec<usize>,
    pub certificate: Option<Certificate>,
}

/// Finds a member whose range lies in `span(V)` by comparing `rank [V | T_k]` with `rank V`.
pub fn covering_search(family: &[DMatrix<f64>], span: &DMatrix<f64>, samples: usize, rng: &mut LabRng) -> Result<CoveringOutcome> {
    if family.is_empty() {
        return Err(LabError::domain("covering search needs at least one operator"));
    }
    let n = span.nrows();
    if family.iter().any(|t| t.nrows() != n) {
        return Err(LabError::validation("family members and the spanning set need the same row count"));
    }
    let q = column_basis(span)?;
    let rank_v = q.ncols();
    let mut ranks = Vec::with_capacity(family.len());
    let mut index = None;
    for (k, t) in family.iter().enumerate() {
        let joined = DMatrix::from_fn(n, span.ncols() + t.ncols(), |i, j| {
            if j < span.ncols() {
                span[(i, j)]
            } else {
                t[(i, j - span.ncols())]
            }
        });
        let r = column_basis(&joined)
            .map_err(|e| LabError::Rank(format!("rank of [V | T_{k}]: {e}")))?
            .ncols();
        ranks.push(r);
        if r == rank_v && index.is_none() {
            index = Some(k);
        }
    }
    let certificate = if index.is_some() {
        None
    } else {
        let mut found = None;
        for _ in 0..samples.max(1) {
            let f = crate::random::gaussian_vector(rng, family[0].ncols());
            let residuals: Vec<f64> = family.iter().map(|t| projection_residual(&q, &(t * &f))).collect();
            if residuals.iter().all(|&r| r > MEMBER_TOL) {
                found = Some(Certificate::HypothesisFails {
                    f: f.as_slice().to_vec(),
                    residuals,
                });
                break;
            }
        }
        Some(found.unwrap_or(Certificate::Anomaly { samples }))
    };
    Ok(CoveringOutcome {
        index,
        rank_v,
        ranks,
        certificate,
    })
}

/// Brute force: every sampled `f` has some `k` with `T_k f ∈ V`.
pub fn sampled_cover(family: &[DMatrix<f64>], span: &DMatrix<f64>, samples: usize, rng: &mut LabRng) -> Result<bool> {
    let q = column_basis(span)?;
    Ok((0..samples).all(|_| {
        let f = crate::random::gaussian_vector(rng, family[0].ncols());
        family.iter().any(|t| projection_residual(&q, &(t * &f)) <= MEMBER_TOL)
    }))
}

/// A random family of `size` members over `side × side` matrices with exactly
/// one member (at `planted`) mapping into the span of a random rank-`rank` set.
pub fn planted_family(rng: &mut LabRng, size: usize, side: usize, rank: usize) -> (Vec<DMatrix<f64>>, DMatrix<f64>, usize) {
    let span = gaussian_matrix(rng, side, rank);
    let planted = rng.random_range(0..size);
    let family = (0..size)
        .map(|k| {
            if k == planted {
                &span * gaussian_matrix(rng, rank, side)
            } else {
                gaussian_matrix(rng, side, side)
            }
        })
        .collect();
    (family, span, planted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringTrial {
    pub trial: usize,
    pub planted: usize,
    pub found: Option<usize>,
    /// Brute-force sampled cover agrees with the rank verdict.
    pub brute_force_agrees: bool,
}

/// Planted-index trials; trial `i` uses its own stream derived from `seed`.
pub fn run_covering_trials(seed: u64, trials: usize, size: usize, side: usize, rank: usize, samples: usize) -> Result<Vec<CoveringTrial>> {
    let mut master = rng(seed);
    let seeds: Vec<u64> = (0..trials).map(|_| master.random()).collect();
    seeds
        .par_iter()
        .enumerate()
        .map(|(trial, &s)| {
            let mut r = rng(s);
            let (family, span, planted) = planted_family(&mut r, size, side, rank);
            let out = covering_search(&family, &span, samples, &mut r)?;
            let covered = sampled_cover(&family, &span, samples, &mut r)?;
            Ok(CoveringTrial {
                trial,
                planted,
                found: out.index,
                brute_force_agrees: covered == out.index.is_some(),
            })
        })
        .collect()
}

/// Scans one window per input.
#[allow(clippy::too_many_arguments)]
pub fn scan_batch(
    op: &GridOperator,
    report: &SpectralReport,
    inputs: &[GridFunction],
    side: Side,
    mode: WindowMode,
    u: &GridFunction,
    ladder: &OffsetLadder,
    tol: &ConeTolerance,
    cfg: &SolverConfig,
) -> Result<Vec<Window>> {
    inputs
        .iter()
        .map(|f| scan_window(op, report, f, side, mode, u, ladder, tol, cfg))
        .collect()
}
