//! Experiment configuration.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cone::ConeTolerance;
use crate::error::{LabError, Result};
use crate::grid::{GridFunction, GridSpace};
use crate::linalg::SolverConfig;
use crate::operators::{
    build_coupled, build_dtn, build_laplacian, build_power, build_rank_one, BoundaryCondition, GridOperator, MatrixPotential,
    ScalarPotential,
};
use crate::random::{squared_gaussian, LabRng};
use crate::resolvent::{OffsetLadder, Side, WindowMode};
use crate::semigroup::{NormMode, SigmaRule};
use crate::spectral::SpectralReport;

/// An operator family with everything but the mesh size fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    RankOne,
    Laplacian {
        dim: usize,
        bc: BoundaryCondition,
    },
    Coupled {
        dim: usize,
        components: usize,
        potential: MatrixPotential,
    },
    Dtn {
        /// Dimension of the domain; the operator lives on its boundary.
        dim: usize,
        #[serde(default = "zero_potential")]
        potential: ScalarPotential,
    },
    Power {
        k: u32,
        base: Box<OperatorSpec>,
    },
}

fn zero_potential() -> ScalarPotential {
    ScalarPotential::Constant(0.0)
}

impl OperatorSpec {
    /// Builds the operator with `n` nodes per axis (`n` nodes for `rank_one`).
    pub fn build(&self, n: usize) -> Result<GridOperator> {
        match self {
            OperatorSpec::RankOne => build_rank_one(n),
            OperatorSpec::Laplacian { dim, bc } => build_laplacian(*dim, n, bc.clone()),
            OperatorSpec::Coupled {
                dim,
                components,
                potential,
            } => build_coupled(n, *dim, *components, potential.clone()),
            OperatorSpec::Dtn { dim, potential } => build_dtn(n, *dim, potential.clone()),
            OperatorSpec::Power { k, base } => build_power(&base.build(n)?, *k, true),
        }
    }

    /// Dimension of the underlying domain.
    pub fn dim(&self) -> usize {
        match self {
            OperatorSpec::RankOne => 1,
            OperatorSpec::Laplacian { dim, .. } | OperatorSpec::Coupled { dim, .. } | OperatorSpec::Dtn { dim, .. } => *dim,
            OperatorSpec::Power { base, .. } => base.dim(),
        }
    }

    /// Power `k` of the operator (1 unless it is a power).
    pub fn power(&self) -> u32 {
        match self {
            OperatorSpec::Power { k, base } => k * base.power(),
            _ => 1,
        }
    }

    /// Whether `dom(A) ⊆ L^∞` is expected on `L^p`; `None` where no threshold is known.
    pub fn predicted_robust(&self, p: f64) -> Option<bool> {
        let d = self.dim() as f64;
        match self {
            OperatorSpec::RankOne => Some(true),
            OperatorSpec::Dtn { dim, .. } => Some(*dim <= 2),
            OperatorSpec::Laplacian { .. } | OperatorSpec::Coupled { .. } | OperatorSpec::Power { .. } => {
                Some(self.power() as f64 * p > d / 2.0)
            }
        }
    }
}

/// Shorthands `rank_one`, `dirichlet:D`, `neumann:D`, `robin:D:BETA`, `dtn:D`,
/// `coupled:D:N` (off-diagonal coupling by ones) and `power:K:<base>`; text
/// starting with `{` is read as an operator JSON object.
impl FromStr for OperatorSpec {
    type Err = LabError;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.starts_with('{') {
            return serde_json::from_str(text).map_err(|e| LabError::Parse(format!("operator JSON: {e}")));
        }
        let bad = |what: &str, v: &str| LabError::Parse(format!("bad {what} {v:?} in operator {text:?}"));
        let dim = |d: &str| d.parse::<usize>().map_err(|_| bad("dimension", d));
        let lap = |d: &str, bc| Ok(OperatorSpec::Laplacian { dim: dim(d)?, bc });
        let parts: Vec<&str> = text.split(':').collect();
        match parts.as_slice() {
            ["rank_one"] => Ok(OperatorSpec::RankOne),
            ["dirichlet", d] => lap(d, BoundaryCondition::Dirichlet),
            ["neumann", d] => lap(d, BoundaryCondition::Neumann),
            ["robin", d, beta] => lap(d, BoundaryCondition::robin(beta.parse().map_err(|_| bad("Robin coefficient", beta))?)),
            ["dtn", d] => Ok(OperatorSpec::Dtn {
                dim: dim(d)?,
                potential: zero_potential(),
            }),
            ["coupled", d, n] => {
                let n: usize = n.parse().map_err(|_| bad("component count", n))?;
                Ok(OperatorSpec::Coupled {
                    dim: dim(d)?,
                    components: n,
                    potential: MatrixPotential::Constant(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })),
                })
            }
            ["power", k, rest @ ..] if !rest.is_empty() => Ok(OperatorSpec::Power {
                k: k.parse().map_err(|_| bad("power", k))?,
                base: Box::new(rest.join(":").parse()?),
            }),
            _ => Err(LabError::Parse(format!(
                "unknown operator {text:?}; expected rank_one, dirichlet:D, neumann:D, robin:D:BETA, dtn:D, coupled:D:N, power:K:<base> or JSON"
            ))),
        }
    }
}

/// Reference vector `u` of the cone tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    #[default]
    Ones,
    /// The leading eigenvector `v`.
    Eigenvector,
}

impl Reference {
    pub fn vector(&self, report: &SpectralReport) -> GridFunction {
        match self {
            Reference::Ones => report.space().ones(),
            Reference::Eigenvector => report.v.clone(),
        }
    }
}

/// Random non-negative inputs, reproducible from the experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    SquaredGaussian { count: usize },
    /// Indicators of single random nodes.
    PointBumps { count: usize },
    /// Alternating squared Gaussians and point bumps.
    Mixed { count: usize },
    Constant,
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec::SquaredGaussian { count: 10 }
    }
}

impl InputSpec {
    pub fn count(&self) -> usize {
        match self {
            InputSpec::SquaredGaussian { count } | InputSpec::PointBumps { count } | InputSpec::Mixed { count } => *count,
            InputSpec::Constant => 1,
        }
    }

    pub fn generate(&self, space: &Arc<GridSpace>, rng: &mut LabRng) -> Vec<GridFunction> {
        let point = |rng: &mut LabRng| {
            let i = rng.random_range(0..space.len());
            GridFunction::from_fn(space, |j, _| if i == j { 1.0 } else { 0.0 }).expect("length matches")
        };
        match self {
            InputSpec::SquaredGaussian { count } => (0..*count).map(|_| squared_gaussian(space, rng)).collect(),
            InputSpec::PointBumps { count } => (0..*count).map(|_| point(rng)).collect(),
            InputSpec::Mixed { count } => (0..*count)
                .map(|k| if k % 2 == 0 { squared_gaussian(space, rng) } else { point(rng) })
                .collect(),
            InputSpec::Constant => vec![space.ones()],
        }
    }
}

fn default_tol() -> f64 {
    1e-10
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowScanSpec {
    pub operator: OperatorSpec,
    pub mesh: usize,
    #[serde(default)]
    pub inputs: InputSpec,
    pub side: Side,
    #[serde(default = "plain")]
    pub mode: WindowMode,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub ladder: OffsetLadder,
    #[serde(default = "default_tol")]
    pub tol_rel: f64,
    /// Whether every window is expected to be nonempty.
    #[serde(default = "default_true")]
    pub expect_nonempty: bool,
}

fn plain() -> WindowMode {
    WindowMode::Plain
}

fn left() -> Side {
    Side::Left
}

/// One `(operator, p)` cell of a threshold study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdCell {
    pub operator: OperatorSpec,
    pub mesh: Vec<usize>,
    pub p: f64,
    #[serde(default = "one")]
    pub n_max: u32,
    #[serde(default = "auto")]
    pub norm: NormMode,
    #[serde(default = "above_bound")]
    pub sigma: SigmaRule,
    #[serde(default = "growth_threshold")]
    pub threshold: f64,
    /// Also scan anti-maximum windows on the finest mesh.
    #[serde(default)]
    pub window: bool,
}

fn one() -> u32 {
    1
}

fn auto() -> NormMode {
    NormMode::Auto
}

fn above_bound() -> SigmaRule {
    SigmaRule::AboveBound
}

fn growth_threshold() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    pub cells: Vec<ThresholdCell>,
    #[serde(default)]
    pub inputs: InputSpec,
    #[serde(default)]
    pub ladder: OffsetLadder,
    #[serde(default = "default_tol")]
    pub tol_rel: f64,
}

/// Expected behaviour of the widths along a concentrating family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    /// Spearman correlation with `j` at most `-0.9`.
    Decreasing,
    /// All widths within one ladder step of each other.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationSpec {
    pub operator: OperatorSpec,
    pub mesh: usize,
    /// Ball radius of every bump.
    pub radius: f64,
    /// Bumps sit at distance `2^{-j}` from the boundary, `j = 1..=levels`.
    pub levels: usize,
    /// Axis along which the bumps approach the boundary (default: the last one).
    #[serde(default)]
    pub axis: Option<usize>,
    /// Exponent of the `L^p` normalization.
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default = "left")]
    pub side: Side,
    #[serde(default = "plain")]
    pub mode: WindowMode,
    #[serde(default)]
    pub ladder: OffsetLadder,
    #[serde(default = "default_tol")]
    pub tol_rel: f64,
    pub expect: Trend,
}

fn two() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceSpec {
    pub count: usize,
    pub min_side: usize,
    pub max_side: usize,
    pub inputs_per_matrix: usize,
    pub violations: usize,
    pub density: f64,
    pub ladder: OffsetLadder,
    pub tol_rel: f64,
}

impl Default for EquivalenceSpec {
    fn default() -> Self {
        EquivalenceSpec {
            count: 50,
            min_side: 5,
            max_side: 40,
            inputs_per_matrix: 5,
            violations: 10,
            density: 0.3,
            ladder: OffsetLadder::default(),
            tol_rel: 1e-10,
        }
    }
}

/// Geometric times `t_min · ratio^k`, `k = 0..count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeLadder {
    pub t_min: f64,
    pub ratio: f64,
    pub count: usize,
}

impl TimeLadder {
    pub fn times(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.t_min * self.ratio.powi(k as i32)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSpec {
    pub operator: OperatorSpec,
    pub mesh: usize,
    pub p: Vec<f64>,
    pub times: TimeLadder,
    #[serde(default = "max_residual")]
    pub max_residual: f64,
    /// Expected closed range for the fitted exponent.
    #[serde(default)]
    pub q_range: Option<[f64; 2]>,
}

fn max_residual() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoveringSpec {
    pub trials: usize,
    pub family_size: usize,
    pub side: usize,
    pub subspace_rank: usize,
    /// Random vectors drawn for certificates and the brute-force cross-check.
    pub samples: usize,
}

impl Default for CoveringSpec {
    fn default() -> Self {
        CoveringSpec {
            trials: 100,
            family_size: 5,
            side: 10,
            subspace_rank: 5,
            samples: 20,
        }
    }
}

/// Source of the matrices in an expansion check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpansionSource {
    Operator { operator: OperatorSpec, mesh: usize },
    /// Random dense matrices with Gaussian entries.
    Random { count: usize, max_side: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSpec {
    pub source: ExpansionSource,
    #[serde(default = "orders")]
    pub orders: Vec<usize>,
    #[serde(default = "expansion_tol")]
    pub tol: f64,
}

fn orders() -> Vec<usize> {
    (0..=4).collect()
}

fn expansion_tol() -> f64 {
    1e-9
}

/// What to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    WindowScan(WindowScanSpec),
    ThresholdStudy(ThresholdSpec),
    ConcentrationStudy(ConcentrationSpec),
    EquivalenceSuite(EquivalenceSpec),
    SmoothingStudy(SmoothingSpec),
    CoveringSearch(CoveringSpec),
    ExpansionCheck(ExpansionSpec),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::WindowScan(_) => "window_scan",
            Experiment::ThresholdStudy(_) => "threshold_study",
            Experiment::ConcentrationStudy(_) => "concentration_study",
            Experiment::EquivalenceSuite(_) => "equivalence_suite",
            Experiment::SmoothingStudy(_) => "smoothing_study",
            Experiment::CoveringSearch(_) => "covering_search",
            Experiment::ExpansionCheck(_) => "expansion_check",
        }
    }
}

/// A complete, reproducible experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    pub experiment: Experiment,
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mesh: Option<Vec<usize>>,
    pub p: Option<Vec<f64>>,
    pub tol_rel: Option<f64>,
    pub dense_cap: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(seed: u64, experiment: Experiment) -> Self {
        ExperimentSpec {
            name: None,
            seed,
            solver: SolverConfig::default(),
            experiment,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| LabError::Parse(format!("experiment config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("specs always serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn cone_tolerance(&self) -> Result<ConeTolerance> {
        let rel = match &self.experiment {
            Experiment::WindowScan(s) => s.tol_rel,
            Experiment::ThresholdStudy(s) => s.tol_rel,
            Experiment::ConcentrationStudy(s) => s.tol_rel,
            Experiment::EquivalenceSuite(s) => s.tol_rel,
            _ => default_tol(),
        };
        ConeTolerance::relative(rel)
    }

    /// Structural checks that do not need any numerics.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::validation(msg));
        if self.solver.dense_cap == 0 || self.solver.eig_dense_cap == 0 {
            return bad("dense caps must be positive".into());
        }
        match &self.experiment {
            Experiment::WindowScan(s) => {
                if s.inputs.count() == 0 {
                    return bad("window scans need at least one input".into());
                }
            }
            Experiment::ThresholdStudy(s) => {
                for (i, c) in s.cells.iter().enumerate() {
                    if c.mesh.len() < 2 {
                        return bad(format!("threshold cell {i} needs at least two meshes"));
                    }
                    if !(c.p >= 1.0) || c.p.is_infinite() {
                        return bad(format!("threshold cell {i} has p = {} outside [1, ∞)", c.p));
                    }
                }
            }
            Experiment::ConcentrationStudy(s) => {
                if s.levels < 2 || !(s.radius > 0.0) {
                    return bad("concentration studies need levels >= 2 and a positive radius".into());
                }
                if s.axis.is_some_and(|a| a >= s.operator.dim()) {
                    return bad(format!("axis {:?} exceeds the dimension {}", s.axis, s.operator.dim()));
                }
            }
            Experiment::EquivalenceSuite(s) => {
                if s.count == 0 || s.min_side == 0 || s.min_side > s.max_side || s.inputs_per_matrix == 0 {
                    return bad("equivalence suites need count >= 1, 1 <= min_side <= max_side and inputs".into());
                }
                if s.violations > 0 && s.max_side < 4 {
                    return bad("engineered violations need max_side >= 4".into());
                }
            }
            Experiment::SmoothingStudy(s) => {
                if s.p.is_empty() {
                    return bad("smoothing studies need at least one p".into());
                }
            }
            Experiment::CoveringSearch(s) => {
                if s.family_size == 0 || s.subspace_rank == 0 || s.subspace_rank >= s.side {
                    return bad("covering searches need K >= 1 and 1 <= rank < side".into());
                }
            }
            Experiment::ExpansionCheck(s) => {
                if let ExpansionSource::Random { count, max_side } = s.source {
                    if count == 0 || max_side == 0 {
                        return bad("random expansion checks need count >= 1 and max_side >= 1".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies command-line overrides where the experiment has a matching field.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(cap) = o.dense_cap {
            self.solver.dense_cap = cap;
            self.solver.eig_dense_cap = cap;
        }
        let first = |mesh: &Option<Vec<usize>>| mesh.as_ref().and_then(|m| m.first().copied());
        match &mut self.experiment {
            Experiment::WindowScan(s) => {
                if let Some(n) = first(&o.mesh) {
                    s.mesh = n;
                }
                if let Some(t) = o.tol_rel {
                    s.tol_rel = t;
                }
            }
            Experiment::ThresholdStudy(s) => {
                for c in &mut s.cells {
                    if let Some(m) = &o.mesh {
                        c.mesh = m.clone();
                    }
                }
                if let Some(ps) = &o.p {
                    let template = s.cells.clone();
                    s.cells = template
                        .iter()
                        .flat_map(|c| ps.iter().map(move |&p| ThresholdCell { p, ..c.clone() }))
                        .collect();
                }
                if let Some(t) = o.tol_rel {
                    s.tol_rel = t;
                }
            }
            Experiment::ConcentrationStudy(s) => {
                if let Some(n) = first(&o.mesh) {
                    s.mesh = n;
                }
                if let Some(p) = o.p.as_ref().and_then(|p| p.first()) {
                    s.p = *p;
                }
                if let Some(t) = o.tol_rel {
                    s.tol_rel = t;
                }
            }
            Experiment::EquivalenceSuite(s) => {
                if let Some(t) = o.tol_rel {
                    s.tol_rel = t;
                }
            }
            Experiment::SmoothingStudy(s) => {
                if let Some(n) = first(&o.mesh) {
                    s.mesh = n;
                }
                if let Some(p) = &o.p {
                    s.p = p.clone();
                }
            }
            Experiment::CoveringSearch(_) => {}
            Experiment::ExpansionCheck(s) => {
                if let (ExpansionSource::Operator { mesh, .. }, Some(n)) = (&mut s.source, first(&o.mesh)) {
                    *mesh = n;
                }
            }
        }
        self.validate()
    }
}

/// Dense Gaussian matrix, used for random expansion checks and covering families.
pub(crate) fn gaussian_matrix(rng: &mut LabRng, rows: usize, cols: usize) -> DMatrix<f64> {
    let v = crate::random::gaussian_vector(rng, rows * cols);
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}
