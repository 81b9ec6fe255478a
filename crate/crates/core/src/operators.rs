//! The operator catalog as sparse matrices on weighted grids.
//!
//! Mesh conventions (all on the unit interval/square/cube):
//!
//! * Dirichlet: `n` interior nodes per axis at `x_i = i h`, `h = 1/(n+1)`,
//!   each carrying the weight `h` per axis: the trapezoidal rule on the closed
//!   grid applied to functions that vanish on the boundary. The weights sum to
//!   `(1-h)^d`, not to the measure of the cube.
//! * Neumann and Robin: `n` nodes per axis including the boundary,
//!   `h = 1/(n-1)`, trapezoidal weights. Boundary rows come from eliminating a
//!   ghost node with a central difference, which keeps `diag(w) A` symmetric.
//! * Robin coefficients are absorbing: `∂_ν u + β u = 0` with outward normal,
//!   so `β > 0` pushes the spectral bound below zero.
//!
//! Vector-valued (coupled) operators use the component-major layout.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{GridFunction, GridSpace};
use crate::linalg::{BandedLu, SolverConfig};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    RankOne,
    Laplacian,
    Coupled,
    Dtn,
    Power,
    Custom,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::RankOne => "rank_one",
            Family::Laplacian => "laplacian",
            Family::Coupled => "coupled",
            Family::Dtn => "dtn",
            Family::Power => "power",
            Family::Custom => "custom",
        }
    }
}

/// Robin coefficient: one value for the whole boundary or one per boundary node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Beta {
    Uniform(f64),
    PerNode(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
    Robin { beta: Beta },
}

impl BoundaryCondition {
    pub fn robin(beta: f64) -> Self {
        BoundaryCondition::Robin { beta: Beta::Uniform(beta) }
    }
}

/// `N x N` coupling matrices, constant or one per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixPotential {
    Constant(DMatrix<f64>),
    PerNode(Vec<DMatrix<f64>>),
}

impl MatrixPotential {
    fn at(&self, node: usize) -> &DMatrix<f64> {
        match self {
            MatrixPotential::Constant(m) => m,
            MatrixPotential::PerNode(v) => &v[node],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarPotential {
    Constant(f64),
    PerNode(Vec<f64>),
}

impl ScalarPotential {
    fn at(&self, node: usize) -> f64 {
        match self {
            ScalarPotential::Constant(c) => *c,
            ScalarPotential::PerNode(v) => v[node],
        }
    }

    fn negative_part_sup(&self) -> f64 {
        match self {
            ScalarPotential::Constant(c) => (-c).max(0.0),
            ScalarPotential::PerNode(v) => v.iter().map(|x| (-x).max(0.0)).fold(0.0, f64::max),
        }
    }
}

/// Build parameters, recorded with every operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OperatorParams {
    RankOne { n: usize },
    Laplacian { dim: usize, n: usize, bc: BoundaryCondition },
    Coupled { dim: usize, n: usize, components: usize, potential: MatrixPotential },
    Dtn { dim: usize, n: usize, potential: ScalarPotential },
    Power { k: u32, base: Box<OperatorParams> },
    Custom { label: String },
}

/// A discretized operator together with its grid.
#[derive(Clone, Debug)]
pub struct GridOperator {
    matrix: CsrMatrix,
    space: Arc<GridSpace>,
    family: Family,
    params: OperatorParams,
    self_adjoint: bool,
}

/// Relative asymmetry of `diag(w) A` below which an operator counts as self-adjoint.
const SELF_ADJOINT_TOL: f64 = 1e-12;

impl GridOperator {
    pub fn new(matrix: CsrMatrix, space: Arc<GridSpace>, family: Family, params: OperatorParams) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != space.len() {
            return Err(LabError::validation(format!(
                "matrix is {}x{} but the space has {} entries",
                matrix.nrows(),
                matrix.ncols(),
                space.len()
            )));
        }
        if matrix.values().iter().any(|v| !v.is_finite()) {
            return Err(LabError::validation("matrix has non-finite entries"));
        }
        let self_adjoint = matrix.weighted_asymmetry(&space.weights) <= SELF_ADJOINT_TOL;
        Ok(GridOperator {
            matrix,
            space,
            family,
            params,
            self_adjoint,
        })
    }

    /// Wraps an arbitrary square matrix on a unit-measure cell grid.
    pub fn custom(matrix: &DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let space = Arc::new(GridSpace::cells(matrix.nrows())?);
        GridOperator::new(
            CsrMatrix::from_dense(matrix),
            space,
            Family::Custom,
            OperatorParams::Custom { label: label.into() },
        )
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        &self.space
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &OperatorParams {
        &self.params
    }

    pub fn side(&self) -> usize {
        self.matrix.nrows()
    }

    /// Whether `diag(w) A` is symmetric, i.e. `A` is self-adjoint in the weighted pairing.
    pub fn is_self_adjoint(&self) -> bool {
        self.self_adjoint
    }

    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        GridFunction::from_parts(self.space.clone(), self.matrix.mul_vec(f.values()))
    }

    /// Adjoint with respect to the weighted pairing: `W^{-1} A^T W`.
    pub fn weighted_adjoint(&self) -> Result<GridOperator> {
        let w = &self.space.weights;
        let inv: Vec<f64> = w.iter().map(|x| 1.0 / x).collect();
        let at = self.matrix.transpose();
        let scaled = CsrMatrix::from_triplets(
            at.nrows(),
            at.ncols(),
            at.triplets().map(|(i, j, v)| (i, j, inv[i] * v * w[j])),
        );
        GridOperator::new(scaled, self.space.clone(), self.family, self.params.clone())
    }
}

/// `A f = (sum_j w_j f_j) 1 - f` on `n` equal cells of [0,1].
pub fn build_rank_one(n: usize) -> Result<GridOperator> {
    if n < 2 {
        return Err(LabError::domain(format!("rank-one operator needs n >= 2, got {n}")));
    }
    let space = Arc::new(GridSpace::cells(n)?);
    let w = 1.0 / n as f64;
    let trip = (0..n).flat_map(|i| (0..n).map(move |j| (i, j, if i == j { w - 1.0 } else { w })));
    GridOperator::new(
        CsrMatrix::from_triplets(n, n, trip),
        space,
        Family::RankOne,
        OperatorParams::RankOne { n },
    )
}

struct Axis {
    h: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// tridiagonal stencil rows as (offset, value)
    rows: Vec<Vec<(isize, f64)>>,
    with_boundary: bool,
}

fn axis(n: usize, bc: &BoundaryCondition) -> Axis {
    match bc {
        BoundaryCondition::Dirichlet => {
            let h = 1.0 / (n + 1) as f64;
            let c = 1.0 / (h * h);
            let rows = (0..n)
                .map(|i| {
                    let mut r = vec![(0, -2.0 * c)];
                    if i > 0 {
                        r.push((-1, c));
                    }
                    if i + 1 < n {
                        r.push((1, c));
                    }
                    r
                })
                .collect();
            Axis {
                h,
                nodes: (1..=n).map(|i| i as f64 * h).collect(),
                weights: vec![h; n],
                rows,
                with_boundary: false,
            }
        }
        BoundaryCondition::Neumann | BoundaryCondition::Robin { .. } => {
            let h = 1.0 / (n - 1) as f64;
            let c = 1.0 / (h * h);
            let rows = (0..n)
                .map(|i| {
                    if i == 0 {
                        vec![(0, -2.0 * c), (1, 2.0 * c)]
                    } else if i == n - 1 {
                        vec![(-1, 2.0 * c), (0, -2.0 * c)]
                    } else {
                        vec![(-1, c), (0, -2.0 * c), (1, c)]
                    }
                })
                .collect();
            let mut weights = vec![h; n];
            weights[0] = h / 2.0;
            weights[n - 1] = h / 2.0;
            Axis {
                h,
                nodes: (0..n).map(|i| i as f64 * h).collect(),
                weights,
                rows,
                with_boundary: true,
            }
        }
    }
}

fn multi_index(mut idx: usize, n: usize, dim: usize) -> [usize; 3] {
    let mut out = [0; 3];
    for slot in out.iter_mut().take(dim) {
        *slot = idx % n;
        idx /= n;
    }
    out
}

fn check_dim(d: usize) -> Result<()> {
    if !(1..=3).contains(&d) {
        return Err(LabError::domain(format!("dimension must be 1, 2 or 3, got {d}")));
    }
    Ok(())
}

/// Second-order finite-difference Laplacian on `[0,1]^d`.
pub fn build_laplacian(d: usize, n: usize, bc: BoundaryCondition) -> Result<GridOperator> {
    check_dim(d)?;
    if n < 3 {
        return Err(LabError::domain(format!("need at least 3 nodes per axis, got {n}")));
    }
    let ax = axis(n, &bc);
    let space = GridSpace::tensor(d, &ax.nodes, &ax.weights, ax.h, ax.with_boundary)?;
    let total = space.len();
    let beta_at: Box<dyn Fn(usize) -> f64> = match &bc {
        BoundaryCondition::Robin { beta: Beta::Uniform(b) } => {
            let b = *b;
            Box::new(move |_| b)
        }
        BoundaryCondition::Robin { beta: Beta::PerNode(v) } => {
            if v.len() != space.boundary_nodes.len() {
                return Err(LabError::validation(format!(
                    "Robin coefficient has {} values for {} boundary nodes",
                    v.len(),
                    space.boundary_nodes.len()
                )));
            }
            let mut lookup = vec![0.0; total];
            for (k, &b) in space.boundary_nodes.iter().enumerate() {
                lookup[b] = v[k];
            }
            Box::new(move |i| lookup[i])
        }
        _ => Box::new(|_| 0.0),
    };
    let robin = matches!(bc, BoundaryCondition::Robin { .. });
    let mut trip = Vec::with_capacity(total * (2 * d + 1));
    for idx in 0..total {
        let mi = multi_index(idx, n, d);
        let mut stride = 1isize;
        for &i in mi.iter().take(d) {
            for &(off, val) in &ax.rows[i] {
                trip.push((idx, (idx as isize + off * stride) as usize, val));
            }
            if robin && (i == 0 || i == n - 1) {
                trip.push((idx, idx, -2.0 * beta_at(idx) / ax.h));
            }
            stride *= n as isize;
        }
    }
    let matrix = CsrMatrix::from_triplets(total, total, trip);
    GridOperator::new(
        matrix,
        Arc::new(space),
        Family::Laplacian,
        OperatorParams::Laplacian { dim: d, n, bc },
    )
}

fn strongly_connected(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in 0..n {
                let edge = if forward { adj[a][b] } else { adj[b][a] };
                if edge && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n <= 1 || (reach(true) && reach(false))
}

/// `diag(Δ_Neu, ..., Δ_Neu) + V` for an `N`-component field, component-major.
pub fn build_coupled(n: usize, d: usize, components: usize, potential: MatrixPotential) -> Result<GridOperator> {
    let base = build_laplacian(d, n, BoundaryCondition::Neumann)?;
    let nb = base.side();
    if components == 0 {
        return Err(LabError::domain("component count must be positive"));
    }
    if let MatrixPotential::PerNode(v) = &potential {
        if v.len() != nb {
            return Err(LabError::validation(format!(
                "potential has {} node matrices for {nb} nodes",
                v.len()
            )));
        }
    }
    let mut pattern = vec![vec![false; components]; components];
    let node_count = match potential {
        MatrixPotential::Constant(_) => 1,
        MatrixPotential::PerNode(_) => nb,
    };
    for x in 0..node_count {
        let m = potential.at(x);
        if m.shape() != (components, components) {
            return Err(LabError::validation(format!(
                "potential at node {x} is {:?}, expected {components}x{components}",
                m.shape()
            )));
        }
        for r in 0..components {
            for s in 0..components {
                if r != s {
                    if m[(r, s)] < 0.0 {
                        return Err(LabError::validation(format!(
                            "negative off-diagonal coupling V[{r},{s}] = {} at node {x}",
                            m[(r, s)]
                        )));
                    }
                    pattern[r][s] |= m[(r, s)] > 0.0;
                }
            }
        }
    }
    if !strongly_connected(&pattern) {
        return Err(LabError::validation("coupling pattern is reducible"));
    }
    let lap = base.matrix();
    let mut trip = Vec::new();
    for c in 0..components {
        trip.extend(lap.triplets().map(|(i, j, v)| (c * nb + i, c * nb + j, v)));
    }
    for x in 0..nb {
        let m = potential.at(x);
        for r in 0..components {
            for s in 0..components {
                trip.push((r * nb + x, s * nb + x, m[(r, s)]));
            }
        }
    }
    let side = nb * components;
    let space = Arc::new(base.space().with_components(components)?);
    GridOperator::new(
        CsrMatrix::from_triplets(side, side, trip),
        space,
        Family::Coupled,
        OperatorParams::Coupled {
            dim: d,
            n,
            components,
            potential,
        },
    )
}

/// Smallest eigenvalue of `-Δ_Dir` on the interior of an `n`-node grid with `h = 1/(n-1)`.
fn dirichlet_floor(d: usize, n: usize) -> f64 {
    let h = 1.0 / (n - 1) as f64;
    d as f64 * 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2)
}

/// Negative Dirichlet-to-Neumann map `-D_V` of `-Δ + V` on the boundary of `[0,1]^d`.
///
/// The stiffness matrix `K = W (-Δ_Neu + V)` is split into interior and
/// boundary blocks; the boundary operator is `-W_b^{-1} (K_BB - K_BI K_II^{-1} K_IB)`
/// with surface quadrature weights `W_b`.
pub fn build_dtn(n: usize, d: usize, potential: ScalarPotential) -> Result<GridOperator> {
    if !(2..=3).contains(&d) {
        return Err(LabError::domain(format!("Dirichlet-to-Neumann maps need d = 2 or 3, got {d}")));
    }
    let lap = build_laplacian(d, n, BoundaryCondition::Neumann)?;
    let floor = dirichlet_floor(d, n);
    let vneg = potential.negative_part_sup();
    if !(vneg < floor) {
        return Err(LabError::validation(format!(
            "sup of the negative part of V ({vneg}) must be below the smallest Dirichlet eigenvalue ({floor})"
        )));
    }
    let space = lap.space();
    let total = space.len();
    if let ScalarPotential::PerNode(v) = &potential {
        if v.len() != total {
            return Err(LabError::validation(format!(
                "potential has {} values for {total} nodes",
                v.len()
            )));
        }
    }
    let w = &space.weights;
    let k = CsrMatrix::from_triplets(
        total,
        total,
        lap.matrix()
            .triplets()
            .map(|(i, j, v)| (i, j, -w[i] * v))
            .chain((0..total).map(|i| (i, i, w[i] * potential.at(i)))),
    );
    let boundary = &space.boundary_nodes;
    let mut is_boundary = vec![false; total];
    for &b in boundary {
        is_boundary[b] = true;
    }
    let interior: Vec<usize> = (0..total).filter(|i| !is_boundary[*i]).collect();
    let mut pos = vec![usize::MAX; total];
    for (p, &i) in interior.iter().enumerate() {
        pos[i] = p;
    }
    let mut bpos = vec![usize::MAX; total];
    for (p, &b) in boundary.iter().enumerate() {
        bpos[b] = p;
    }
    let nb = boundary.len();
    let ni = interior.len();
    let k_ii = CsrMatrix::from_triplets(
        ni,
        ni,
        k.triplets()
            .filter(|(i, j, _)| !is_boundary[*i] && !is_boundary[*j])
            .map(|(i, j, v)| (pos[i], pos[j], v)),
    );
    let mut k_ib = DMatrix::zeros(ni, nb);
    let mut s = DMatrix::zeros(nb, nb);
    for (i, j, v) in k.triplets() {
        match (is_boundary[i], is_boundary[j]) {
            (false, true) => k_ib[(pos[i], bpos[j])] = v,
            (true, true) => s[(bpos[i], bpos[j])] = v,
            _ => {}
        }
    }
    let lu = BandedLu::factor(&k_ii);
    if lu.is_singular() {
        return Err(LabError::validation("interior problem is singular"));
    }
    // harmonic extension of each boundary basis vector
    for c in 0..nb {
        let mut col: Vec<f64> = k_ib.column(c).iter().copied().collect();
        if col.iter().all(|x| *x == 0.0) {
            continue;
        }
        lu.solve_in_place(&mut col);
        // K_BI = K_IB^T by symmetry of K
        for r in 0..nb {
            let mut acc = 0.0;
            for (p, x) in col.iter().enumerate() {
                acc += k_ib[(p, r)] * x;
            }
            s[(r, c)] -= acc;
        }
    }
    let n_axis = n;
    let h = space.h;
    let mut surface_w = Vec::with_capacity(nb);
    for &b in boundary {
        let mi = multi_index(b, n_axis, d);
        let mut wb = 0.0;
        for face_axis in 0..d {
            if mi[face_axis] == 0 || mi[face_axis] == n_axis - 1 {
                let mut fw = 1.0;
                for (a, &i) in mi.iter().enumerate().take(d) {
                    if a != face_axis {
                        fw *= if i == 0 || i == n_axis - 1 { h / 2.0 } else { h };
                    }
                }
                wb += fw;
            }
        }
        surface_w.push(wb);
    }
    let trip = (0..nb).flat_map(|i| {
        let s = &s;
        let wi = surface_w[i];
        (0..nb).map(move |j| (i, j, -s[(i, j)] / wi))
    });
    let matrix = CsrMatrix::from_triplets(nb, nb, trip);
    let coords = boundary.iter().map(|&b| space.coords[b]).collect();
    let bspace = GridSpace::new(d - 1, n_axis, h, coords, surface_w, Vec::new(), 1)?;
    GridOperator::new(
        matrix,
        Arc::new(bspace),
        Family::Dtn,
        OperatorParams::Dtn { dim: d, n, potential },
    )
}

/// `B = -(-A)^k`. With `shift_check` the spectral bound of `A` must be negative.
pub fn build_power(base: &GridOperator, k: u32, shift_check: bool) -> Result<GridOperator> {
    if k == 0 {
        return Err(LabError::domain("power exponent must be positive"));
    }
    if shift_check {
        let report = crate::spectral::leading_eigenpair(base, &SolverConfig::default())?;
        if !(report.lambda0 < -1e-10 * report.scale) {
            return Err(LabError::validation(format!(
                "spectral bound of the base operator is {} (must be negative)",
                report.lambda0
            )));
        }
    }
    let neg = base.matrix().scaled(-1.0);
    let mut acc = neg.clone();
    for _ in 1..k {
        acc = acc.matmul(&neg);
    }
    GridOperator::new(
        acc.scaled(-1.0),
        base.space().clone(),
        Family::Power,
        OperatorParams::Power {
            k,
            base: Box::new(base.params().clone()),
        },
    )
}

const TRIPLET_MAGIC: &str = "%%amplab-triplet v1";

/// Writes the sparse-triplet text format:
///
/// ```text
/// %%amplab-triplet v1
/// %family <tag>
/// %params <json>
/// %space <json>
/// %dims <rows> <cols> <nnz>
/// <row> <col> <value>
/// ```
///
/// Values use the shortest round-trip decimal form, so reading is exact.
pub fn write_triplets(op: &GridOperator, mut out: impl Write) -> Result<()> {
    writeln!(out, "{TRIPLET_MAGIC}")?;
    writeln!(out, "%family {}", op.family.as_str())?;
    writeln!(out, "%params {}", serde_json::to_string(&op.params)?)?;
    writeln!(out, "%space {}", serde_json::to_string(op.space.as_ref())?)?;
    let m = op.matrix();
    writeln!(out, "%dims {} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for (i, j, v) in m.triplets() {
        writeln!(out, "{i} {j} {v:?}")?;
    }
    Ok(())
}

pub fn read_triplets(input: impl BufRead) -> Result<GridOperator> {
    let mut family = None;
    let mut params = None;
    let mut space: Option<GridSpace> = None;
    let mut dims = None;
    let mut trip = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let bad = |what: &str| LabError::Parse(format!("line {}: {what}", lineno + 1));
        if lineno == 0 {
            if line.trim() != TRIPLET_MAGIC {
                return Err(bad("missing triplet header"));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix('%') {
            let (key, value) = rest.split_once(' ').ok_or_else(|| bad("malformed header line"))?;
            match key {
                "family" => family = Some(serde_json::from_str::<Family>(&format!("\"{value}\""))?),
                "params" => params = Some(serde_json::from_str::<OperatorParams>(value)?),
                "space" => space = Some(serde_json::from_str(value)?),
                "dims" => {
                    let d: Vec<usize> = value
                        .split_whitespace()
                        .map(|x| x.parse().map_err(|_| bad("bad dims")))
                        .collect::<Result<_>>()?;
                    if d.len() != 3 {
                        return Err(bad("dims needs rows cols nnz"));
                    }
                    dims = Some((d[0], d[1], d[2]));
                }
                _ => return Err(bad("unknown header key")),
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(i), Some(j), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad("expected `row col value`"));
        };
        trip.push((
            i.parse::<usize>().map_err(|_| bad("bad row"))?,
            j.parse::<usize>().map_err(|_| bad("bad col"))?,
            v.parse::<f64>().map_err(|_| bad("bad value"))?,
        ));
    }
    let missing = |what: &str| LabError::Parse(format!("missing %{what} header"));
    let (rows, cols, nnz) = dims.ok_or_else(|| missing("dims"))?;
    if trip.len() != nnz {
        return Err(LabError::Parse(format!("expected {nnz} entries, found {}", trip.len())));
    }
    if let Some((i, j, _)) = trip.iter().find(|(i, j, _)| *i >= rows || *j >= cols) {
        return Err(LabError::Parse(format!("entry ({i},{j}) outside {rows}x{cols}")));
    }
    let space = space.ok_or_else(|| missing("space"))?;
    space.validate()?;
    GridOperator::new(
        CsrMatrix::from_triplets(rows, cols, trip),
        Arc::new(space),
        family.ok_or_else(|| missing("family"))?,
        params.ok_or_else(|| missing("params"))?,
    )
}

/// Residual `A v - λ v` in the max norm, for quick eigenpair checks.
pub fn eigen_residual(op: &GridOperator, lambda: f64, v: &DVector<f64>) -> f64 {
    (op.matrix().mul_vec(v) - v * lambda).amax()
}
