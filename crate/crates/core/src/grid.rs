//! Weighted grids and the grid functions that live on them.
//!
//! Every grid discretizes the unit interval, square or cube (or the boundary of
//! one). Nodes are stored in lexicographic order with axis 0 varying fastest.
//! For vector-valued problems with `components > 1` the layout is
//! component-major: all nodes of component 0, then all nodes of component 1.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Discretization metadata shared by operators and the functions they act on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    /// Spatial dimension of the carrier set (d-1 for boundary grids).
    pub dim: usize,
    /// Nodes per axis of the underlying tensor grid.
    pub n_axis: usize,
    /// Mesh width.
    pub h: f64,
    /// Coordinates of the scalar nodes, padded with zeros beyond `dim`.
    pub coords: Vec<[f64; 3]>,
    /// Quadrature weights, one per entry of a grid function (`coords.len() * components`).
    pub weights: Vec<f64>,
    /// Entries lying on the boundary of the domain.
    pub boundary_nodes: Vec<usize>,
    /// Number of field components.
    pub components: usize,
}

impl GridSpace {
    /// Builds a space and checks its invariants.
    pub fn new(
        dim: usize,
        n_axis: usize,
        h: f64,
        coords: Vec<[f64; 3]>,
        weights: Vec<f64>,
        boundary_nodes: Vec<usize>,
        components: usize,
    ) -> Result<Self> {
        let space = GridSpace {
            dim,
            n_axis,
            h,
            coords,
            weights,
            boundary_nodes,
            components,
        };
        space.validate()?;
        Ok(space)
    }

    /// `n` cells of width `1/n` on [0,1], one node at each cell midpoint.
    pub fn cells(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(LabError::domain("cell grid needs at least one cell"));
        }
        let h = 1.0 / n as f64;
        let coords = (0..n).map(|i| [(i as f64 + 0.5) * h, 0.0, 0.0]).collect();
        GridSpace::new(1, n, h, coords, vec![h; n], Vec::new(), 1)
    }

    /// Tensor grid on [0,1]^d from per-axis nodes and weights.
    pub(crate) fn tensor(
        dim: usize,
        axis_nodes: &[f64],
        axis_weights: &[f64],
        h: f64,
        with_boundary: bool,
    ) -> Result<Self> {
        let n = axis_nodes.len();
        let total = n.pow(dim as u32);
        let mut coords = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut boundary = Vec::new();
        for idx in 0..total {
            let mut c = [0.0; 3];
            let mut w = 1.0;
            let mut on_boundary = false;
            let mut rest = idx;
            for slot in c.iter_mut().take(dim) {
                let i = rest % n;
                rest /= n;
                *slot = axis_nodes[i];
                w *= axis_weights[i];
                on_boundary |= with_boundary && (i == 0 || i == n - 1);
            }
            if on_boundary {
                boundary.push(idx);
            }
            coords.push(c);
            weights.push(w);
        }
        GridSpace::new(dim, n, h, coords, weights, boundary, 1)
    }

    /// The same grid carrying `components` copies of every node (component-major).
    pub fn with_components(&self, components: usize) -> Result<Self> {
        if components == 0 {
            return Err(LabError::domain("component count must be positive"));
        }
        let base = self.base_weights();
        let weights = (0..components).flat_map(|_| base.iter().copied()).collect();
        let nb = self.node_count();
        let boundary = (0..components)
            .flat_map(|c| self.base_boundary().into_iter().map(move |b| c * nb + b))
            .collect();
        GridSpace::new(
            self.dim,
            self.n_axis,
            self.h,
            self.coords.clone(),
            weights,
            boundary,
            components,
        )
    }

    /// Length of a grid function on this space.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Number of scalar nodes (ignoring components).
    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    /// Total measure, the sum of all weights.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Coordinate of entry `i` (component index stripped).
    pub fn coord(&self, i: usize) -> [f64; 3] {
        self.coords[i % self.coords.len()]
    }

    fn base_weights(&self) -> Vec<f64> {
        self.weights[..self.node_count()].to_vec()
    }

    fn base_boundary(&self) -> Vec<usize> {
        let nb = self.node_count();
        self.boundary_nodes.iter().copied().filter(|&b| b < nb).collect()
    }

    pub fn weights_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.coords.len() * self.components != self.weights.len() {
            return Err(LabError::validation(format!(
                "weights ({}) do not match nodes ({}) x components ({})",
                self.weights.len(),
                self.coords.len(),
                self.components
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(LabError::validation(format!("non-positive quadrature weight {w}")));
        }
        if let Some(b) = self.boundary_nodes.iter().find(|&&b| b >= self.len()) {
            return Err(LabError::validation(format!("boundary index {b} out of range")));
        }
        Ok(())
    }

    /// Strictly positive constant function `1`.
    pub fn ones(self: &Arc<Self>) -> GridFunction {
        GridFunction::constant(self, 1.0)
    }
}

/// A real vector indexed by the entries of a [`GridSpace`].
#[derive(Clone, Debug)]
pub struct GridFunction {
    space: Arc<GridSpace>,
    values: DVector<f64>,
}

impl GridFunction {
    pub fn new(space: Arc<GridSpace>, values: DVector<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(LabError::validation(format!(
                "grid function has {} entries, space has {}",
                values.len(),
                space.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::validation(format!("non-finite entry at index {i}")));
        }
        Ok(GridFunction { space, values })
    }

    pub fn from_slice(space: &Arc<GridSpace>, values: &[f64]) -> Result<Self> {
        GridFunction::new(space.clone(), DVector::from_column_slice(values))
    }

    pub fn constant(space: &Arc<GridSpace>, c: f64) -> Self {
        GridFunction {
            values: DVector::from_element(space.len(), c),
            space: space.clone(),
        }
    }

    /// Samples `f(index, coordinate)` at every entry.
    pub fn from_fn(space: &Arc<GridSpace>, f: impl Fn(usize, [f64; 3]) -> f64) -> Result<Self> {
        let values = DVector::from_iterator(space.len(), (0..space.len()).map(|i| f(i, space.coord(i))));
        GridFunction::new(space.clone(), values)
    }

    /// Wraps a vector already known to match the space (used on solver outputs).
    pub(crate) fn from_parts(space: Arc<GridSpace>, values: DVector<f64>) -> Self {
        debug_assert_eq!(values.len(), space.len());
        GridFunction { space, values }
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        &self.space
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weighted pairing `sum_i w_i f_i g_i`.
    pub fn pairing(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .zip(self.space.weights.iter())
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// Weighted integral `sum_i w_i f_i`.
    pub fn integral(&self) -> f64 {
        self.values.iter().zip(self.space.weights.iter()).map(|(a, w)| a * w).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        GridFunction::from_parts(self.space.clone(), &self.values * c)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &GridFunction) -> GridFunction {
        GridFunction::from_parts(self.space.clone(), &self.values + &other.values * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_parts(self.space.clone(), self.values.map(f))
    }

    /// Same values re-attached to another space of equal length.
    pub fn with_space(&self, space: &Arc<GridSpace>) -> Result<GridFunction> {
        GridFunction::new(space.clone(), self.values.clone())
    }
}

/// Serialized as the bare list of values; the space travels separately.
impl Serialize for GridFunction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.values.iter())
    }
}
