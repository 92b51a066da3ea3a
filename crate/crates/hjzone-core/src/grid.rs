//! Regular 5-D grid with cell-centered nodes and flat axis-major storage.
//!
//! Axis order is fixed across the crate: `[x_rel, y_rel, psi_rel, v_ego,
//! v_contender]`. Axis 0 varies slowest in memory, axis 4 is contiguous.
//! Nodes sit at cell centers, `lo + (i + 0.5) * spacing`, so the outermost
//! nodes are half a cell inside the domain bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_AXES: usize = 5;

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2*pi when a + PI rounds to a tiny
    // negative; fold that back.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("axis {axis}: lower bound {lo} must be below upper bound {hi}")]
    BadBounds { axis: usize, lo: f64, hi: f64 },
    #[error("axis {axis}: {count} cells, need at least 3")]
    TooFewCells { axis: usize, count: usize },
    #[error("only the heading axis (2) may be periodic, axis {axis} was flagged")]
    BadPeriodicAxis { axis: usize },
    #[error("periodic axis span {span} differs from 2*pi")]
    BadPeriodicSpan { span: f64 },
    #[error("query {value} outside axis {axis} bounds [{lo}, {hi}]")]
    OutOfDomain { axis: usize, value: f64, lo: f64, hi: f64 },
    #[error("ghost index {index} on axis {axis} is more than one cell outside [0, {count})")]
    GhostTooFar { axis: usize, index: i64, count: usize },
    #[error("field has {actual} nodes, grid spec expects {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Immutable grid geometry: bounds, cell counts, periodicity, plus derived
/// strides for flat indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lo: [f64; NUM_AXES],
    hi: [f64; NUM_AXES],
    count: [usize; NUM_AXES],
    periodic: [bool; NUM_AXES],
    #[serde(skip)]
    stride: [usize; NUM_AXES],
    #[serde(skip)]
    num_nodes: usize,
}

impl GridSpec {
    pub fn new(
        lo: [f64; NUM_AXES],
        hi: [f64; NUM_AXES],
        count: [usize; NUM_AXES],
        periodic: [bool; NUM_AXES],
    ) -> Result<Self, GridError> {
        for axis in 0..NUM_AXES {
            if !(lo[axis].is_finite() && hi[axis].is_finite() && lo[axis] < hi[axis]) {
                return Err(GridError::BadBounds { axis, lo: lo[axis], hi: hi[axis] });
            }
            if count[axis] < 3 {
                return Err(GridError::TooFewCells { axis, count: count[axis] });
            }
            if periodic[axis] {
                if axis != 2 {
                    return Err(GridError::BadPeriodicAxis { axis });
                }
                let span = hi[axis] - lo[axis];
                if (span - std::f64::consts::TAU).abs() > 1e-9 {
                    return Err(GridError::BadPeriodicSpan { span });
                }
            }
        }
        let mut spec = GridSpec { lo, hi, count, periodic, stride: [0; NUM_AXES], num_nodes: 0 };
        spec.rebuild_derived();
        Ok(spec)
    }

    fn rebuild_derived(&mut self) {
        let mut stride = [0usize; NUM_AXES];
        let mut acc = 1usize;
        for axis in (0..NUM_AXES).rev() {
            stride[axis] = acc;
            acc *= self.count[axis];
        }
        self.stride = stride;
        self.num_nodes = acc;
    }

    /// Restores the derived fields after deserialization (serde skips them).
    pub fn after_deserialize(mut self) -> Result<Self, GridError> {
        let checked = GridSpec::new(self.lo, self.hi, self.count, self.periodic)?;
        self.stride = checked.stride;
        self.num_nodes = checked.num_nodes;
        Ok(self)
    }

    pub fn lo(&self) -> &[f64; NUM_AXES] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64; NUM_AXES] {
        &self.hi
    }

    pub fn count(&self) -> &[usize; NUM_AXES] {
        &self.count
    }

    pub fn periodic(&self, axis: usize) -> bool {
        self.periodic[axis]
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn stride(&self) -> &[usize; NUM_AXES] {
        &self.stride
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.count[axis] as f64
    }

    /// Cell-center coordinate of node `i` on `axis`.
    pub fn node_coordinate(&self, axis: usize, i: usize) -> f64 {
        debug_assert!(i < self.count[axis]);
        self.lo[axis] + (i as f64 + 0.5) * self.spacing(axis)
    }

    pub fn flat_index(&self, idx: [usize; NUM_AXES]) -> usize {
        let mut flat = 0;
        for axis in 0..NUM_AXES {
            debug_assert!(idx[axis] < self.count[axis]);
            flat += idx[axis] * self.stride[axis];
        }
        flat
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; NUM_AXES] {
        debug_assert!(flat < self.num_nodes);
        let mut idx = [0usize; NUM_AXES];
        for axis in 0..NUM_AXES {
            idx[axis] = flat / self.stride[axis];
            flat %= self.stride[axis];
        }
        idx
    }

    pub fn coords(&self, idx: [usize; NUM_AXES]) -> [f64; NUM_AXES] {
        std::array::from_fn(|axis| self.node_coordinate(axis, idx[axis]))
    }

    /// Diagonal of one cell in the two position axes; the resolution floor
    /// used when comparing interpolated values against exact geometry.
    pub fn position_cell_diagonal(&self) -> f64 {
        let dx = self.spacing(0);
        let dy = self.spacing(1);
        (dx * dx + dy * dy).sqrt()
    }

    /// Per-axis interpolation stencil for a query coordinate: low node index,
    /// high node index, and the weight of the high node in [0, 1].
    ///
    /// Periodic axes wrap (the stencil may straddle the seam). On other axes
    /// the query must lie within [lo, hi]; inside the half-cell margin beyond
    /// the outermost node the weight clamps to that node, so interpolated
    /// values stay bounded by node values everywhere in-domain.
    fn axis_stencil(&self, axis: usize, value: f64) -> Result<(usize, usize, f64), GridError> {
        let n = self.count[axis];
        let dx = self.spacing(axis);
        if self.periodic[axis] {
            let wrapped = wrap_angle(value);
            let mut u = (wrapped - self.lo[axis]) / dx - 0.5;
            if u < 0.0 {
                u += n as f64;
            }
            let cell = u.floor();
            let i0 = (cell as usize).min(n - 1);
            Ok((i0, (i0 + 1) % n, (u - cell).clamp(0.0, 1.0)))
        } else {
            if !(value >= self.lo[axis] && value <= self.hi[axis]) {
                return Err(GridError::OutOfDomain {
                    axis,
                    value,
                    lo: self.lo[axis],
                    hi: self.hi[axis],
                });
            }
            let u = (value - self.lo[axis]) / dx - 0.5;
            let i0 = (u.floor().max(0.0) as usize).min(n - 2);
            Ok((i0, i0 + 1, (u - i0 as f64).clamp(0.0, 1.0)))
        }
    }
}

/// One scalar per grid node, stored f32 to keep the full-resolution field at
/// 4 bytes/node; all arithmetic on it happens in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    data: Vec<f32>,
}

impl ScalarField {
    pub fn zeros(spec: &GridSpec) -> Self {
        ScalarField { spec: spec.clone(), data: vec![0.0; spec.num_nodes()] }
    }

    pub fn from_vec(spec: &GridSpec, data: Vec<f32>) -> Result<Self, GridError> {
        if data.len() != spec.num_nodes() {
            return Err(GridError::LengthMismatch {
                expected: spec.num_nodes(),
                actual: data.len(),
            });
        }
        Ok(ScalarField { spec: spec.clone(), data })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, idx: [usize; NUM_AXES]) -> f64 {
        self.data[self.spec.flat_index(idx)] as f64
    }

    pub fn set(&mut self, idx: [usize; NUM_AXES], value: f64) {
        let flat = self.spec.flat_index(idx);
        self.data[flat] = value as f32;
    }

    /// Multilinear interpolation over the 32 nodes surrounding `z`.
    ///
    /// The heading axis wraps; the other axes reject queries outside
    /// [lo, hi]. The result is a convex combination of node values, so it is
    /// bounded by their min/max, and it reproduces affine functions exactly
    /// on the node hull.
    pub fn interpolate(&self, z: &[f64; NUM_AXES]) -> Result<f64, GridError> {
        let mut lo_idx = [0usize; NUM_AXES];
        let mut hi_idx = [0usize; NUM_AXES];
        let mut w_hi = [0f64; NUM_AXES];
        for axis in 0..NUM_AXES {
            let (i0, i1, t) = self.spec.axis_stencil(axis, z[axis])?;
            lo_idx[axis] = i0;
            hi_idx[axis] = i1;
            w_hi[axis] = t;
        }
        let stride = self.spec.stride();
        let mut acc = 0.0;
        for corner in 0..(1usize << NUM_AXES) {
            let mut weight = 1.0;
            let mut flat = 0;
            for axis in 0..NUM_AXES {
                if corner & (1 << axis) != 0 {
                    weight *= w_hi[axis];
                    flat += hi_idx[axis] * stride[axis];
                } else {
                    weight *= 1.0 - w_hi[axis];
                    flat += lo_idx[axis] * stride[axis];
                }
            }
            if weight != 0.0 {
                acc += weight * self.data[flat] as f64;
            }
        }
        Ok(acc)
    }

    /// Node value at a possibly out-of-range index, as the PDE stencil sees
    /// it: periodic axes wrap any offset; position axes (0, 1) linearly
    /// extrapolate one cell past the edge (`2*V[edge] - V[edge+/-1]`); the
    /// speed axes (3, 4) copy the edge value, since speeds saturate at the
    /// axis ends and the value gains nothing past them. Offsets beyond one
    /// cell are rejected.
    pub fn ghost_value(&self, idx: [i64; NUM_AXES]) -> Result<f64, GridError> {
        let mut base = [0usize; NUM_AXES];
        // extrapolation axis and direction, if any
        let mut extrapolate: Option<(usize, bool)> = None;
        for axis in 0..NUM_AXES {
            let n = self.spec.count[axis] as i64;
            let i = idx[axis];
            if self.spec.periodic[axis] {
                base[axis] = i.rem_euclid(n) as usize;
            } else if (0..n).contains(&i) {
                base[axis] = i as usize;
            } else if i == -1 || i == n {
                if extrapolate.is_some() {
                    // corner ghosts (two axes out at once) are never needed by
                    // the axis-aligned stencil
                    return Err(GridError::GhostTooFar {
                        axis,
                        index: i,
                        count: n as usize,
                    });
                }
                extrapolate = Some((axis, i == n));
                base[axis] = if i == n { (n - 1) as usize } else { 0 };
            } else {
                return Err(GridError::GhostTooFar { axis, index: i, count: n as usize });
            }
        }
        match extrapolate {
            None => Ok(self.data[self.spec.flat_index(base)] as f64),
            Some((axis, high)) => {
                let edge = self.data[self.spec.flat_index(base)] as f64;
                if axis >= 3 {
                    // speed axes: saturated ghost, no benefit past the cap
                    return Ok(edge);
                }
                let mut inner = base;
                inner[axis] = if high { base[axis] - 1 } else { 1 };
                let next = self.data[self.spec.flat_index(inner)] as f64;
                Ok(2.0 * edge - next)
            }
        }
    }
}
