//! Collision geometry and terminal conditions for the solve.
//!
//! The terminal field is the signed distance between the two vehicle bodies
//! as a function of relative pose: positive clearance outside contact,
//! negative penetration depth inside, zero exactly at touch. Its zero
//! sublevel set is the collision set the reachability solve grows backwards
//! from.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{VehicleGeometry, VehicleState};
use crate::grid::{GridSpec, ScalarField};
use crate::solver::ValueFunction;

#[derive(Debug, Error)]
pub enum TerminalError {
    #[error("braking tube spans {available:.3} s but stop time needs {needed:.3} s")]
    TubeTooShort { needed: f64, available: f64 },
    #[error("braking tube grid does not match the requested grid")]
    GridMismatch,
}

/// Axis-aligned-in-body-frame rectangle: center, heading of the long axis,
/// and full side lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    /// Body rectangle of a vehicle whose rear-axle state point is `state`.
    /// The geometric center sits `length/2 - axle_distance/2` ahead of it.
    pub fn from_state(state: &VehicleState, geom: &VehicleGeometry) -> Self {
        let off = geom.center_offset();
        let (sin_h, cos_h) = state.heading.sin_cos();
        OrientedBox {
            cx: state.x + off * cos_h,
            cy: state.y + off * sin_h,
            heading: state.heading,
            length: geom.length,
            width: geom.width,
        }
    }

    pub fn vertices(&self) -> [[f64; 2]; 4] {
        let (sin_h, cos_h) = self.heading.sin_cos();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let axis_l = [cos_h, sin_h];
        let axis_w = [-sin_h, cos_h];
        let corner = |sl: f64, sw: f64| {
            [
                self.cx + sl * hl * axis_l[0] + sw * hw * axis_w[0],
                self.cy + sl * hl * axis_l[1] + sw * hw * axis_w[1],
            ]
        };
        [corner(1.0, 1.0), corner(1.0, -1.0), corner(-1.0, -1.0), corner(-1.0, 1.0)]
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }
}

/// Rear-axle vehicle state for a box observed at `center`/`heading` moving at
/// `speed`; inverse of [`OrientedBox::from_state`].
pub fn state_from_center(
    center: [f64; 2],
    heading: f64,
    speed: f64,
    geom: &VehicleGeometry,
) -> VehicleState {
    let off = geom.center_offset();
    let (sin_h, cos_h) = heading.sin_cos();
    VehicleState {
        x: center[0] - off * cos_h,
        y: center[1] - off * sin_h,
        heading,
        speed,
    }
}

fn project(vertices: &[[f64; 2]; 4], axis: [f64; 2]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vertices {
        let d = v[0] * axis[0] + v[1] * axis[1];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

fn segment_distance(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> f64 {
    let d1 = [p2[0] - p1[0], p2[1] - p1[1]];
    let d2 = [q2[0] - q1[0], q2[1] - q1[1]];
    let r = [p1[0] - q1[0], p1[1] - q1[1]];
    let a = d1[0] * d1[0] + d1[1] * d1[1];
    let e = d2[0] * d2[0] + d2[1] * d2[1];
    let f = d2[0] * r[0] + d2[1] * r[1];
    let (s, t);
    if a <= 1e-18 && e <= 1e-18 {
        s = 0.0;
        t = 0.0;
    } else if a <= 1e-18 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1[0] * r[0] + d1[1] * r[1];
        if e <= 1e-18 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1[0] * d2[0] + d1[1] * d2[1];
            let denom = a * e - b * b;
            let s_unclamped = if denom.abs() > 1e-18 { (b * f - c * e) / denom } else { 0.0 };
            let s0 = s_unclamped.clamp(0.0, 1.0);
            let t0 = ((b * s0 + f) / e).clamp(0.0, 1.0);
            let s1 = ((b * t0 - c) / a).clamp(0.0, 1.0);
            s = s1;
            t = t0;
        }
    }
    let cp = [p1[0] + s * d1[0], p1[1] + s * d1[1]];
    let cq = [q1[0] + t * d2[0], q1[1] + t * d2[1]];
    ((cp[0] - cq[0]).powi(2) + (cp[1] - cq[1]).powi(2)).sqrt()
}

/// Signed distance between two oriented rectangles: the planar gap when
/// disjoint, zero at contact, minus the minimum-translation penetration depth
/// when overlapping.
pub fn signed_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let va = a.vertices();
    let vb = b.vertices();
    let (sin_a, cos_a) = a.heading.sin_cos();
    let (sin_b, cos_b) = b.heading.sin_cos();
    // face normals of both rectangles: the full separating-axis set, and the
    // minimum-translation direction is always one of them
    let axes = [
        [cos_a, sin_a],
        [-sin_a, cos_a],
        [cos_b, sin_b],
        [-sin_b, cos_b],
    ];
    let mut min_overlap = f64::INFINITY;
    let mut separated = false;
    for axis in axes {
        let (lo_a, hi_a) = project(&va, axis);
        let (lo_b, hi_b) = project(&vb, axis);
        let overlap = hi_a.min(hi_b) - lo_a.max(lo_b);
        if overlap < 0.0 {
            separated = true;
            break;
        }
        min_overlap = min_overlap.min(overlap);
    }
    if !separated {
        return -min_overlap;
    }
    let mut dist = f64::INFINITY;
    for i in 0..4 {
        let p1 = va[i];
        let p2 = va[(i + 1) % 4];
        for j in 0..4 {
            dist = dist.min(segment_distance(p1, p2, vb[j], vb[(j + 1) % 4]));
        }
    }
    dist
}

/// Signed distance between the two vehicle bodies at relative pose
/// `(x_rel, y_rel, psi_rel)`, ego at the origin with heading zero.
pub fn pair_signed_distance(x_rel: f64, y_rel: f64, psi_rel: f64, geom: &VehicleGeometry) -> f64 {
    let ego = OrientedBox::from_state(
        &VehicleState { x: 0.0, y: 0.0, heading: 0.0, speed: 0.0 },
        geom,
    );
    let con = OrientedBox::from_state(
        &VehicleState { x: x_rel, y: y_rel, heading: psi_rel, speed: 0.0 },
        geom,
    );
    signed_distance(&ego, &con)
}

/// Signed-distance field over the grid's pose axes, broadcast across both
/// velocity axes. This is the value function at t = 0.
pub fn terminal_field(spec: &GridSpec, geom: &VehicleGeometry) -> ScalarField {
    let n = spec.count();
    let pose_count = n[0] * n[1] * n[2];
    let block = n[3] * n[4];
    let mut field = ScalarField::zeros(spec);
    field
        .data_mut()
        .par_chunks_mut(block)
        .enumerate()
        .for_each(|(pose_flat, chunk)| {
            let i2 = pose_flat % n[2];
            let i1 = (pose_flat / n[2]) % n[1];
            let i0 = pose_flat / (n[2] * n[1]);
            let sd = pair_signed_distance(
                spec.node_coordinate(0, i0),
                spec.node_coordinate(1, i1),
                spec.node_coordinate(2, i2),
                geom,
            ) as f32;
            chunk.fill(sd);
        });
    debug_assert_eq!(pose_count * block, spec.num_nodes());
    field
}

/// Time for the ego to brake to rest from `speed` at `brake_accel` (< 0).
pub fn stop_time(speed: f64, brake_accel: f64) -> f64 {
    debug_assert!(brake_accel < 0.0);
    speed.max(0.0) / brake_accel.abs()
}

/// Initial condition for the reaction phase: each node reads the braking
/// tube at that node's own stopping horizon, `V_brake(z, -v_E/|a_brake|)`,
/// linearly interpolated in time between stored checkpoints.
pub fn reaction_initial(
    tube: &ValueFunction,
    spec: &GridSpec,
    brake_accel: f64,
) -> Result<ScalarField, TerminalError> {
    if tube.spec() != spec {
        return Err(TerminalError::GridMismatch);
    }
    let times = tube.times();
    let available = -times[times.len() - 1];
    let n = spec.count();

    // per-v_E-node time bracket: checkpoint index k with t in [t[k+1], t[k]]
    // and the weight of checkpoint k
    let mut brackets = Vec::with_capacity(n[3]);
    for i3 in 0..n[3] {
        let t = -stop_time(spec.node_coordinate(3, i3), brake_accel);
        if t < times[times.len() - 1] - 1e-9 {
            return Err(TerminalError::TubeTooShort { needed: -t, available });
        }
        let t = t.max(times[times.len() - 1]);
        let k = match times.iter().position(|&ck| ck <= t) {
            Some(0) => 0,
            Some(k) => k - 1,
            None => times.len() - 2,
        };
        let (t_hi, t_lo) = (times[k], times[k + 1]);
        let w_hi = ((t - t_lo) / (t_hi - t_lo)).clamp(0.0, 1.0);
        brackets.push((k, w_hi));
    }

    let block = n[3] * n[4];
    let mut out = ScalarField::zeros(spec);
    out.data_mut()
        .par_chunks_mut(block)
        .enumerate()
        .for_each(|(pose_flat, chunk)| {
            let base = pose_flat * block;
            for i3 in 0..n[3] {
                let (k, w_hi) = brackets[i3];
                let hi = &tube.checkpoint(k).data()[base + i3 * n[4]..base + (i3 + 1) * n[4]];
                let lo = &tube.checkpoint(k + 1).data()[base + i3 * n[4]..base + (i3 + 1) * n[4]];
                let row = &mut chunk[i3 * n[4]..(i3 + 1) * n[4]];
                for i4 in 0..n[4] {
                    row[i4] = (w_hi * hi[i4] as f64 + (1.0 - w_hi) * lo[i4] as f64) as f32;
                }
            }
        });
    Ok(out)
}
