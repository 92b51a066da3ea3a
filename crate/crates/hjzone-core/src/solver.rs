//! Backward reachable tube solver.
//!
//! Integrates the freezing-type Hamilton-Jacobi equation
//! `dV/dt + min(0, H(z, grad V)) = 0` backwards from a terminal field with an
//! upwind stencil and explicit Euler steps. The `min(0,.)` keeps every node
//! non-increasing across steps, which turns the reachable set into a tube:
//! once a state can reach collision at some horizon it stays flagged at
//! every longer horizon.
//!
//! Scheme notes:
//! - Default numerical Hamiltonian: Godunov upwinding resolved against the
//!   control boxes ([`HamiltonianTerms::upwind_eval`]). Each axis is
//!   differenced on the side the minimizing control's flow reads from, so no
//!   viscosity is paid along directions the played control does not excite.
//!   A Lax-Friedrichs flux here must cover the bang-bang steering endpoints
//!   even where the optimal steer is interior; the resulting lateral
//!   smearing grows with |x|, |y| and drowns the thin far-field channels of
//!   the tube on any affordable grid.
//! - One-sided gradients carry a minmod-limited second-difference correction
//!   (second order where the field is smooth along the axis). The limiter
//!   compares the second differences on the two cells flanking each face and
//!   zeroes the correction at kinks and extrema; curvature is taken only
//!   from real nodes, so the stencil degrades to plain first order next to
//!   extrapolated ghosts and domain edges. Without the correction, the
//!   first-order truncation error acts as a numerical viscosity of order
//!   `|f| dx / 2` per axis; along the heading axis that smears the value
//!   function by several cells over a multi-second horizon, lifting thin
//!   negative channels toward zero so collision-reachable states read as
//!   clear. That error direction is the one the tube must not make.
//! - With a [`SolveOptions::dissipation_override`], the stencil instead runs
//!   fixed-alpha Lax-Friedrichs: costate via central differences plus the
//!   per-axis second-difference term `alpha_i * (D+ - D-)/2` added to `H`
//!   inside the `min(0, .)`. In reversed time that viscosity must enter with
//!   a plus sign; the forward-equation convention (subtracting it)
//!   anti-diffuses here and is von Neumann unstable. This path exists for
//!   scheme comparisons and the comparison-principle tests.
//! - The global bounds from [`dissipation_bounds`] size the CFL-stable step;
//!   they dominate every realized flow speed.
//! - Heading axis wraps; position axes extend one linear-extrapolation ghost
//!   cell past each edge; speed-axis ghosts copy the edge value (speeds
//!   saturate, so a mirrored slope would fake benefit from unreachable
//!   speeds). All of this matches [`ScalarField::ghost_value`].
//! - Fields are f32; every stencil evaluation runs in f64.

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{
    dissipation_bounds, HamiltonianTerms, PhaseSpec, RelativeState, VehicleGeometry,
};
use crate::grid::{GridError, GridSpec, ScalarField, NUM_AXES};
use crate::params::{Params, ParamsError};
use crate::terminal::{reaction_initial, stop_time, terminal_field, TerminalError};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("time step {dt} violates the CFL bound {limit} (cfl {cfl})")]
    CflViolation { dt: f64, limit: f64, cfl: f64 },
    #[error("non-finite values appeared at t = {time:.4} in the {phase} phase")]
    Unstable { phase: &'static str, time: f64 },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("checkpoint interval must be positive, got {0}")]
    BadInterval(f64),
    #[error("grid speed axes reach {axis_hi} but v_max is {v_max}; unreachable states")]
    GridBeyondVMax { axis_hi: f64, v_max: f64 },
    #[error("checkpoint list empty or times not strictly decreasing from 0")]
    BadCheckpoints,
    #[error("checkpoint grids disagree")]
    CheckpointGridMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Terminal(#[from] TerminalError),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Value function checkpoints at non-positive times, newest (t = 0) first.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    times: Vec<f64>,
    fields: Vec<ScalarField>,
}

impl ValueFunction {
    /// Validates ordering (t0 = 0, strictly decreasing) and grid consistency.
    pub fn from_checkpoints(checkpoints: Vec<(f64, ScalarField)>) -> Result<Self, SolveError> {
        if checkpoints.is_empty() || checkpoints[0].0.abs() > 1e-12 {
            return Err(SolveError::BadCheckpoints);
        }
        for pair in checkpoints.windows(2) {
            if !(pair[1].0 < pair[0].0) {
                return Err(SolveError::BadCheckpoints);
            }
        }
        let spec = checkpoints[0].1.spec().clone();
        if checkpoints.iter().any(|(_, f)| f.spec() != &spec) {
            return Err(SolveError::CheckpointGridMismatch);
        }
        let (times, fields) = checkpoints.into_iter().unzip();
        Ok(ValueFunction { times, fields })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn checkpoint(&self, k: usize) -> &ScalarField {
        &self.fields[k]
    }

    pub fn final_field(&self) -> &ScalarField {
        self.fields.last().expect("checkpoints are never empty")
    }

    pub fn spec(&self) -> &GridSpec {
        self.fields[0].spec()
    }

    /// Number of (node, consecutive-checkpoint) pairs where the value grew.
    /// The freeze update makes this exactly zero for solver output.
    pub fn monotonicity_violations(&self) -> usize {
        (1..self.fields.len())
            .map(|k| {
                let newer = self.fields[k - 1].data();
                let older = self.fields[k].data();
                older
                    .par_iter()
                    .zip(newer.par_iter())
                    .filter(|(o, n)| o > n)
                    .count()
            })
            .sum()
    }
}

/// Tuning knobs for a solve. `workers` = 0 uses one thread per core;
/// `dissipation_override` switches the stencil from the upwind scheme to
/// fixed-alpha Lax-Friedrichs with the given per-axis coefficients (which
/// then also set the CFL step).
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub cfl: f64,
    pub checkpoint_interval: f64,
    pub workers: usize,
    pub report_progress: bool,
    pub dissipation_override: Option<[f64; NUM_AXES]>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            cfl: 0.8,
            checkpoint_interval: 0.1,
            workers: 0,
            report_progress: false,
            dissipation_override: None,
        }
    }
}

/// Smaller-magnitude argument when signs agree, zero otherwise. Zero at
/// extrema and kinks, so the gradient correction shuts off exactly where a
/// second difference would overshoot.
fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() <= b.abs() {
        a
    } else {
        b
    }
}

/// One-phase stepper: precomputed Hamiltonian endpoints, axis coordinates,
/// and CFL setup for a fixed grid and control phase. Upwind scheme by
/// default; fixed-alpha Lax-Friedrichs when an override is given.
pub struct Stepper {
    spec: GridSpec,
    terms: HamiltonianTerms,
    fixed_alpha: Option<[f64; NUM_AXES]>,
    /// Per-axis bounds used for CFL sizing; dominate every realized speed.
    cfl_alpha: [f64; NUM_AXES],
    inv_dx: [f64; NUM_AXES],
    coords: [Vec<f64>; NUM_AXES],
}

impl Stepper {
    pub fn new(
        spec: &GridSpec,
        phase: &PhaseSpec,
        geom: &VehicleGeometry,
        dissipation_override: Option<[f64; NUM_AXES]>,
    ) -> Self {
        let cfl_alpha = dissipation_override
            .unwrap_or_else(|| dissipation_bounds(phase, geom, spec));
        let coords = std::array::from_fn(|axis| {
            (0..spec.count()[axis])
                .map(|i| spec.node_coordinate(axis, i))
                .collect()
        });
        Stepper {
            spec: spec.clone(),
            terms: HamiltonianTerms::new(phase, geom),
            fixed_alpha: dissipation_override,
            cfl_alpha,
            inv_dx: std::array::from_fn(|axis| 1.0 / spec.spacing(axis)),
            coords,
        }
    }

    /// Largest time step satisfying `dt * sum_i(alpha_i / dx_i) <= cfl`.
    pub fn max_dt(&self, cfl: f64) -> f64 {
        let rate: f64 = (0..NUM_AXES).map(|a| self.cfl_alpha[a] * self.inv_dx[a]).sum();
        cfl / rate
    }

    pub fn step(&self, field: &ScalarField, dt: f64, cfl: f64) -> Result<ScalarField, SolveError> {
        let mut out = field.clone();
        self.step_into(field.data(), dt, cfl, out.data_mut())?;
        Ok(out)
    }

    fn check_cfl(&self, dt: f64, cfl: f64) -> Result<(), SolveError> {
        let limit = self.max_dt(cfl);
        if !(dt > 0.0 && dt <= limit * (1.0 + 1e-9)) {
            return Err(SolveError::CflViolation { dt, limit, cfl });
        }
        Ok(())
    }

    /// One explicit-Euler update `V <- V + dt * min(0, H_hat)` of the whole
    /// field. Returns Unstable if any output is non-finite.
    fn step_into(
        &self,
        src: &[f32],
        dt: f64,
        cfl: f64,
        dst: &mut [f32],
    ) -> Result<(), SolveError> {
        self.check_cfl(dt, cfl)?;
        let n = *self.spec.count();
        let stride = *self.spec.stride();
        let rows = self.spec.num_nodes() / n[4];
        debug_assert_eq!(rows * n[4], src.len());

        let finite = dst
            .par_chunks_mut(n[4])
            .enumerate()
            .map(|(row, out)| {
                // decode the pencil's outer indices (axis 4 runs inside)
                let i3 = row % n[3];
                let r = row / n[3];
                let i2 = r % n[2];
                let r = r / n[2];
                let i1 = r % n[1];
                let i0 = r / n[1];
                let base = row * n[4];

                // neighbor rows along axes 0..3; None = extrapolation ghost
                // (one cell out) or unavailable (two cells out)
                let row_at = |idx: [usize; 4]| -> &[f32] {
                    let start = idx[0] * stride[0]
                        + idx[1] * stride[1]
                        + idx[2] * stride[2]
                        + idx[3] * stride[3];
                    &src[start..start + n[4]]
                };
                let idx4 = [i0, i1, i2, i3];
                let mut minus: [Option<&[f32]>; 4] = [None; 4];
                let mut plus: [Option<&[f32]>; 4] = [None; 4];
                let mut minus2: [Option<&[f32]>; 4] = [None; 4];
                let mut plus2: [Option<&[f32]>; 4] = [None; 4];
                for a in 0..4 {
                    let wrap = self.spec.periodic(a);
                    let at = |off: i64| -> Option<&[f32]> {
                        let i = idx4[a] as i64 + off;
                        let i = if wrap {
                            i.rem_euclid(n[a] as i64)
                        } else if (0..n[a] as i64).contains(&i) {
                            i
                        } else {
                            return None;
                        };
                        let mut idx = idx4;
                        idx[a] = i as usize;
                        Some(row_at(idx))
                    };
                    minus[a] = at(-1);
                    plus[a] = at(1);
                    minus2[a] = at(-2);
                    plus2[a] = at(2);
                }
                let center = &src[base..base + n[4]];

                let x = self.coords[0][i0];
                let y = self.coords[1][i1];
                let psi = self.coords[2][i2];
                let v_ego = self.coords[3][i3];
                let (sin_p, cos_p) = psi.sin_cos();

                let mut all_finite = true;
                for i4 in 0..n[4] {
                    let vc = center[i4] as f64;
                    let mut vm = [0.0f64; NUM_AXES];
                    let mut vp = [0.0f64; NUM_AXES];
                    // second differences for the limited gradient correction;
                    // 0 = no real curvature data there (ghost or domain edge),
                    // which degrades that side to first order via minmod
                    let mut ddm = [0.0f64; NUM_AXES];
                    let mut ddc = [0.0f64; NUM_AXES];
                    let mut ddp = [0.0f64; NUM_AXES];
                    for a in 0..4 {
                        let m = minus[a].map(|r| r[i4] as f64);
                        let p = plus[a].map(|r| r[i4] as f64);
                        // at most one side is missing (>= 3 nodes per axis);
                        // speed axis 3 saturates, positions extrapolate
                        let (m_a, p_a) = match (m, p) {
                            (Some(m), Some(p)) => (m, p),
                            (None, Some(p)) => {
                                (if a == 3 { vc } else { 2.0 * vc - p }, p)
                            }
                            (Some(m), None) => {
                                (m, if a == 3 { vc } else { 2.0 * vc - m })
                            }
                            (None, None) => unreachable!("axis with <3 nodes"),
                        };
                        vm[a] = m_a;
                        vp[a] = p_a;
                        if let (Some(m), Some(p)) = (m, p) {
                            ddc[a] = p - 2.0 * vc + m;
                            if let Some(r) = minus2[a] {
                                ddm[a] = vc - 2.0 * m + r[i4] as f64;
                            }
                            if let Some(r) = plus2[a] {
                                ddp[a] = r[i4] as f64 - 2.0 * p + vc;
                            }
                        }
                    }
                    // axis 4 is never periodic (grid contract: only heading)
                    // and is a speed axis, so its ghosts saturate too
                    {
                        let m = (i4 > 0).then(|| center[i4 - 1] as f64);
                        let p = (i4 + 1 < n[4]).then(|| center[i4 + 1] as f64);
                        vm[4] = m.unwrap_or(vc);
                        vp[4] = p.unwrap_or(vc);
                        if let (Some(m), Some(p)) = (m, p) {
                            ddc[4] = p - 2.0 * vc + m;
                            if i4 >= 2 {
                                ddm[4] = vc - 2.0 * m + center[i4 - 2] as f64;
                            }
                            if i4 + 2 < n[4] {
                                ddp[4] = center[i4 + 2] as f64 - 2.0 * p + vc;
                            }
                        }
                    }

                    let z = RelativeState {
                        x_rel: x,
                        y_rel: y,
                        psi_rel: psi,
                        v_ego,
                        v_contender: self.coords[4][i4],
                    };
                    let h_hat = match self.fixed_alpha {
                        None => {
                            let mut dm = [0.0f64; NUM_AXES];
                            let mut dp = [0.0f64; NUM_AXES];
                            for a in 0..NUM_AXES {
                                let cm = 0.5 * minmod(ddm[a], ddc[a]);
                                let cp = 0.5 * minmod(ddc[a], ddp[a]);
                                dm[a] = (vc - vm[a] + cm) * self.inv_dx[a];
                                dp[a] = (vp[a] - vc - cp) * self.inv_dx[a];
                            }
                            self.terms.upwind_eval(&z, &dm, &dp, sin_p, cos_p)
                        }
                        Some(alpha) => {
                            let mut p = [0.0f64; NUM_AXES];
                            let mut dissipation = 0.0;
                            for a in 0..NUM_AXES {
                                p[a] = (vp[a] - vm[a]) * 0.5 * self.inv_dx[a];
                                // reversed-time: the viscosity enters with a
                                // plus sign or the scheme anti-diffuses
                                dissipation +=
                                    alpha[a] * (vp[a] - 2.0 * vc + vm[a]) * 0.5 * self.inv_dx[a];
                            }
                            self.terms.eval_with_trig(&z, &p, sin_p, cos_p) + dissipation
                        }
                    };
                    let update = h_hat.min(0.0);
                    let next = (vc + dt * update) as f32;
                    all_finite &= next.is_finite();
                    out[i4] = next;
                }
                all_finite
            })
            .reduce(|| true, |a, b| a && b);

        if finite {
            Ok(())
        } else {
            Err(SolveError::Unstable { phase: "step", time: f64::NAN })
        }
    }
}

/// One upwind / explicit-Euler update of `field` under `phase`. `cfl`
/// bounds `dt` against the global speed bounds of the phase.
pub fn step(
    field: &ScalarField,
    dt: f64,
    phase: &PhaseSpec,
    geom: &VehicleGeometry,
    cfl: f64,
) -> Result<ScalarField, SolveError> {
    Stepper::new(field.spec(), phase, geom, None).step(field, dt, cfl)
}

/// Integrates one phase from `initial` out to `-horizon`, storing checkpoints
/// every `opts.checkpoint_interval` (plus the exact horizon). Each interval
/// is cut into equal sub-steps no longer than the CFL limit, so checkpoint
/// times are hit exactly.
pub fn solve_phase(
    initial: &ScalarField,
    phase: &PhaseSpec,
    geom: &VehicleGeometry,
    horizon: f64,
    opts: &SolveOptions,
) -> Result<ValueFunction, SolveError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SolveError::BadHorizon(horizon));
    }
    if !(opts.checkpoint_interval > 0.0 && opts.checkpoint_interval.is_finite()) {
        return Err(SolveError::BadInterval(opts.checkpoint_interval));
    }
    let stepper = Stepper::new(initial.spec(), phase, geom, opts.dissipation_override);
    let dt_max = stepper.max_dt(opts.cfl);

    let mut targets = Vec::new();
    let mut k = 1usize;
    loop {
        let t = k as f64 * opts.checkpoint_interval;
        if t >= horizon - 1e-12 {
            break;
        }
        targets.push(t);
        k += 1;
    }
    targets.push(horizon);

    let mut checkpoints = Vec::with_capacity(targets.len() + 1);
    checkpoints.push((0.0, initial.clone()));
    let mut front = initial.clone();
    let mut back = initial.clone();
    let mut reached = 0.0f64;
    for (ci, &target) in targets.iter().enumerate() {
        let seg = target - reached;
        let n_sub = (seg / dt_max).ceil().max(1.0) as usize;
        let sub_dt = seg / n_sub as f64;
        for _ in 0..n_sub {
            stepper
                .step_into(front.data(), sub_dt, opts.cfl, back.data_mut())
                .map_err(|e| match e {
                    SolveError::Unstable { .. } => SolveError::Unstable {
                        phase: phase.label.as_str(),
                        time: -reached,
                    },
                    other => other,
                })?;
            std::mem::swap(&mut front, &mut back);
        }
        reached = target;
        checkpoints.push((-target, front.clone()));
        if opts.report_progress {
            eprintln!(
                "{} phase: t = -{:.3} s ({}/{} checkpoints, dt = {:.4} s)",
                phase.label.as_str(),
                target,
                ci + 1,
                targets.len(),
                sub_dt
            );
        }
    }
    ValueFunction::from_checkpoints(checkpoints)
}

/// Full two-phase solve output: the braking tube (checkpointed densely for
/// per-node stop-time sampling) and the reaction pass (t = 0 initial plus the
/// final slice, which is the field the classifier ships).
pub struct TwoPhaseSolution {
    pub braking: ValueFunction,
    pub reaction: ValueFunction,
}

impl TwoPhaseSolution {
    pub fn final_field(&self) -> &ScalarField {
        self.reaction.final_field()
    }
}

/// Runs braking phase then reaction phase per the parameter set.
///
/// Braking integrates from the signed-distance field out to the stop time of
/// the fastest grid speed under the pinned deceleration; reaction integrates
/// the per-node resampled tube for the reaction time with both agents free.
pub fn solve_two_phase(
    spec: &GridSpec,
    params: &Params,
    opts: &SolveOptions,
) -> Result<TwoPhaseSolution, SolveError> {
    params.validate()?;
    let geom = params.geometry();
    for axis in [3usize, 4] {
        if spec.hi()[axis] > params.v_max + 1e-9 {
            return Err(SolveError::GridBeyondVMax { axis_hi: spec.hi()[axis], v_max: params.v_max });
        }
    }
    let half_x = spec.lo()[0].abs().min(spec.hi()[0].abs());
    let half_y = spec.lo()[1].abs().min(spec.hi()[1].abs());
    let closing = params.max_closing_displacement();
    if half_x < closing || half_y < closing {
        eprintln!(
            "warning: grid half-extents ({half_x:.0} m, {half_y:.0} m) are below the worst-case \
             closing displacement {closing:.0} m; out-of-domain queries are classified \
             non-critical, which is only provably safe beyond that bound"
        );
    }

    crate::with_workers(opts.workers, || {
        let l_sd = terminal_field(spec, &geom);
        let brake_horizon = stop_time(spec.hi()[3], params.brake_accel);
        let braking = solve_phase(&l_sd, &params.braking_phase(), &geom, brake_horizon, opts)?;
        let react0 = reaction_initial(&braking, spec, params.brake_accel)?;
        let reaction_opts = SolveOptions {
            checkpoint_interval: params.reaction_time,
            ..opts.clone()
        };
        let reaction = solve_phase(
            &react0,
            &params.reaction_phase(),
            &geom,
            params.reaction_time,
            &reaction_opts,
        )?;
        Ok(TwoPhaseSolution { braking, reaction })
    })
}

/// Default grid for the shipped artifact: 40 x 40 x 20 x 15 x 15 cells over
/// x [-150, 150] m, y [-100, 100] m, heading [-pi, pi) periodic, speeds
/// [0, v_max].
pub fn default_grid(params: &Params) -> GridSpec {
    use std::f64::consts::PI;
    GridSpec::new(
        [-150.0, -100.0, -PI, 0.0, 0.0],
        [150.0, 100.0, PI, params.v_max, params.v_max],
        [40, 40, 20, 15, 15],
        [false, false, true, false, false],
    )
    .expect("default grid parameters are valid")
}

/// Coarse grid for fast end-to-end runs and tests: same extents, 10 x 10 x 8
/// x 5 x 5 cells.
pub fn smoke_grid(params: &Params) -> GridSpec {
    use std::f64::consts::PI;
    GridSpec::new(
        [-150.0, -100.0, -PI, 0.0, 0.0],
        [150.0, 100.0, PI, params.v_max, params.v_max],
        [10, 10, 8, 5, 5],
        [false, false, true, false, false],
    )
    .expect("smoke grid parameters are valid")
}
