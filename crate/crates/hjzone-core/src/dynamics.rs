//! Vehicle models: dynamically extended simple car, ego-frame relative
//! dynamics, and the analytic (min, min) Hamiltonian used by the solver.
//!
//! Conventions that every caller relies on:
//! - A vehicle state point is the rear-axle midpoint, not the body center.
//! - Headings and steering angles are radians; `psi_rel = psi_C - psi_E`.
//! - The relative frame rotates world offsets by `R_psi = [[cos, sin],
//!   [-sin, cos]]` evaluated at the ego heading.
//! - Speeds saturate at [0, v_max]: an acceleration pushing past a bound
//!   produces zero rate there.

use serde::{Deserialize, Serialize};

use crate::grid::wrap_angle;

/// Planar vehicle pose plus scalar speed along the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

/// Contender pose and speeds expressed in the ego frame:
/// `[x_rel, y_rel, psi_rel, v_ego, v_contender]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeState {
    pub x_rel: f64,
    pub y_rel: f64,
    pub psi_rel: f64,
    pub v_ego: f64,
    pub v_contender: f64,
}

impl RelativeState {
    pub fn from_array(z: [f64; 5]) -> Self {
        RelativeState { x_rel: z[0], y_rel: z[1], psi_rel: z[2], v_ego: z[3], v_contender: z[4] }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.x_rel, self.y_rel, self.psi_rel, self.v_ego, self.v_contender]
    }
}

/// Body and drivetrain constants shared by both vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub length: f64,
    pub width: f64,
    /// Front-to-rear axle distance d in the bicycle model.
    pub axle_distance: f64,
    pub v_max: f64,
}

impl VehicleGeometry {
    /// Offset from the rear-axle state point to the body center, along the
    /// heading.
    pub fn center_offset(&self) -> f64 {
        0.5 * self.length - 0.5 * self.axle_distance
    }
}

/// Steering angle and longitudinal acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub steer: f64,
    pub accel: f64,
}

/// Control intervals for one agent in one phase. `fixed_accel` overrides the
/// acceleration interval entirely (the braking phase pins the ego to its
/// fallback deceleration).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    pub steer: [f64; 2],
    pub accel: [f64; 2],
    pub fixed_accel: Option<f64>,
}

impl ControlBounds {
    /// Effective acceleration interval after applying the override.
    pub fn accel_interval(&self) -> [f64; 2] {
        match self.fixed_accel {
            Some(a) => [a, a],
            None => self.accel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseLabel {
    Reaction,
    Braking,
}

impl PhaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::Reaction => "reaction",
            PhaseLabel::Braking => "braking",
        }
    }
}

/// Control authority of both agents over one solve phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpec {
    pub label: PhaseLabel,
    pub ego: ControlBounds,
    pub contender: ControlBounds,
}

/// Speed rate under saturation: zero when the acceleration pushes past
/// v = 0 or v = v_max, the raw acceleration otherwise.
#[inline]
pub fn clamped_rate(v: f64, accel: f64, v_max: f64) -> f64 {
    if (v <= 0.0 && accel < 0.0) || (v >= v_max && accel > 0.0) {
        0.0
    } else {
        accel
    }
}

/// Expresses the contender state in the ego frame.
pub fn to_relative(ego: &VehicleState, contender: &VehicleState) -> RelativeState {
    let dx = contender.x - ego.x;
    let dy = contender.y - ego.y;
    let (sin_e, cos_e) = ego.heading.sin_cos();
    RelativeState {
        x_rel: cos_e * dx + sin_e * dy,
        y_rel: -sin_e * dx + cos_e * dy,
        psi_rel: wrap_angle(contender.heading - ego.heading),
        v_ego: ego.speed,
        v_contender: contender.speed,
    }
}

/// Bicycle-model rate of one vehicle: `[dx, dy, dpsi, dv]`.
pub fn joint_flow(state: &VehicleState, u: &Control, geom: &VehicleGeometry) -> [f64; 4] {
    let (sin_h, cos_h) = state.heading.sin_cos();
    [
        state.speed * cos_h,
        state.speed * sin_h,
        state.speed / geom.axle_distance * u.steer.tan(),
        clamped_rate(state.speed, u.accel, geom.v_max),
    ]
}

/// Relative-state rate under both agents' controls.
///
/// The position terms combine the contender's motion, the ego's forward
/// translation, and the rigid rotation of the frame at the ego yaw rate
/// `v_E/d * tan(steer_E)`.
pub fn relative_flow(
    z: &RelativeState,
    u_ego: &Control,
    u_contender: &Control,
    geom: &VehicleGeometry,
) -> [f64; 5] {
    let d = geom.axle_distance;
    let (sin_p, cos_p) = z.psi_rel.sin_cos();
    let tan_e = u_ego.steer.tan();
    let tan_c = u_contender.steer.tan();
    let ego_yaw_rate = z.v_ego / d * tan_e;
    [
        z.v_contender * cos_p - z.v_ego + z.y_rel * ego_yaw_rate,
        z.v_contender * sin_p - z.x_rel * ego_yaw_rate,
        z.v_contender / d * tan_c - ego_yaw_rate,
        clamped_rate(z.v_ego, u_ego.accel, geom.v_max),
        clamped_rate(z.v_contender, u_contender.accel, geom.v_max),
    ]
}

/// Relative state with the two vehicles' roles exchanged. An involution:
/// applying it twice returns the input (up to angle wrapping).
pub fn role_swap(z: &RelativeState) -> RelativeState {
    let (sin_p, cos_p) = z.psi_rel.sin_cos();
    RelativeState {
        x_rel: -(z.x_rel * cos_p + z.y_rel * sin_p),
        y_rel: z.x_rel * sin_p - z.y_rel * cos_p,
        psi_rel: wrap_angle(-z.psi_rel),
        v_ego: z.v_contender,
        v_contender: z.v_ego,
    }
}

/// Precomputed endpoint data for evaluating the (min, min) Hamiltonian many
/// times per phase. The flow is affine in `tan(steer_E)`, `tan(steer_C)`,
/// `a_E`, and `a_C` separately, so each minimization picks an interval
/// endpoint; building the tangents once keeps the per-node cost trigonometry
/// free.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianTerms {
    tan_ego: [f64; 2],
    tan_contender: [f64; 2],
    accel_ego: [f64; 2],
    accel_contender: [f64; 2],
    inv_d: f64,
    v_max: f64,
}

impl HamiltonianTerms {
    pub fn new(phase: &PhaseSpec, geom: &VehicleGeometry) -> Self {
        HamiltonianTerms {
            tan_ego: [phase.ego.steer[0].tan(), phase.ego.steer[1].tan()],
            tan_contender: [phase.contender.steer[0].tan(), phase.contender.steer[1].tan()],
            accel_ego: phase.ego.accel_interval(),
            accel_contender: phase.contender.accel_interval(),
            inv_d: 1.0 / geom.axle_distance,
            v_max: geom.v_max,
        }
    }

    /// min over both agents' control boxes of `<p, f(z, u_E, u_C)>`.
    #[inline]
    pub fn eval(&self, z: &RelativeState, p: &[f64; 5]) -> f64 {
        let (sin_p, cos_p) = z.psi_rel.sin_cos();
        self.eval_with_trig(z, p, sin_p, cos_p)
    }

    /// [`eval`](Self::eval) with `sin(psi_rel)`, `cos(psi_rel)` hoisted out;
    /// the solver shares one evaluation per grid pencil.
    #[inline]
    pub fn eval_with_trig(&self, z: &RelativeState, p: &[f64; 5], sin_p: f64, cos_p: f64) -> f64 {
        let drift = p[0] * (z.v_contender * cos_p - z.v_ego)
            + p[1] * (z.v_contender * sin_p);

        // coefficient of tan(steer_E): rotation of (x,y) plus own yaw row
        let c_ego = z.v_ego * self.inv_d * (p[0] * z.y_rel - p[1] * z.x_rel - p[2]);
        let steer_ego = (c_ego * self.tan_ego[0]).min(c_ego * self.tan_ego[1]);

        let c_con = p[2] * z.v_contender * self.inv_d;
        let steer_con = (c_con * self.tan_contender[0]).min(c_con * self.tan_contender[1]);

        // the achievable speed-rate set is [rate(a_lo), rate(a_hi)] (rate is
        // monotone in a), so the linear term is minimized at an endpoint
        let accel_ego = (p[3] * clamped_rate(z.v_ego, self.accel_ego[0], self.v_max))
            .min(p[3] * clamped_rate(z.v_ego, self.accel_ego[1], self.v_max));
        let accel_con = (p[4] * clamped_rate(z.v_contender, self.accel_contender[0], self.v_max))
            .min(p[4] * clamped_rate(z.v_contender, self.accel_contender[1], self.v_max));

        drift + steer_ego + steer_con + accel_ego + accel_con
    }

    /// Per-axis bound on |f_i| at `z` over both control boxes; a tight
    /// per-node Lax-Friedrichs dissipation coefficient.
    #[inline]
    pub fn local_speed_bounds(&self, z: &RelativeState) -> [f64; 5] {
        let (sin_p, cos_p) = z.psi_rel.sin_cos();
        self.local_speed_bounds_with_trig(z, sin_p, cos_p)
    }

    /// [`local_speed_bounds`](Self::local_speed_bounds) with the heading
    /// trigonometry hoisted out.
    #[inline]
    pub fn local_speed_bounds_with_trig(
        &self,
        z: &RelativeState,
        sin_p: f64,
        cos_p: f64,
    ) -> [f64; 5] {
        let tan_e = self.tan_ego[0].abs().max(self.tan_ego[1].abs());
        let tan_c = self.tan_contender[0].abs().max(self.tan_contender[1].abs());
        let yaw_e = z.v_ego * self.inv_d * tan_e;
        let ae = self.accel_ego[0].abs().max(self.accel_ego[1].abs());
        let ac = self.accel_contender[0].abs().max(self.accel_contender[1].abs());
        [
            (z.v_contender * cos_p - z.v_ego).abs() + z.y_rel.abs() * yaw_e,
            (z.v_contender * sin_p).abs() + z.x_rel.abs() * yaw_e,
            z.v_contender * self.inv_d * tan_c + yaw_e,
            ae,
            ac,
        ]
    }

    /// Godunov upwind numerical Hamiltonian: `min` over both control boxes of
    /// `sum_a f_a(u) * D_a V`, where each axis is differenced on the side the
    /// characteristic foot lands (`f_a > 0` reads the forward difference
    /// `dp`, `f_a < 0` the backward `dm`).
    ///
    /// Unlike a Lax-Friedrichs flux, whose viscosity must cover the bang-bang
    /// steering endpoints even where the optimal steer is interior (the flux
    /// kink at straightaheads), this resolves the control before differencing
    /// and so adds no cross-wind diffusion along directions the played
    /// control does not excite.
    ///
    /// The sum is jointly convex piecewise-affine in `(tan steer_E,
    /// tan steer_C)` (each flux is convex in an affine argument), so the
    /// minimum sits at a box corner, on a flux zero-crossing, or at a
    /// crossing of two of those lines; all such candidates are enumerated.
    /// The speed-rate terms separate per axis and are minimized over the
    /// endpoint rates plus the zero rate when the interval spans it.
    pub fn upwind_eval(
        &self,
        z: &RelativeState,
        dm: &[f64; 5],
        dp: &[f64; 5],
        sin_p: f64,
        cos_p: f64,
    ) -> f64 {
        #[inline]
        fn flux(f: f64, dm: f64, dp: f64) -> f64 {
            if f > 0.0 {
                f * dp
            } else {
                f * dm
            }
        }
        // f0 = a + b*te, f1 = c - e*te, f2 = g*tc - k*te
        let a = z.v_contender * cos_p - z.v_ego;
        let b = z.v_ego * self.inv_d * z.y_rel;
        let c = z.v_contender * sin_p;
        let e = z.v_ego * self.inv_d * z.x_rel;
        let g = z.v_contender * self.inv_d;
        let k = z.v_ego * self.inv_d;
        let [te_lo, te_hi] = self.tan_ego;
        let [tc_lo, tc_hi] = self.tan_contender;

        let mut te_cands = [te_lo, te_hi, 0.0, 0.0, 0.0, 0.0];
        let mut n_te = 2;
        let push_te = |cands: &mut [f64; 6], n: &mut usize, t: f64| {
            if t.is_finite() {
                cands[*n] = t.clamp(te_lo, te_hi);
                *n += 1;
            }
        };
        if b != 0.0 {
            push_te(&mut te_cands, &mut n_te, -a / b);
        }
        if e != 0.0 {
            push_te(&mut te_cands, &mut n_te, c / e);
        }
        if k != 0.0 {
            // where the contender's steering box stops cancelling f2
            push_te(&mut te_cands, &mut n_te, g * tc_lo / k);
            push_te(&mut te_cands, &mut n_te, g * tc_hi / k);
        }

        let mut steer_min = f64::INFINITY;
        for &te in &te_cands[..n_te] {
            let f0 = a + b * te;
            let f1 = c - e * te;
            let base = flux(f0, dm[0], dp[0]) + flux(f1, dm[1], dp[1]);
            let mut tc_cands = [tc_lo, tc_hi, tc_lo];
            let mut n_tc = 2;
            if g != 0.0 {
                let t = k * te / g;
                if t.is_finite() {
                    tc_cands[2] = t.clamp(tc_lo, tc_hi);
                    n_tc = 3;
                }
            }
            for &tc in &tc_cands[..n_tc] {
                let f2 = g * tc - k * te;
                let total = base + flux(f2, dm[2], dp[2]);
                steer_min = steer_min.min(total);
            }
        }

        let rate_min = |axis: usize, v: f64, bounds: [f64; 2]| -> f64 {
            let r_lo = clamped_rate(v, bounds[0], self.v_max);
            let r_hi = clamped_rate(v, bounds[1], self.v_max);
            let mut best = flux(r_lo, dm[axis], dp[axis]).min(flux(r_hi, dm[axis], dp[axis]));
            if r_lo < 0.0 && r_hi > 0.0 {
                best = best.min(0.0);
            }
            best
        };
        let accel_e = rate_min(3, z.v_ego, self.accel_ego);
        let accel_c = rate_min(4, z.v_contender, self.accel_contender);

        steer_min + accel_e + accel_c
    }
}

/// Analytic Hamiltonian `min_{u_E} min_{u_C} <p, f(z, u_E, u_C)>`. Both
/// agents minimize: the zone treats the contender as collision-seeking and
/// asks whether the ego has any escape.
pub fn hamiltonian(z: &RelativeState, p: &[f64; 5], phase: &PhaseSpec, geom: &VehicleGeometry) -> f64 {
    HamiltonianTerms::new(phase, geom).eval(z, p)
}

/// Global per-axis speed bounds `alpha_i >= max |f_i|` over the grid domain
/// and the phase's control boxes. These size the CFL-stable time step and
/// serve as fixed Lax-Friedrichs dissipation coefficients when that scheme
/// is requested.
pub fn dissipation_bounds(
    phase: &PhaseSpec,
    geom: &VehicleGeometry,
    spec: &crate::grid::GridSpec,
) -> [f64; 5] {
    let tan_e = phase.ego.steer[0].tan().abs().max(phase.ego.steer[1].tan().abs());
    let tan_c = phase.contender.steer[0].tan().abs().max(phase.contender.steer[1].tan().abs());
    let abs_max = |axis: usize| spec.lo()[axis].abs().max(spec.hi()[axis].abs());
    let x_max = abs_max(0);
    let y_max = abs_max(1);
    let ve_max = spec.hi()[3].min(geom.v_max).max(0.0);
    let vc_max = spec.hi()[4].min(geom.v_max).max(0.0);
    let d = geom.axle_distance;
    let ego_yaw_max = ve_max / d * tan_e;
    let ae = phase.ego.accel_interval();
    let ac = phase.contender.accel_interval();
    [
        vc_max + ve_max + y_max * ego_yaw_max,
        vc_max + x_max * ego_yaw_max,
        vc_max / d * tan_c + ego_yaw_max,
        ae[0].abs().max(ae[1].abs()),
        ac[0].abs().max(ac[1].abs()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Params;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn geom() -> VehicleGeometry {
        Params::default().geometry()
    }

    #[test]
    fn relative_frame_rotates_offsets_into_ego_heading() {
        // ego heading +y, contender 10 m further along +y: dead ahead
        let ego = VehicleState { x: 0.0, y: 0.0, heading: FRAC_PI_2, speed: 5.0 };
        let con = VehicleState { x: 0.0, y: 10.0, heading: FRAC_PI_2, speed: 3.0 };
        let z = to_relative(&ego, &con);
        assert!((z.x_rel - 10.0).abs() < 1e-12);
        assert!(z.y_rel.abs() < 1e-12);
        assert!(z.psi_rel.abs() < 1e-12);
        assert_eq!(z.v_ego, 5.0);
        assert_eq!(z.v_contender, 3.0);
    }

    #[test]
    fn head_on_closing_speed() {
        let z = RelativeState {
            x_rel: 10.0,
            y_rel: 0.0,
            psi_rel: PI,
            v_ego: 5.0,
            v_contender: 5.0,
        };
        let idle = Control { steer: 0.0, accel: 0.0 };
        let f = relative_flow(&z, &idle, &idle, &geom());
        assert!((f[0] + 10.0).abs() < 1e-12);
        assert!(f[1].abs() < 1e-12);
        assert!(f[2].abs() < 1e-12);
    }

    #[test]
    fn speed_saturates_at_bounds() {
        let g = geom();
        assert_eq!(clamped_rate(0.0, -3.5, g.v_max), 0.0);
        assert_eq!(clamped_rate(0.0, 2.0, g.v_max), 2.0);
        assert_eq!(clamped_rate(20.0, 4.5, g.v_max), 0.0);
        assert_eq!(clamped_rate(20.0, -3.5, g.v_max), -3.5);
        assert_eq!(clamped_rate(7.0, -3.5, g.v_max), -3.5);
    }

    #[test]
    fn hamiltonian_picks_contender_decel_for_positive_speed_costate() {
        let p = Params::default();
        let z = RelativeState { x_rel: 5.0, y_rel: 2.0, psi_rel: 0.3, v_ego: 8.0, v_contender: 8.0 };
        let h = hamiltonian(&z, &[0.0, 0.0, 0.0, 0.0, 1.0], &p.reaction_phase(), &p.geometry());
        assert!((h + 4.5).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_uses_pinned_brake_accel() {
        let p = Params::default();
        let z = RelativeState { x_rel: 5.0, y_rel: 2.0, psi_rel: 0.3, v_ego: 8.0, v_contender: 8.0 };
        let h = hamiltonian(&z, &[0.0, 0.0, 0.0, 1.0, 0.0], &p.braking_phase(), &p.geometry());
        assert!((h + 3.5).abs() < 1e-12);
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*state >> 11) as f64) / (1u64 << 53) as f64
    }

    fn random_state(s: &mut u64) -> RelativeState {
        RelativeState {
            x_rel: -150.0 + 300.0 * lcg(s),
            y_rel: -100.0 + 200.0 * lcg(s),
            psi_rel: -PI + 2.0 * PI * lcg(s),
            v_ego: 20.0 * lcg(s),
            v_contender: 20.0 * lcg(s),
        }
    }

    #[test]
    fn hamiltonian_matches_vertex_enumeration() {
        // the full 1e5-sample agreement check runs in the acceptance suite;
        // this is the fast regression version
        let params = Params::default();
        let g = params.geometry();
        let mut s = 0x9e3779b97f4a7c15u64;
        for phase in [params.reaction_phase(), params.braking_phase()] {
            for _ in 0..500 {
                let z = random_state(&mut s);
                let p: [f64; 5] = std::array::from_fn(|_| -1.0 + 2.0 * lcg(&mut s));
                let analytic = hamiltonian(&z, &p, &phase, &g);
                let brute = crate::oracle::hamiltonian_vertex_min(&z, &p, &phase, &g);
                assert!(
                    (analytic - brute).abs() <= 1e-9,
                    "analytic {analytic} vs brute {brute} at {z:?}, p {p:?}"
                );
            }
        }
    }

    #[test]
    fn global_dissipation_dominates_sampled_flow() {
        let params = Params::default();
        let g = params.geometry();
        let spec = crate::grid::GridSpec::new(
            [-150.0, -100.0, -PI, 0.0, 0.0],
            [150.0, 100.0, PI, 20.0, 20.0],
            [8, 8, 8, 5, 5],
            [false, false, true, false, false],
        )
        .unwrap();
        let mut s = 0x2545f4914f6cdd1du64;
        for phase in [params.reaction_phase(), params.braking_phase()] {
            let alpha = dissipation_bounds(&phase, &g, &spec);
            let terms = HamiltonianTerms::new(&phase, &g);
            for _ in 0..2000 {
                let z = random_state(&mut s);
                let mut pick = |b: [f64; 2]| if lcg(&mut s) < 0.5 { b[0] } else { b[1] };
                let ue = Control {
                    steer: pick(phase.ego.steer),
                    accel: pick(phase.ego.accel_interval()),
                };
                let uc = Control {
                    steer: pick(phase.contender.steer),
                    accel: pick(phase.contender.accel_interval()),
                };
                let f = relative_flow(&z, &ue, &uc, &g);
                let local = terms.local_speed_bounds(&z);
                for i in 0..5 {
                    assert!(
                        f[i].abs() <= local[i] + 1e-9,
                        "axis {i}: |f|={} exceeds local bound {}",
                        f[i].abs(),
                        local[i]
                    );
                    assert!(local[i] <= alpha[i] + 1e-9, "local bound above global on axis {i}");
                }
            }
        }
    }

    #[test]
    fn role_swap_is_an_involution() {
        let mut s = 0x853c49e6748fea9bu64;
        for _ in 0..200 {
            let z = random_state(&mut s);
            let w = role_swap(&role_swap(&z));
            assert!((z.x_rel - w.x_rel).abs() < 1e-9);
            assert!((z.y_rel - w.y_rel).abs() < 1e-9);
            assert!((wrap_angle(z.psi_rel - w.psi_rel)).abs() < 1e-9);
            assert_eq!(z.v_ego, w.v_ego);
            assert_eq!(z.v_contender, w.v_contender);
        }
    }

    #[test]
    fn relative_flow_tracks_joint_rollout() {
        // finite differences of to_relative along a joint trajectory must
        // match relative_flow; ties Eq-style relative dynamics to the joint
        // model they were derived from
        let g = geom();
        let mut s = 0xda3e39cb94b95bdbu64;
        for _ in 0..50 {
            let mut ego = VehicleState {
                x: 20.0 * lcg(&mut s),
                y: 20.0 * lcg(&mut s),
                heading: -PI + 2.0 * PI * lcg(&mut s),
                speed: 1.0 + 18.0 * lcg(&mut s),
            };
            let mut con = VehicleState {
                x: 20.0 * lcg(&mut s),
                y: 20.0 * lcg(&mut s),
                heading: -PI + 2.0 * PI * lcg(&mut s),
                speed: 1.0 + 18.0 * lcg(&mut s),
            };
            let ue = Control { steer: -0.15 + 0.3 * lcg(&mut s), accel: -3.0 + 6.0 * lcg(&mut s) };
            let uc = Control { steer: -0.15 + 0.3 * lcg(&mut s), accel: -3.0 + 6.0 * lcg(&mut s) };
            let z0 = to_relative(&ego, &con);
            let predicted = relative_flow(&z0, &ue, &uc, &g);

            // one tiny explicit-Euler step of the joint model
            let h = 1e-6;
            let fe = joint_flow(&ego, &ue, &g);
            let fc = joint_flow(&con, &uc, &g);
            ego.x += h * fe[0];
            ego.y += h * fe[1];
            ego.heading += h * fe[2];
            ego.speed += h * fe[3];
            con.x += h * fc[0];
            con.y += h * fc[1];
            con.heading += h * fc[2];
            con.speed += h * fc[3];
            let z1 = to_relative(&ego, &con);

            let observed = [
                (z1.x_rel - z0.x_rel) / h,
                (z1.y_rel - z0.y_rel) / h,
                wrap_angle(z1.psi_rel - z0.psi_rel) / h,
                (z1.v_ego - z0.v_ego) / h,
                (z1.v_contender - z0.v_contender) / h,
            ];
            for i in 0..5 {
                assert!(
                    (predicted[i] - observed[i]).abs() < 1e-4 * (1.0 + predicted[i].abs()),
                    "axis {i}: flow {} vs finite difference {}",
                    predicted[i],
                    observed[i]
                );
            }
        }
    }
}
