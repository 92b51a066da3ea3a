//! Run parameters shared by the solver, classifier, evaluator, and oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlBounds, PhaseLabel, PhaseSpec, VehicleGeometry};

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("{field} must be finite and {constraint}, got {value}")]
    OutOfRange {
        field: &'static str,
        constraint: &'static str,
        value: f64,
    },
    #[error("interval {field} must satisfy lo <= hi, got [{lo}, {hi}]")]
    BadInterval { field: &'static str, lo: f64, hi: f64 },
}

/// Scenario and pipeline parameters. Angles are radians internally; the
/// steering limit is stored in degrees because that is how configs state it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Detections scoring below this are discarded before matching.
    pub score_threshold: f64,
    /// Minimum oriented IoU for a detection to match a ground-truth box.
    pub iou_threshold: f64,
    /// Speed cap for both vehicles, m/s.
    pub v_max: f64,
    /// Ego fallback deceleration, m/s^2 (negative).
    pub brake_accel: f64,
    /// Contender acceleration interval, m/s^2.
    pub contender_accel: [f64; 2],
    /// Ego acceleration interval during the reaction phase, m/s^2.
    pub ego_reaction_accel: [f64; 2],
    /// Steering limit for both vehicles, degrees (interval is symmetric).
    pub steer_limit_deg: f64,
    /// Vehicle body length, m.
    pub length: f64,
    /// Vehicle body width, m.
    pub width: f64,
    /// Front-to-rear axle distance, m.
    pub axle_distance: f64,
    /// Reaction-phase duration, s.
    pub reaction_time: f64,
    /// Classification threshold tau: critical iff interpolated value < tau.
    /// 0 is the plain zero-sublevel test; a positive margin inflates the zone.
    pub classification_margin: f64,
    /// Velocity-association gating radius, m per 0.5 s of frame gap.
    pub velocity_gate: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            score_threshold: 0.3,
            iou_threshold: 0.5,
            v_max: 20.0,
            brake_accel: -3.5,
            contender_accel: [-4.5, 4.5],
            ego_reaction_accel: [-4.5, 4.5],
            steer_limit_deg: 10.0,
            length: 4.5,
            width: 2.5,
            axle_distance: 3.0,
            reaction_time: 0.5,
            classification_margin: 0.0,
            velocity_gate: 3.0,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<(), ParamsError> {
        fn check(
            field: &'static str,
            value: f64,
            constraint: &'static str,
            ok: bool,
        ) -> Result<(), ParamsError> {
            if value.is_finite() && ok {
                Ok(())
            } else {
                Err(ParamsError::OutOfRange { field, constraint, value })
            }
        }
        check("score_threshold", self.score_threshold, "in [0, 1]",
              (0.0..=1.0).contains(&self.score_threshold))?;
        check("iou_threshold", self.iou_threshold, "in (0, 1]",
              self.iou_threshold > 0.0 && self.iou_threshold <= 1.0)?;
        check("v_max", self.v_max, "positive", self.v_max > 0.0)?;
        check("brake_accel", self.brake_accel, "negative", self.brake_accel < 0.0)?;
        check("steer_limit_deg", self.steer_limit_deg, "in (0, 45)",
              self.steer_limit_deg > 0.0 && self.steer_limit_deg < 45.0)?;
        check("length", self.length, "positive", self.length > 0.0)?;
        check("width", self.width, "positive", self.width > 0.0)?;
        check("axle_distance", self.axle_distance, "in (0, length]",
              self.axle_distance > 0.0 && self.axle_distance <= self.length)?;
        check("reaction_time", self.reaction_time, "positive", self.reaction_time > 0.0)?;
        check("classification_margin", self.classification_margin, "finite", true)?;
        check("velocity_gate", self.velocity_gate, "positive", self.velocity_gate > 0.0)?;
        for (field, [lo, hi]) in [
            ("contender_accel", self.contender_accel),
            ("ego_reaction_accel", self.ego_reaction_accel),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ParamsError::BadInterval { field, lo, hi });
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> VehicleGeometry {
        VehicleGeometry {
            length: self.length,
            width: self.width,
            axle_distance: self.axle_distance,
            v_max: self.v_max,
        }
    }

    pub fn steer_limit_rad(&self) -> f64 {
        self.steer_limit_deg.to_radians()
    }

    /// Reaction phase: both agents pick steering and acceleration freely.
    pub fn reaction_phase(&self) -> PhaseSpec {
        let steer = self.steer_limit_rad();
        PhaseSpec {
            label: PhaseLabel::Reaction,
            ego: ControlBounds {
                steer: [-steer, steer],
                accel: self.ego_reaction_accel,
                fixed_accel: None,
            },
            contender: ControlBounds {
                steer: [-steer, steer],
                accel: self.contender_accel,
                fixed_accel: None,
            },
        }
    }

    /// Braking phase: ego acceleration pinned to the fallback deceleration,
    /// steering still free; contender unrestricted.
    pub fn braking_phase(&self) -> PhaseSpec {
        let steer = self.steer_limit_rad();
        PhaseSpec {
            label: PhaseLabel::Braking,
            ego: ControlBounds {
                steer: [-steer, steer],
                accel: self.ego_reaction_accel,
                fixed_accel: Some(self.brake_accel),
            },
            contender: ControlBounds {
                steer: [-steer, steer],
                accel: self.contender_accel,
                fixed_accel: None,
            },
        }
    }

    /// Upper bound on how far the ego and contender can close on each other
    /// (sum of worst-case path lengths plus collision reach) over the full
    /// reaction + braking horizon. States whose planar offset exceeds this
    /// provably cannot reach collision before the ego stops.
    pub fn max_closing_displacement(&self) -> f64 {
        let t_brake = self.v_max / self.brake_accel.abs();
        let t_total = self.reaction_time + t_brake;
        let ego_path = self.v_max * self.reaction_time + self.v_max * self.v_max
            / (2.0 * self.brake_accel.abs());
        let contender_path = self.v_max * t_total;
        let collision_reach = (self.length * self.length + self.width * self.width).sqrt()
            + (self.length - self.axle_distance);
        ego_path + contender_path + collision_reach
    }
}
