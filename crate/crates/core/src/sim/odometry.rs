//! Drifting odometry measurements.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geom::Pose4;

/// Noise densities scale with the square root of distance travelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftModel {
    /// m/√m, per planar axis.
    pub translation_noise: f64,
    /// rad/√m.
    pub yaw_noise: f64,
    /// rad/m, deterministic heading bias.
    pub yaw_bias: f64,
    /// m/√m.
    pub z_noise: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            translation_noise: 0.004,
            yaw_noise: 0.0005,
            yaw_bias: 5e-5,
            z_noise: 0.003,
        }
    }
}

impl DriftModel {
    pub fn zero() -> Self {
        Self {
            translation_noise: 0.0,
            yaw_noise: 0.0,
            yaw_bias: 0.0,
            z_noise: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.translation_noise, self.yaw_noise, self.z_noise]
            .iter()
            .all(|s| s.is_finite() && *s >= 0.0)
            && self.yaw_bias.is_finite()
    }
}

/// Noisy version of a true gravity-aligned increment; roll and pitch are not
/// part of the increment and stay noise free.
pub fn measure_odometry(true_delta: &Pose4, drift: &DriftModel, rng: &mut impl Rng) -> Pose4 {
    let length = true_delta.translation().norm();
    if length == 0.0 {
        return *true_delta;
    }
    let root = length.sqrt();
    let mut n = || rng.sample::<f64, _>(StandardNormal);
    let noise = Pose4::new(
        drift.translation_noise * root * n(),
        drift.translation_noise * root * n(),
        drift.z_noise * root * n(),
        drift.yaw_noise * root * n() + drift.yaw_bias * length,
    );
    true_delta.compose(&noise)
}
