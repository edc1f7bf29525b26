use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry, generation ranges and reward constants for the gridworld.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive room-count range.
    pub rooms: (usize, usize),
    /// Inclusive object-count range.
    pub objects: (usize, usize),
    pub cell_size_m: f64,
    pub view_range_m: f64,
    pub fov_deg: f64,
    pub r_house_explore: f64,
    pub r_object_found: f64,
    pub r_safety: f64,
    pub n_safety_threshold: usize,
    /// Side of the square window used to count unreachable cells.
    pub safety_window: usize,
    pub time_penalty: f64,
    pub success_radius_m: f64,
    pub min_start_distance_m: f64,
    pub max_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            width: 20,
            height: 20,
            rooms: (3, 5),
            objects: (10, 16),
            cell_size_m: 0.25,
            view_range_m: 2.0,
            fov_deg: 90.0,
            r_house_explore: 0.1,
            r_object_found: 4.0,
            r_safety: 0.005,
            n_safety_threshold: 20,
            safety_window: 13,
            time_penalty: -0.01,
            success_radius_m: 1.0,
            min_start_distance_m: 2.0,
            max_steps: 500,
        }
    }
}

impl EnvConfig {
    /// Small houses used for desk-scale training and validation.
    pub fn small() -> Self {
        EnvConfig { width: 14, height: 14, rooms: (2, 3), objects: (6, 10), n_safety_threshold: 110, ..EnvConfig::default() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "small" => Ok(EnvConfig::small()),
            "default" | "medium" => Ok(EnvConfig::default()),
            "large" => Ok(EnvConfig { width: 32, height: 32, rooms: (5, 9), objects: (16, 28), ..EnvConfig::default() }),
            other => Err(Error::invalid(format!("unknown house preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 9 || self.height < 9 {
            return Err(Error::invalid(format!("grid must be at least 9x9, got {}x{}", self.width, self.height)));
        }
        if self.rooms.0 < 1 || self.rooms.0 > self.rooms.1 {
            return Err(Error::invalid(format!("bad room range {:?}", self.rooms)));
        }
        if self.objects.0 > self.objects.1 {
            return Err(Error::invalid(format!("bad object range {:?}", self.objects)));
        }
        if self.safety_window % 2 == 0 {
            return Err(Error::invalid("safety window must be odd"));
        }
        let positive = [self.cell_size_m, self.view_range_m, self.fov_deg, self.success_radius_m];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("cell size, view range, fov and success radius must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be positive"));
        }
        Ok(())
    }
}
