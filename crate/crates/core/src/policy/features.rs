//! Hand-crafted observation features.

use crate::env::{count_unreachable, line_of_sight, pitch_index, Cell, Env, CATALOG};
use crate::objectives::TaskKind;

/// Bumped whenever the feature layout changes; stored in checkpoints.
pub const FEATURE_VERSION: u32 = 1;

const WINDOW: i32 = 7;

/// Feature count; identical for both tasks.
pub const FEATURE_DIM: usize = 2 * (WINDOW * WINDOW) as usize + 4 + 1 + 1 + 4 + 3 + 1 + 1 + 1 + 1 + 3 + 1 + 1 + 1 + 1 + 3;

/// Egocentric basis: (forward, right) unit vectors in world coordinates.
fn basis(env: &Env) -> ((i32, i32), (i32, i32)) {
    let f = env.state().orientation.delta();
    (f, (-f.1, f.0))
}

fn egocentric(env: &Env, v: (f64, f64)) -> [f64; 2] {
    let (f, r) = basis(env);
    let norm = (v.0 * v.0 + v.1 * v.1).sqrt();
    if norm == 0.0 {
        return [0.0, 0.0];
    }
    let right = (v.0 * r.0 as f64 + v.1 * r.1 as f64) / norm;
    let fwd = (v.0 * f.0 as f64 + v.1 * f.1 as f64) / norm;
    [right, fwd]
}

/// Direction of the neighbor that descends the guide field, if any.
pub(crate) fn descent(env: &Env) -> Option<Cell> {
    let layout = env.layout();
    let field = env.target_field();
    let c = env.state().cell;
    let here = field[layout.index(c)];
    layout.free_neighbors(c).filter(|&n| field[layout.index(n)] < here).min_by_key(|&n| field[layout.index(n)])
}

pub(crate) fn nearest_target(env: &Env) -> Option<Cell> {
    let cat = env.task().target_category.as_deref()?;
    let c = env.state().cell;
    env.layout()
        .objects
        .iter()
        .filter(|o| o.category == cat)
        .map(|o| o.cell())
        .min_by_key(|o| (o.0 - c.0).pow(2) + (o.1 - c.1).pow(2))
}

/// Unobserved objects that would be visible from the current cell and heading at each pitch.
fn unseen_in_cone(env: &Env) -> [f64; 3] {
    let s = env.state();
    let layout = env.layout();
    let cfg = &layout.config;
    let range = cfg.view_range_m / cfg.cell_size_m;
    let cos_half = (cfg.fov_deg.to_radians() / 2.0).cos();
    let (fx, fy) = s.orientation.delta();
    let mut counts = [0.0; 3];
    for (i, o) in layout.objects.iter().enumerate() {
        if s.observed[i] {
            continue;
        }
        let (vx, vy) = (o.x - s.cell.0, o.y - s.cell.1);
        let dist = ((vx * vx + vy * vy) as f64).sqrt();
        if dist > range + 1e-9 || (dist > 0.0 && ((vx * fx + vy * fy) as f64) < dist * cos_half - 1e-9) {
            continue;
        }
        if line_of_sight(layout, s.cell, o.cell()) {
            counts[pitch_index(o.pitch_tag)] += 1.0;
        }
    }
    counts.map(|c: f64| (c / 4.0).min(1.0))
}

/// Feature vector for the current state; every entry lies in [-1, 1].
pub fn extract(env: &Env) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURE_DIM);
    let layout = env.layout();
    let s = env.state();
    let cfg = &layout.config;
    let (f, r) = basis(env);
    let half = WINDOW / 2;

    let mut free_in_window = 0.0;
    let mut visited_in_window = 0.0;
    let mut visited = Vec::with_capacity((WINDOW * WINDOW) as usize);
    for i in (-half..=half).rev() {
        for j in -half..=half {
            let c = (s.cell.0 + i * f.0 + j * r.0, s.cell.1 + i * f.1 + j * r.1);
            let free = layout.is_free(c);
            out.push(if free { 0.0 } else { 1.0 });
            let v = free && s.visited[layout.index(c)];
            visited.push(if v { 1.0 } else { 0.0 });
            if free {
                free_in_window += 1.0;
                if v {
                    visited_in_window += 1.0;
                }
            }
        }
    }
    out.extend(visited);

    let step_dir = descent(env).map(|n| ((n.0 - s.cell.0) as f64, (n.1 - s.cell.1) as f64)).unwrap_or((0.0, 0.0));
    out.extend(egocentric(env, step_dir));
    let object_dir = match env.task().kind {
        TaskKind::ObjectNav => nearest_target(env).map(|o| ((o.0 - s.cell.0) as f64, (o.1 - s.cell.1) as f64)),
        TaskKind::FleeNav => Some(((s.cell.0 - s.start.0) as f64, (s.cell.1 - s.start.1) as f64)),
    };
    out.extend(egocentric(env, object_dir.unwrap_or((0.0, 0.0))));

    let (dist, near) = match env.task().kind {
        TaskKind::ObjectNav => ((s.d_t / 8.0).min(1.0), s.d_t <= cfg.success_radius_m + 1e-9),
        TaskKind::FleeNav => {
            let ratio = (env.distance_from_start() / env.max_distance()).clamp(0.0, 1.0);
            (ratio, ratio >= 0.9)
        }
    };
    out.push(dist);
    out.push(if near { 1.0 } else { 0.0 });

    let mut orient = [0.0; 4];
    orient[s.orientation.index()] = 1.0;
    out.extend(orient);
    let mut pitch = [0.0; 3];
    pitch[pitch_index(s.pitch)] = 1.0;
    out.extend(pitch);

    out.push(if free_in_window > 0.0 { visited_in_window / free_in_window } else { 0.0 });
    out.push(if s.target_observed { 1.0 } else { 0.0 });
    out.push(if env.task().kind == TaskKind::ObjectNav && env.target_visible() { 1.0 } else { 0.0 });
    let observed = s.observed.iter().filter(|&&o| o).count();
    out.push(if s.observed.is_empty() { 1.0 } else { observed as f64 / s.observed.len() as f64 });

    let mut target_pitch = [0.0; 3];
    if let Some(cat) = env.task().target_category.as_deref() {
        if let Some((_, p)) = CATALOG.iter().find(|(name, _)| *name == cat) {
            target_pitch[pitch_index(*p)] = 1.0;
        }
    }
    out.extend(target_pitch);

    let window = cfg.safety_window;
    let area = (window * window) as f64;
    let n_here = env.n_unreachable();
    out.push(n_here as f64 / area);
    out.push(if n_here > cfg.n_safety_threshold { 1.0 } else { 0.0 });
    let ahead = (s.cell.0 + f.0, s.cell.1 + f.1);
    let delta = if layout.is_free(ahead) {
        (count_unreachable(layout, ahead, window) as f64 - n_here as f64) / 16.0
    } else {
        0.0
    };
    out.push(delta.clamp(-1.0, 1.0));

    out.push(s.t as f64 / cfg.max_steps as f64);
    out.extend(unseen_in_cone(env));
    debug_assert_eq!(out.len(), FEATURE_DIM);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_house, EnvConfig, TaskSpec, ACTIONS};
    use crate::rng::RngSeed;
    use rand::Rng;
    use std::sync::Arc;

    #[test]
    fn features_have_fixed_length_and_range() {
        let mut rng = RngSeed(1).stream();
        for seed in 0..10 {
            let layout = Arc::new(generate_house(RngSeed(seed), &EnvConfig::small()).unwrap());
            for kind in [TaskKind::ObjectNav, TaskKind::FleeNav] {
                let mut env = Env::reset(layout.clone(), &TaskSpec { kind, target_category: None }, RngSeed(seed)).unwrap();
                for _ in 0..60 {
                    let x = extract(&env);
                    assert_eq!(x.len(), FEATURE_DIM);
                    assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)), "{x:?}");
                    let a = ACTIONS[[0, 0, 1, 2, 4, 5][rng.random_range(0..6)]];
                    env.step(a).unwrap();
                }
            }
        }
    }
}
