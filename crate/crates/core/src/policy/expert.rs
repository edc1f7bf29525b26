//! Scripted shortest-path expert used to warm-start training.

use super::features::{descent, nearest_target};
use crate::env::{pitch_index, Action, Cell, Env, CATALOG};
use crate::objectives::TaskKind;

/// Turns toward world direction `v`, or steps forward if already facing it.
fn head_toward(env: &Env, v: (i32, i32)) -> Action {
    let f = env.state().orientation.delta();
    let right = (-f.1, f.0);
    let fwd = v.0 * f.0 + v.1 * f.1;
    let side = v.0 * right.0 + v.1 * right.1;
    if fwd > 0 && side == 0 {
        Action::MoveAhead
    } else if side < 0 {
        Action::RotateLeft
    } else {
        Action::RotateRight
    }
}

fn turn_toward(env: &Env, target: Cell) -> Option<Action> {
    let c = env.state().cell;
    let v = (target.0 - c.0, target.1 - c.1);
    if v == (0, 0) {
        return None;
    }
    let f = env.state().orientation.delta();
    let right = (-f.1, f.0);
    let fwd = v.0 * f.0 + v.1 * f.1;
    let side = v.0 * right.0 + v.1 * right.1;
    if fwd > 0 && fwd >= side.abs() {
        None
    } else if side < 0 {
        Some(Action::RotateLeft)
    } else {
        Some(Action::RotateRight)
    }
}

fn fix_pitch(env: &Env, want: usize) -> Option<Action> {
    let have = pitch_index(env.state().pitch);
    match want.cmp(&have) {
        std::cmp::Ordering::Less => Some(Action::LookUp),
        std::cmp::Ordering::Greater => Some(Action::LookDown),
        std::cmp::Ordering::Equal => None,
    }
}

/// The expert's action in the current state.
pub fn expert_action(env: &Env) -> Action {
    let s = env.state();
    let step = descent(env).map(|n| (n.0 - s.cell.0, n.1 - s.cell.1));
    match env.task().kind {
        TaskKind::FleeNav => match step {
            Some(v) => head_toward(env, v),
            None => Action::Done,
        },
        TaskKind::ObjectNav => {
            let near = s.d_t <= env.layout().config.success_radius_m + 1e-9;
            if near && env.target_visible() {
                return Action::Done;
            }
            if near {
                let want = env
                    .task()
                    .target_category
                    .as_deref()
                    .and_then(|cat| CATALOG.iter().find(|(name, _)| *name == cat))
                    .map(|(_, p)| pitch_index(*p));
                if let Some(a) = want.and_then(|p| fix_pitch(env, p)) {
                    return a;
                }
            }
            match step {
                Some(v) => head_toward(env, v),
                None => nearest_target(env).and_then(|o| turn_toward(env, o)).unwrap_or(Action::RotateRight),
            }
        }
    }
}
