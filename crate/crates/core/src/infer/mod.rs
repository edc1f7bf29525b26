//! Weight inference from demonstrations and preferences.

pub mod demo;
pub mod pref;

pub use demo::{demo_loss, infer_from_demos, Aggregation, DemoDiagnostics, DemoInferConfig, DemoSet, RestartTrace};
pub use pref::{
    apply_group_label, bt_log_probability, bt_probability, choose_hyperplane, fit_group, fit_pairwise, group_size_bound, make_group_query,
    min_group_size, pairwise_log_likelihood, simulate_group, simulate_pair, bound_returns, ConstraintSet,
    GroupDiagnostics, GroupQuery, GroupQueryConfig, HalfSpace, Hyperplane, Label, PairwiseConfig, PairwiseDiagnostics,
    PreferencePair, Sense, SimUser,
};

/// Every point of the simplex grid with spacing `1/steps`.
pub fn simplex_grid(k: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, steps: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() + 1 == k {
            prefix.push(left);
            out.push(prefix.iter().map(|&c| c as f64 / steps as f64).collect());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(k, left - c, steps, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}
