/// Positions still hidden after decoding step `step` of `steps`:
/// `floor(total cos(pi/2 step/steps))`. Step 0 is the fully hidden start.
pub fn remaining_masked(total: usize, step: usize, steps: usize) -> usize {
    if step >= steps {
        return 0;
    }
    let r = (std::f64::consts::FRAC_PI_2 * step as f64 / steps as f64).cos();
    ((total as f64 * r).floor() as usize).min(total)
}

/// Newly fixed positions at each step, `1..=steps`.
pub fn fixed_per_step(total: usize, steps: usize) -> Vec<usize> {
    (1..=steps)
        .map(|s| remaining_masked(total, s - 1, steps) - remaining_masked(total, s, steps))
        .collect()
}
