use super::DracmError;

/// Generalized advantage estimates and one-step TD errors.
///
/// `values` carries one entry per step plus the bootstrap value after the last
/// step (zero for a finished fixed-horizon episode).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), DracmError> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(DracmError::LengthMismatch {
            what: "values",
            got: values.len(),
            expected: n + 1,
        });
    }
    let deltas: Vec<f64> = (0..n).map(|t| rewards[t] + gamma * values[t + 1] - values[t]).collect();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        acc = deltas[t] + gamma * lambda * acc;
        adv[t] = acc;
    }
    Ok((adv, deltas))
}
