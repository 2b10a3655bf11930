use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("cannot shape a reward over zero steps")]
    ZeroLength,
}

/// `R(m) = acc + lambda * topo`.
pub fn combined_reward(acc: f64, topo: f64, lambda: f64) -> f64 {
    acc + lambda * topo
}

/// Spreads a block's total reward evenly over its `steps` layers.
pub fn shaped_rewards(total: f64, steps: usize) -> Result<Vec<f64>, RewardError> {
    if steps == 0 {
        return Err(RewardError::ZeroLength);
    }
    Ok(vec![total / steps as f64; steps])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined() {
        assert_eq!(combined_reward(90.0, 0.5, 30.0), 105.0);
        assert_eq!(combined_reward(71.25, 3.0, 0.0), 71.25);
    }

    #[test]
    fn shaped() {
        assert_eq!(shaped_rewards(12.0, 3).unwrap(), vec![4.0, 4.0, 4.0]);
        assert_eq!(shaped_rewards(-2.5, 1).unwrap(), vec![-2.5]);
        assert_eq!(shaped_rewards(1.0, 0), Err(RewardError::ZeroLength));
    }
}
