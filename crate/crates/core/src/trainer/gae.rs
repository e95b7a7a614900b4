use super::{TrainError, Transition};

/// Fills `advantage` and `value_target` with truncated GAE,
/// `A_t = δ_t + γλ·A_{t+1}`, `δ_t = r_t + γV(s_{t+1}) − V(s_t)`, taking
/// `V(s_T) = 0` at episode end. Targets are `A_t + V(s_t)` computed before any
/// normalization.
pub fn compute_gae(transitions: &mut [Transition], gamma: f64, lambda: f64, normalize: bool) -> Result<(), TrainError> {
    check_episode_order(transitions)?;
    let mut next_value = 0.0;
    let mut next_adv = 0.0;
    for tr in transitions.iter_mut().rev() {
        if tr.done {
            next_value = 0.0;
            next_adv = 0.0;
        }
        let delta = tr.reward + gamma * next_value - tr.value;
        let adv = delta + gamma * lambda * next_adv;
        tr.advantage = adv;
        tr.value_target = adv + tr.value;
        next_value = tr.value;
        next_adv = adv;
    }
    if normalize {
        normalize_advantages(transitions);
    }
    Ok(())
}

fn check_episode_order(transitions: &[Transition]) -> Result<(), TrainError> {
    let mut seen = std::collections::HashSet::new();
    for (i, tr) in transitions.iter().enumerate() {
        let starts = i == 0 || transitions[i - 1].done;
        if starts {
            if !seen.insert(tr.episode) {
                return Err(TrainError::Contract(format!("episode {} appears in two separate runs", tr.episode)));
            }
        } else {
            let prev = &transitions[i - 1];
            if prev.episode != tr.episode || tr.t != prev.t + 1 {
                return Err(TrainError::Contract(format!(
                    "transition {i} (episode {}, t={}) does not follow episode {} t={}",
                    tr.episode, tr.t, prev.episode, prev.t
                )));
            }
        }
    }
    if let Some(last) = transitions.last() {
        if !last.done {
            return Err(TrainError::Contract(format!("episode {} is not terminated", last.episode)));
        }
    }
    Ok(())
}

/// Shifts advantages to zero mean and, when their spread is not negligible, unit variance.
pub fn normalize_advantages(transitions: &mut [Transition]) {
    let n = transitions.len();
    if n == 0 {
        return;
    }
    let mean = transitions.iter().map(|t| t.advantage).sum::<f64>() / n as f64;
    let var = transitions.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let div = if std > 1e-8 { std } else { 1.0 };
    for t in transitions {
        t.advantage = (t.advantage - mean) / div;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osdec::JobFeatures;

    pub(crate) fn transition(episode: usize, t: u32, reward: f64, value: f64, done: bool) -> Transition {
        Transition {
            episode,
            t,
            features: JobFeatures::from_parts(1, 1, vec![0.0; 4], vec![false, false, false, true], vec![None]).unwrap(),
            scores: vec![0.0],
            log_prob_old: 0.0,
            reward,
            value,
            done,
            advantage: 0.0,
            value_target: 0.0,
        }
    }

    #[test]
    fn two_step_example() {
        // δ = (1, 2) with zero values
        let mut ep = vec![transition(0, 0, 1.0, 0.0, false), transition(0, 1, 2.0, 0.0, true)];
        compute_gae(&mut ep, 0.99, 0.95, false).unwrap();
        assert!((ep[0].advantage - 2.881).abs() < 1e-12);
        assert_eq!(ep[1].advantage, 2.0);
    }

    #[test]
    fn single_step_episode() {
        let mut ep = vec![transition(0, 0, 5.0, 1.0, true)];
        compute_gae(&mut ep, 0.99, 0.95, false).unwrap();
        assert_eq!(ep[0].advantage, 4.0);
        assert_eq!(ep[0].value_target, 5.0);
    }

    #[test]
    fn lambda_zero_gives_td_residuals() {
        let mut ep = vec![
            transition(0, 0, 1.0, 0.5, false),
            transition(0, 1, -2.0, 0.25, false),
            transition(0, 2, 3.0, 1.0, true),
        ];
        compute_gae(&mut ep, 0.9, 0.0, false).unwrap();
        assert_eq!(ep[0].advantage, 1.0 + 0.9 * 0.25 - 0.5);
        assert_eq!(ep[1].advantage, -2.0 + 0.9 * 1.0 - 0.25);
        assert_eq!(ep[2].advantage, 3.0 - 1.0);
    }

    #[test]
    fn episodes_do_not_leak() {
        let mut b = vec![transition(0, 0, 1.0, 0.0, true), transition(1, 0, 100.0, 0.0, true)];
        compute_gae(&mut b, 0.99, 0.95, false).unwrap();
        assert_eq!(b[0].advantage, 1.0);
    }

    #[test]
    fn disorder_is_rejected() {
        let mut b = vec![transition(0, 1, 1.0, 0.0, false), transition(0, 0, 1.0, 0.0, true)];
        assert!(compute_gae(&mut b, 0.99, 0.95, false).is_err());
        let mut b = vec![transition(0, 0, 1.0, 0.0, false)];
        assert!(compute_gae(&mut b, 0.99, 0.95, false).is_err());
    }

    #[test]
    fn normalized_advantages_are_standardized() {
        let mut b: Vec<_> = (0..5).map(|t| transition(0, t, t as f64, 0.0, t == 4)).collect();
        compute_gae(&mut b, 0.99, 0.95, true).unwrap();
        let mean: f64 = b.iter().map(|t| t.advantage).sum::<f64>() / 5.0;
        let var: f64 = b.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        for t in &b {
            assert!(t.value_target.is_finite());
        }
    }
}
