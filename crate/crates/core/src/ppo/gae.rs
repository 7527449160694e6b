use super::PpoError;

/// Generalized advantage estimates and returns for one trajectory segment.
/// `values` carries one extra bootstrap entry for the state after the last
/// step. A done step cuts both the bootstrap and the recursion.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let t_len = rewards.len();
    if values.len() != t_len + 1 || dones.len() != t_len {
        return Err(PpoError::LengthMismatch(format!(
            "{} rewards, {} values, {} dones",
            t_len,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; t_len];
    let mut next = 0.0;
    for t in (0..t_len).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct sum A_t = Σ_{l≥0} (γλ)^l δ_{t+l}, stopping after a done step.
    fn brute_force(r: &[f64], v: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = r.len();
        let delta: Vec<f64> = (0..n)
            .map(|t| r[t] + gamma * v[t + 1] * if d[t] { 0.0 } else { 1.0 } - v[t])
            .collect();
        (0..n)
            .map(|t| {
                let mut sum = 0.0;
                for l in 0..n - t {
                    sum += (gamma * lambda).powi(l as i32) * delta[t + l];
                    if d[t + l] {
                        break;
                    }
                }
                sum
            })
            .collect()
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2, 0.7];
        let d = [false, true, false];
        let (a, ret) = compute_gae(&r, &v, &d, 0.9, 0.0).unwrap();
        assert_eq!(
            a,
            vec![1.0 + 0.9 * 0.1 - 0.3, -0.5 - 0.1, 2.0 + 0.9 * 0.7 + 0.2]
        );
        for t in 0..3 {
            assert_eq!(ret[t], a[t] + v[t]);
        }
    }

    #[test]
    fn undiscounted_zero_values_give_returns_to_go() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let (a, ret) = compute_gae(&r, &[0.0; 5], &[false; 4], 1.0, 1.0).unwrap();
        assert_eq!(a, vec![10.0, 9.0, 7.0, 4.0]);
        assert_eq!(ret, a);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(compute_gae(&[1.0], &[0.0], &[false], 0.9, 0.9).is_err());
    }

    proptest! {
        #[test]
        fn matches_direct_sum(
            data in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, proptest::bool::weighted(0.1)), 1..60),
            last in -5.0f64..5.0,
            gamma in 0.5f64..1.0,
            lambda in 0.0f64..1.0,
        ) {
            let r: Vec<f64> = data.iter().map(|x| x.0).collect();
            let mut v: Vec<f64> = data.iter().map(|x| x.1).collect();
            v.push(last);
            let d: Vec<bool> = data.iter().map(|x| x.2).collect();
            let (a, _) = compute_gae(&r, &v, &d, gamma, lambda).unwrap();
            let oracle = brute_force(&r, &v, &d, gamma, lambda);
            for (x, y) in a.iter().zip(&oracle) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }
}
