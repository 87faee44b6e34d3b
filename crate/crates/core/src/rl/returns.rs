/// `G_t = r_t + γ G_{t+1}` with `G` past the end taken as zero.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        g = r + gamma * g;
        *o = g;
    }
    out
}

/// Generalised advantage estimates. `terminated[t]` removes the bootstrap
/// from `next_values[t]`; `cut[t]` (episode boundary) stops the backward
/// recursion without removing it.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminated: &[bool],
    cut: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    assert!(
        values.len() == n && next_values.len() == n && terminated.len() == n && cut.len() == n,
        "advantage inputs differ in length"
    );
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if terminated[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_values[t] - values[t];
        if cut[t] || terminated[t] {
            running = 0.0;
        }
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    adv
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn discounted_examples() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(discounted_returns(&[3.0, -2.0], 0.0), vec![3.0, -2.0]);
        assert_eq!(discounted_returns(&[0.0; 4], 0.9), vec![0.0; 4]);
    }

    proptest! {
        #[test]
        fn gae_lambda_zero_is_td_error(
            data in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..20),
            gamma in 0.0f64..0.999,
        ) {
            let r: Vec<f64> = data.iter().map(|d| d.0).collect();
            let v: Vec<f64> = data.iter().map(|d| d.1).collect();
            let nv: Vec<f64> = data.iter().map(|d| d.2).collect();
            let no = vec![false; r.len()];
            let adv = gae(&r, &v, &nv, &no, &no, gamma, 0.0);
            for t in 0..r.len() {
                prop_assert!((adv[t] - (r[t] + gamma * nv[t] - v[t])).abs() < 1e-12);
            }
        }

        #[test]
        fn gae_lambda_one_is_monte_carlo(
            data in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20),
            last in -5.0f64..5.0,
        ) {
            // consistent chain: next value of step t is the value of step t+1
            let r: Vec<f64> = data.iter().map(|d| d.0).collect();
            let v: Vec<f64> = data.iter().map(|d| d.1).collect();
            let mut nv = v[1..].to_vec();
            nv.push(last);
            let no = vec![false; r.len()];
            let adv = gae(&r, &v, &nv, &no, &no, 1.0, 1.0);
            for t in 0..r.len() {
                let mc: f64 = r[t..].iter().sum::<f64>() + last - v[t];
                prop_assert!((adv[t] - mc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn terminal_and_cut_stop_recursion() {
        let r = [1.0, 1.0, 1.0];
        let v = [0.0; 3];
        let nv = [10.0; 3];
        let adv = gae(&r, &v, &nv, &[false, true, false], &[false; 3], 1.0, 1.0);
        assert_eq!(adv, vec![12.0, 1.0, 11.0]);
        let adv = gae(&r, &v, &nv, &[false; 3], &[false, true, false], 1.0, 1.0);
        assert_eq!(adv, vec![22.0, 11.0, 11.0]);
    }
}
