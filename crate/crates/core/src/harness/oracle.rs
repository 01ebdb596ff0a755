use serde::{Deserialize, Serialize};

use crate::env::{Environment, JointAction};
use crate::error::{Error, Result};
use crate::link::PowerAction;
use crate::phy::RisAction;

/// Largest joint action space the oracle will enumerate.
pub const ORACLE_LIMIT: u128 = 1_000_000;

/// Number of joint actions with `power_levels` per user and every
/// on/off × phase combination per RIS element.
pub fn oracle_space_size(env: &Environment, power_levels: usize) -> u128 {
    let net = &env.net;
    let per_element = 2 * net.ris_phase_levels() as u128;
    let mut size: u128 = 1;
    for _ in 0..net.total_users() {
        size = size.saturating_mul(power_levels as u128);
    }
    for _ in 0..net.num_ris * net.ris_elements {
        size = size.saturating_mul(per_element);
    }
    size
}

/// Every joint action with per-user power fractions `{0, 1/(p−1), …, 1}` of
/// the AP budget (projected onto the budget afterwards) and every RIS setting.
pub fn oracle_actions(env: &Environment, power_levels: usize) -> Result<Vec<JointAction>> {
    if power_levels < 1 {
        return Err(Error::InvalidArgument("at least one power level".into()));
    }
    let size = oracle_space_size(env, power_levels);
    if size > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge { size, limit: ORACLE_LIMIT });
    }
    let net = &env.net;
    let users = net.total_users();
    let levels: Vec<f64> = if power_levels == 1 {
        vec![1.0]
    } else {
        (0..power_levels).map(|k| k as f64 / (power_levels - 1) as f64).collect()
    };
    let elements = net.num_ris * net.ris_elements;
    let per_element = 2 * net.ris_phase_levels();
    let ris_count = (per_element as u128).pow(elements as u32) as usize;
    let power_count = size as usize / ris_count.max(1);

    let mut ris_settings = Vec::with_capacity(ris_count);
    for code in 0..ris_count {
        let mut c = code;
        let mut all = Vec::with_capacity(net.num_ris);
        for _ in 0..net.num_ris {
            let mut a = RisAction::all_off(net.ris_elements);
            for l in 0..net.ris_elements {
                let digit = c % per_element;
                c /= per_element;
                a.on_off[l] = digit % 2 == 1;
                a.phase_index[l] = (digit / 2) as u32;
            }
            all.push(a);
        }
        ris_settings.push(all);
    }

    let mut out = Vec::with_capacity(size as usize);
    for code in 0..power_count {
        let mut c = code;
        let mut alloc = vec![0.0; users];
        for a in alloc.iter_mut() {
            *a = levels[c % power_levels] * net.max_tx_power_w;
            c /= power_levels;
        }
        let power = PowerAction { alloc }.project(net)?;
        for ris in &ris_settings {
            out.push(JointAction { power: power.clone(), ris: ris.clone() });
        }
    }
    Ok(out)
}

/// Index and reward of the best action in the current state. Ties keep the
/// first action.
pub fn best_action(env: &Environment, actions: &[JointAction]) -> Result<(usize, f64)> {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, a) in actions.iter().enumerate() {
        let r = env.evaluate(a)?.reward;
        if r > best.1 {
            best = (i, r);
        }
    }
    if actions.is_empty() {
        return Err(Error::InvalidArgument("empty action set".into()));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub space_size: usize,
    pub slots: usize,
    /// Best one-step reward per visited state.
    pub best_rewards: Vec<f64>,
    pub best_actions: Vec<usize>,
    pub mean_best_reward: f64,
}

/// Follows the one-step optimal action for `slots` slots from a reset
/// with `seed` and records the optimum at every visited state.
pub fn exhaustive_oracle(env: &mut Environment, power_levels: usize, slots: usize, seed: u64) -> Result<OracleReport> {
    let actions = oracle_actions(env, power_levels)?;
    env.reset_with_seed(seed)?;
    let mut best_rewards = Vec::with_capacity(slots);
    let mut best_actions = Vec::with_capacity(slots);
    for _ in 0..slots {
        if env.done() {
            env.reset()?;
        }
        let (i, r) = best_action(env, &actions)?;
        best_rewards.push(r);
        best_actions.push(i);
        env.step(actions[i].clone())?;
    }
    let mean_best_reward = best_rewards.iter().sum::<f64>() / slots.max(1) as f64;
    Ok(OracleReport { space_size: actions.len(), slots, best_rewards, best_actions, mean_best_reward })
}
