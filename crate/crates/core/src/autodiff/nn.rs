use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Elu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Elu => tape.elu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// `act(W x + b)` with parameters `{prefix}.w`, `{prefix}.b`.
pub fn dense(tape: &mut Tape, prefix: &str, x: Var, act: Activation) -> Result<Var> {
    let w = tape.param(&format!("{prefix}.w"))?;
    let b = tape.param(&format!("{prefix}.b"))?;
    let wx = tape.matvec(w, x)?;
    let y = tape.add(wx, b)?;
    Ok(act.apply(tape, y))
}

/// Registers the parameters of a GRU cell under `prefix`.
pub fn add_gru(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<()> {
    for gate in ["u", "r", "n"] {
        store.add_dense(&format!("{prefix}.x{gate}"), input, hidden)?;
        store.add_dense(&format!("{prefix}.h{gate}"), hidden, hidden)?;
    }
    Ok(())
}

/// One GRU step. `u` is the update gate: `h' = (1 − u) ⊙ h + u ⊙ n` with
/// candidate `n = tanh(W_n x + b + r ⊙ (U_n h + c))`.
pub fn gru_step(tape: &mut Tape, prefix: &str, x: Var, h: Var) -> Result<Var> {
    let gate = |tape: &mut Tape, g: &str| -> Result<Var> {
        let a = dense(tape, &format!("{prefix}.x{g}"), x, Activation::Linear)?;
        let b = dense(tape, &format!("{prefix}.h{g}"), h, Activation::Linear)?;
        tape.add(a, b)
    };
    let u_pre = gate(tape, "u")?;
    let u = tape.sigmoid(u_pre);
    let r_pre = gate(tape, "r")?;
    let r = tape.sigmoid(r_pre);
    let xn = dense(tape, &format!("{prefix}.xn"), x, Activation::Linear)?;
    let hn = dense(tape, &format!("{prefix}.hn"), h, Activation::Linear)?;
    let rh = tape.mul(r, hn)?;
    let n_pre = tape.add(xn, rh)?;
    let n = tape.tanh(n_pre);
    let keep = tape.affine(u, -1.0, 1.0);
    let old = tape.mul(keep, h)?;
    let new = tape.mul(u, n)?;
    tape.add(old, new)
}

/// Monotonic two-layer mixer whose weights are generated from the global
/// state. First-layer and output weights pass through `|·|`; biases are
/// unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperMixer {
    pub agents: usize,
    pub state_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
}

impl HyperMixer {
    pub fn add_params(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        store.add_dense(&format!("{prefix}.w1"), self.state_dim, self.hidden * self.agents)?;
        store.add_dense(&format!("{prefix}.b1"), self.state_dim, self.hidden)?;
        store.add_dense(&format!("{prefix}.w2"), self.state_dim, self.hidden)?;
        store.add_dense(&format!("{prefix}.b2a"), self.state_dim, self.hidden)?;
        store.add_dense(&format!("{prefix}.b2b"), self.hidden, 1)
    }

    /// `V_tot(s, v)` for `v` holding one value per agent.
    pub fn forward(&self, tape: &mut Tape, prefix: &str, s: Var, v: Var) -> Result<Var> {
        let w1 = dense(tape, &format!("{prefix}.w1"), s, Activation::Linear)?;
        let w1 = tape.abs(w1);
        let w1 = tape.reshape(w1, vec![self.hidden, self.agents])?;
        let b1 = dense(tape, &format!("{prefix}.b1"), s, Activation::Linear)?;
        let pre = tape.matvec(w1, v)?;
        let pre = tape.add(pre, b1)?;
        let hid = self.activation.apply(tape, pre);
        let w2 = dense(tape, &format!("{prefix}.w2"), s, Activation::Linear)?;
        let w2 = tape.abs(w2);
        let out = tape.dot(w2, hid)?;
        let b2 = self.bias(tape, prefix, s)?;
        tape.add(out, b2)
    }

    /// State-dependent output bias.
    pub fn bias(&self, tape: &mut Tape, prefix: &str, s: Var) -> Result<Var> {
        let a = dense(tape, &format!("{prefix}.b2a"), s, Activation::Relu)?;
        dense(tape, &format!("{prefix}.b2b"), a, Activation::Linear)
    }
}
