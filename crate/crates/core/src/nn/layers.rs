//! Affine layers and recurrent cells built from tape primitives.
//!
//! Activations are `[1, width]` row vectors and weights are stored as
//! `[fan_in, fan_out]`, so every affine map is `x · W + b`.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn width(tape: &Tape, v: Var) -> usize {
    *tape.value(v).shape().last().unwrap_or(&0)
}

fn check_width(what: &str, tape: &Tape, v: Var, expected: usize) -> Result<()> {
    let shape = tape.value(v).shape();
    if shape.len() != 2 || shape[0] != 1 || shape[1] != expected {
        return Err(Error::Shape(format!(
            "{what}: expected a [1, {expected}] row, got {shape:?}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.insert_uniform(format!("{prefix}.weight"), fan_in, fan_out, rng)?;
        let bias = store.insert_zeros(format!("{prefix}.bias"), &[1, fan_out])?;
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let weight = store.id(&format!("{prefix}.weight"))?;
        let bias = store.id(&format!("{prefix}.bias"))?;
        let shape = store.value(weight).shape();
        Ok(Self {
            weight,
            bias,
            fan_in: shape[0],
            fan_out: shape[1],
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

// One gate's input and recurrent weights plus bias.
#[derive(Clone, Copy, Debug)]
struct Gate {
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
}

impl Gate {
    fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        gate: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            input: store.insert_uniform(format!("{prefix}.w_{gate}"), input, hidden, rng)?,
            recurrent: store.insert_uniform(format!("{prefix}.u_{gate}"), hidden, hidden, rng)?,
            bias: store.insert_zeros(format!("{prefix}.b_{gate}"), &[1, hidden])?,
        })
    }

    fn lookup(store: &ParamStore, prefix: &str, gate: &str) -> Result<Self> {
        Ok(Self {
            input: store.id(&format!("{prefix}.w_{gate}"))?,
            recurrent: store.id(&format!("{prefix}.u_{gate}"))?,
            bias: store.id(&format!("{prefix}.b_{gate}"))?,
        })
    }

    // W x + U h + b
    fn pre_activation(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let w = tape.param(store, self.input);
        let u = tape.param(store, self.recurrent);
        let b = tape.param(store, self.bias);
        let wx = tape.matmul(x, w)?;
        let uh = tape.matmul(h, u)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, b)
    }
}

/// Gated recurrent unit.
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `ĥ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ ĥ`.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    update: Gate,
    reset: Gate,
    candidate: Gate,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl GruCell {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            update: Gate::register(store, prefix, "z", input_size, hidden_size, rng)?,
            reset: Gate::register(store, prefix, "r", input_size, hidden_size, rng)?,
            candidate: Gate::register(store, prefix, "h", input_size, hidden_size, rng)?,
            input_size,
            hidden_size,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let update = Gate::lookup(store, prefix, "z")?;
        let shape = store.value(update.input).shape();
        Ok(Self {
            input_size: shape[0],
            hidden_size: shape[1],
            update,
            reset: Gate::lookup(store, prefix, "r")?,
            candidate: Gate::lookup(store, prefix, "h")?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        check_width("gru_cell input", tape, x, self.input_size)?;
        check_width("gru_cell hidden", tape, h, self.hidden_size)?;
        let z_pre = self.update.pre_activation(tape, store, x, h)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = self.reset.pre_activation(tape, store, x, h)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let cand_pre = self.candidate.pre_activation(tape, store, x, rh)?;
        let cand = tape.tanh(cand_pre)?;
        let ones = tape.leaf(Tensor::filled(&[1, self.hidden_size], 1.0));
        let keep = tape.sub(ones, z)?;
        let kept = tape.mul(keep, h)?;
        let fresh = tape.mul(z, cand)?;
        tape.add(kept, fresh)
    }
}

/// Standard LSTM cell with input, forget, output and candidate gates.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    input_gate: Gate,
    forget_gate: Gate,
    output_gate: Gate,
    candidate: Gate,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmCell {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            input_gate: Gate::register(store, prefix, "i", input_size, hidden_size, rng)?,
            forget_gate: Gate::register(store, prefix, "f", input_size, hidden_size, rng)?,
            output_gate: Gate::register(store, prefix, "o", input_size, hidden_size, rng)?,
            candidate: Gate::register(store, prefix, "g", input_size, hidden_size, rng)?,
            input_size,
            hidden_size,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let input_gate = Gate::lookup(store, prefix, "i")?;
        let shape = store.value(input_gate.input).shape();
        Ok(Self {
            input_size: shape[0],
            hidden_size: shape[1],
            input_gate,
            forget_gate: Gate::lookup(store, prefix, "f")?,
            output_gate: Gate::lookup(store, prefix, "o")?,
            candidate: Gate::lookup(store, prefix, "g")?,
        })
    }

    /// One step; returns `(h', c')`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        check_width("lstm_cell input", tape, x, self.input_size)?;
        let i_pre = self.input_gate.pre_activation(tape, store, x, h)?;
        let i = tape.sigmoid(i_pre)?;
        let f_pre = self.forget_gate.pre_activation(tape, store, x, h)?;
        let f = tape.sigmoid(f_pre)?;
        let o_pre = self.output_gate.pre_activation(tape, store, x, h)?;
        let o = tape.sigmoid(o_pre)?;
        let g_pre = self.candidate.pre_activation(tape, store, x, h)?;
        let g = tape.tanh(g_pre)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let squashed = tape.tanh(c_next)?;
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Runs the cell over `sequence` from zero state and returns every hidden state.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, sequence: &[Var]) -> Result<Vec<Var>> {
        let mut h = tape.leaf(Tensor::zeros(&[1, self.hidden_size]));
        let mut c = tape.leaf(Tensor::zeros(&[1, self.hidden_size]));
        let mut out = Vec::with_capacity(sequence.len());
        for &x in sequence {
            (h, c) = self.forward(tape, store, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Bidirectional LSTM; step `t` emits `[forward_t ‖ backward_t]`.
#[derive(Clone, Copy, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            forward: LstmCell::register(store, &format!("{prefix}.fwd"), input_size, hidden_size, rng)?,
            backward: LstmCell::register(store, &format!("{prefix}.bwd"), input_size, hidden_size, rng)?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            forward: LstmCell::lookup(store, &format!("{prefix}.fwd"))?,
            backward: LstmCell::lookup(store, &format!("{prefix}.bwd"))?,
        })
    }

    pub fn output_size(&self) -> usize {
        self.forward.hidden_size + self.backward.hidden_size
    }

    pub fn run(&self, tape: &mut Tape, store: &ParamStore, sequence: &[Var]) -> Result<Vec<Var>> {
        if sequence.is_empty() {
            return Err(Error::Shape("bilstm: empty sequence".into()));
        }
        let first = width(tape, sequence[0]);
        if sequence.iter().any(|&v| width(tape, v) != first) {
            return Err(Error::Shape("bilstm: non-uniform input widths".into()));
        }
        let fwd = self.forward.run(tape, store, sequence)?;
        let reversed: Vec<Var> = sequence.iter().rev().copied().collect();
        let mut bwd = self.backward.run(tape, store, &reversed)?;
        bwd.reverse();
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| tape.concat_last(&[f, b]))
            .collect()
    }
}
