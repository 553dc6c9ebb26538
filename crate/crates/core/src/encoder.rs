//! LSTM cell and bidirectional sequence encoder.
//!
//! One layer, zero initial states, no peepholes. Weights init uniform on
//! [-0.08, 0.08]; the forget-gate bias starts at 1.0, all other biases at 0.

use rand::Rng;

use crate::tape::{Tape, VarId};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Gate order used throughout: input, forget, output, candidate.
pub const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

/// Per-gate input weights, recurrent weights, and biases.
#[derive(Debug, Clone)]
pub struct LstmCellParams {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCellParams {
    /// Allocate freshly initialized cell parameters under `prefix`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for (g, gate) in GATES.iter().enumerate() {
            w.push(store.alloc(
                format!("{prefix}.{gate}.w"),
                Tensor::uniform(hidden, input_dim, -0.08, 0.08, rng),
            ));
            u.push(store.alloc(
                format!("{prefix}.{gate}.u"),
                Tensor::uniform(hidden, hidden, -0.08, 0.08, rng),
            ));
            let mut bias = Tensor::vector(hidden);
            if g == 1 {
                bias.fill(1.0);
            }
            b.push(store.alloc(format!("{prefix}.{gate}.b"), bias));
        }
        LstmCellParams {
            w: [w[0], w[1], w[2], w[3]],
            u: [u[0], u[1], u[2], u[3]],
            b: [b[0], b[1], b[2], b[3]],
            input_dim,
            hidden,
        }
    }

    fn gate_pre(&self, tape: &mut Tape, g: usize, x: VarId, h: VarId) -> VarId {
        let wx = tape.matvec(self.w[g], x);
        let uh = tape.matvec(self.u[g], h);
        let sum = tape.add(wx, uh);
        let bias = tape.param_vec(self.b[g]);
        tape.add(sum, bias)
    }
}

/// One recorded LSTM step: returns the new hidden and cell states.
pub fn lstm_step_tape(
    tape: &mut Tape,
    p: &LstmCellParams,
    x: VarId,
    h_prev: VarId,
    c_prev: VarId,
) -> (VarId, VarId) {
    let input_pre = p.gate_pre(tape, 0, x, h_prev);
    let input = tape.sigmoid(input_pre);
    let forget_pre = p.gate_pre(tape, 1, x, h_prev);
    let forget = tape.sigmoid(forget_pre);
    let output_pre = p.gate_pre(tape, 2, x, h_prev);
    let output = tape.sigmoid(output_pre);
    let cand_pre = p.gate_pre(tape, 3, x, h_prev);
    let cand = tape.tanh(cand_pre);

    let keep = tape.mul(forget, c_prev);
    let write = tape.mul(input, cand);
    let c = tape.add(keep, write);
    let c_tanh = tape.tanh(c);
    let h = tape.mul(output, c_tanh);
    (h, c)
}

/// Plain-value LSTM step (runs a throwaway tape).
pub fn lstm_step(
    store: &ParamStore,
    p: &LstmCellParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(x.len(), p.input_dim, "input dimension");
    assert_eq!(h_prev.len(), p.hidden, "hidden dimension");
    assert_eq!(c_prev.len(), p.hidden, "cell dimension");
    let mut tape = Tape::new(store);
    let xv = tape.constant(x.to_vec());
    let hv = tape.constant(h_prev.to_vec());
    let cv = tape.constant(c_prev.to_vec());
    let (h, c) = lstm_step_tape(&mut tape, p, xv, hv, cv);
    (tape.val(h).to_vec(), tape.val(c).to_vec())
}

/// Forward and backward cells of the bidirectional encoder.
#[derive(Debug, Clone)]
pub struct BiLstmParams {
    pub fwd: LstmCellParams,
    pub bwd: LstmCellParams,
}

impl BiLstmParams {
    pub fn init(
        store: &mut ParamStore,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        BiLstmParams {
            fwd: LstmCellParams::init(store, "bilstm.fwd", input_dim, hidden, rng),
            bwd: LstmCellParams::init(store, "bilstm.bwd", input_dim, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    /// Output width: concatenated forward and backward states.
    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }
}

fn run_direction(
    tape: &mut Tape,
    cell: &LstmCellParams,
    xs: &[VarId],
    reversed: bool,
) -> Vec<VarId> {
    let zero = tape.constant(vec![0.0; cell.hidden]);
    let mut h = zero;
    let mut c = zero;
    let mut states = Vec::with_capacity(xs.len());
    let order: Vec<usize> = if reversed {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    for &t in &order {
        let (nh, nc) = lstm_step_tape(tape, cell, xs[t], h, c);
        h = nh;
        c = nc;
        states.push(h);
    }
    if reversed {
        states.reverse();
    }
    states
}

/// Recorded bidirectional encoding: `H[t] = [fwd state at t ; bwd state at t]`.
pub fn bilstm_encode_tape(tape: &mut Tape, p: &BiLstmParams, xs: &[VarId]) -> Vec<VarId> {
    assert!(!xs.is_empty(), "empty sequence");
    let fwd = run_direction(tape, &p.fwd, xs, false);
    let bwd = run_direction(tape, &p.bwd, xs, true);
    fwd.iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect()
}

/// Plain-value bidirectional encoding of an n x d input.
pub fn bilstm_encode(store: &ParamStore, p: &BiLstmParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut tape = Tape::new(store);
    let vars: Vec<VarId> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = bilstm_encode_tape(&mut tape, p, &vars);
    out.iter().map(|&h| tape.val(h).to_vec()).collect()
}
