//! Unidirectional LSTM built from graph primitives.
//!
//! Gate rows of the stacked weights are ordered input, forget, cell, output.

use super::{shape_err, Graph, Result, Var};

/// One layer's parameters: `w_ih: [4H, F]`, `w_hh: [4H, H]`, `bias: [4H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// Runs one layer over `input: [T, N, F]` from zero state and returns `[T, N, H]`.
pub fn lstm_sequence(g: &mut Graph, input: Var, w: &LstmWeights) -> Result<Var> {
    let s = g.shape(input).to_vec();
    let gs = g.shape(w.w_ih).to_vec();
    if s.len() != 3 || gs.len() != 2 || !gs[0].is_multiple_of(4) || gs[1] != s[2] {
        return shape_err("lstm", format!("input {s:?} vs w_ih {gs:?}"));
    }
    let (steps, n, hidden) = (s[0], s[1], gs[0] / 4);
    if g.shape(w.w_hh) != [4 * hidden, hidden] || g.shape(w.bias) != [4 * hidden] {
        return shape_err(
            "lstm",
            format!(
                "w_hh {:?} / bias {:?} for hidden {hidden}",
                g.shape(w.w_hh),
                g.shape(w.bias)
            ),
        );
    }
    let mut h = g.constant(&[n, hidden], vec![0.0; n * hidden])?;
    let mut c = g.constant(&[n, hidden], vec![0.0; n * hidden])?;
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = g.narrow(input, 0, t, 1)?;
        let xt = g.reshape(xt, &[n, s[2]])?;
        let a = g.linear(xt, w.w_ih, Some(w.bias))?;
        let b = g.linear(h, w.w_hh, None)?;
        let gates = g.add(a, b)?;
        let i = g.narrow(gates, 1, 0, hidden)?;
        let i = g.sigmoid(i)?;
        let f = g.narrow(gates, 1, hidden, hidden)?;
        let f = g.sigmoid(f)?;
        let cand = g.narrow(gates, 1, 2 * hidden, hidden)?;
        let cand = g.tanh(cand)?;
        let o = g.narrow(gates, 1, 3 * hidden, hidden)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        h = g.mul(o, tc)?;
        outs.push(g.reshape(h, &[1, n, hidden])?);
    }
    g.concat(&outs, 0)
}
