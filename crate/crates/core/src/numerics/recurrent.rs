//! GRU and LSTM cells composed from tape primitives.
//!
//! Weight layout follows the common convention: `w_ih` is `G·H×D_in`, `w_hh`
//! is `G·H×H`, with gate blocks stacked row-wise (GRU: reset, update,
//! candidate; LSTM: input, forget, cell, output).

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct RecurrentVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

/// Plain weights of one recurrent cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentWeights<S> {
    pub w_ih: Tensor<S>,
    pub w_hh: Tensor<S>,
    pub b_ih: Tensor<S>,
    pub b_hh: Tensor<S>,
}

impl<S: Scalar> RecurrentWeights<S> {
    pub fn zeros(gates: usize, d_in: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros([gates * hidden, d_in]),
            w_hh: Tensor::zeros([gates * hidden, hidden]),
            b_ih: Tensor::zeros([gates * hidden]),
            b_hh: Tensor::zeros([gates * hidden]),
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> RecurrentVars {
        let mut leaf = |t: &Tensor<S>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        RecurrentVars {
            w_ih: leaf(&self.w_ih),
            w_hh: leaf(&self.w_hh),
            b_ih: leaf(&self.b_ih),
            b_hh: leaf(&self.b_hh),
        }
    }
}

fn hidden_size<S: Scalar>(tape: &Tape<S>, p: &RecurrentVars, gates: usize, h: Var, op: &'static str) -> Result<usize> {
    let rows = tape.shape(p.w_hh)[0];
    let hidden = rows / gates;
    if rows % gates != 0 || tape.shape(p.w_hh) != [rows, hidden] {
        return Err(Error::shape(op, format!("w_hh {:?} is not {gates}H×H", tape.shape(p.w_hh))));
    }
    if tape.shape(h).last() != Some(&hidden) {
        return Err(Error::shape(op, format!("state {:?} does not end in hidden size {hidden}", tape.shape(h))));
    }
    Ok(hidden)
}

fn gate<S: Scalar>(tape: &mut Tape<S>, pre: Var, k: usize, hidden: usize) -> Result<Var> {
    let axis = tape.shape(pre).len() - 1;
    tape.narrow(pre, axis, k * hidden, hidden)
}

/// One GRU step: `h' = (1 − z)⊙n + z⊙h`. Works on `D` vectors or `N×D` batches.
pub fn gru_step<S: Scalar>(tape: &mut Tape<S>, x: Var, h: Var, p: &RecurrentVars) -> Result<Var> {
    let hidden = hidden_size(tape, p, 3, h, "gru_step")?;
    let gi = tape.linear(x, p.w_ih, Some(p.b_ih))?;
    let gh = tape.linear(h, p.w_hh, Some(p.b_hh))?;
    if tape.shape(gi) != tape.shape(gh) {
        return Err(Error::shape("gru_step", format!("input gates {:?} vs hidden gates {:?}", tape.shape(gi), tape.shape(gh))));
    }
    let (ir, hr) = (gate(tape, gi, 0, hidden)?, gate(tape, gh, 0, hidden)?);
    let r_pre = tape.add(ir, hr)?;
    let r = tape.sigmoid(r_pre)?;
    let (iz, hz) = (gate(tape, gi, 1, hidden)?, gate(tape, gh, 1, hidden)?);
    let z_pre = tape.add(iz, hz)?;
    let z = tape.sigmoid(z_pre)?;
    let (inn, hn) = (gate(tape, gi, 2, hidden)?, gate(tape, gh, 2, hidden)?);
    let gated = tape.mul(r, hn)?;
    let n_pre = tape.add(inn, gated)?;
    let n = tape.tanh(n_pre)?;
    let diff = tape.sub(h, n)?;
    let carry = tape.mul(z, diff)?;
    tape.add(n, carry)
}

/// One LSTM step, returning `(h', c')`.
pub fn lstm_step<S: Scalar>(tape: &mut Tape<S>, x: Var, h: Var, c: Var, p: &RecurrentVars) -> Result<(Var, Var)> {
    let hidden = hidden_size(tape, p, 4, h, "lstm_step")?;
    if tape.shape(c) != tape.shape(h) {
        return Err(Error::shape("lstm_step", format!("cell {:?} vs hidden {:?}", tape.shape(c), tape.shape(h))));
    }
    let gi = tape.linear(x, p.w_ih, Some(p.b_ih))?;
    let gh = tape.linear(h, p.w_hh, Some(p.b_hh))?;
    if tape.shape(gi) != tape.shape(gh) {
        return Err(Error::shape("lstm_step", format!("input gates {:?} vs hidden gates {:?}", tape.shape(gi), tape.shape(gh))));
    }
    let pre = tape.add(gi, gh)?;
    let i_pre = gate(tape, pre, 0, hidden)?;
    let f_pre = gate(tape, pre, 1, hidden)?;
    let g_pre = gate(tape, pre, 2, hidden)?;
    let o_pre = gate(tape, pre, 3, hidden)?;
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let g = tape.tanh(g_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next)?;
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Forward-only GRU step on plain tensors.
pub fn gru_cell<S: Scalar>(x: &Tensor<S>, h: &Tensor<S>, weights: &RecurrentWeights<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let p = weights.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h.clone());
    let out = gru_step(&mut tape, xv, hv, &p)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gru_all_zero_gives_zero() {
        let w = RecurrentWeights::<f64>::zeros(3, 4, 5);
        let h = gru_cell(&Tensor::zeros([4]), &Tensor::zeros([5]), &w).unwrap();
        assert_eq!(h.data(), &[0.0; 5]);
    }

    #[test]
    fn gru_saturated_update_gate_carries_state() {
        let mut w = RecurrentWeights::<f64>::zeros(3, 2, 3);
        w.b_ih.data_mut()[3..6].fill(20.0);
        w.b_ih.data_mut()[6..9].fill(0.7);
        let h0 = Tensor::from_f64([3], &[0.3, -0.8, 0.5]).unwrap();
        let h = gru_cell(&Tensor::from_f64([2], &[1.0, -1.0]).unwrap(), &h0, &w).unwrap();
        for (a, b) in h.data().iter().zip(h0.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn gru_closed_update_gate_takes_candidate() {
        let mut w = RecurrentWeights::<f64>::zeros(3, 2, 3);
        w.b_ih.data_mut()[3..6].fill(-20.0);
        w.b_ih.data_mut()[6..9].fill(0.7);
        let h0 = Tensor::from_f64([3], &[0.3, -0.8, 0.5]).unwrap();
        let h = gru_cell(&Tensor::from_f64([2], &[1.0, -1.0]).unwrap(), &h0, &w).unwrap();
        for a in h.data() {
            assert!((a - 0.7f64.tanh()).abs() < 1e-8);
        }
    }

    #[test]
    fn gru_rejects_mismatched_state() {
        let w = RecurrentWeights::<f64>::zeros(3, 2, 3);
        assert!(gru_cell(&Tensor::zeros([2]), &Tensor::zeros([4]), &w).is_err());
        assert!(gru_cell(&Tensor::zeros([3]), &Tensor::zeros([3]), &w).is_err());
    }

    #[test]
    fn lstm_zero_params_zero_state() {
        let w = RecurrentWeights::<f64>::zeros(4, 3, 2);
        let mut tape = Tape::new();
        let p = w.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_f64([3], &[1.0, 2.0, 3.0]).unwrap());
        let h = tape.constant(Tensor::zeros([2]));
        let c = tape.constant(Tensor::zeros([2]));
        let (h1, c1) = lstm_step(&mut tape, x, h, c, &p).unwrap();
        assert_eq!(tape.value(h1).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(c1).data(), &[0.0, 0.0]);
    }
}
