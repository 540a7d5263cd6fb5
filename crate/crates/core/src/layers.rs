//! Fully-connected and LSTM layers, plus their tape-bound counterparts.
//!
//! Parameter-owning types ([`DenseLayer`], [`LstmCell`], [`BiLstm`]) hold
//! plain tensors. Binding one to a [`Tape`] registers each tensor as a leaf
//! and yields a `Bound*` handle used for the forward pass.
//!
//! LSTM gate columns are laid out as (input, forget, cell-candidate, output),
//! each `hidden_size` wide.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::contract(format!(
            "layer dimensions must be positive, got {fan_in}×{fan_out}"
        )));
    }
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.rank() != 2 || bias.rank() != 1 || bias.len() != weight.cols() {
            return Err(Error::dimension("dense", weight.shape(), bias.shape()));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn init<R: Rng>(
        rng: &mut R,
        input: usize,
        output: usize,
        activation: Activation,
    ) -> Result<Self> {
        let weight = glorot(rng, input, output)?;
        DenseLayer::new(weight, Tensor::vector(vec![0.0; output]), activation)
    }

    pub fn input_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundDense {
        BoundDense {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
            activation: self.activation,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
    pub activation: Activation,
}

impl BoundDense {
    /// `activation(x·W + b)` for `x` of shape `batch × in`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = tape.matmul(x, self.weight)?;
        let z = tape.add_row_bias(z, self.bias)?;
        Ok(match self.activation {
            Activation::None => z,
            Activation::Relu => tape.relu(z),
            Activation::Sigmoid => tape.sigmoid(z),
        })
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
    pub hidden_size: usize,
}

impl LstmCell {
    pub fn new(w_input: Tensor, w_hidden: Tensor, bias: Tensor) -> Result<Self> {
        let h = w_hidden.rows();
        if w_input.rank() != 2
            || w_hidden.shape() != [h, 4 * h]
            || w_input.cols() != 4 * h
            || bias.shape() != [4 * h]
        {
            return Err(Error::dimension("lstm", w_input.shape(), w_hidden.shape()));
        }
        Ok(LstmCell {
            w_input,
            w_hidden,
            bias,
            hidden_size: h,
        })
    }

    /// Glorot-uniform weights, zero bias except the forget slice at 1.0.
    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Result<Self> {
        let w_input = glorot(rng, input, 4 * hidden)?;
        let w_hidden = glorot(rng, hidden, 4 * hidden)?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        LstmCell::new(w_input, w_hidden, Tensor::vector(bias))
    }

    pub fn input_size(&self) -> usize {
        self.w_input.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLstm {
        BoundLstm {
            w_input: tape.leaf(self.w_input.clone()),
            w_hidden: tape.leaf(self.w_hidden.clone()),
            bias: tape.leaf(self.bias.clone()),
            hidden_size: self.hidden_size,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize) -> Self {
        LstmState {
            h: tape.constant(Tensor::zeros(&[batch, hidden])),
            c: tape.constant(Tensor::zeros(&[batch, hidden])),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    pub hidden_size: usize,
}

impl BoundLstm {
    pub fn vars(&self) -> [Var; 3] {
        [self.w_input, self.w_hidden, self.bias]
    }

    /// One recurrence step:
    /// `c' = σ(f)∘c + σ(i)∘tanh(g)`, `h' = σ(o)∘tanh(c')`.
    pub fn step(&self, tape: &mut Tape, x: Var, state: LstmState) -> Result<LstmState> {
        let h = self.hidden_size;
        let hs = tape.value(state.h);
        if hs.shape() != tape.value(state.c).shape() || hs.cols() != h {
            return Err(Error::dimension(
                "lstm_step",
                tape.value(state.h).shape(),
                tape.value(state.c).shape(),
            ));
        }
        let xw = tape.matmul(x, self.w_input)?;
        let hw = tape.matmul(state.h, self.w_hidden)?;
        let gates = tape.add(xw, hw)?;
        let gates = tape.add_row_bias(gates, self.bias)?;

        let i = tape.slice_cols(gates, 0, h)?;
        let f = tape.slice_cols(gates, h, h)?;
        let g = tape.slice_cols(gates, 2 * h, h)?;
        let o = tape.slice_cols(gates, 3 * h, h)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);

        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// [`BoundLstm::step`] followed by the padding carry: rows whose mask is
    /// false keep `state`.
    pub fn step_masked(
        &self,
        tape: &mut Tape,
        x: Var,
        state: LstmState,
        mask: &[bool],
    ) -> Result<LstmState> {
        let next = self.step(tape, x, state)?;
        carry(tape, mask, next, state)
    }

    /// Runs the cell over a time-major sequence. Rows whose mask is false at
    /// a step keep their previous state, so trailing padding never changes
    /// a row's final state. Outputs at masked steps repeat the carried `h`.
    pub fn run(
        &self,
        tape: &mut Tape,
        xs: &[Var],
        init: LstmState,
        masks: &[Vec<bool>],
    ) -> Result<(Vec<Var>, LstmState)> {
        if xs.len() != masks.len() {
            return Err(Error::contract(format!(
                "sequence has {} steps but {} masks",
                xs.len(),
                masks.len()
            )));
        }
        let mut state = init;
        let mut outputs = Vec::with_capacity(xs.len());
        for (x, mask) in xs.iter().zip(masks) {
            state = self.step_masked(tape, *x, state, mask)?;
            outputs.push(state.h);
        }
        Ok((outputs, state))
    }
}

fn carry(tape: &mut Tape, mask: &[bool], next: LstmState, prev: LstmState) -> Result<LstmState> {
    if mask.iter().all(|&m| m) {
        return Ok(next);
    }
    Ok(LstmState {
        h: tape.select_rows(mask, next.h, prev.h)?,
        c: tape.select_rows(mask, next.c, prev.c)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new(forward: LstmCell, backward: LstmCell) -> Result<Self> {
        if forward.input_size() != backward.input_size()
            || forward.hidden_size != backward.hidden_size
        {
            return Err(Error::dimension(
                "bilstm",
                forward.w_input.shape(),
                backward.w_input.shape(),
            ));
        }
        Ok(BiLstm { forward, backward })
    }

    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Result<Self> {
        let forward = LstmCell::init(rng, input, hidden)?;
        let backward = LstmCell::init(rng, input, hidden)?;
        BiLstm::new(forward, backward)
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundBiLstm {
        BoundBiLstm {
            forward: self.forward.bind(tape),
            backward: self.backward.bind(tape),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundBiLstm {
    pub forward: BoundLstm,
    pub backward: BoundLstm,
}

pub struct BiLstmOutput {
    /// Per step, `concat(forward_h_t, backward_h_t)` of width `2h`.
    pub outputs: Vec<Var>,
    /// Forward state at each row's last unmasked step.
    pub final_forward: LstmState,
    /// Backward state after consuming step 1.
    pub final_backward: LstmState,
}

impl BoundBiLstm {
    pub fn run(
        &self,
        tape: &mut Tape,
        xs: &[Var],
        init_forward: LstmState,
        init_backward: LstmState,
        masks: &[Vec<bool>],
    ) -> Result<BiLstmOutput> {
        let (fwd, final_forward) = self.forward.run(tape, xs, init_forward, masks)?;
        let rev_xs: Vec<Var> = xs.iter().rev().copied().collect();
        let rev_masks: Vec<Vec<bool>> = masks.iter().rev().cloned().collect();
        let (mut bwd, final_backward) =
            self.backward
                .run(tape, &rev_xs, init_backward, &rev_masks)?;
        bwd.reverse();
        let outputs = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| tape.concat(&[*f, *b], 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(BiLstmOutput {
            outputs,
            final_forward,
            final_backward,
        })
    }

    /// Runs from zero initial states in both directions.
    pub fn run_from_zero(
        &self,
        tape: &mut Tape,
        xs: &[Var],
        masks: &[Vec<bool>],
    ) -> Result<BiLstmOutput> {
        let batch = match xs.first() {
            Some(x) => tape.value(*x).rows(),
            None => masks.first().map_or(0, Vec::len),
        };
        let h = self.forward.hidden_size;
        let f0 = LstmState::zeros(tape, batch, h);
        let b0 = LstmState::zeros(tape, batch, h);
        self.run(tape, xs, f0, b0, masks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{grad_check, sigmoid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let layer = DenseLayer::new(
            Tensor::identity(3),
            Tensor::vector(vec![0.0; 3]),
            Activation::None,
        )
        .unwrap();
        let mut tape = Tape::new();
        let bound = layer.bind(&mut tape);
        let x = tape.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -7.0]).unwrap());
        let y = bound.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn dense_zero_input_gives_relu_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = DenseLayer::new(
            rand_matrix(&mut rng, 3, 4),
            Tensor::vector(vec![1.0; 4]),
            Activation::Relu,
        )
        .unwrap();
        let mut tape = Tape::new();
        let bound = layer.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let y = bound.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0; 4]);
    }

    #[test]
    fn dense_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = DenseLayer::new(
            rand_matrix(&mut rng, 4, 3),
            Tensor::vector(vec![0.1, -0.2, 0.3]),
            Activation::Sigmoid,
        )
        .unwrap();
        let x = rand_matrix(&mut rng, 5, 4);
        let mut tape = Tape::new();
        let bound = layer.bind(&mut tape);
        let vx = tape.constant(x.clone());
        let y = bound.forward(&mut tape, vx).unwrap();
        for r in 0..5 {
            for c in 0..3 {
                let mut z = layer.bias.data()[c];
                for k in 0..4 {
                    z += x.get(r, k) * layer.weight.get(k, c);
                }
                assert!((tape.value(y).get(r, c) - sigmoid(z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = DenseLayer::init(&mut rng, 4, 3, Activation::Relu).unwrap();
        let mut tape = Tape::new();
        let bound = layer.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(
            bound.forward(&mut tape, x),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_cell_from_zero_state_outputs_zero() {
        let cell = LstmCell::new(
            Tensor::zeros(&[3, 8]),
            Tensor::zeros(&[2, 8]),
            Tensor::vector(vec![0.0; 8]),
        )
        .unwrap();
        let mut tape = Tape::new();
        let bound = cell.bind(&mut tape);
        let x = tape.constant(Tensor::matrix(1, 3, vec![0.4, -1.0, 2.0]).unwrap());
        let s0 = LstmState::zeros(&mut tape, 1, 2);
        let s1 = bound.step(&mut tape, x, s0).unwrap();
        assert_eq!(tape.value(s1.h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        // Scalar hand evaluation of the gate equations with f pre-activation 40.
        let (wi, wf, wg, wo) = (0.3, 0.0, -0.7, 0.5);
        let cell = LstmCell::new(
            Tensor::matrix(1, 4, vec![wi, wf, wg, wo]).unwrap(),
            Tensor::zeros(&[1, 4]),
            Tensor::vector(vec![0.1, 40.0, 0.2, -0.1]),
        )
        .unwrap();
        let (x, c_prev) = (1.3, 0.6);
        let mut tape = Tape::new();
        let bound = cell.bind(&mut tape);
        let vx = tape.constant(Tensor::matrix(1, 1, vec![x]).unwrap());
        let state = LstmState {
            h: tape.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap()),
            c: tape.constant(Tensor::matrix(1, 1, vec![c_prev]).unwrap()),
        };
        let next = bound.step(&mut tape, vx, state).unwrap();
        let i = sigmoid(wi * x + 0.1);
        let g = (wg * x + 0.2f64).tanh();
        let expect_c = c_prev + i * g;
        assert!((tape.value(next.c).data()[0] - expect_c).abs() < 1e-12);
        let o = sigmoid(wo * x - 0.1);
        assert!((tape.value(next.h).data()[0] - o * expect_c.tanh()).abs() < 1e-12);
    }

    #[test]
    fn three_chained_steps_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let leaves = vec![
            rand_matrix(&mut rng, 3, 8),
            rand_matrix(&mut rng, 2, 8),
            Tensor::vector((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()),
            rand_matrix(&mut rng, 2, 3),
            rand_matrix(&mut rng, 2, 3),
            rand_matrix(&mut rng, 2, 3),
            rand_matrix(&mut rng, 2, 2),
        ];
        let err = grad_check(&leaves, |t, v| {
            let cell = BoundLstm {
                w_input: v[0],
                w_hidden: v[1],
                bias: v[2],
                hidden_size: 2,
            };
            let mut s = LstmState::zeros(t, 2, 2);
            for x in &v[3..6] {
                s = cell.step(t, *x, s)?;
            }
            let w = t.mul(s.h, v[6])?;
            Ok(t.sum(w))
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn run_length_mismatch_is_contract_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = LstmCell::init(&mut rng, 2, 3).unwrap();
        let mut tape = Tape::new();
        let b = cell.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let s0 = LstmState::zeros(&mut tape, 1, 3);
        assert!(matches!(
            b.run(&mut tape, &[x], s0, &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn empty_sequence_returns_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = LstmCell::init(&mut rng, 2, 3).unwrap();
        let mut tape = Tape::new();
        let b = cell.bind(&mut tape);
        let s0 = LstmState::zeros(&mut tape, 2, 3);
        let (outs, fin) = b.run(&mut tape, &[], s0, &[]).unwrap();
        assert!(outs.is_empty());
        assert_eq!(fin.h, s0.h);
        assert_eq!(fin.c, s0.c);
    }

    #[test]
    fn fully_masked_row_keeps_initial_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cell = LstmCell::init(&mut rng, 2, 3).unwrap();
        let mut tape = Tape::new();
        let b = cell.bind(&mut tape);
        let init = LstmState {
            h: tape.constant(rand_matrix(&mut rng, 2, 3)),
            c: tape.constant(rand_matrix(&mut rng, 2, 3)),
        };
        let xs: Vec<Var> = (0..4)
            .map(|_| tape.constant(rand_matrix(&mut rng, 2, 2)))
            .collect();
        let masks = vec![vec![true, false]; 4];
        let (_, fin) = b.run(&mut tape, &xs, init, &masks).unwrap();
        assert_eq!(tape.value(fin.h).row(1), tape.value(init.h).row(1));
        assert_eq!(tape.value(fin.c).row(1), tape.value(init.c).row(1));
        assert_ne!(tape.value(fin.h).row(0), tape.value(init.h).row(0));
    }

    #[test]
    fn init_forget_bias_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cell = LstmCell::init(&mut rng, 5, 4).unwrap();
        assert!(cell.bias.data()[4..8].iter().all(|&b| b == 1.0));
        assert!(cell.bias.data()[..4].iter().all(|&b| b == 0.0));
        assert!(cell.bias.data()[8..].iter().all(|&b| b == 0.0));
        let bound = glorot_bound(5, 16);
        assert!(cell.w_input.data().iter().all(|w| w.abs() <= bound));

        let mut a = ChaCha8Rng::seed_from_u64(8);
        let mut b = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(
            LstmCell::init(&mut a, 3, 3).unwrap(),
            LstmCell::init(&mut b, 3, 3).unwrap()
        );
        assert!(LstmCell::init(&mut a, 0, 3).is_err());
        assert!(DenseLayer::init(&mut a, 3, 0, Activation::Relu).is_err());
    }

    #[test]
    fn glorot_draws_are_bounded_and_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let layer = DenseLayer::init(&mut rng, 100, 100, Activation::None).unwrap();
        let w = layer.weight.data();
        assert_eq!(w.len(), 10_000);
        let bound = glorot_bound(100, 100);
        assert!(w.iter().all(|x| x.abs() <= bound));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        // Uniform(−a, a) has standard deviation a/√3.
        let se = bound / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }
}
