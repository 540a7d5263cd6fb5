//! The skip predictor: base transforms, session vector, encoder and a
//! decoder that feeds its own previous prediction back in.
//!
//! All sequences are time-major lists of `batch × width` tape variables.
//! Every stage takes the per-step validity masks of its batch, so padded
//! steps never leak into a row's states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, FeatureSchema};
use crate::error::{Error, Result};
use crate::layers::{
    Activation, BiLstm, BoundBiLstm, BoundDense, BoundLstm, DenseLayer, LstmCell, LstmState,
};
use crate::metrics::position_weights;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// What the final decoder LSTM receives as the previous prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    /// The previous step's probability, differentiable.
    #[default]
    Continuous,
    /// The previous probability thresholded at 0.5, as a constant.
    Hard,
}

impl Feedback {
    pub fn code(self) -> u8 {
        match self {
            Feedback::Continuous => 0,
            Feedback::Hard => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Feedback::Continuous),
            1 => Some(Feedback::Hard),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub track_feat_dim: usize,
    /// Interaction features plus the session metadata broadcast to each step.
    pub interaction_feat_dim: usize,
    pub track_fc_dim: usize,
    pub interaction_fc_dim: usize,
    pub sessrep_hidden: usize,
    pub enc_fc_dim: usize,
    pub enc_hidden: usize,
    pub dec_final_hidden: usize,
    pub seed: u64,
    pub feedback: Feedback,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::for_schema(&FeatureSchema::default())
    }
}

impl ModelConfig {
    /// Default layer sizes with input widths taken from `schema`.
    pub fn for_schema(schema: &FeatureSchema) -> Self {
        ModelConfig {
            track_feat_dim: schema.track_width(),
            interaction_feat_dim: schema.interaction_width(),
            track_fc_dim: 64,
            interaction_fc_dim: 64,
            sessrep_hidden: 64,
            enc_fc_dim: 128,
            enc_hidden: 128,
            dec_final_hidden: 128,
            seed: 0,
            feedback: Feedback::Continuous,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("track_feat_dim", self.track_feat_dim),
            ("interaction_feat_dim", self.interaction_feat_dim),
            ("track_fc_dim", self.track_fc_dim),
            ("interaction_fc_dim", self.interaction_fc_dim),
            ("sessrep_hidden", self.sessrep_hidden),
            ("enc_fc_dim", self.enc_fc_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_final_hidden", self.dec_final_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn session_vector_width(&self) -> usize {
        4 * self.sessrep_hidden
    }

    /// Checks the config against the widths a schema encodes to.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if self.track_feat_dim != schema.track_width()
            || self.interaction_feat_dim != schema.interaction_width()
        {
            return Err(Error::Schema(format!(
                "model expects track/interaction widths {}/{}, schema encodes {}/{}",
                self.track_feat_dim,
                self.interaction_feat_dim,
                schema.track_width(),
                schema.interaction_width()
            )));
        }
        Ok(())
    }
}

/// Every learnable weight. `shared_fc` serves both the encoder and the
/// decoder and exists once.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub track_fc: DenseLayer,
    pub interaction_fc: DenseLayer,
    pub sess_bilstm_a: BiLstm,
    pub sess_bilstm_b: BiLstm,
    pub shared_fc: DenseLayer,
    pub enc_bilstm: BiLstm,
    pub dec_bilstm: BiLstm,
    pub dec_lstm: LstmCell,
    pub out_fc: DenseLayer,
}

const LSTM_PARTS: [&str; 3] = ["w_input", "w_hidden", "bias"];

fn dense_names(out: &mut Vec<String>, layer: &str) {
    out.push(format!("{layer}.weight"));
    out.push(format!("{layer}.bias"));
}

fn lstm_names(out: &mut Vec<String>, layer: &str) {
    out.extend(LSTM_PARTS.iter().map(|p| format!("{layer}.{p}")));
}

fn bilstm_names(out: &mut Vec<String>, layer: &str) {
    lstm_names(out, &format!("{layer}.forward"));
    lstm_names(out, &format!("{layer}.backward"));
}

fn dense_refs<'a>(out: &mut Vec<&'a Tensor>, l: &'a DenseLayer) {
    out.extend([&l.weight, &l.bias]);
}

fn lstm_refs<'a>(out: &mut Vec<&'a Tensor>, l: &'a LstmCell) {
    out.extend([&l.w_input, &l.w_hidden, &l.bias]);
}

fn dense_muts<'a>(out: &mut Vec<&'a mut Tensor>, l: &'a mut DenseLayer) {
    out.extend([&mut l.weight, &mut l.bias]);
}

fn lstm_muts<'a>(out: &mut Vec<&'a mut Tensor>, l: &'a mut LstmCell) {
    out.extend([&mut l.w_input, &mut l.w_hidden, &mut l.bias]);
}

impl ModelParams {
    /// Glorot-uniform weights drawn from a stream seeded by `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let rng = &mut rng;
        Ok(ModelParams {
            config: c.clone(),
            track_fc: DenseLayer::init(rng, c.track_feat_dim, c.track_fc_dim, Activation::Relu)?,
            interaction_fc: DenseLayer::init(
                rng,
                c.interaction_feat_dim,
                c.interaction_fc_dim,
                Activation::Relu,
            )?,
            sess_bilstm_a: BiLstm::init(
                rng,
                c.track_fc_dim + c.interaction_fc_dim,
                c.sessrep_hidden,
            )?,
            sess_bilstm_b: BiLstm::init(rng, c.track_fc_dim, c.sessrep_hidden)?,
            shared_fc: DenseLayer::init(
                rng,
                c.track_fc_dim + c.session_vector_width(),
                c.enc_fc_dim,
                Activation::Relu,
            )?,
            enc_bilstm: BiLstm::init(rng, c.enc_fc_dim, c.enc_hidden)?,
            dec_bilstm: BiLstm::init(rng, c.enc_fc_dim, c.enc_hidden)?,
            dec_lstm: LstmCell::init(rng, 2 * c.enc_hidden + 1, c.dec_final_hidden)?,
            out_fc: DenseLayer::init(rng, c.dec_final_hidden, 1, Activation::Sigmoid)?,
        })
    }

    /// Parameter names in the canonical order shared by [`Self::tensors`],
    /// [`Self::tensors_mut`] and [`BoundParams::vars`].
    pub fn names() -> Vec<String> {
        let mut n = Vec::new();
        dense_names(&mut n, "track_fc");
        dense_names(&mut n, "interaction_fc");
        bilstm_names(&mut n, "sess_bilstm_a");
        bilstm_names(&mut n, "sess_bilstm_b");
        dense_names(&mut n, "shared_fc");
        bilstm_names(&mut n, "enc_bilstm");
        bilstm_names(&mut n, "dec_bilstm");
        lstm_names(&mut n, "dec_lstm");
        dense_names(&mut n, "out_fc");
        n
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = Vec::new();
        dense_refs(&mut t, &self.track_fc);
        dense_refs(&mut t, &self.interaction_fc);
        for b in [&self.sess_bilstm_a, &self.sess_bilstm_b] {
            lstm_refs(&mut t, &b.forward);
            lstm_refs(&mut t, &b.backward);
        }
        dense_refs(&mut t, &self.shared_fc);
        for b in [&self.enc_bilstm, &self.dec_bilstm] {
            lstm_refs(&mut t, &b.forward);
            lstm_refs(&mut t, &b.backward);
        }
        lstm_refs(&mut t, &self.dec_lstm);
        dense_refs(&mut t, &self.out_fc);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = Vec::new();
        dense_muts(&mut t, &mut self.track_fc);
        dense_muts(&mut t, &mut self.interaction_fc);
        for b in [&mut self.sess_bilstm_a, &mut self.sess_bilstm_b] {
            lstm_muts(&mut t, &mut b.forward);
            lstm_muts(&mut t, &mut b.backward);
        }
        dense_muts(&mut t, &mut self.shared_fc);
        for b in [&mut self.enc_bilstm, &mut self.dec_bilstm] {
            lstm_muts(&mut t, &mut b.forward);
            lstm_muts(&mut t, &mut b.backward);
        }
        lstm_muts(&mut t, &mut self.dec_lstm);
        dense_muts(&mut t, &mut self.out_fc);
        t
    }

    /// Replaces every tensor, in canonical order. Shapes must match.
    pub fn set_tensors(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != values.len() {
            return Err(Error::contract(format!(
                "model has {} tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::dimension("set_tensors", slot.shape(), v.shape()));
            }
        }
        for (slot, v) in slots.into_iter().zip(values) {
            *slot = v.clone();
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        BoundParams::from_vars(&self.config, &vars).expect("canonical order")
    }

    /// Like [`Self::bind`] but gives the encoder and decoder separate copies
    /// of the shared layer, so each path's gradient can be read on its own.
    pub fn bind_split_shared(&self, tape: &mut Tape) -> BoundParams {
        let mut bound = self.bind(tape);
        bound.dec_shared_fc = self.shared_fc.bind(tape);
        bound
    }
}

/// Tape handles for every parameter.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub feedback: Feedback,
    pub track_fc: BoundDense,
    pub interaction_fc: BoundDense,
    pub sess_bilstm_a: BoundBiLstm,
    pub sess_bilstm_b: BoundBiLstm,
    /// The shared layer as seen by the encoder.
    pub enc_shared_fc: BoundDense,
    /// The shared layer as seen by the decoder; the same variables as
    /// `enc_shared_fc` unless bound with [`ModelParams::bind_split_shared`].
    pub dec_shared_fc: BoundDense,
    pub enc_bilstm: BoundBiLstm,
    pub dec_bilstm: BoundBiLstm,
    pub dec_lstm: BoundLstm,
    pub out_fc: BoundDense,
    track_feat_dim: usize,
    interaction_feat_dim: usize,
}

struct VarStream<'a>(std::slice::Iter<'a, Var>);

impl VarStream<'_> {
    fn next(&mut self) -> Result<Var> {
        self.0
            .next()
            .copied()
            .ok_or_else(|| Error::contract("too few variables for the model"))
    }

    fn dense(&mut self, activation: Activation) -> Result<BoundDense> {
        Ok(BoundDense {
            weight: self.next()?,
            bias: self.next()?,
            activation,
        })
    }

    fn lstm(&mut self, hidden_size: usize) -> Result<BoundLstm> {
        Ok(BoundLstm {
            w_input: self.next()?,
            w_hidden: self.next()?,
            bias: self.next()?,
            hidden_size,
        })
    }

    fn bilstm(&mut self, hidden: usize) -> Result<BoundBiLstm> {
        Ok(BoundBiLstm {
            forward: self.lstm(hidden)?,
            backward: self.lstm(hidden)?,
        })
    }
}

impl BoundParams {
    /// Wraps already-registered variables given in canonical order.
    pub fn from_vars(config: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let mut s = VarStream(vars.iter());
        let track_fc = s.dense(Activation::Relu)?;
        let interaction_fc = s.dense(Activation::Relu)?;
        let sess_bilstm_a = s.bilstm(config.sessrep_hidden)?;
        let sess_bilstm_b = s.bilstm(config.sessrep_hidden)?;
        let shared_fc = s.dense(Activation::Relu)?;
        let enc_bilstm = s.bilstm(config.enc_hidden)?;
        let dec_bilstm = s.bilstm(config.enc_hidden)?;
        let dec_lstm = s.lstm(config.dec_final_hidden)?;
        let out_fc = s.dense(Activation::Sigmoid)?;
        if s.0.next().is_some() {
            return Err(Error::contract("too many variables for the model"));
        }
        Ok(BoundParams {
            feedback: config.feedback,
            track_fc,
            interaction_fc,
            sess_bilstm_a,
            sess_bilstm_b,
            enc_shared_fc: shared_fc,
            dec_shared_fc: shared_fc,
            enc_bilstm,
            dec_bilstm,
            dec_lstm,
            out_fc,
            track_feat_dim: config.track_feat_dim,
            interaction_feat_dim: config.interaction_feat_dim,
        })
    }

    /// Variables in canonical order; the shared layer appears once, as the
    /// encoder's copy.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        v.extend(self.track_fc.vars());
        v.extend(self.interaction_fc.vars());
        for b in [&self.sess_bilstm_a, &self.sess_bilstm_b] {
            v.extend(b.forward.vars());
            v.extend(b.backward.vars());
        }
        v.extend(self.enc_shared_fc.vars());
        for b in [&self.enc_bilstm, &self.dec_bilstm] {
            v.extend(b.forward.vars());
            v.extend(b.backward.vars());
        }
        v.extend(self.dec_lstm.vars());
        v.extend(self.out_fc.vars());
        v
    }

    /// Gradients in canonical order, zeros where nothing flowed.
    pub fn gradients(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars()
            .into_iter()
            .map(|v| tape.grad_or_zeros(v))
            .collect()
    }
}

/// Base representations of one batch.
#[derive(Clone, Debug)]
pub struct BaseRepr {
    pub track_first: Vec<Var>,
    pub track_second: Vec<Var>,
    pub interaction: Vec<Var>,
}

/// Decoder probabilities per second-half step, each `batch × 1`.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub probs: Vec<Var>,
    pub masks: Vec<Vec<bool>>,
    /// Inputs to the decoder's shared layer, one per step.
    pub stage1_inputs: Vec<Var>,
}

impl ForwardOutput {
    /// Probabilities per batch row, trimmed to each row's length.
    pub fn session_probs(&self, tape: &Tape) -> Vec<Vec<f64>> {
        let batch = self.masks.first().map_or(0, Vec::len);
        let mut out = vec![Vec::new(); batch];
        for (p, mask) in self.probs.iter().zip(&self.masks) {
            let values = tape.value(*p).data();
            for (r, row) in out.iter_mut().enumerate() {
                if mask[r] {
                    row.push(values[r]);
                }
            }
        }
        out
    }
}

fn check_width(tape: &Tape, xs: &[Var], width: usize, what: &str) -> Result<()> {
    for x in xs {
        let cols = tape.value(*x).cols();
        if cols != width {
            return Err(Error::Schema(format!(
                "{what} features are {cols} wide, model expects {width}"
            )));
        }
    }
    Ok(())
}

fn constants(tape: &mut Tape, xs: &[Tensor]) -> Vec<Var> {
    xs.iter().map(|x| tape.constant(x.clone())).collect()
}

/// Applies `track_fc` to both halves and `interaction_fc` to the first-half
/// interaction rows.
pub fn transform_base(tape: &mut Tape, p: &BoundParams, batch: &Batch) -> Result<BaseRepr> {
    let first = constants(tape, &batch.first_tracks);
    let second = constants(tape, &batch.second_tracks);
    let inter = constants(tape, &batch.first_interactions);
    check_width(tape, &first, p.track_feat_dim, "track")?;
    check_width(tape, &second, p.track_feat_dim, "track")?;
    check_width(tape, &inter, p.interaction_feat_dim, "interaction")?;
    let apply = |tape: &mut Tape, layer: &BoundDense, xs: &[Var]| -> Result<Vec<Var>> {
        xs.iter().map(|x| layer.forward(tape, *x)).collect()
    };
    Ok(BaseRepr {
        track_first: apply(tape, &p.track_fc, &first)?,
        track_second: apply(tape, &p.track_fc, &second)?,
        interaction: apply(tape, &p.interaction_fc, &inter)?,
    })
}

/// Summaries of the first-half behaviour path and the all-tracks path,
/// concatenated to `batch × 4·sessrep_hidden`.
pub fn session_vector(
    tape: &mut Tape,
    p: &BoundParams,
    base: &BaseRepr,
    first_masks: &[Vec<bool>],
    second_masks: &[Vec<bool>],
) -> Result<Var> {
    if base.track_first.is_empty() || base.track_second.is_empty() {
        return Err(Error::contract(
            "session vector needs both halves to be nonempty",
        ));
    }
    let path_a = base
        .track_first
        .iter()
        .zip(&base.interaction)
        .map(|(t, i)| tape.concat(&[*t, *i], 1))
        .collect::<Result<Vec<_>>>()?;
    let a = p.sess_bilstm_a.run_from_zero(tape, &path_a, first_masks)?;

    let path_b: Vec<Var> = base
        .track_first
        .iter()
        .chain(&base.track_second)
        .copied()
        .collect();
    let masks_b: Vec<Vec<bool>> = first_masks.iter().chain(second_masks).cloned().collect();
    let b = p.sess_bilstm_b.run_from_zero(tape, &path_b, &masks_b)?;

    tape.concat(
        &[
            a.final_forward.h,
            a.final_backward.h,
            b.final_forward.h,
            b.final_backward.h,
        ],
        1,
    )
}

fn with_session_vector(
    tape: &mut Tape,
    layer: &BoundDense,
    tracks: &[Var],
    sess: Var,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let mut inputs = Vec::with_capacity(tracks.len());
    let mut outputs = Vec::with_capacity(tracks.len());
    for t in tracks {
        let x = tape.concat(&[*t, sess], 1)?;
        inputs.push(x);
        outputs.push(layer.forward(tape, x)?);
    }
    Ok((inputs, outputs))
}

/// Runs the encoder over the first half and returns its final forward and
/// backward states.
pub fn encode(
    tape: &mut Tape,
    p: &BoundParams,
    track_first: &[Var],
    sess: Var,
    first_masks: &[Vec<bool>],
) -> Result<(LstmState, LstmState)> {
    let (_, xs) = with_session_vector(tape, &p.enc_shared_fc, track_first, sess)?;
    let out = p.enc_bilstm.run_from_zero(tape, &xs, first_masks)?;
    Ok((out.final_forward, out.final_backward))
}

/// Decoder with the configured feedback rule.
pub fn decode(
    tape: &mut Tape,
    p: &BoundParams,
    track_second: &[Var],
    sess: Var,
    enc_states: (LstmState, LstmState),
    last_first_skip2: &[f64],
    second_masks: &[Vec<bool>],
) -> Result<ForwardOutput> {
    let feedback = p.feedback;
    decode_with_feedback(
        tape,
        p,
        track_second,
        sess,
        enc_states,
        last_first_skip2,
        second_masks,
        |tape, _, prob| Ok(feedback_var(tape, feedback, prob)),
    )
}

fn feedback_var(tape: &mut Tape, feedback: Feedback, prob: Var) -> Var {
    match feedback {
        Feedback::Continuous => prob,
        Feedback::Hard => {
            let hard = tape
                .value(prob)
                .data()
                .iter()
                .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
                .collect();
            let rows = tape.value(prob).rows();
            tape.constant(Tensor::matrix(rows, 1, hard).expect("column vector"))
        }
    }
}

/// Decoder whose previous-prediction input is produced by `feedback`, called
/// with the step index and that step's probability variable. The returned
/// variable is fed to the next step.
#[allow(clippy::too_many_arguments)]
pub fn decode_with_feedback<F>(
    tape: &mut Tape,
    p: &BoundParams,
    track_second: &[Var],
    sess: Var,
    enc_states: (LstmState, LstmState),
    last_first_skip2: &[f64],
    second_masks: &[Vec<bool>],
    mut feedback: F,
) -> Result<ForwardOutput>
where
    F: FnMut(&mut Tape, usize, Var) -> Result<Var>,
{
    let batch = tape.value(sess).rows();
    if last_first_skip2.len() != batch {
        return Err(Error::contract(format!(
            "decoder needs one last observed skip per row, got {} for {batch} rows",
            last_first_skip2.len()
        )));
    }
    let (enc_f, enc_b) = enc_states;
    let h = p.dec_bilstm.forward.hidden_size;
    for s in [enc_f.h, enc_f.c, enc_b.h, enc_b.c] {
        if tape.value(s).shape() != [batch, h] {
            return Err(Error::contract(format!(
                "encoder state shape {:?} does not fit decoder width {h}",
                tape.value(s).shape()
            )));
        }
    }
    let (stage1_inputs, stage1) = with_session_vector(tape, &p.dec_shared_fc, track_second, sess)?;
    let stage2 = p
        .dec_bilstm
        .run(tape, &stage1, enc_f, enc_b, second_masks)?;

    let mut prev = tape.constant(Tensor::matrix(batch, 1, last_first_skip2.to_vec())?);
    let mut state = LstmState::zeros(tape, batch, p.dec_lstm.hidden_size);
    let mut probs = Vec::with_capacity(track_second.len());
    for (t, (x, mask)) in stage2.outputs.iter().zip(second_masks).enumerate() {
        let input = tape.concat(&[*x, prev], 1)?;
        state = p.dec_lstm.step_masked(tape, input, state, mask)?;
        let prob = p.out_fc.forward(tape, state.h)?;
        probs.push(prob);
        if t + 1 < track_second.len() {
            prev = feedback(tape, t, prob)?;
        }
    }
    Ok(ForwardOutput {
        probs,
        masks: second_masks.to_vec(),
        stage1_inputs,
    })
}

/// `transform_base → session_vector → encode → decode`.
pub fn forward(tape: &mut Tape, p: &BoundParams, batch: &Batch) -> Result<ForwardOutput> {
    let base = transform_base(tape, p, batch)?;
    let sess = session_vector(tape, p, &base, &batch.first_masks, &batch.second_masks)?;
    let enc = encode(tape, p, &base.track_first, sess, &batch.first_masks)?;
    decode(
        tape,
        p,
        &base.track_second,
        sess,
        enc,
        &batch.last_first_skip2,
        &batch.second_masks,
    )
}

/// Position-weighted log loss of a labeled batch, summed over its sessions
/// and divided by `normalizer`. Passing the batch size gives the session
/// mean; data-parallel workers pass the size of the whole batch so that
/// their losses add up to it.
pub fn batch_loss(
    tape: &mut Tape,
    out: &ForwardOutput,
    batch: &Batch,
    normalizer: f64,
) -> Result<Var> {
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::contract("loss needs a labeled batch"))?;
    if out.probs.is_empty() {
        return Err(Error::contract("loss needs at least one decoder step"));
    }
    let steps = out.probs.len();
    let probs = tape.concat(&out.probs, 1)?;
    let rows = labels.len();
    let mut targets = vec![0.0; rows * steps];
    let mut weights = vec![0.0; rows * steps];
    for (r, y) in labels.iter().enumerate() {
        if y.len() > steps {
            return Err(Error::contract(format!(
                "session has {} labels for {steps} steps",
                y.len()
            )));
        }
        let w = position_weights(y.len())?;
        for (t, &label) in y.iter().enumerate() {
            targets[r * steps + t] = if label { 1.0 } else { 0.0 };
            weights[r * steps + t] = w.w[t] / normalizer;
        }
    }
    tape.weighted_bce(probs, targets, weights)
}

/// Probability at or above one half predicts a skip.
pub fn predict(probs: &[f64]) -> Vec<bool> {
    probs.iter().map(|&p| p >= 0.5).collect()
}

impl ModelParams {
    /// Per-session second-half probabilities for a batch, without gradients.
    pub fn predict_probs(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let bound = BoundParams::from_vars(&self.config, &vars)?;
        let out = forward(&mut tape, &bound, batch)?;
        Ok(out.session_probs(&tape))
    }
}
