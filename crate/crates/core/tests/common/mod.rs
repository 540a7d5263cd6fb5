//! Shared fixtures and a loop-based reference forward pass that never
//! touches the tape.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skipnet::data::EncodedSession;
use skipnet::layers::{DenseLayer, LstmCell};
use skipnet::model::{Feedback, ModelConfig, ModelParams};

pub fn small_config(seed: u64, feedback: Feedback) -> ModelConfig {
    ModelConfig {
        track_feat_dim: 5,
        interaction_feat_dim: 4,
        track_fc_dim: 6,
        interaction_fc_dim: 4,
        sessrep_hidden: 5,
        enc_fc_dim: 7,
        enc_hidden: 4,
        dec_final_hidden: 6,
        seed,
        feedback,
    }
}

pub fn random_session(
    rng: &mut ChaCha8Rng,
    cfg: &ModelConfig,
    id: &str,
    n_first: usize,
    n_second: usize,
) -> EncodedSession {
    let mut row = |w: usize| {
        (0..w)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect::<Vec<f64>>()
    };
    let first_tracks = (0..n_first).map(|_| row(cfg.track_feat_dim)).collect();
    let first_interactions = (0..n_first)
        .map(|_| row(cfg.interaction_feat_dim))
        .collect();
    let second_tracks = (0..n_second).map(|_| row(cfg.track_feat_dim)).collect();
    EncodedSession {
        session_id: id.into(),
        first_tracks,
        first_interactions,
        second_tracks,
        labels: Some((0..n_second).map(|_| rng.random_bool(0.5)).collect()),
        last_first_skip2: rng.random_bool(0.5),
    }
}

/// Sessions with lengths drawn from the valid 10..=20 range.
pub fn random_sessions(seed: u64, cfg: &ModelConfig, n: usize) -> Vec<EncodedSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let total = rng.random_range(10..=20usize);
            let first = total.div_ceil(2);
            random_session(&mut rng, cfg, &format!("s{i}"), first, total - first)
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(x: &[f64], w: &skipnet::tensor::Tensor, b: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(x.len(), rows);
    let mut out = b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for j in 0..cols {
            out[j] += xi * w.get(i, j);
        }
    }
    out
}

fn relu_layer(l: &DenseLayer, x: &[f64]) -> Vec<f64> {
    affine(x, &l.weight, l.bias.data())
        .into_iter()
        .map(|v| v.max(0.0))
        .collect()
}

#[derive(Clone)]
struct State {
    h: Vec<f64>,
    c: Vec<f64>,
}

impl State {
    fn zeros(n: usize) -> Self {
        State {
            h: vec![0.0; n],
            c: vec![0.0; n],
        }
    }
}

fn lstm_step(cell: &LstmCell, x: &[f64], s: &State) -> State {
    let n = cell.hidden_size;
    let mut z = affine(x, &cell.w_input, cell.bias.data());
    let zh = affine(&s.h, &cell.w_hidden, &vec![0.0; 4 * n]);
    for (a, b) in z.iter_mut().zip(zh) {
        *a += b;
    }
    let mut next = State::zeros(n);
    for k in 0..n {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[n + k]);
        let g = z[2 * n + k].tanh();
        let o = sigmoid(z[3 * n + k]);
        next.c[k] = f * s.c[k] + i * g;
        next.h[k] = o * next.c[k].tanh();
    }
    next
}

/// Hidden outputs at every step and the final state.
fn lstm_run(cell: &LstmCell, xs: &[Vec<f64>], init: State) -> (Vec<Vec<f64>>, State) {
    let mut s = init;
    let mut hs = Vec::new();
    for x in xs {
        s = lstm_step(cell, x, &s);
        hs.push(s.h.clone());
    }
    (hs, s)
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Second-half skip probabilities of one session, computed with explicit
/// loops. Layer wiring is restated here independently of the library.
pub fn reference_probs(p: &ModelParams, s: &EncodedSession) -> Vec<f64> {
    let cfg = &p.config;
    let tf: Vec<Vec<f64>> = s
        .first_tracks
        .iter()
        .map(|x| relu_layer(&p.track_fc, x))
        .collect();
    let ts: Vec<Vec<f64>> = s
        .second_tracks
        .iter()
        .map(|x| relu_layer(&p.track_fc, x))
        .collect();
    let inter: Vec<Vec<f64>> = s
        .first_interactions
        .iter()
        .map(|x| relu_layer(&p.interaction_fc, x))
        .collect();

    // Session vector: behaviour path over the first half, content path over
    // every track.
    let hs = cfg.sessrep_hidden;
    let path_a: Vec<Vec<f64>> = tf
        .iter()
        .zip(&inter)
        .map(|(t, i)| concat(&[t, i]))
        .collect();
    let (_, a_f) = lstm_run(&p.sess_bilstm_a.forward, &path_a, State::zeros(hs));
    let rev_a: Vec<Vec<f64>> = path_a.iter().rev().cloned().collect();
    let (_, a_b) = lstm_run(&p.sess_bilstm_a.backward, &rev_a, State::zeros(hs));
    let path_b: Vec<Vec<f64>> = tf.iter().chain(&ts).cloned().collect();
    let (_, b_f) = lstm_run(&p.sess_bilstm_b.forward, &path_b, State::zeros(hs));
    let rev_b: Vec<Vec<f64>> = path_b.iter().rev().cloned().collect();
    let (_, b_b) = lstm_run(&p.sess_bilstm_b.backward, &rev_b, State::zeros(hs));
    let sess = concat(&[&a_f.h, &a_b.h, &b_f.h, &b_b.h]);

    let he = cfg.enc_hidden;
    let enc_in: Vec<Vec<f64>> = tf
        .iter()
        .map(|t| relu_layer(&p.shared_fc, &concat(&[t, &sess])))
        .collect();
    let (_, enc_f) = lstm_run(&p.enc_bilstm.forward, &enc_in, State::zeros(he));
    let rev_enc: Vec<Vec<f64>> = enc_in.iter().rev().cloned().collect();
    let (_, enc_b) = lstm_run(&p.enc_bilstm.backward, &rev_enc, State::zeros(he));

    let dec_in: Vec<Vec<f64>> = ts
        .iter()
        .map(|t| relu_layer(&p.shared_fc, &concat(&[t, &sess])))
        .collect();
    let (dec_f, _) = lstm_run(&p.dec_bilstm.forward, &dec_in, enc_f);
    let rev_dec: Vec<Vec<f64>> = dec_in.iter().rev().cloned().collect();
    let (mut dec_b, _) = lstm_run(&p.dec_bilstm.backward, &rev_dec, enc_b);
    dec_b.reverse();

    let mut state = State::zeros(cfg.dec_final_hidden);
    let mut prev = if s.last_first_skip2 { 1.0 } else { 0.0 };
    let mut probs = Vec::new();
    for t in 0..ts.len() {
        let x = concat(&[&dec_f[t], &dec_b[t], &[prev]]);
        state = lstm_step(&p.dec_lstm, &x, &state);
        let prob = sigmoid(affine(&state.h, &p.out_fc.weight, p.out_fc.bias.data())[0]);
        probs.push(prob);
        prev = match cfg.feedback {
            Feedback::Continuous => prob,
            Feedback::Hard => {
                if prob >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        };
    }
    probs
}

/// Mean over sessions of the position-weighted cross entropy, weights from
/// the single-error drop in average accuracy.
pub fn reference_loss(probs: &[Vec<f64>], sessions: &[EncodedSession]) -> f64 {
    let mut total = 0.0;
    for (p, s) in probs.iter().zip(sessions) {
        let y = s.labels.as_ref().unwrap();
        let t = y.len();
        let drops: Vec<f64> = (0..t)
            .map(|i| (1.0 + (i + 2..=t).map(|j| 1.0 / j as f64).sum::<f64>()) / t as f64)
            .collect();
        let norm: f64 = drops.iter().sum();
        for i in 0..t {
            let q = p[i].clamp(1e-12, 1.0 - 1e-12);
            let bce = if y[i] { -q.ln() } else { -(1.0 - q).ln() };
            total += drops[i] / norm * bce;
        }
    }
    total / sessions.len() as f64
}
