mod common;

use common::{random_session, random_sessions, reference_loss, reference_probs, small_config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skipnet::data::{Batch, EncodedSession};
use skipnet::model::{batch_loss, forward, Feedback, ModelParams};
use skipnet::tape::Tape;

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

fn batch_probs(p: &ModelParams, sessions: &[EncodedSession]) -> Vec<Vec<f64>> {
    let refs: Vec<&EncodedSession> = sessions.iter().collect();
    p.predict_probs(&Batch::from_sessions(&refs).unwrap())
        .unwrap()
}

#[test]
fn batched_forward_matches_loop_reference() {
    for feedback in [Feedback::Continuous, Feedback::Hard] {
        for seed in 0..3 {
            let cfg = small_config(seed, feedback);
            let p = ModelParams::init(&cfg).unwrap();
            let sessions = random_sessions(100 + seed, &cfg, 10);
            let expect: Vec<Vec<f64>> = sessions.iter().map(|s| reference_probs(&p, s)).collect();
            let got = batch_probs(&p, &sessions);
            assert!(max_diff(&got, &expect) <= 1e-12, "{feedback:?} seed {seed}");
        }
    }
}

#[test]
fn batch_loss_matches_reference() {
    let cfg = small_config(4, Feedback::Continuous);
    let p = ModelParams::init(&cfg).unwrap();
    let sessions = random_sessions(7, &cfg, 6);
    let refs: Vec<&EncodedSession> = sessions.iter().collect();
    let batch = Batch::from_sessions(&refs).unwrap();
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let out = forward(&mut tape, &bound, &batch).unwrap();
    let loss = batch_loss(&mut tape, &out, &batch, sessions.len() as f64).unwrap();
    let probs: Vec<Vec<f64>> = sessions.iter().map(|s| reference_probs(&p, s)).collect();
    assert!((tape.value(loss).data()[0] - reference_loss(&probs, &sessions)).abs() < 1e-12);
}

#[test]
fn padding_does_not_change_a_session() {
    let cfg = small_config(1, Feedback::Continuous);
    let p = ModelParams::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let short = random_session(&mut rng, &cfg, "short", 5, 5);
    let long = random_session(&mut rng, &cfg, "long", 10, 10);
    let alone = batch_probs(&p, std::slice::from_ref(&short));
    let padded = batch_probs(&p, &[short.clone(), long.clone()]);
    assert_eq!(padded[0].len(), 5);
    assert!(max_diff(&alone, &padded[..1]) <= 1e-12);
    let padded_first = batch_probs(&p, &[long, short]);
    assert!(max_diff(&alone, &padded_first[1..]) <= 1e-12);
}

#[test]
fn batch_composition_does_not_matter() {
    let cfg = small_config(2, Feedback::Hard);
    let p = ModelParams::init(&cfg).unwrap();
    let sessions = random_sessions(11, &cfg, 12);
    let singles: Vec<Vec<f64>> = sessions
        .iter()
        .flat_map(|s| batch_probs(&p, std::slice::from_ref(s)))
        .collect();
    let whole = batch_probs(&p, &sessions);
    assert!(max_diff(&singles, &whole) <= 1e-12);
    let mut shuffled: Vec<usize> = (0..sessions.len()).rev().collect();
    shuffled.rotate_left(5);
    let reordered: Vec<EncodedSession> = shuffled.iter().map(|&i| sessions[i].clone()).collect();
    let out = batch_probs(&p, &reordered);
    for (k, &i) in shuffled.iter().enumerate() {
        assert!(max_diff(&out[k..k + 1], &whole[i..i + 1]) <= 1e-12);
    }
}

#[test]
fn labels_never_reach_the_predictions() {
    let cfg = small_config(3, Feedback::Continuous);
    let p = ModelParams::init(&cfg).unwrap();
    let sessions = random_sessions(5, &cfg, 4);
    let flipped: Vec<EncodedSession> = sessions
        .iter()
        .map(|s| EncodedSession {
            labels: s.labels.as_ref().map(|l| l.iter().map(|b| !b).collect()),
            ..s.clone()
        })
        .collect();
    assert_eq!(batch_probs(&p, &sessions), batch_probs(&p, &flipped));
}

#[test]
fn first_prediction_sees_the_last_observed_skip() {
    let cfg = small_config(6, Feedback::Continuous);
    let p = ModelParams::init(&cfg).unwrap();
    let mut s = random_sessions(9, &cfg, 1).remove(0);
    s.last_first_skip2 = false;
    let off = batch_probs(&p, std::slice::from_ref(&s));
    s.last_first_skip2 = true;
    let on = batch_probs(&p, std::slice::from_ref(&s));
    assert_ne!(off[0][0], on[0][0]);
}

#[test]
fn shared_layer_gradient_is_the_sum_of_both_paths() {
    let cfg = small_config(8, Feedback::Continuous);
    let p = ModelParams::init(&cfg).unwrap();
    let sessions = random_sessions(12, &cfg, 3);
    let refs: Vec<&EncodedSession> = sessions.iter().collect();
    let batch = Batch::from_sessions(&refs).unwrap();

    let grads = |split: bool| {
        let mut tape = Tape::new();
        let bound = if split {
            p.bind_split_shared(&mut tape)
        } else {
            p.bind(&mut tape)
        };
        let out = forward(&mut tape, &bound, &batch).unwrap();
        let loss = batch_loss(&mut tape, &out, &batch, 3.0).unwrap();
        tape.backward(loss).unwrap();
        let get = |v| tape.grad_or_zeros(v);
        (
            get(bound.enc_shared_fc.weight),
            get(bound.dec_shared_fc.weight),
            get(bound.enc_shared_fc.bias),
            get(bound.dec_shared_fc.bias),
        )
    };
    let (shared_w, _, shared_b, _) = grads(false);
    let (enc_w, dec_w, enc_b, dec_b) = grads(true);
    for ((s, e), d) in shared_w.data().iter().zip(enc_w.data()).zip(dec_w.data()) {
        assert!((s - (e + d)).abs() < 1e-12);
    }
    for ((s, e), d) in shared_b.data().iter().zip(enc_b.data()).zip(dec_b.data()) {
        assert!((s - (e + d)).abs() < 1e-12);
    }
    // Both paths contribute.
    assert!(enc_w.data().iter().any(|v| *v != 0.0));
    assert!(dec_w.data().iter().any(|v| *v != 0.0));
}
