use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use skipnet::data::{
    read_sessions, read_tracks, write_sessions, write_tracks, FeatureSchema, LoadMode,
};
use skipnet::metrics::{baseline_predict, mean_average_accuracy};
use skipnet::synthgen::{
    bayes_oracle_predict, calibrate, default_length_probs, generate, report, sample_length,
    GenConfig, GeneratedDataset,
};
use std::path::Path;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn quiet(n: usize, seed: u64) -> GenConfig {
    GenConfig {
        n_sessions: n,
        gamma: 0.0,
        beta: 0.0,
        sigma_u: 0.0,
        seed,
        ..GenConfig::default()
    }
}

fn baseline_maa(data: &GeneratedDataset, schema: &FeatureSchema) -> f64 {
    let pairs: Vec<(Vec<bool>, Vec<bool>)> = data
        .sessions
        .iter()
        .map(|s| {
            (
                s.labels.clone().unwrap(),
                baseline_predict(s, schema).unwrap(),
            )
        })
        .collect();
    mean_average_accuracy(&pairs).unwrap().maa
}

#[test]
fn lengths_within_three_sigma() {
    let cfg = GenConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let n = 100_000;
    let mut counts = [0usize; 11];
    for _ in 0..n {
        counts[sample_length(&cfg, &mut rng) - 10] += 1;
    }
    for (k, (&c, p)) in counts.iter().zip(default_length_probs()).enumerate() {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let freq = c as f64 / n as f64;
        assert!(
            (freq - p).abs() <= 3.0 * sigma,
            "length {}: {freq} vs {p}",
            k + 10
        );
    }
}

#[test]
fn independent_positions_follow_the_logits() {
    let logits: Vec<f64> = (0..20).map(|t| -1.0 + 0.1 * t as f64).collect();
    let cfg = GenConfig {
        base_position_logits: logits.clone(),
        ..quiet(20_000, 3)
    };
    let data = generate(&cfg, &FeatureSchema::default()).unwrap();
    let mut hits = [0usize; 20];
    let mut seen = [0usize; 20];
    for t in &data.truth {
        for (pos, &s) in t.skip_2.iter().enumerate() {
            seen[pos] += 1;
            hits[pos] += s as usize;
        }
    }
    for pos in 0..20 {
        let p = sigmoid(logits[pos]);
        let rate = hits[pos] as f64 / seen[pos] as f64;
        let sigma = (p * (1.0 - p) / seen[pos] as f64).sqrt();
        assert!(
            (rate - p).abs() < 4.0 * sigma,
            "position {}: {rate} vs {p}",
            pos + 1
        );
    }
}

fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn feature_effect_matches_a_logistic_simulation() {
    let beta = 2.0;
    let base = 0.2;
    let cfg = GenConfig {
        beta,
        base_position_logits: vec![base; 20],
        ..quiet(5_000, 8)
    };
    let data = generate(&cfg, &FeatureSchema::default()).unwrap();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for t in &data.truth {
        for (z, s) in t.z.iter().zip(&t.skip_2) {
            xs.push(*z);
            ys.push(if *s { 1.0 } else { 0.0 });
        }
    }
    let empirical = correlation(&xs, &ys);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut ox, mut oy) = (Vec::new(), Vec::new());
    for _ in 0..200_000 {
        let z: f64 = rng.sample(StandardNormal);
        let y = rng.random_bool(sigmoid(base + beta * z));
        ox.push(z);
        oy.push(if y { 1.0 } else { 0.0 });
    }
    let oracle = correlation(&ox, &oy);
    assert!(empirical > 0.0);
    assert!((empirical - oracle).abs() < 0.02, "{empirical} vs {oracle}");
}

fn fast_calibration(mut cfg: GenConfig) -> GenConfig {
    cfg.calibration_sessions = 20_000;
    cfg.calibration_tolerance = 5e-3;
    calibrate(&cfg).unwrap()
}

#[test]
fn persistence_helps_the_baseline() {
    let schema = FeatureSchema::default();
    let maa = |gamma: f64| {
        let cfg = fast_calibration(GenConfig {
            n_sessions: 10_000,
            gamma,
            seed: 21,
            ..GenConfig::default()
        });
        baseline_maa(&generate(&cfg, &schema).unwrap(), &schema)
    };
    let (with, without) = (maa(1.0), maa(0.0));
    assert!(with > without, "{with} <= {without}");
}

#[test]
fn bayes_oracle_beats_the_baseline() {
    let schema = FeatureSchema::default();
    let cfg = fast_calibration(GenConfig {
        n_sessions: 4_000,
        seed: 5,
        ..GenConfig::default()
    });
    let data = generate(&cfg, &schema).unwrap();
    let pairs: Vec<(Vec<bool>, Vec<bool>)> = data
        .sessions
        .iter()
        .zip(&data.truth)
        .map(|(s, t)| (s.labels.clone().unwrap(), bayes_oracle_predict(&cfg, t)))
        .collect();
    let oracle = mean_average_accuracy(&pairs).unwrap().maa;
    assert!(oracle > baseline_maa(&data, &schema), "{oracle}");
}

#[test]
fn deviations_shrink_like_inverse_root_n() {
    let schema = FeatureSchema::default();
    let calibrated = fast_calibration(GenConfig {
        seed: 0,
        ..GenConfig::default()
    });
    let sizes = [1_000usize, 10_000, 100_000];
    let mean_dev: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let seeds = 1..=3u64;
            let total: f64 = seeds
                .clone()
                .map(|seed| {
                    let cfg = GenConfig {
                        n_sessions: n,
                        seed,
                        ..calibrated.clone()
                    };
                    report(&generate(&cfg, &schema).unwrap(), &cfg)
                        .unwrap()
                        .max_position_deviation
                })
                .sum();
            total / seeds.count() as f64
        })
        .collect();
    for w in mean_dev.windows(2) {
        assert!(w[1] < w[0], "{mean_dev:?}");
        // A tenfold sample should shrink the deviation by about sqrt(10).
        let ratio = w[0] / w[1];
        assert!((1.5..7.0).contains(&ratio), "{mean_dev:?}");
    }
}

#[test]
fn dataset_survives_the_file_format() {
    let schema = FeatureSchema::default();
    let cfg = GenConfig {
        n_sessions: 300,
        seed: 4,
        ..GenConfig::default()
    };
    let data = generate(&cfg, &schema).unwrap();
    let mut tracks_csv = Vec::new();
    write_tracks(&mut tracks_csv, &data.tracks, &schema).unwrap();
    let mut sessions_csv = Vec::new();
    write_sessions(
        &mut sessions_csv,
        &data.sessions,
        &schema,
        LoadMode::Labeled,
    )
    .unwrap();
    let path = Path::new("<memory>");
    let tracks = read_tracks(tracks_csv.as_slice(), path, &schema).unwrap();
    let sessions = read_sessions(
        sessions_csv.as_slice(),
        path,
        &schema,
        &tracks,
        LoadMode::Labeled,
    )
    .unwrap();
    assert_eq!(tracks, data.tracks);
    // Labeled files do not carry second-half interactions, and neither do
    // generated sessions.
    assert_eq!(sessions, data.sessions);
}

#[test]
fn generation_is_seeded() {
    let schema = FeatureSchema::default();
    let cfg = GenConfig {
        n_sessions: 50,
        seed: 77,
        ..GenConfig::default()
    };
    let a = generate(&cfg, &schema).unwrap();
    let b = generate(&cfg, &schema).unwrap();
    assert_eq!(a.sessions, b.sessions);
    assert_eq!(a.truth, b.truth);
    assert_eq!(
        report(&a, &cfg).unwrap().to_kv_string(),
        report(&b, &cfg).unwrap().to_kv_string()
    );
    let c = generate(&GenConfig { seed: 78, ..cfg }, &schema).unwrap();
    assert_ne!(a.truth, c.truth);
}
