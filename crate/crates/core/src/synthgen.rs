//! Synthetic listening sessions drawn from a logistic model with known
//! parameters, calibrated to published skip marginals.
//!
//! For position `t` of a session with user propensity `u ~ N(0, σ_u²)`:
//!
//! ```text
//! P(skip_2(t)) = sigmoid(base[t] + u + β·z_t + γ·skip_2(t−1)),  skip_2(0) = 0
//! ```
//!
//! where `z_t` is the standardized value of one designated track feature.
//! `skip_1 = skip_2 ∧ gate₁`, `skip_3 = skip_2 ∨ gate₃` and
//! `not_skipped = ¬skip_3`. Other interaction columns depend on `skip_2`
//! only.
//!
//! Session `i` draws from two ChaCha8 streams of the run seed: stream `2i`
//! holds every draw the skip chain depends on (length, `u`, `z`, the skip
//! and gate uniforms) and stream `2i + 1` everything else. The chain's draws
//! have a fixed count per session, so recalibrating the offsets replays the
//! same random numbers.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    first_half_len, FeatureKind, FeatureSchema, ObservedTrack, Session, TrackTable,
    MIN_SESSION_LEN, SKIP2,
};
use crate::error::{Error, Result};
use crate::tape::sigmoid;

/// Positions 1..=20.
pub const POSITIONS: usize = 20;

/// Share of sessions with 10, 11, …, 20 tracks, in percent.
pub const LENGTH_PCT: [f64; 11] = [8.8, 7.7, 6.7, 5.9, 5.2, 4.5, 4.0, 3.5, 3.1, 2.8, 47.7];

/// Overall true rates of skip_1, skip_2, skip_3 and not_skipped.
pub const OVERALL_SKIP1: f64 = 0.4152;
pub const OVERALL_SKIP2: f64 = 0.5089;
pub const OVERALL_SKIP3: f64 = 0.6386;
pub const OVERALL_NOT_SKIPPED: f64 = 0.3441;

/// skip_2 true rate by session position, in percent.
pub const POSITION_SKIP2_PCT: [f64; POSITIONS] = [
    37.4, 46.7, 49.4, 51.6, 52.4, 53.2, 53.1, 53.0, 52.1, 50.3, 50.7, 51.3, 51.7, 52.2, 52.5, 53.0,
    53.3, 53.5, 53.6, 53.6,
];

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Length distribution renormalized to sum to one.
pub fn default_length_probs() -> Vec<f64> {
    let total: f64 = LENGTH_PCT.iter().sum();
    LENGTH_PCT.iter().map(|p| p / total).collect()
}

pub fn position_targets() -> Vec<f64> {
    POSITION_SKIP2_PCT.iter().map(|p| p / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_sessions: usize,
    /// Probabilities of lengths 10..=20.
    pub length_probs: Vec<f64>,
    /// Per-position logit offsets, positions 1..=20.
    pub base_position_logits: Vec<f64>,
    /// Weight of the previous track's skip_2.
    pub gamma: f64,
    /// Weight of the designated track feature.
    pub beta: f64,
    /// Standard deviation of the per-session propensity.
    pub sigma_u: f64,
    /// P(skip_1 | skip_2).
    pub skip1_gate: f64,
    /// P(skip_3 | ¬skip_2).
    pub skip3_gate: f64,
    /// Numeric track column whose standardized value drives skips.
    pub designated_feature: String,
    pub seed: u64,
    /// Sessions simulated per calibration sweep.
    pub calibration_sessions: usize,
    /// Largest accepted per-position deviation from the targets.
    pub calibration_tolerance: f64,
    pub calibration_max_iterations: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_sessions: 20_000,
            length_probs: default_length_probs(),
            base_position_logits: position_targets().into_iter().map(logit).collect(),
            gamma: 1.0,
            beta: 1.0,
            sigma_u: 0.5,
            skip1_gate: OVERALL_SKIP1 / OVERALL_SKIP2,
            skip3_gate: (OVERALL_SKIP3 - OVERALL_SKIP2) / (1.0 - OVERALL_SKIP2),
            designated_feature: "acousticness".into(),
            seed: 0,
            calibration_sessions: 100_000,
            calibration_tolerance: 1e-3,
            calibration_max_iterations: 50,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.length_probs.len() != 11 {
            return bad(format!(
                "gen.length_probs needs 11 entries, got {}",
                self.length_probs.len()
            ));
        }
        let sum: f64 = self.length_probs.iter().sum();
        if self.length_probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "gen.length_probs must be non-negative and sum to 1, sum is {sum}"
            ));
        }
        if self.base_position_logits.len() != POSITIONS
            || self.base_position_logits.iter().any(|v| !v.is_finite())
        {
            return bad(format!(
                "gen.base_position_logits needs {POSITIONS} finite entries"
            ));
        }
        if !(self.sigma_u.is_finite() && self.sigma_u >= 0.0) {
            return bad("gen.sigma_u must be finite and non-negative".into());
        }
        if !self.gamma.is_finite() || !self.beta.is_finite() {
            return bad("gen.gamma and gen.beta must be finite".into());
        }
        for (name, g) in [
            ("skip1_gate", self.skip1_gate),
            ("skip3_gate", self.skip3_gate),
        ] {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("gen.{name} must lie in [0, 1], got {g}"));
            }
        }
        if self.calibration_tolerance.is_nan()
            || self.calibration_tolerance <= 0.0
            || self.calibration_max_iterations == 0
        {
            return bad("gen calibration tolerance and iteration cap must be positive".into());
        }
        Ok(())
    }

    fn check_schema(&self, schema: &FeatureSchema) -> Result<usize> {
        schema
            .track
            .iter()
            .position(|f| f.name == self.designated_feature && f.kind == FeatureKind::Numeric)
            .ok_or_else(|| {
                Error::Config(format!(
                    "gen.designated_feature `{}` is not a numeric track column",
                    self.designated_feature
                ))
            })
    }
}

/// Inverse-CDF draw of a session length in 10..=20.
pub fn sample_length<R: Rng>(cfg: &GenConfig, rng: &mut R) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let last = cfg.length_probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (k, p) in cfg.length_probs.iter().enumerate() {
        acc += p;
        if r < acc && *p > 0.0 {
            return MIN_SESSION_LEN + k;
        }
    }
    MIN_SESSION_LEN + last
}

fn streams(seed: u64, index: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut core = ChaCha8Rng::seed_from_u64(seed);
    core.set_stream(2 * index as u64);
    let mut aux = ChaCha8Rng::seed_from_u64(seed);
    aux.set_stream(2 * index as u64 + 1);
    (core, aux)
}

/// Everything the skip chain of one session depends on.
struct CoreDraws {
    len: usize,
    u: f64,
    z: [f64; POSITIONS],
    skip: [f64; POSITIONS],
    gate1: [f64; POSITIONS],
    gate3: [f64; POSITIONS],
}

impl CoreDraws {
    fn draw(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Self {
        let len = sample_length(cfg, rng);
        let n: f64 = StandardNormal.sample(rng);
        let u = cfg.sigma_u * n;
        let mut d = CoreDraws {
            len,
            u,
            z: [0.0; POSITIONS],
            skip: [0.0; POSITIONS],
            gate1: [0.0; POSITIONS],
            gate3: [0.0; POSITIONS],
        };
        for v in &mut d.z {
            *v = StandardNormal.sample(rng);
        }
        for arr in [&mut d.skip, &mut d.gate1, &mut d.gate3] {
            for v in arr.iter_mut() {
                *v = rng.random();
            }
        }
        d
    }

    fn skip2_chain(&self, cfg: &GenConfig) -> Vec<bool> {
        let mut prev = 0.0;
        (0..self.len)
            .map(|t| {
                let p = sigmoid(
                    cfg.base_position_logits[t] + self.u + cfg.beta * self.z[t] + cfg.gamma * prev,
                );
                let s = self.skip[t] < p;
                prev = if s { 1.0 } else { 0.0 };
                s
            })
            .collect()
    }
}

/// Ground truth kept alongside a generated session.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionTruth {
    pub u: f64,
    /// Standardized designated feature per position.
    pub z: Vec<f64>,
    pub skip_1: Vec<bool>,
    pub skip_2: Vec<bool>,
    pub skip_3: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct GeneratedSession {
    pub session: Session,
    /// Raw track rows in schema track order, one per position.
    pub tracks: Vec<(String, Vec<f64>)>,
    pub truth: SessionTruth,
}

/// Location and scale of raw numeric track columns.
fn track_scale(name: &str) -> (f64, f64) {
    match name {
        "duration" => (230.0, 60.0),
        "release_year" => (2010.0, 8.0),
        "us_popularity_estimate" => (95.0, 5.0),
        "acousticness" => (0.3, 0.25),
        "tempo" => (120.0, 25.0),
        "loudness" => (-8.0, 3.5),
        _ => (0.0, 1.0),
    }
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

fn poisson<R: Rng>(rng: &mut R, lambda: f64) -> f64 {
    Poisson::new(lambda).expect("positive rate").sample(rng)
}

/// A category in `0..cardinality − 1`; the last slot stays unused for
/// unknown values.
fn category<R: Rng>(rng: &mut R, cardinality: usize, weights: Option<&[f64]>) -> f64 {
    let valid = cardinality - 1;
    match weights {
        Some(w) if w.len() == valid => {
            let r = rng.random::<f64>() * w.iter().sum::<f64>();
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                acc += wk;
                if r < acc {
                    return k as f64;
                }
            }
            (valid - 1) as f64
        }
        _ => rng.random_range(0..valid) as f64,
    }
}

const REASON_START_IF_SKIP: [f64; 6] = [0.20, 0.45, 0.10, 0.10, 0.10, 0.05];
const REASON_START_IF_PLAYED: [f64; 6] = [0.55, 0.15, 0.10, 0.05, 0.10, 0.05];

fn interaction_value<R: Rng>(kind: FeatureKind, name: &str, flags: [bool; 3], rng: &mut R) -> f64 {
    let [s1, s2, s3] = flags;
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    match (name, kind) {
        ("skip_1", _) => b(s1),
        ("skip_2", _) => b(s2),
        ("skip_3", _) => b(s3),
        ("not_skipped", _) => b(!s3),
        ("seek_fwd", _) => poisson(rng, if s2 { 0.8 } else { 0.1 }),
        ("seek_back", _) => poisson(rng, if s2 { 0.3 } else { 0.1 }),
        ("short_pause", _) => bernoulli(rng, if s2 { 0.2 } else { 0.1 }),
        ("long_pause", _) => bernoulli(rng, if s2 { 0.05 } else { 0.15 }),
        ("hist_user_behavior_reason_start", FeatureKind::Categorical { cardinality }) => {
            let w: &[f64] = if s2 {
                &REASON_START_IF_SKIP
            } else {
                &REASON_START_IF_PLAYED
            };
            category(rng, cardinality, Some(w))
        }
        (_, kind) => generic_value(kind, rng),
    }
}

fn generic_value<R: Rng>(kind: FeatureKind, rng: &mut R) -> f64 {
    match kind {
        FeatureKind::Numeric => StandardNormal.sample(rng),
        FeatureKind::Boolean => bernoulli(rng, 0.5),
        FeatureKind::Categorical { cardinality } => category(rng, cardinality, None),
    }
}

fn meta_value<R: Rng>(kind: FeatureKind, name: &str, rng: &mut R) -> f64 {
    match (name, kind) {
        ("hour_of_day", FeatureKind::Numeric) => rng.random_range(0..24) as f64,
        ("premium", FeatureKind::Boolean) => bernoulli(rng, 0.8),
        _ => generic_value(kind, rng),
    }
}

pub fn session_id(index: usize) -> String {
    format!("s{index:07}")
}

pub fn track_id(index: usize, position: usize) -> String {
    format!("t{index:07}_{position:02}")
}

/// Generates session `index` of the run. Only the second half's skip_2
/// values reach the session (as labels); the rest stays in the truth.
pub fn generate_session(
    cfg: &GenConfig,
    schema: &FeatureSchema,
    index: usize,
) -> Result<GeneratedSession> {
    let designated = cfg.check_schema(schema)?;
    Ok(generate_checked(cfg, schema, designated, index))
}

fn generate_checked(
    cfg: &GenConfig,
    schema: &FeatureSchema,
    designated: usize,
    index: usize,
) -> GeneratedSession {
    let (mut core, mut aux) = streams(cfg.seed, index);
    let d = CoreDraws::draw(cfg, &mut core);
    let skip_2 = d.skip2_chain(cfg);
    let skip_1: Vec<bool> = skip_2
        .iter()
        .zip(&d.gate1)
        .map(|(&s, &g)| s && g < cfg.skip1_gate)
        .collect();
    let skip_3: Vec<bool> = skip_2
        .iter()
        .zip(&d.gate3)
        .map(|(&s, &g)| s || g < cfg.skip3_gate)
        .collect();

    let meta: Vec<f64> = schema
        .session_meta
        .iter()
        .map(|f| meta_value(f.kind, &f.name, &mut aux))
        .collect();
    let mut tracks = Vec::with_capacity(d.len);
    for t in 0..d.len {
        let raw: Vec<f64> = schema
            .track
            .iter()
            .enumerate()
            .map(|(k, f)| match f.kind {
                FeatureKind::Numeric => {
                    let (loc, scale) = track_scale(&f.name);
                    let z = if k == designated {
                        d.z[t]
                    } else {
                        StandardNormal.sample(&mut aux)
                    };
                    loc + scale * z
                }
                kind => generic_value(kind, &mut aux),
            })
            .collect();
        tracks.push((track_id(index, t + 1), raw));
    }

    let n_first = first_half_len(d.len);
    let first_half = (0..n_first)
        .map(|t| ObservedTrack {
            track_id: tracks[t].0.clone(),
            interactions: schema
                .interaction
                .iter()
                .map(|f| {
                    interaction_value(f.kind, &f.name, [skip_1[t], skip_2[t], skip_3[t]], &mut aux)
                })
                .collect(),
        })
        .collect();
    let session = Session {
        session_id: session_id(index),
        first_half,
        second_half: tracks[n_first..].iter().map(|(id, _)| id.clone()).collect(),
        labels: Some(skip_2[n_first..].to_vec()),
        session_meta: meta,
    };
    GeneratedSession {
        session,
        tracks,
        truth: SessionTruth {
            u: d.u,
            z: d.z[..d.len].to_vec(),
            skip_1,
            skip_2,
            skip_3,
        },
    }
}

#[derive(Clone, Debug, Default)]
pub struct GeneratedDataset {
    pub sessions: Vec<Session>,
    pub tracks: TrackTable,
    pub truth: Vec<SessionTruth>,
}

/// Generates `cfg.n_sessions` sessions in parallel; the output does not
/// depend on the number of threads.
pub fn generate(cfg: &GenConfig, schema: &FeatureSchema) -> Result<GeneratedDataset> {
    cfg.validate()?;
    if schema.interaction.iter().all(|f| f.name != SKIP2) {
        return Err(Error::Schema("schema has no skip_2 column".into()));
    }
    let designated = cfg.check_schema(schema)?;
    let parts: Vec<GeneratedSession> = (0..cfg.n_sessions)
        .into_par_iter()
        .map(|i| generate_checked(cfg, schema, designated, i))
        .collect();
    let mut out = GeneratedDataset::default();
    for g in parts {
        for (id, raw) in g.tracks {
            out.tracks.insert(id, raw)?;
        }
        out.sessions.push(g.session);
        out.truth.push(g.truth);
    }
    Ok(out)
}

fn position_rates(chains: &[Vec<bool>]) -> Vec<Option<f64>> {
    let mut hits = [0usize; POSITIONS];
    let mut counts = [0usize; POSITIONS];
    for c in chains {
        for (t, &s) in c.iter().enumerate() {
            counts[t] += 1;
            hits[t] += usize::from(s);
        }
    }
    hits.iter()
        .zip(&counts)
        .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
        .collect()
}

fn overall_rate(chains: &[Vec<bool>]) -> f64 {
    let (hits, total) = chains.iter().fold((0usize, 0usize), |(h, n), c| {
        (h + c.iter().filter(|&&s| s).count(), n + c.len())
    });
    hits as f64 / total.max(1) as f64
}

fn gates_for(r2: f64) -> (f64, f64) {
    let g1 = (OVERALL_SKIP1 / r2).clamp(0.0, 1.0);
    let g3 = ((OVERALL_SKIP3 - r2) / (1.0 - r2)).clamp(0.0, 1.0);
    (g1, g3)
}

/// Expected overall skip_2 rate when every position is independent with
/// rate `rates[t]`.
fn expected_overall(length_probs: &[f64], rates: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, p) in length_probs.iter().enumerate() {
        let len = MIN_SESSION_LEN + k;
        num += p * rates[..len].iter().sum::<f64>();
        den += p * len as f64;
    }
    num / den
}

/// Sets the per-position offsets so that skip_2 rates match the published
/// position profile, then sets the skip_1/skip_3 gates from the resulting
/// overall skip_2 rate. Without noise terms (`σ_u = β = γ = 0`) the offsets
/// are the logits of the targets. Otherwise the offsets are moved by
/// `logit(target) − logit(empirical)` over `calibration_sessions` sessions
/// of the configured seed until every position is within tolerance.
pub fn calibrate(cfg: &GenConfig) -> Result<GenConfig> {
    cfg.validate()?;
    let targets = position_targets();
    let mut out = cfg.clone();
    if cfg.sigma_u == 0.0 && cfg.beta == 0.0 && cfg.gamma == 0.0 {
        out.base_position_logits = targets.iter().map(|&p| logit(p)).collect();
        (out.skip1_gate, out.skip3_gate) = gates_for(expected_overall(&cfg.length_probs, &targets));
        return Ok(out);
    }
    let n = cfg.calibration_sessions.max(1);
    let draws: Vec<CoreDraws> = (0..n)
        .into_par_iter()
        .map(|i| CoreDraws::draw(cfg, &mut streams(cfg.seed, i).0))
        .collect();
    let mut residuals = vec![f64::INFINITY; POSITIONS];
    for _ in 0..cfg.calibration_max_iterations {
        let chains: Vec<Vec<bool>> = draws.par_iter().map(|d| d.skip2_chain(&out)).collect();
        let rates = position_rates(&chains);
        for t in 0..POSITIONS {
            residuals[t] = rates[t].map_or(0.0, |r| r - targets[t]);
        }
        if residuals
            .iter()
            .all(|r| r.abs() < cfg.calibration_tolerance)
        {
            (out.skip1_gate, out.skip3_gate) = gates_for(overall_rate(&chains));
            return Ok(out);
        }
        for t in 0..POSITIONS {
            if let Some(r) = rates[t] {
                let r = r.clamp(1e-4, 1.0 - 1e-4);
                out.base_position_logits[t] += logit(targets[t]) - logit(r);
            }
        }
    }
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Err(Error::Calibration {
        iterations: cfg.calibration_max_iterations,
        max_residual,
        residuals,
    })
}

/// Empirical marginals of a generated dataset and their deviations from the
/// published targets.
#[derive(Clone, Debug, PartialEq)]
pub struct GenReport {
    pub n_sessions: usize,
    /// Lengths 10..=20.
    pub length_distribution: Vec<f64>,
    pub skip_1_rate: f64,
    pub skip_2_rate: f64,
    pub skip_3_rate: f64,
    pub not_skipped_rate: f64,
    /// Positions 1..=20, `None` where no session is that long.
    pub position_skip_2_rate: Vec<Option<f64>>,
    pub max_length_deviation: f64,
    pub max_position_deviation: f64,
    pub skip_2_deviation: f64,
}

/// Marginals of `dataset` against the length profile of `cfg` and the
/// published skip rates.
pub fn report(dataset: &GeneratedDataset, cfg: &GenConfig) -> Result<GenReport> {
    let n = dataset.truth.len();
    if n == 0 {
        return Err(Error::contract("cannot report on an empty dataset"));
    }
    let mut lengths = [0usize; 11];
    for t in &dataset.truth {
        lengths[t.skip_2.len() - MIN_SESSION_LEN] += 1;
    }
    let length_distribution: Vec<f64> = lengths.iter().map(|&c| c as f64 / n as f64).collect();
    let chains = |f: fn(&SessionTruth) -> &Vec<bool>| {
        dataset.truth.iter().map(f).cloned().collect::<Vec<_>>()
    };
    let skip2 = chains(|t| &t.skip_2);
    let skip_3_rate = overall_rate(&chains(|t| &t.skip_3));
    let position_skip_2_rate = position_rates(&skip2);
    let targets = position_targets();
    let max_position_deviation = position_skip_2_rate
        .iter()
        .zip(&targets)
        .filter_map(|(r, t)| r.map(|r| (r - t).abs()))
        .fold(0.0, f64::max);
    let max_length_deviation = length_distribution
        .iter()
        .zip(&cfg.length_probs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let skip_2_rate = overall_rate(&skip2);
    Ok(GenReport {
        n_sessions: n,
        length_distribution,
        skip_1_rate: overall_rate(&chains(|t| &t.skip_1)),
        skip_2_rate,
        skip_3_rate,
        not_skipped_rate: 1.0 - skip_3_rate,
        position_skip_2_rate,
        max_length_deviation,
        max_position_deviation,
        skip_2_deviation: (skip_2_rate - OVERALL_SKIP2).abs(),
    })
}

fn join(values: impl Iterator<Item = String>) -> String {
    values.collect::<Vec<_>>().join(",")
}

impl GenReport {
    /// Flat `key=value` text, floats to six decimals.
    pub fn to_kv_string(&self) -> String {
        let f = |v: &f64| format!("{v:.6}");
        let mut s = String::new();
        writeln!(s, "n_sessions={}", self.n_sessions).unwrap();
        writeln!(
            s,
            "length_distribution={}",
            join(self.length_distribution.iter().map(f))
        )
        .unwrap();
        writeln!(s, "skip_1_rate={:.6}", self.skip_1_rate).unwrap();
        writeln!(s, "skip_2_rate={:.6}", self.skip_2_rate).unwrap();
        writeln!(s, "skip_3_rate={:.6}", self.skip_3_rate).unwrap();
        writeln!(s, "not_skipped_rate={:.6}", self.not_skipped_rate).unwrap();
        let pos = self
            .position_skip_2_rate
            .iter()
            .map(|r| r.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}")));
        writeln!(s, "position_skip_2_rate={}", join(pos)).unwrap();
        writeln!(s, "max_length_deviation={:.6}", self.max_length_deviation).unwrap();
        writeln!(
            s,
            "max_position_deviation={:.6}",
            self.max_position_deviation
        )
        .unwrap();
        writeln!(s, "skip_2_deviation={:.6}", self.skip_2_deviation).unwrap();
        s
    }

    /// Report text for a run that produced no sessions.
    pub fn empty_kv_string() -> String {
        "n_sessions=0\nnote=empty dataset\n".to_string()
    }
}

/// Number of grid points for the propensity posterior.
const U_GRID: usize = 401;

/// Posterior skip_2 probability of each second-half track given the true
/// generative parameters, the designated-feature values and the observed
/// first-half skip_2 sequence.
pub fn bayes_oracle_probs(cfg: &GenConfig, truth: &SessionTruth) -> Vec<f64> {
    let len = truth.skip_2.len();
    let n_first = first_half_len(len);
    let logit_at = |t: usize, u: f64, prev: f64| {
        cfg.base_position_logits[t] + u + cfg.beta * truth.z[t] + cfg.gamma * prev
    };

    let grid: Vec<(f64, f64)> = if cfg.sigma_u == 0.0 {
        vec![(0.0, 1.0)]
    } else {
        let half = 6.0 * cfg.sigma_u;
        (0..U_GRID)
            .map(|k| {
                let u = -half + 2.0 * half * k as f64 / (U_GRID - 1) as f64;
                (u, (-0.5 * (u / cfg.sigma_u).powi(2)).exp())
            })
            .collect()
    };
    let mut log_post: Vec<f64> = grid
        .iter()
        .map(|&(u, prior)| {
            let mut prev = 0.0;
            let mut lp = prior.ln();
            for t in 0..n_first {
                let p = sigmoid(logit_at(t, u, prev));
                let s = truth.skip_2[t];
                lp += if s { p.ln() } else { (1.0 - p).ln() };
                prev = if s { 1.0 } else { 0.0 };
            }
            lp
        })
        .collect();
    let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for v in &mut log_post {
        *v = (*v - max).exp();
    }
    let z: f64 = log_post.iter().sum();

    let last = if truth.skip_2[n_first - 1] { 1.0 } else { 0.0 };
    let mut out = vec![0.0; len - n_first];
    for (&(u, _), w) in grid.iter().zip(&log_post) {
        let mut q = last;
        for t in n_first..len {
            q = q * sigmoid(logit_at(t, u, 1.0)) + (1.0 - q) * sigmoid(logit_at(t, u, 0.0));
            out[t - n_first] += w / z * q;
        }
    }
    out
}

pub fn bayes_oracle_predict(cfg: &GenConfig, truth: &SessionTruth) -> Vec<bool> {
    bayes_oracle_probs(cfg, truth)
        .into_iter()
        .map(|p| p >= 0.5)
        .collect()
}
