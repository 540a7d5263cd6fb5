use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::normalize::NormalizationStats;
use super::schema::FeatureSchema;
use super::{Session, TrackTable};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A session turned into model-ready feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSession {
    pub session_id: String,
    pub first_tracks: Vec<Vec<f64>>,
    /// Interactions followed by the session metadata, per first-half track.
    pub first_interactions: Vec<Vec<f64>>,
    pub second_tracks: Vec<Vec<f64>>,
    pub labels: Option<Vec<bool>>,
    pub last_first_skip2: bool,
}

impl EncodedSession {
    pub fn horizon(&self) -> usize {
        self.second_tracks.len()
    }
}

/// Normalizes and one-hot encodes sessions against a schema.
pub struct FeatureEncoder<'a> {
    pub schema: &'a FeatureSchema,
    pub stats: &'a NormalizationStats,
    pub tracks: &'a TrackTable,
}

impl FeatureEncoder<'_> {
    fn track(&self, id: &str) -> Result<Vec<f64>> {
        let raw = self
            .tracks
            .raw(id)
            .ok_or_else(|| Error::contract(format!("unknown track_id `{id}`")))?;
        let norm = self.stats.normalize_track(raw);
        let mut out = Vec::with_capacity(self.schema.track_width());
        for (f, v) in self.schema.track.iter().zip(norm) {
            f.encode_into(v, &mut out);
        }
        Ok(out)
    }

    pub fn encode(&self, session: &Session) -> Result<EncodedSession> {
        if !self.stats.matches(self.schema) {
            return Err(Error::Schema(
                "normalization statistics do not match the schema".into(),
            ));
        }
        if session.first_half.is_empty() || session.second_half.is_empty() {
            return Err(Error::contract(format!(
                "session `{}` has an empty half",
                session.session_id
            )));
        }
        let mut meta = Vec::new();
        for (f, v) in self
            .schema
            .session_meta
            .iter()
            .zip(self.stats.normalize_meta(&session.session_meta))
        {
            f.encode_into(v, &mut meta);
        }
        let mut first_tracks = Vec::with_capacity(session.first_half.len());
        let mut first_interactions = Vec::with_capacity(session.first_half.len());
        for obs in &session.first_half {
            first_tracks.push(self.track(&obs.track_id)?);
            let mut row = Vec::with_capacity(self.schema.interaction_width());
            for (f, v) in self
                .schema
                .interaction
                .iter()
                .zip(self.stats.normalize_interactions(&obs.interactions))
            {
                f.encode_into(v, &mut row);
            }
            row.extend_from_slice(&meta);
            first_interactions.push(row);
        }
        let second_tracks = session
            .second_half
            .iter()
            .map(|id| self.track(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedSession {
            session_id: session.session_id.clone(),
            first_tracks,
            first_interactions,
            second_tracks,
            labels: session.labels.clone(),
            last_first_skip2: session.last_observed_skip2(self.schema)?,
        })
    }

    pub fn encode_all(&self, sessions: &[Session]) -> Result<Vec<EncodedSession>> {
        sessions.iter().map(|s| self.encode(s)).collect()
    }
}

/// Sessions padded to common lengths, time-major. Padded cells are zero and
/// masked out.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub session_ids: Vec<String>,
    pub first_tracks: Vec<Tensor>,
    pub first_interactions: Vec<Tensor>,
    pub first_masks: Vec<Vec<bool>>,
    pub second_tracks: Vec<Tensor>,
    pub second_masks: Vec<Vec<bool>>,
    /// Per session, one label per second-half track.
    pub labels: Option<Vec<Vec<bool>>>,
    pub last_first_skip2: Vec<f64>,
    pub first_lengths: Vec<usize>,
    pub second_lengths: Vec<usize>,
}

fn pad_steps(
    rows: &[&[Vec<f64>]],
    steps: usize,
    width: usize,
) -> Result<(Vec<Tensor>, Vec<Vec<bool>>)> {
    let b = rows.len();
    let mut tensors = Vec::with_capacity(steps);
    let mut masks = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut data = vec![0.0; b * width];
        let mut mask = vec![false; b];
        for (r, seq) in rows.iter().enumerate() {
            if let Some(v) = seq.get(t) {
                if v.len() != width {
                    return Err(Error::dimension("batch", &[width], &[v.len()]));
                }
                data[r * width..(r + 1) * width].copy_from_slice(v);
                mask[r] = true;
            }
        }
        tensors.push(Tensor::matrix(b, width, data)?);
        masks.push(mask);
    }
    Ok((tensors, masks))
}

impl Batch {
    pub fn from_sessions(sessions: &[&EncodedSession]) -> Result<Batch> {
        let first = sessions
            .first()
            .ok_or_else(|| Error::contract("batch needs at least one session"))?;
        let track_w = first.first_tracks[0].len();
        let inter_w = first.first_interactions[0].len();
        let max_first = sessions
            .iter()
            .map(|s| s.first_tracks.len())
            .max()
            .unwrap_or(0);
        let max_second = sessions
            .iter()
            .map(|s| s.second_tracks.len())
            .max()
            .unwrap_or(0);

        let ft: Vec<&[Vec<f64>]> = sessions.iter().map(|s| s.first_tracks.as_slice()).collect();
        let fi: Vec<&[Vec<f64>]> = sessions
            .iter()
            .map(|s| s.first_interactions.as_slice())
            .collect();
        let st: Vec<&[Vec<f64>]> = sessions
            .iter()
            .map(|s| s.second_tracks.as_slice())
            .collect();
        let (first_tracks, first_masks) = pad_steps(&ft, max_first, track_w)?;
        let (first_interactions, _) = pad_steps(&fi, max_first, inter_w)?;
        let (second_tracks, second_masks) = pad_steps(&st, max_second, track_w)?;

        let labeled = sessions.iter().filter(|s| s.labels.is_some()).count();
        let labels = if labeled == sessions.len() {
            Some(
                sessions
                    .iter()
                    .map(|s| s.labels.clone().expect("checked"))
                    .collect(),
            )
        } else if labeled == 0 {
            None
        } else {
            return Err(Error::contract(
                "batch mixes labeled and unlabeled sessions",
            ));
        };

        Ok(Batch {
            session_ids: sessions.iter().map(|s| s.session_id.clone()).collect(),
            first_tracks,
            first_interactions,
            first_masks,
            second_tracks,
            second_masks,
            labels,
            last_first_skip2: sessions
                .iter()
                .map(|s| if s.last_first_skip2 { 1.0 } else { 0.0 })
                .collect(),
            first_lengths: sessions.iter().map(|s| s.first_tracks.len()).collect(),
            second_lengths: sessions.iter().map(|s| s.second_tracks.len()).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.session_ids.len()
    }
}

/// Groups sessions into padded batches, shuffling first when `seed` is set.
pub fn make_batches(
    sessions: &[EncodedSession],
    batch_size: usize,
    seed: Option<u64>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    let mut order: Vec<&EncodedSession> = sessions.iter().collect();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size).map(Batch::from_sessions).collect()
}
