use super::schema::{Feature, FeatureKind, FeatureSchema};
use super::{ObservedTrack, Session, TrackTable};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub const IDENTITY: ColumnStats = ColumnStats {
        mean: 0.0,
        std: 1.0,
    };

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Z-score statistics per raw column. Non-numeric columns carry the
/// identity transform.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub track: Vec<ColumnStats>,
    pub interaction: Vec<ColumnStats>,
    pub session_meta: Vec<ColumnStats>,
}

#[derive(Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn finish(&self) -> ColumnStats {
        if self.n == 0 {
            return ColumnStats::IDENTITY;
        }
        let var = self.m2 / self.n as f64;
        ColumnStats {
            mean: self.mean,
            std: var.sqrt().max(STD_FLOOR),
        }
    }
}

fn finish_group(features: &[Feature], acc: &[Welford]) -> Vec<ColumnStats> {
    features
        .iter()
        .zip(acc)
        .map(|(f, w)| match f.kind {
            FeatureKind::Numeric => w.finish(),
            _ => ColumnStats::IDENTITY,
        })
        .collect()
}

fn push_row(acc: &mut [Welford], features: &[Feature], row: &[f64]) {
    for ((w, f), v) in acc.iter_mut().zip(features).zip(row) {
        if f.kind == FeatureKind::Numeric {
            w.push(*v);
        }
    }
}

/// Fits population mean/std on the training split: track columns over every
/// track occurrence (both halves), interaction columns over first-half rows,
/// session metadata once per session.
pub fn fit_normalization(
    train: &[Session],
    tracks: &TrackTable,
    schema: &FeatureSchema,
) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::contract(
            "cannot fit normalization on an empty split",
        ));
    }
    let mut track_acc = vec![Welford::default(); schema.track.len()];
    let mut inter_acc = vec![Welford::default(); schema.interaction.len()];
    let mut meta_acc = vec![Welford::default(); schema.session_meta.len()];
    for s in train {
        let ids = s
            .first_half
            .iter()
            .map(|o| o.track_id.as_str())
            .chain(s.second_half.iter().map(String::as_str));
        for id in ids {
            let raw = tracks
                .raw(id)
                .ok_or_else(|| Error::contract(format!("unknown track_id `{id}`")))?;
            push_row(&mut track_acc, &schema.track, raw);
        }
        for obs in &s.first_half {
            push_row(&mut inter_acc, &schema.interaction, &obs.interactions);
        }
        push_row(&mut meta_acc, &schema.session_meta, &s.session_meta);
    }
    Ok(NormalizationStats {
        track: finish_group(&schema.track, &track_acc),
        interaction: finish_group(&schema.interaction, &inter_acc),
        session_meta: finish_group(&schema.session_meta, &meta_acc),
    })
}

fn apply_row(stats: &[ColumnStats], row: &[f64]) -> Vec<f64> {
    stats.iter().zip(row).map(|(s, v)| s.apply(*v)).collect()
}

impl NormalizationStats {
    pub fn identity(schema: &FeatureSchema) -> Self {
        NormalizationStats {
            track: vec![ColumnStats::IDENTITY; schema.track.len()],
            interaction: vec![ColumnStats::IDENTITY; schema.interaction.len()],
            session_meta: vec![ColumnStats::IDENTITY; schema.session_meta.len()],
        }
    }

    pub fn matches(&self, schema: &FeatureSchema) -> bool {
        self.track.len() == schema.track.len()
            && self.interaction.len() == schema.interaction.len()
            && self.session_meta.len() == schema.session_meta.len()
    }

    pub fn normalize_track(&self, raw: &[f64]) -> Vec<f64> {
        apply_row(&self.track, raw)
    }

    pub fn normalize_interactions(&self, raw: &[f64]) -> Vec<f64> {
        apply_row(&self.interaction, raw)
    }

    pub fn normalize_meta(&self, raw: &[f64]) -> Vec<f64> {
        apply_row(&self.session_meta, raw)
    }

    /// Returns a copy of the table with numeric track columns standardized.
    pub fn apply_tracks(&self, tracks: &TrackTable) -> TrackTable {
        let mut out = TrackTable::new();
        for (id, raw) in tracks.iter() {
            out.insert(id.to_string(), self.normalize_track(raw))
                .expect("ids are unique in the source table");
        }
        out
    }

    /// Returns copies of the sessions with numeric interaction and metadata
    /// columns standardized.
    pub fn apply_sessions(&self, sessions: &[Session]) -> Vec<Session> {
        sessions
            .iter()
            .map(|s| Session {
                first_half: s
                    .first_half
                    .iter()
                    .map(|o| ObservedTrack {
                        track_id: o.track_id.clone(),
                        interactions: self.normalize_interactions(&o.interactions),
                    })
                    .collect(),
                session_meta: self.normalize_meta(&s.session_meta),
                ..s.clone()
            })
            .collect()
    }
}
