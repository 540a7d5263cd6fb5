//! Sessions, tracks, and the path from challenge-format files to padded
//! batches.

mod batch;
mod io;
mod normalize;
mod schema;
mod split;

use std::collections::HashMap;

pub use batch::{make_batches, Batch, EncodedSession, FeatureEncoder};
pub use io::{
    load_sessions, load_tracks, read_predictions, read_sessions, read_tracks, write_predictions,
    write_sessions, write_tracks, LoadMode,
};
pub use normalize::{fit_normalization, ColumnStats, NormalizationStats, STD_FLOOR};
pub use schema::{category_index, Feature, FeatureKind, FeatureSchema, SESSION_KEY_COLUMNS, SKIP2};
pub use split::{split_sessions, SplitFractions};

use crate::error::{Error, Result};

pub const MIN_SESSION_LEN: usize = 10;
pub const MAX_SESSION_LEN: usize = 20;

/// Number of observed tracks in a session of `total` tracks.
pub fn first_half_len(total: usize) -> usize {
    total.div_ceil(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservedTrack {
    pub track_id: String,
    /// Raw values in schema interaction-column order.
    pub interactions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub first_half: Vec<ObservedTrack>,
    pub second_half: Vec<String>,
    /// skip_2 of each second-half track; absent for prediction-mode input.
    pub labels: Option<Vec<bool>>,
    /// Raw values in schema session-meta order.
    pub session_meta: Vec<f64>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.first_half.len() + self.second_half.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> usize {
        self.second_half.len()
    }

    pub fn last_observed_skip2(&self, schema: &FeatureSchema) -> Result<bool> {
        let last = self.first_half.last().ok_or_else(|| {
            Error::contract(format!(
                "session `{}` has an empty first half",
                self.session_id
            ))
        })?;
        Ok(last.interactions[schema.skip2_index()] != 0.0)
    }

    /// Checks the length and half-split invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if !(MIN_SESSION_LEN..=MAX_SESSION_LEN).contains(&n) {
            return Err(Error::contract(format!(
                "session `{}` has {n} tracks, expected {MIN_SESSION_LEN}..={MAX_SESSION_LEN}",
                self.session_id
            )));
        }
        if self.first_half.len() != first_half_len(n) {
            return Err(Error::contract(format!(
                "session `{}` observes {} of {n} tracks, expected {}",
                self.session_id,
                self.first_half.len(),
                first_half_len(n)
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.second_half.len() {
                return Err(Error::contract(format!(
                    "session `{}` has {} labels for {} tracks",
                    self.session_id,
                    labels.len(),
                    self.second_half.len()
                )));
            }
        }
        Ok(())
    }
}

/// Track metadata keyed by id, in raw (file) form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackTable {
    ids: Vec<String>,
    raw: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl TrackTable {
    pub fn new() -> Self {
        TrackTable::default()
    }

    pub fn insert(&mut self, id: String, raw: Vec<f64>) -> Result<()> {
        if self.index.contains_key(&id) {
            return Err(Error::contract(format!("duplicate track_id `{id}`")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.raw.push(raw);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn raw(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.raw[i].as_slice())
    }

    /// One-hot expanded feature vector, without normalization.
    pub fn encoded(&self, id: &str, schema: &FeatureSchema) -> Option<Vec<f64>> {
        let raw = self.raw(id)?;
        let mut out = Vec::with_capacity(schema.track_width());
        for (f, v) in schema.track.iter().zip(raw) {
            f.encode_into(*v, &mut out);
        }
        Some(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.raw.iter().map(Vec::as_slice))
    }
}
