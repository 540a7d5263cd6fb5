use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How a raw column becomes model input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// Real-valued, z-scored with training statistics.
    Numeric,
    /// 0/1 flag, passed through.
    Boolean,
    /// Integer category, one-hot over `cardinality` slots. The last slot is
    /// the catch-all for values outside `0..cardinality`.
    Categorical { cardinality: usize },
}

impl FeatureKind {
    pub fn width(self) -> usize {
        match self {
            FeatureKind::Categorical { cardinality } => cardinality,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

impl Feature {
    pub fn numeric(name: &str) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn boolean(name: &str) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Boolean,
        }
    }

    pub fn categorical(name: &str, cardinality: usize) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Categorical { cardinality },
        }
    }

    /// Appends the encoded form of `raw` to `out`.
    pub fn encode_into(&self, raw: f64, out: &mut Vec<f64>) {
        match self.kind {
            FeatureKind::Numeric | FeatureKind::Boolean => out.push(raw),
            FeatureKind::Categorical { cardinality } => {
                let start = out.len();
                out.resize(start + cardinality, 0.0);
                out[start + category_index(raw, cardinality)] = 1.0;
            }
        }
    }
}

/// Slot for a raw categorical value; anything unseen lands in the last slot.
pub fn category_index(raw: f64, cardinality: usize) -> usize {
    if raw.fract() == 0.0 && raw >= 0.0 && (raw as usize) < cardinality {
        raw as usize
    } else {
        cardinality - 1
    }
}

/// Column layout for tracks, per-track interactions and session metadata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    pub track: Vec<Feature>,
    pub interaction: Vec<Feature>,
    pub session_meta: Vec<Feature>,
}

/// Name of the prediction target column.
pub const SKIP2: &str = "skip_2";

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema {
            track: vec![
                Feature::numeric("duration"),
                Feature::numeric("release_year"),
                Feature::numeric("us_popularity_estimate"),
                Feature::numeric("acousticness"),
                Feature::numeric("tempo"),
                Feature::numeric("loudness"),
                Feature::categorical("mode", 3),
            ],
            interaction: vec![
                Feature::boolean("skip_1"),
                Feature::boolean(SKIP2),
                Feature::boolean("skip_3"),
                Feature::boolean("not_skipped"),
                Feature::numeric("seek_fwd"),
                Feature::numeric("seek_back"),
                Feature::boolean("short_pause"),
                Feature::boolean("long_pause"),
                Feature::categorical("hist_user_behavior_reason_start", 7),
            ],
            session_meta: vec![
                Feature::numeric("hour_of_day"),
                Feature::categorical("day_of_week", 8),
                Feature::boolean("premium"),
                Feature::categorical("context_type", 7),
            ],
        }
    }
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawFeature {
    name: String,
    kind: String,
    #[serde(default)]
    cardinality: Option<usize>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    track: Vec<RawFeature>,
    interaction: Vec<RawFeature>,
    session_meta: Vec<RawFeature>,
}

fn parse_group(raw: Vec<RawFeature>) -> Result<Vec<Feature>> {
    raw.into_iter()
        .map(|f| {
            let kind = match (f.kind.as_str(), f.cardinality) {
                ("numeric", None) => FeatureKind::Numeric,
                ("boolean", None) => FeatureKind::Boolean,
                ("categorical", Some(cardinality)) => FeatureKind::Categorical { cardinality },
                (other, card) => {
                    return Err(Error::Schema(format!(
                        "feature `{}`: unsupported kind `{other}` with cardinality {card:?}",
                        f.name
                    )))
                }
            };
            Ok(Feature { name: f.name, kind })
        })
        .collect()
}

fn raw_group(group: &[Feature]) -> Vec<RawFeature> {
    group
        .iter()
        .map(|f| RawFeature {
            name: f.name.clone(),
            kind: match f.kind {
                FeatureKind::Numeric => "numeric",
                FeatureKind::Boolean => "boolean",
                FeatureKind::Categorical { .. } => "categorical",
            }
            .into(),
            cardinality: match f.kind {
                FeatureKind::Categorical { cardinality } => Some(cardinality),
                _ => None,
            },
        })
        .collect()
}

/// Columns of the sessions file that are not schema features.
pub const SESSION_KEY_COLUMNS: [&str; 3] = ["session_id", "position", "track_id"];

impl FeatureSchema {
    pub fn new(
        track: Vec<Feature>,
        interaction: Vec<Feature>,
        session_meta: Vec<Feature>,
    ) -> Result<Self> {
        let schema = FeatureSchema {
            track,
            interaction,
            session_meta,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<&str> = SESSION_KEY_COLUMNS.into_iter().collect();
        for f in self
            .track
            .iter()
            .chain(&self.interaction)
            .chain(&self.session_meta)
        {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", f.name)));
            }
            if let FeatureKind::Categorical { cardinality } = f.kind {
                if cardinality < 2 {
                    return Err(Error::Schema(format!(
                        "categorical `{}` needs cardinality >= 2, got {cardinality}",
                        f.name
                    )));
                }
            }
        }
        match self.interaction.iter().find(|f| f.name == SKIP2) {
            Some(f) if f.kind == FeatureKind::Boolean => {}
            Some(_) => return Err(Error::Schema(format!("`{SKIP2}` must be boolean"))),
            None => {
                return Err(Error::Schema(format!(
                    "interaction columns must include `{SKIP2}`"
                )))
            }
        }
        if self.track.is_empty() {
            return Err(Error::Schema(
                "schema needs at least one track column".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawSchema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        FeatureSchema::new(
            parse_group(raw.track)?,
            parse_group(raw.interaction)?,
            parse_group(raw.session_meta)?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        FeatureSchema::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawSchema {
            track: raw_group(&self.track),
            interaction: raw_group(&self.interaction),
            session_meta: raw_group(&self.session_meta),
        };
        toml::to_string(&raw).expect("schema serializes")
    }

    pub fn skip2_index(&self) -> usize {
        self.interaction
            .iter()
            .position(|f| f.name == SKIP2)
            .expect("validated schema has skip_2")
    }

    pub fn track_width(&self) -> usize {
        self.track.iter().map(|f| f.kind.width()).sum()
    }

    /// Width of one first-half interaction step: interactions followed by
    /// the broadcast session metadata.
    pub fn interaction_width(&self) -> usize {
        self.interaction
            .iter()
            .chain(&self.session_meta)
            .map(|f| f.kind.width())
            .sum()
    }

    /// Stable 64-bit digest of every group, name, kind and cardinality.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        for (tag, group) in [
            ("track", &self.track),
            ("interaction", &self.interaction),
            ("meta", &self.session_meta),
        ] {
            hasher.update(tag.as_bytes());
            hasher.update([0u8]);
            for f in group {
                hasher.update(f.name.as_bytes());
                hasher.update([0u8]);
                let (code, card) = match f.kind {
                    FeatureKind::Numeric => (0u8, 0u64),
                    FeatureKind::Boolean => (1, 0),
                    FeatureKind::Categorical { cardinality } => (2, cardinality as u64),
                };
                hasher.update([code]);
                hasher.update(card.to_le_bytes());
            }
            hasher.update([0xffu8]);
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn sessions_header(&self) -> Vec<String> {
        SESSION_KEY_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(self.interaction.iter().map(|f| f.name.clone()))
            .chain(self.session_meta.iter().map(|f| f.name.clone()))
            .collect()
    }

    pub fn tracks_header(&self) -> Vec<String> {
        std::iter::once("track_id".to_string())
            .chain(self.track.iter().map(|f| f.name.clone()))
            .collect()
    }
}
