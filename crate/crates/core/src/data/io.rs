//! Comma-delimited readers and writers for tracks, sessions and predictions.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};

use super::schema::{Feature, FeatureKind, FeatureSchema, SKIP2};
use super::{first_half_len, ObservedTrack, Session, TrackTable, MAX_SESSION_LEN, MIN_SESSION_LEN};
use crate::error::{Error, Result};

/// Whether second-half rows carry the skip_2 label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    /// Second-half rows carry `skip_2`; their other interaction cells are
    /// ignored.
    Labeled,
    /// Second-half rows must leave every interaction cell empty.
    Prediction,
}

struct Ctx<'a> {
    path: &'a Path,
}

impl Ctx<'_> {
    fn err(&self, line: u64, message: impl Into<String>) -> Error {
        Error::Ingestion {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn line(record: &StringRecord) -> u64 {
        record.position().map_or(0, |p| p.line())
    }

    fn parse_value(&self, line: u64, feature: &Feature, cell: &str) -> Result<f64> {
        let cell = cell.trim();
        let value = match feature.kind {
            FeatureKind::Boolean => match cell {
                "0" | "false" | "False" | "FALSE" => Some(0.0),
                "1" | "true" | "True" | "TRUE" => Some(1.0),
                _ => None,
            },
            FeatureKind::Categorical { .. } => cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && v.fract() == 0.0),
            FeatureKind::Numeric => cell.parse::<f64>().ok().filter(|v| v.is_finite()),
        };
        value.ok_or_else(|| {
            self.err(
                line,
                format!(
                    "column `{}`: cannot parse `{cell}` as {:?}",
                    feature.name, feature.kind
                ),
            )
        })
    }
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::None)
        .from_reader(source)
}

fn csv_err(ctx: &Ctx, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    ctx.err(line, e.to_string())
}

/// Maps each expected column name to its index in the header, rejecting
/// unknown and missing columns.
fn column_map(ctx: &Ctx, header: &StringRecord, expected: &[String]) -> Result<Vec<usize>> {
    let mut positions = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        if !expected.iter().any(|e| e == name) {
            return Err(ctx.err(1, format!("unknown column `{name}`")));
        }
        if positions.insert(name.to_string(), i).is_some() {
            return Err(ctx.err(1, format!("duplicate column `{name}`")));
        }
    }
    expected
        .iter()
        .map(|name| {
            positions
                .get(name)
                .copied()
                .ok_or_else(|| ctx.err(1, format!("missing column `{name}`")))
        })
        .collect()
}

pub fn read_tracks<R: Read>(source: R, path: &Path, schema: &FeatureSchema) -> Result<TrackTable> {
    let ctx = Ctx { path };
    let mut rdr = reader(source);
    let header = rdr.headers().map_err(|e| csv_err(&ctx, e))?.clone();
    let cols = column_map(&ctx, &header, &schema.tracks_header())?;
    let mut table = TrackTable::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(&ctx, e))?;
        let line = Ctx::line(&record);
        let id = record[cols[0]].to_string();
        if id.is_empty() {
            return Err(ctx.err(line, "empty track_id"));
        }
        let raw = schema
            .track
            .iter()
            .zip(&cols[1..])
            .map(|(f, &c)| ctx.parse_value(line, f, &record[c]))
            .collect::<Result<Vec<_>>>()?;
        if table.contains(&id) {
            return Err(ctx.err(line, format!("duplicate track_id `{id}`")));
        }
        table.insert(id, raw)?;
    }
    Ok(table)
}

pub fn load_tracks(path: &Path, schema: &FeatureSchema) -> Result<TrackTable> {
    read_tracks(File::open(path)?, path, schema)
}

struct Row {
    line: u64,
    position: usize,
    track_id: String,
    interactions: Vec<Option<f64>>,
    meta: Vec<f64>,
}

pub fn read_sessions<R: Read>(
    source: R,
    path: &Path,
    schema: &FeatureSchema,
    tracks: &TrackTable,
    mode: LoadMode,
) -> Result<Vec<Session>> {
    let ctx = Ctx { path };
    let mut rdr = reader(source);
    let header = rdr.headers().map_err(|e| csv_err(&ctx, e))?.clone();
    let cols = column_map(&ctx, &header, &schema.sessions_header())?;
    let n_inter = schema.interaction.len();
    let inter_cols = &cols[3..3 + n_inter];
    let meta_cols = &cols[3 + n_inter..];

    let mut sessions = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<(String, Vec<Row>)> = None;

    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(&ctx, e))?;
        let line = Ctx::line(&record);
        let session_id = record[cols[0]].to_string();
        if session_id.is_empty() {
            return Err(ctx.err(line, "empty session_id"));
        }
        let position: usize = record[cols[1]]
            .trim()
            .parse()
            .map_err(|_| ctx.err(line, format!("bad position `{}`", &record[cols[1]])))?;
        let track_id = record[cols[2]].to_string();
        if !tracks.contains(&track_id) {
            return Err(ctx.err(line, format!("unknown track_id `{track_id}`")));
        }
        let interactions = schema
            .interaction
            .iter()
            .zip(inter_cols)
            .map(|(f, &c)| {
                let cell = &record[c];
                if cell.trim().is_empty() {
                    Ok(None)
                } else {
                    ctx.parse_value(line, f, cell).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = schema
            .session_meta
            .iter()
            .zip(meta_cols)
            .map(|(f, &c)| ctx.parse_value(line, f, &record[c]))
            .collect::<Result<Vec<_>>>()?;
        let row = Row {
            line,
            position,
            track_id,
            interactions,
            meta,
        };

        match &mut current {
            Some((id, rows)) if *id == session_id => rows.push(row),
            _ => {
                if let Some((id, rows)) = current.take() {
                    sessions.push(assemble(&ctx, schema, mode, id, rows)?);
                }
                if !seen.insert(session_id.clone()) {
                    return Err(ctx.err(
                        line,
                        format!("rows of session `{session_id}` are not contiguous"),
                    ));
                }
                current = Some((session_id, vec![row]));
            }
        }
    }
    if let Some((id, rows)) = current.take() {
        sessions.push(assemble(&ctx, schema, mode, id, rows)?);
    }
    Ok(sessions)
}

fn assemble(
    ctx: &Ctx,
    schema: &FeatureSchema,
    mode: LoadMode,
    session_id: String,
    rows: Vec<Row>,
) -> Result<Session> {
    let n = rows.len();
    let first_line = rows[0].line;
    for (i, row) in rows.iter().enumerate() {
        if row.position != i + 1 {
            return Err(ctx.err(
                row.line,
                format!(
                    "session `{session_id}`: expected position {}, found {}",
                    i + 1,
                    row.position
                ),
            ));
        }
        if row.meta != rows[0].meta {
            return Err(ctx.err(
                row.line,
                format!("session `{session_id}`: session metadata changes within the session"),
            ));
        }
    }
    if !(MIN_SESSION_LEN..=MAX_SESSION_LEN).contains(&n) {
        return Err(ctx.err(
            first_line,
            format!("session `{session_id}` has {n} tracks, expected {MIN_SESSION_LEN}..={MAX_SESSION_LEN}"),
        ));
    }
    let split = first_half_len(n);
    let skip2 = schema.skip2_index();
    let mut first_half = Vec::with_capacity(split);
    let mut second_half = Vec::with_capacity(n - split);
    let mut labels = Vec::with_capacity(n - split);
    let session_meta = rows[0].meta.clone();

    for (i, row) in rows.into_iter().enumerate() {
        if i < split {
            let interactions = row
                .interactions
                .iter()
                .zip(&schema.interaction)
                .map(|(v, f)| {
                    v.ok_or_else(|| {
                        ctx.err(
                            row.line,
                            format!("first-half row is missing interaction `{}`", f.name),
                        )
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            first_half.push(ObservedTrack {
                track_id: row.track_id,
                interactions,
            });
            continue;
        }
        match mode {
            LoadMode::Prediction => {
                if let Some((f, _)) = schema
                    .interaction
                    .iter()
                    .zip(&row.interactions)
                    .find(|(_, v)| v.is_some())
                {
                    return Err(ctx.err(
                        row.line,
                        format!(
                            "second-half row carries interaction column `{}` in prediction mode",
                            f.name
                        ),
                    ));
                }
            }
            LoadMode::Labeled => {
                let label = row.interactions[skip2].ok_or_else(|| {
                    ctx.err(
                        row.line,
                        format!("second-half row is missing the `{SKIP2}` label"),
                    )
                })?;
                labels.push(label != 0.0);
            }
        }
        second_half.push(row.track_id);
    }

    Ok(Session {
        session_id,
        first_half,
        second_half,
        labels: (mode == LoadMode::Labeled).then_some(labels),
        session_meta,
    })
}

pub fn load_sessions(
    path: &Path,
    schema: &FeatureSchema,
    tracks: &TrackTable,
    mode: LoadMode,
) -> Result<Vec<Session>> {
    read_sessions(File::open(path)?, path, schema, tracks, mode)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_tracks<W: Write>(out: W, tracks: &TrackTable, schema: &FeatureSchema) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(schema.tracks_header()).map_err(csv_io)?;
    for (id, raw) in tracks.iter() {
        let mut row = vec![id.to_string()];
        row.extend(raw.iter().map(|v| fmt(*v)));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes sessions; in [`LoadMode::Prediction`] the second half carries no
/// interaction cells at all.
pub fn write_sessions<W: Write>(
    out: W,
    sessions: &[Session],
    schema: &FeatureSchema,
    mode: LoadMode,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(schema.sessions_header()).map_err(csv_io)?;
    let skip2 = schema.skip2_index();
    let n_inter = schema.interaction.len();
    for s in sessions {
        let meta: Vec<String> = s.session_meta.iter().map(|v| fmt(*v)).collect();
        let mut position = 0;
        for obs in &s.first_half {
            position += 1;
            let mut row = vec![
                s.session_id.clone(),
                position.to_string(),
                obs.track_id.clone(),
            ];
            row.extend(obs.interactions.iter().map(|v| fmt(*v)));
            row.extend(meta.iter().cloned());
            w.write_record(&row).map_err(csv_io)?;
        }
        for (i, track) in s.second_half.iter().enumerate() {
            position += 1;
            let mut row = vec![s.session_id.clone(), position.to_string(), track.clone()];
            let mut cells = vec![String::new(); n_inter];
            if mode == LoadMode::Labeled {
                let labels = s.labels.as_ref().ok_or_else(|| {
                    Error::contract(format!("session `{}` has no labels to write", s.session_id))
                })?;
                cells[skip2] = if labels[i] { "1" } else { "0" }.to_string();
            }
            row.extend(cells);
            row.extend(meta.iter().cloned());
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// One line per session: `session_id,` followed by a `0`/`1` per track.
pub fn write_predictions<W: Write>(mut out: W, predictions: &[(String, Vec<bool>)]) -> Result<()> {
    for (id, preds) in predictions {
        let bits: String = preds.iter().map(|&p| if p { '1' } else { '0' }).collect();
        writeln!(out, "{id},{bits}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, Vec<bool>)>> {
    let ctx = Ctx { path };
    let file = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        let line_no = i as u64 + 1;
        if line.is_empty() {
            continue;
        }
        let (id, bits) = line
            .rsplit_once(',')
            .ok_or_else(|| ctx.err(line_no, "expected `session_id,bits`"))?;
        let preds = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(ctx.err(line_no, format!("invalid prediction character `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((id.to_string(), preds));
    }
    Ok(out)
}
