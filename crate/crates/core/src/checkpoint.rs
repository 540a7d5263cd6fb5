//! Binary checkpoints: model config, normalization statistics, training
//! state and named tensors, closed by a CRC-32.
//!
//! Layout (little endian): magic, schema fingerprint, config, stats, epoch,
//! history, Adam step, tensor count, then per tensor its name, rank, dims
//! and values, and finally the checksum of everything before it.

use std::path::Path;

use crate::data::{ColumnStats, NormalizationStats};
use crate::error::{Error, Result};
use crate::model::{Feedback, ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::train::{AdamState, EpochRecord, TrainingState};

const MAGIC: &[u8; 8] = b"SKIPNET1";

/// A training state together with what is needed to featurize new data
/// for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub schema_fingerprint: u64,
    pub stats: NormalizationStats,
    pub state: TrainingState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn stats(&mut self, s: &[ColumnStats]) {
        self.len(s.len());
        for c in s {
            self.f64(c.mean);
            self.f64(c.std);
        }
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.len(name.len());
        self.0.extend_from_slice(name.as_bytes());
        self.u8(t.rank() as u8);
        for &d in t.shape() {
            self.len(d);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    /// A count, refused when it could not possibly fit in what remains.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(unit.max(1) as u64) > left {
            return Err(Error::Checkpoint(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }
    fn stats(&mut self) -> Result<Vec<ColumnStats>> {
        let n = self.len(16)?;
        (0..n)
            .map(|_| {
                Ok(ColumnStats {
                    mean: self.f64()?,
                    std: self.f64()?,
                })
            })
            .collect()
    }
    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let n = self.len(1)?;
        let name = String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = self.u8()?;
        if rank > 2 {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has rank {rank}"
            )));
        }
        let shape = (0..rank).map(|_| self.len(0)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count
            .filter(|&c| c.saturating_mul(8) <= self.buf.len() - self.pos)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` overruns the file")))?;
        let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((name, t))
    }
}

fn config_fields(c: &ModelConfig) -> [usize; 8] {
    [
        c.track_feat_dim,
        c.interaction_feat_dim,
        c.track_fc_dim,
        c.interaction_fc_dim,
        c.sessrep_hidden,
        c.enc_fc_dim,
        c.enc_hidden,
        c.dec_final_hidden,
    ]
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u64(self.schema_fingerprint);
        let cfg = &self.state.params.config;
        for d in config_fields(cfg) {
            w.len(d);
        }
        w.u64(cfg.seed);
        w.u8(cfg.feedback.code());
        w.stats(&self.stats.track);
        w.stats(&self.stats.interaction);
        w.stats(&self.stats.session_meta);
        w.len(self.state.epoch);
        w.len(self.state.history.len());
        for r in &self.state.history {
            w.len(r.epoch);
            w.f64(r.train_loss);
            w.f64(r.val_loss);
            w.f64(r.val_maa);
            w.f64(r.val_first_acc);
        }
        w.u64(self.state.adam.step);
        let names = ModelParams::names();
        w.len(3 * names.len());
        let groups: [(&str, Vec<&Tensor>); 3] = [
            ("param.", self.state.params.tensors()),
            ("adam.m.", self.state.adam.m.iter().collect()),
            ("adam.v.", self.state.adam.v.iter().collect()),
        ];
        for (prefix, tensors) in &groups {
            for (name, t) in names.iter().zip(tensors) {
                w.tensor(&format!("{prefix}{name}"), t);
            }
        }
        let crc = crc32fast::hash(&w.0);
        w.0.extend_from_slice(&crc.to_le_bytes());
        w.0
    }

    /// Parses and verifies a checkpoint. With `expected_fingerprint` set,
    /// a checkpoint built for another feature schema is rejected.
    pub fn from_bytes(bytes: &[u8], expected_fingerprint: Option<u64>) -> Result<Checkpoint> {
        if bytes.len() < MAGIC.len() + 4 {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint(
                "checksum mismatch (corrupted or truncated file)".into(),
            ));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let fingerprint = r.u64()?;
        if let Some(expected) = expected_fingerprint {
            if expected != fingerprint {
                return Err(Error::Checkpoint(format!(
                    "feature schema fingerprint {fingerprint:016x} does not match {expected:016x}"
                )));
            }
        }
        let mut dims = [0usize; 8];
        for d in dims.iter_mut() {
            *d = r.len(0)?;
        }
        let seed = r.u64()?;
        let feedback_code = r.u8()?;
        let feedback = Feedback::from_code(feedback_code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown feedback mode {feedback_code}")))?;
        let config = ModelConfig {
            track_feat_dim: dims[0],
            interaction_feat_dim: dims[1],
            track_fc_dim: dims[2],
            interaction_fc_dim: dims[3],
            sessrep_hidden: dims[4],
            enc_fc_dim: dims[5],
            enc_hidden: dims[6],
            dec_final_hidden: dims[7],
            seed,
            feedback,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let stats = NormalizationStats {
            track: r.stats()?,
            interaction: r.stats()?,
            session_meta: r.stats()?,
        };
        let epoch = r.len(0)?;
        let n_hist = r.len(40)?;
        let history = (0..n_hist)
            .map(|_| {
                Ok(EpochRecord {
                    epoch: r.len(0)?,
                    train_loss: r.f64()?,
                    val_loss: r.f64()?,
                    val_maa: r.f64()?,
                    val_first_acc: r.f64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let step = r.u64()?;

        let names = ModelParams::names();
        let count = r.len(1)?;
        if count != 3 * names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {count}",
                3 * names.len()
            )));
        }
        let mut groups: [Vec<Tensor>; 3] = Default::default();
        for (g, prefix) in ["param.", "adam.m.", "adam.v."].iter().enumerate() {
            for name in &names {
                let (got, t) = r.tensor()?;
                let want = format!("{prefix}{name}");
                if got != want {
                    return Err(Error::Checkpoint(format!(
                        "expected tensor `{want}`, found `{got}`"
                    )));
                }
                groups[g].push(t);
            }
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(
                "trailing bytes after the last tensor".into(),
            ));
        }
        let [p, m, v] = groups;
        let mut params = ModelParams::init(&config)?;
        params
            .set_tensors(&p)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        for (a, b) in p.iter().zip(m.iter().chain(&v)).chain(p.iter().zip(&v)) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(
                    "optimizer moment shape differs from its parameter".into(),
                ));
            }
        }
        Ok(Checkpoint {
            schema_fingerprint: fingerprint,
            stats,
            state: TrainingState {
                params,
                adam: AdamState { m, v, step },
                epoch,
                history,
            },
        })
    }

    /// Writes through a temporary file and a rename, so a crash never
    /// leaves a half-written checkpoint under `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, expected_fingerprint: Option<u64>) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Checkpoint::from_bytes(&bytes, expected_fingerprint)
    }
}
