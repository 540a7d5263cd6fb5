use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use skipnet::checkpoint::Checkpoint;
use skipnet::data::{
    fit_normalization, load_sessions, load_tracks, read_predictions, split_sessions,
    write_predictions, write_sessions, write_tracks, EncodedSession, FeatureEncoder, FeatureSchema,
    LoadMode, NormalizationStats, Session, TrackTable,
};
use skipnet::metrics::mean_average_accuracy;
use skipnet::model::{predict, ModelParams};
use skipnet::synthgen::{calibrate, generate, report, GenReport};
use skipnet::train::{evaluate, fit, predict_sessions, EpochObserver, EpochRecord, TrainingState};

use crate::config::{EvalSplit, RunConfig};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

const LOG_HEADER: &str = "epoch\ttrain_loss\tval_loss\tval_maa\tval_first_acc\tseconds";

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| {
        CliError::Other(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
    })?;
    Ok(BufWriter::new(f))
}

fn out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn read_tracks(cfg: &RunConfig, schema: &FeatureSchema) -> Result<TrackTable> {
    load_tracks(&cfg.input(&cfg.files.tracks), schema).map_err(CliError::data)
}

fn read_labeled(
    cfg: &RunConfig,
    schema: &FeatureSchema,
    tracks: &TrackTable,
) -> Result<Vec<Session>> {
    load_sessions(
        &cfg.input(&cfg.files.sessions),
        schema,
        tracks,
        LoadMode::Labeled,
    )
    .map_err(CliError::data)
}

fn encode(
    schema: &FeatureSchema,
    stats: &NormalizationStats,
    tracks: &TrackTable,
    sessions: &[Session],
) -> Result<Vec<EncodedSession>> {
    FeatureEncoder {
        schema,
        stats,
        tracks,
    }
    .encode_all(sessions)
    .map_err(CliError::data)
}

/// Loads a checkpoint and checks it against the current schema.
fn load_checkpoint(path: &Path, schema: &FeatureSchema) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path, Some(schema.fingerprint())).map_err(CliError::Checkpoint)?;
    ck.state
        .params
        .config
        .check_schema(schema)
        .map_err(CliError::Checkpoint)?;
    if !ck.stats.matches(schema) {
        return Err(CliError::Checkpoint(skipnet::Error::Checkpoint(
            "normalization statistics do not match the schema".into(),
        )));
    }
    Ok(ck)
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let schema = cfg.schema()?;
    let gen = if cfg.gen.n_sessions == 0 {
        cfg.gen.clone()
    } else {
        calibrate(&cfg.gen)?
    };
    let data = generate(&gen, &schema)?;
    out_dir(cfg)?;
    write_tracks(create(&cfg.output("tracks.csv"))?, &data.tracks, &schema)?;
    write_sessions(
        create(&cfg.output("sessions.csv"))?,
        &data.sessions,
        &schema,
        LoadMode::Labeled,
    )?;
    write_sessions(
        create(&cfg.output("sessions_unlabeled.csv"))?,
        &data.sessions,
        &schema,
        LoadMode::Prediction,
    )?;
    let text = if data.sessions.is_empty() {
        GenReport::empty_kv_string()
    } else {
        report(&data, &gen)?.to_kv_string()
    };
    fs::write(cfg.output("gen_report.txt"), &text)?;
    println!(
        "generated {} sessions into {}",
        data.sessions.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

struct TrainArtifacts<'a> {
    cfg: &'a RunConfig,
    fingerprint: u64,
    stats: NormalizationStats,
}

impl TrainArtifacts<'_> {
    fn save(&self, state: &TrainingState, name: &str) -> skipnet::Result<()> {
        Checkpoint {
            schema_fingerprint: self.fingerprint,
            stats: self.stats.clone(),
            state: state.clone(),
        }
        .save(&self.cfg.output(name))
    }
}

impl EpochObserver for TrainArtifacts<'_> {
    fn epoch_done(
        &mut self,
        state: &TrainingState,
        record: &EpochRecord,
        seconds: f64,
        is_best: bool,
    ) -> skipnet::Result<()> {
        let mut log = OpenOptions::new()
            .append(true)
            .open(self.cfg.output("train.log"))?;
        writeln!(log, "{}", record.log_line(seconds))?;
        self.save(state, "last.ckpt")?;
        if is_best {
            self.save(state, "best.ckpt")?;
        }
        println!("{}", record.log_line(seconds));
        Ok(())
    }
}

/// Prepares `train.log` for a run starting after `epoch` completed epochs.
/// Lines of later epochs are dropped; missing earlier lines are rebuilt
/// from the checkpoint with an unknown duration.
fn prepare_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let existing = fs::read_to_string(path).unwrap_or_default();
    let mut kept: HashMap<usize, String> = HashMap::new();
    for line in existing.lines().skip(1) {
        if let Some(epoch) = line
            .split('\t')
            .next()
            .and_then(|e| e.parse::<usize>().ok())
        {
            kept.insert(epoch, line.to_string());
        }
    }
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in history {
        let line = kept
            .remove(&r.epoch)
            .unwrap_or_else(|| r.log_line(f64::NAN));
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let schema = cfg.schema()?;
    let model_cfg = cfg.model_config(&schema);
    model_cfg.validate()?;
    let tracks = read_tracks(cfg, &schema)?;
    let sessions = read_labeled(cfg, &schema, &tracks)?;
    let (train, validation, _) =
        split_sessions(&sessions, cfg.split, cfg.split_seed).map_err(CliError::data)?;
    if train.is_empty() || validation.is_empty() {
        return Err(CliError::Data(format!(
            "{} sessions give {} training and {} validation sessions; both must be nonempty",
            sessions.len(),
            train.len(),
            validation.len()
        )));
    }
    let stats = fit_normalization(&train, &tracks, &schema).map_err(CliError::data)?;
    let train_enc = encode(&schema, &stats, &tracks, &train)?;
    let val_enc = encode(&schema, &stats, &tracks, &validation)?;

    let mut state = match &cfg.checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path, &schema)?;
            if ck.state.params.config != model_cfg {
                return Err(CliError::Config(format!(
                    "[model] settings differ from those stored in {}",
                    path.display()
                )));
            }
            if ck.stats != stats {
                return Err(CliError::Data(format!(
                    "training data differ from the data {} was trained on",
                    path.display()
                )));
            }
            ck.state
        }
        None => TrainingState::new(ModelParams::init(&model_cfg)?),
    };
    out_dir(cfg)?;
    prepare_log(&cfg.output("train.log"), &state.history)?;
    let mut artifacts = TrainArtifacts {
        cfg,
        fingerprint: schema.fingerprint(),
        stats,
    };
    let outcome = fit(&mut state, &train_enc, &val_enc, &cfg.train, &mut artifacts)?;
    if !cfg.output("best.ckpt").exists() {
        eprintln!("warning: best.ckpt is missing from {}; resume into the original output directory to keep it", cfg.out_dir.display());
    }
    println!(
        "trained {} epochs, best epoch {}{}",
        outcome.epochs,
        outcome.best_epoch,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let schema = cfg.schema()?;
    let ck = load_checkpoint(&cfg.checkpoint_or_best(), &schema)?;
    let tracks = read_tracks(cfg, &schema)?;
    let sessions = read_labeled(cfg, &schema, &tracks)?;
    let chosen = match cfg.evaluate.split {
        EvalSplit::All => sessions,
        split => {
            let (train, validation, test) =
                split_sessions(&sessions, cfg.split, cfg.split_seed).map_err(CliError::data)?;
            match split {
                EvalSplit::Train => train,
                EvalSplit::Validation => validation,
                _ => test,
            }
        }
    };
    if chosen.is_empty() {
        return Err(CliError::Data(
            format!("the {:?} split is empty", cfg.evaluate.split).to_lowercase(),
        ));
    }
    let encoded = encode(&schema, &ck.stats, &tracks, &chosen)?;
    let ev = evaluate(&ck.state.params, &encoded, cfg.train.batch_size)?;
    out_dir(cfg)?;
    fs::write(cfg.output("eval_model.txt"), ev.model.to_kv_string())?;
    fs::write(cfg.output("eval_baseline.txt"), ev.baseline.to_kv_string())?;
    println!("{:<12}{:>10}{:>10}", "", "model", "baseline");
    println!(
        "{:<12}{:>10.6}{:>10.6}",
        "maa", ev.model.maa, ev.baseline.maa
    );
    println!(
        "{:<12}{:>10.6}{:>10.6}",
        "first_acc", ev.model.first_prediction_accuracy, ev.baseline.first_prediction_accuracy
    );
    println!("{:<12}{:>10}", "sessions", ev.model.n_sessions);
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let schema = cfg.schema()?;
    let ck = load_checkpoint(&cfg.checkpoint_or_best(), &schema)?;
    let tracks = read_tracks(cfg, &schema)?;
    let sessions = load_sessions(
        &cfg.input(&cfg.files.unlabeled_sessions),
        &schema,
        &tracks,
        LoadMode::Prediction,
    )
    .map_err(CliError::data)?;
    let encoded = encode(&schema, &ck.stats, &tracks, &sessions)?;
    let probs = predict_sessions(&ck.state.params, &encoded, cfg.train.batch_size)?;
    let rows: Vec<(String, Vec<bool>)> = sessions
        .iter()
        .zip(&probs)
        .map(|(s, p)| (s.session_id.clone(), predict(p)))
        .collect();
    out_dir(cfg)?;
    write_predictions(create(&cfg.output("predictions.txt"))?, &rows)?;
    println!("wrote {} predictions", rows.len());
    Ok(())
}

pub fn cmd_score(cfg: &RunConfig) -> Result<()> {
    let schema = cfg.schema()?;
    let preds = read_predictions(&cfg.predictions_path()).map_err(CliError::data)?;
    let tracks = read_tracks(cfg, &schema)?;
    let sessions = read_labeled(cfg, &schema, &tracks)?;
    let labels: HashMap<&str, &Vec<bool>> = sessions
        .iter()
        .filter_map(|s| s.labels.as_ref().map(|l| (s.session_id.as_str(), l)))
        .collect();
    let mut pairs = Vec::with_capacity(preds.len());
    for (id, p) in preds {
        let truth = labels
            .get(id.as_str())
            .ok_or_else(|| CliError::Data(format!("no labels for predicted session `{id}`")))?;
        if truth.len() != p.len() {
            return Err(CliError::Data(format!(
                "session `{id}` has {} labels but {} predictions",
                truth.len(),
                p.len()
            )));
        }
        pairs.push(((*truth).clone(), p));
    }
    if pairs.is_empty() {
        return Err(CliError::Data("the predictions file is empty".into()));
    }
    let report = mean_average_accuracy(&pairs)?;
    out_dir(cfg)?;
    fs::write(cfg.output("score.txt"), report.to_kv_string())?;
    print!("{}", report.to_kv_string());
    Ok(())
}
