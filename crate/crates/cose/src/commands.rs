//! Subcommand bodies, kept separate from argument parsing so tests can
//! drive them directly.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use cose_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use cose_core::eval::{evaluate, EvalReport};
use cose_core::ink::{load_drawings, save_drawings, InkFormat};
use cose_core::synth::{synth_corpus, SynthConfig};
use cose_core::train::{TrainConfig, Trainer};

use crate::ingest::{convert, SourceFormat};

pub fn ingest(input: &Path, format: SourceFormat, out: &Path) -> Result<usize> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let drawings = convert(BufReader::new(file), format)?;
    save_drawings(out, &drawings)?;
    Ok(drawings.len())
}

pub fn synth(n: usize, seed: u64, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: SynthConfig = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    save_drawings(out, &synth_corpus(&cfg, n, seed))?;
    Ok(())
}

pub fn read_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => Ok(TrainConfig::default()),
    }
}

/// Trains on `data`, writing one metrics object per step to `metrics` and
/// a checkpoint every `eval_every` steps and at the end. `out` is a
/// directory unless it names a `.json` file.
pub fn train(data: &Path, mut cfg: TrainConfig, seed: Option<u64>, out: &Path, mut metrics: impl Write) -> Result<PathBuf> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.extension().is_none_or(|e| e != "json") {
        std::fs::create_dir_all(out)?;
    }
    let corpus = load_drawings(data, InkFormat::Ndjson)?;
    let mut trainer = Trainer::new(cfg)?;
    let every = trainer.cfg.eval_every.max(1);
    trainer.train(&corpus, |t, m| {
        writeln!(metrics, "{}", serde_json::to_string(m)?)?;
        if t.step % every == 0 && t.step < t.cfg.total_steps {
            save_checkpoint(&Checkpoint::from_trainer(t), out)?;
        }
        Ok(())
    })?;
    Ok(save_checkpoint(&Checkpoint::from_trainer(&trainer), out)?)
}

pub fn eval(ckpt: &Path, data: &Path, seed: u64, report: &Path) -> Result<EvalReport> {
    let model = load_checkpoint(ckpt)?.model()?;
    let corpus = load_drawings(data, InkFormat::Ndjson)?;
    let r = evaluate(&model, &corpus, seed)?;
    std::fs::write(report, serde_json::to_string_pretty(&r)?)?;
    Ok(r)
}
