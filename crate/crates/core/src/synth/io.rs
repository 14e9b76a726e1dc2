//! Scenario directories: `events.csv`, `truth.csv`, `labels.csv`,
//! `audio.wav` and `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EntryExitEvent, ScenarioConfig, ScenarioPlan};
use crate::dsp::wav::{WavChunkWriter, WavEncoding};
use crate::error::{Error, Result};
use crate::eval::{occupancy_from_events, OccupancySeries};

pub const AUDIO_FILE: &str = "audio.wav";
const BLOCK_S: u64 = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub audio: Option<String>,
}

/// A scenario read back from disk.
#[derive(Debug, Clone)]
pub struct ScenarioDir {
    pub root: PathBuf,
    pub manifest: Option<ScenarioManifest>,
    pub events: Vec<EntryExitEvent>,
    pub truth: OccupancySeries,
    pub labels: Option<Vec<bool>>,
}

impl ScenarioDir {
    pub fn audio_path(&self) -> Option<PathBuf> {
        let p = self.root.join(AUDIO_FILE);
        p.exists().then_some(p)
    }

    /// Rebuilds the render plan from the recorded config and events.
    pub fn plan(&self) -> Result<ScenarioPlan> {
        let m = self.manifest.as_ref().ok_or_else(|| {
            Error::data(format!(
                "{} has no manifest to re-render from",
                self.root.display()
            ))
        })?;
        ScenarioPlan::from_events(m.config.clone(), self.events.clone())
    }
}

/// Writes every artifact; audio is optional because it dominates disk use.
pub fn write_scenario_dir(
    dir: impl AsRef<Path>,
    plan: &ScenarioPlan,
    audio: Option<WavEncoding>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("events.csv"))?;
    w.write_record(["timestamp", "delta", "person_id"])?;
    for e in &plan.events {
        w.write_record([
            e.timestamp.to_string(),
            e.delta.to_string(),
            e.person_id.to_string(),
        ])?;
    }
    w.flush()?;

    let truth = plan.truth()?;
    let mut w = csv::Writer::from_path(dir.join("truth.csv"))?;
    w.write_record(["second", "count"])?;
    for (s, c) in truth.counts.iter().enumerate() {
        w.write_record([s.to_string(), c.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
    w.write_record(["second", "speech"])?;
    for (s, l) in plan.speech_labels().iter().enumerate() {
        w.write_record([s.to_string(), u8::from(*l).to_string()])?;
    }
    w.flush()?;

    if let Some(enc) = audio {
        let cfg = &plan.config;
        let mut writer =
            WavChunkWriter::create(dir.join(AUDIO_FILE), cfg.mics.len(), cfg.sample_rate, enc)?;
        let mut s = 0;
        while s < cfg.duration_s {
            let n = BLOCK_S.min(cfg.duration_s - s);
            writer.write_chunk(&plan.render(s, n)?)?;
            s += n;
        }
        writer.finish()?;
    }

    let manifest = ScenarioManifest {
        config: plan.config.clone(),
        seed: plan.config.seed,
        audio: audio.map(|_| AUDIO_FILE.to_string()),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn read_events(path: &Path) -> Result<Vec<EntryExitEvent>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let (timestamp, delta, person_id): (f64, i32, u64) = rec?;
        out.push(EntryExitEvent {
            timestamp,
            delta,
            person_id,
        });
    }
    Ok(out)
}

fn read_truth(path: &Path) -> Result<OccupancySeries> {
    let mut r = csv::Reader::from_path(path)?;
    let mut counts = Vec::new();
    for rec in r.deserialize() {
        let (second, count): (u64, u32) = rec?;
        if second != counts.len() as u64 {
            return Err(Error::data(format!(
                "{} skips to second {second}",
                path.display()
            )));
        }
        counts.push(count);
    }
    Ok(OccupancySeries {
        counts,
        start_time: 0,
    })
}

fn read_labels(path: &Path) -> Result<Vec<bool>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let (_, speech): (u64, u8) = rec?;
        out.push(speech != 0);
    }
    Ok(out)
}

/// Reads a scenario directory. `truth.csv` wins over `events.csv` when both
/// exist; with only events, truth is replayed from them.
pub fn load_scenario_dir(dir: impl AsRef<Path>) -> Result<ScenarioDir> {
    let root = dir.as_ref().to_path_buf();
    let manifest_path = root.join("manifest.json");
    let manifest: Option<ScenarioManifest> = if manifest_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&manifest_path)?)?)
    } else {
        None
    };
    let events_path = root.join("events.csv");
    let events = if events_path.exists() {
        read_events(&events_path)?
    } else {
        Vec::new()
    };
    let truth_path = root.join("truth.csv");
    let truth = if truth_path.exists() {
        read_truth(&truth_path)?
    } else if let Some(m) = &manifest {
        occupancy_from_events(&events, m.config.duration_s)?
    } else {
        return Err(Error::data(format!(
            "{} holds neither truth.csv nor a manifest",
            root.display()
        )));
    };
    let labels_path = root.join("labels.csv");
    let labels = if labels_path.exists() {
        Some(read_labels(&labels_path)?)
    } else {
        None
    };
    Ok(ScenarioDir {
        root,
        manifest,
        events,
        truth,
        labels,
    })
}
