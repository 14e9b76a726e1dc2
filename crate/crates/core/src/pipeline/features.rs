//! Per-second front end: TDOA estimation, delay-and-sum, log-mel, speech
//! gate, and the compact encoder inputs kept for each second.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dsp::matrix_io::{read_matrix_section, write_matrix};
use crate::dsp::wav::WavChunkReader;
use crate::dsp::{
    beamform, GccPhat, LogMelExtractor, MonoClip, MultichannelClip, SpectrogramConfig,
};
use crate::embed::{pool_grid, CnnConfig, FrozenEncoder};
use crate::error::{Error, Result};
use crate::gate::SpeechDetector;
use crate::synth::ScenarioPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontEndConfig {
    pub spectrogram: SpectrogramConfig,
    /// TDOA search range in samples.
    pub max_lag: usize,
    pub reference_channel: usize,
    pub detector: SpeechDetector,
    pub grid_t: usize,
    pub grid_f: usize,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        let cnn = CnnConfig::default();
        Self {
            spectrogram: SpectrogramConfig::default(),
            max_lag: 16,
            reference_channel: 0,
            detector: SpeechDetector::default(),
            grid_t: cnn.grid_t,
            grid_f: cnn.grid_f,
        }
    }
}

/// What the pipeline keeps for each second of audio.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub times: Vec<u64>,
    pub speech_prob: Vec<f64>,
    /// Pooled log-mel grid per second, `N x (grid_t * grid_f)`.
    pub grids: Array2<f64>,
    /// Frozen-encoder summary statistics per second, `N x 4 n_mels`.
    pub summaries: Array2<f64>,
    pub tdoas: Vec<Vec<i64>>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Rows `range` as a new table; times are kept.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::shape(format!(
                "rows {range:?} outside a table of {}",
                self.len()
            )));
        }
        Ok(Self {
            times: self.times[range.clone()].to_vec(),
            speech_prob: self.speech_prob[range.clone()].to_vec(),
            grids: self.grids.slice(ndarray::s![range.clone(), ..]).to_owned(),
            summaries: self
                .summaries
                .slice(ndarray::s![range.clone(), ..])
                .to_owned(),
            tdoas: self.tdoas[range].to_vec(),
        })
    }

    /// Three matrices in sequence: `[time, speech_prob, tdoa...]`, grids,
    /// summaries.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.tdoas.first().map_or(0, Vec::len);
        let mut meta = Array2::zeros((self.len(), 2 + m));
        for i in 0..self.len() {
            meta[[i, 0]] = self.times[i] as f64;
            meta[[i, 1]] = self.speech_prob[i];
            for (j, lag) in self.tdoas[i].iter().enumerate() {
                meta[[i, 2 + j]] = *lag as f64;
            }
        }
        write_matrix(&mut w, &meta, None)?;
        write_matrix(&mut w, &self.grids, None)?;
        write_matrix(&mut w, &self.summaries, None)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let (meta, _) = read_matrix_section(&mut r)?;
        let (grids, _) = read_matrix_section(&mut r)?;
        let (summaries, _) = read_matrix_section(&mut r)?;
        if meta.ncols() < 2 || grids.nrows() != meta.nrows() || summaries.nrows() != meta.nrows() {
            return Err(Error::Malformed("feature table sections disagree".into()));
        }
        Ok(Self {
            times: meta.column(0).iter().map(|&t| t as u64).collect(),
            speech_prob: meta.column(1).to_vec(),
            grids,
            summaries,
            tdoas: meta
                .rows()
                .into_iter()
                .map(|r| r.iter().skip(2).map(|&v| v as i64).collect())
                .collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Anything that yields consecutive multichannel blocks.
pub trait AudioSource {
    fn sample_rate(&self) -> u32;
    /// Next block of at most `seconds`; `None` at the end.
    fn next_block(&mut self, seconds: u64) -> Result<Option<MultichannelClip>>;
}

/// Renders a synthetic scenario on the fly.
pub struct PlanSource<'a> {
    plan: &'a ScenarioPlan,
    next: u64,
}

impl<'a> PlanSource<'a> {
    pub fn new(plan: &'a ScenarioPlan) -> Self {
        Self { plan, next: 0 }
    }
}

impl AudioSource for PlanSource<'_> {
    fn sample_rate(&self) -> u32 {
        self.plan.config.sample_rate
    }

    fn next_block(&mut self, seconds: u64) -> Result<Option<MultichannelClip>> {
        let end = self.plan.config.duration_s;
        if self.next >= end {
            return Ok(None);
        }
        let n = seconds.min(end - self.next);
        let clip = self.plan.render(self.next, n)?;
        self.next += n;
        Ok(Some(clip))
    }
}

/// Streams a wave file.
pub struct WavSource(WavChunkReader);

impl WavSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self(WavChunkReader::open(path)?))
    }
}

impl AudioSource for WavSource {
    fn sample_rate(&self) -> u32 {
        self.0.sample_rate()
    }

    fn next_block(&mut self, seconds: u64) -> Result<Option<MultichannelClip>> {
        let frames = seconds as usize * self.0.sample_rate() as usize;
        self.0.next_chunk(frames)
    }
}

/// Stateful per-second processor.
pub struct FrontEnd {
    config: FrontEndConfig,
    sample_rate: u32,
    gcc: GccPhat,
    mel: LogMelExtractor,
    frozen: FrozenEncoder,
}

/// Everything computed for one second.
#[derive(Debug, Clone)]
pub struct SecondAnalysis {
    pub tdoas: Vec<i64>,
    pub speech_prob: f64,
    pub grid: Vec<f64>,
    pub summary: Vec<f64>,
}

impl FrontEnd {
    pub fn new(config: FrontEndConfig, sample_rate: u32) -> Result<Self> {
        let mel = LogMelExtractor::new(config.spectrogram, sample_rate)?;
        if config.grid_t == 0 || config.grid_f == 0 || config.grid_f > config.spectrogram.n_mels {
            return Err(Error::config("encoder grid does not fit the spectrogram"));
        }
        let frozen = FrozenEncoder::new(config.spectrogram.n_mels);
        Ok(Self {
            config,
            sample_rate,
            gcc: GccPhat::new(),
            mel,
            frozen,
        })
    }

    /// Lags of every channel relative to the reference. Channels without a
    /// usable correlation peak (e.g. digital silence) get lag 0.
    pub fn tdoas(&mut self, clip: &MultichannelClip) -> Result<Vec<i64>> {
        let r = self.config.reference_channel;
        if r >= clip.num_channels() {
            return Err(Error::config(format!("reference channel {r} out of range")));
        }
        let reference = clip.channel(r);
        (0..clip.num_channels())
            .map(|m| {
                if m == r {
                    return Ok(0);
                }
                match self
                    .gcc
                    .tdoa(reference, clip.channel(m), self.config.max_lag)
                {
                    Ok(lag) => Ok(lag),
                    Err(Error::NoSignal(_)) => Ok(0),
                    Err(e) => Err(e),
                }
            })
            .collect()
    }

    pub fn analyze_second(&mut self, clip: &MultichannelClip) -> Result<SecondAnalysis> {
        if clip.sample_rate() != self.sample_rate || clip.len() != self.sample_rate as usize {
            return Err(Error::shape(
                "front end expects one second at the configured sample rate",
            ));
        }
        let tdoas = self.tdoas(clip)?;
        let mono: MonoClip = beamform(clip, &tdoas)?;
        let spec = self.mel.compute(&mono)?;
        let speech_prob = self.config.detector.probability(&spec)?;
        let grid = pool_grid(&spec, self.config.grid_t, self.config.grid_f)?;
        let summary = self.frozen.features(&spec)?;
        Ok(SecondAnalysis {
            tdoas,
            speech_prob,
            grid,
            summary,
        })
    }

    /// Processes a whole source; a trailing partial second is ignored.
    pub fn run(&mut self, source: &mut dyn AudioSource) -> Result<FeatureTable> {
        if source.sample_rate() != self.sample_rate {
            return Err(Error::config(format!(
                "audio is {} Hz but the front end was built for {} Hz",
                source.sample_rate(),
                self.sample_rate
            )));
        }
        let per_sec = self.sample_rate as usize;
        let (gl, sl) = (
            self.config.grid_t * self.config.grid_f,
            self.frozen.num_features(),
        );
        let mut times = Vec::new();
        let mut probs = Vec::new();
        let mut grids = Vec::new();
        let mut summaries = Vec::new();
        let mut tdoas = Vec::new();
        let mut t = 0u64;
        while let Some(block) = source.next_block(60)? {
            for s in 0..block.len() / per_sec {
                let a = self.analyze_second(&block.slice(s * per_sec, per_sec)?)?;
                times.push(t);
                probs.push(a.speech_prob);
                grids.extend(a.grid);
                summaries.extend(a.summary);
                tdoas.push(a.tdoas);
                t += 1;
            }
        }
        let n = times.len();
        Ok(FeatureTable {
            times,
            speech_prob: probs,
            grids: Array2::from_shape_vec((n, gl), grids).expect("grid rows"),
            summaries: Array2::from_shape_vec((n, sl), summaries).expect("summary rows"),
            tdoas,
        })
    }
}

pub fn extract_features(
    source: &mut dyn AudioSource,
    config: &FrontEndConfig,
) -> Result<FeatureTable> {
    FrontEnd::new(config.clone(), source.sample_rate())?.run(source)
}
