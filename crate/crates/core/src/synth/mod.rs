//! Synthetic waiting room: arrivals and departures, per-person acoustic
//! events, and multichannel audio at a small microphone array.
//!
//! Every sound is a pure function of its own seed, so any time range renders
//! identically whether produced alone or as part of a longer stream.

mod io;
mod sounds;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::dsp::MultichannelClip;
use crate::error::{Error, Result};
use crate::eval::{occupancy_from_events, OccupancySeries};

pub use io::{load_scenario_dir, write_scenario_dir, ScenarioDir, ScenarioManifest, AUDIO_FILE};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Sources closer than this are treated as this far away.
pub const MIN_DISTANCE: f64 = 0.5;
/// Longest single sound, in seconds.
const MAX_SOUND_S: f64 = 5.0;

/// A person entering (`+1`) or leaving (`-1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryExitEvent {
    pub timestamp: f64,
    pub delta: i32,
    pub person_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub duration_s: u64,
    pub sample_rate: u32,
    /// Peak-normalized arrivals per hour, scaled by `rate_profile`.
    pub arrival_rate: f64,
    /// Multipliers over equal consecutive slices of the scenario. Empty means
    /// constant.
    pub rate_profile: Vec<f64>,
    pub mean_dwell_s: f64,
    pub cough_per_min: f64,
    pub footstep_bursts_per_min: f64,
    pub rustle_per_min: f64,
    /// Share of each person's stay spent talking.
    pub speech_fraction: f64,
    /// Microphone positions in metres.
    pub mics: Vec<[f64; 2]>,
    /// Room width and depth in metres.
    pub room: [f64; 2],
    /// RMS of the ventilation noise at each microphone.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let (cx, cy, h) = (5.0, 4.0, 0.1);
        Self {
            duration_s: 3600,
            sample_rate: 16_000,
            arrival_rate: 12.0,
            rate_profile: Vec::new(),
            mean_dwell_s: 1800.0,
            cough_per_min: 0.3,
            footstep_bursts_per_min: 0.4,
            rustle_per_min: 1.5,
            speech_fraction: 0.03,
            mics: vec![
                [cx - h, cy - h],
                [cx + h, cy - h],
                [cx + h, cy + h],
                [cx - h, cy + h],
            ],
            room: [10.0, 8.0],
            noise_floor: 0.002,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// An eight-hour clinic day with morning and afternoon peaks.
    pub fn clinic_day(seed: u64) -> Self {
        Self::clinic_days(1, seed)
    }

    /// Consecutive 8-hour clinic days, each with a morning and an afternoon
    /// arrival peak.
    pub fn clinic_days(days: usize, seed: u64) -> Self {
        let day = [0.3, 1.2, 1.8, 1.1, 0.4, 1.0, 1.6, 0.6];
        Self {
            duration_s: 8 * 3600 * days as u64,
            arrival_rate: 14.0,
            rate_profile: day.iter().copied().cycle().take(day.len() * days).collect(),
            mean_dwell_s: 1500.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.arrival_rate,
            self.mean_dwell_s,
            self.cough_per_min,
            self.footstep_bursts_per_min,
            self.rustle_per_min,
            self.noise_floor,
        ];
        if rates
            .iter()
            .chain(&self.rate_profile)
            .any(|r| !(r.is_finite() && *r >= 0.0))
        {
            return Err(Error::config(
                "scenario rates must be finite and non-negative",
            ));
        }
        if self.duration_s == 0 || self.sample_rate == 0 {
            return Err(Error::config(
                "scenario duration and sample rate must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.speech_fraction) {
            return Err(Error::config("speech_fraction must lie in [0, 1)"));
        }
        if self.mics.is_empty() {
            return Err(Error::config("microphone geometry is empty"));
        }
        if !(self.room[0] > 1.0 && self.room[1] > 1.0) {
            return Err(Error::config(
                "room must be larger than 1 m in each direction",
            ));
        }
        Ok(())
    }

    fn rate_at(&self, t: f64) -> f64 {
        let base = self.arrival_rate / 3600.0;
        if self.rate_profile.is_empty() {
            return base;
        }
        let k = ((t / self.duration_s as f64) * self.rate_profile.len() as f64) as usize;
        base * self.rate_profile[k.min(self.rate_profile.len() - 1)]
    }

    fn peak_rate(&self) -> f64 {
        let m = self.rate_profile.iter().cloned().fold(0.0, f64::max);
        self.arrival_rate / 3600.0 * if self.rate_profile.is_empty() { 1.0 } else { m }
    }
}

fn exp_sample<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e * mean
}

/// Arrivals by thinning a Poisson process at the peak rate; dwell times are
/// exponential. A departure that would fall after the end is dropped and the
/// person stays to the end.
pub fn generate_events<R: Rng>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<EntryExitEvent>> {
    config.validate()?;
    let peak = config.peak_rate();
    let end = config.duration_s as f64;
    let mut events = Vec::new();
    if peak <= 0.0 {
        return Ok(events);
    }
    let mut t = 0.0;
    let mut id = 0;
    loop {
        t += exp_sample(rng, 1.0 / peak);
        if t >= end {
            break;
        }
        if rng.gen::<f64>() * peak >= config.rate_at(t) {
            continue;
        }
        events.push(EntryExitEvent {
            timestamp: t,
            delta: 1,
            person_id: id,
        });
        let leave = t + exp_sample(rng, config.mean_dwell_s);
        if leave < end {
            events.push(EntryExitEvent {
                timestamp: leave,
                delta: -1,
                person_id: id,
            });
        }
        id += 1;
    }
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoundKind {
    Cough,
    Footsteps,
    Rustle,
    Speech,
}

/// One stationary sound source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoundEvent {
    pub kind: SoundKind,
    pub start: f64,
    pub duration: f64,
    pub position: [f64; 2],
    pub gain: f64,
    pub seed: u64,
}

impl SoundEvent {
    fn end(&self) -> f64 {
        self.start + self.duration
    }

    fn waveform(&self, fs: f64) -> Vec<f64> {
        let n = ((self.duration * fs).round() as usize).max(1);
        let mut w = match self.kind {
            SoundKind::Cough => sounds::cough(self.seed, n, fs),
            SoundKind::Rustle => sounds::rustle(self.seed, n, fs),
            SoundKind::Speech => sounds::speech(self.seed, n, fs),
            SoundKind::Footsteps => {
                let steps = 3 + (self.seed % 5) as usize;
                sounds::footsteps(self.seed, steps, self.duration / steps as f64, fs)
            }
        };
        w.iter_mut().for_each(|v| *v *= self.gain);
        w
    }
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn footstep_burst<R: Rng>(rng: &mut R, room: [f64; 2], start: f64) -> SoundEvent {
    let seed = rng.gen::<u64>();
    let steps = 3 + (seed % 5) as usize;
    SoundEvent {
        kind: SoundKind::Footsteps,
        start,
        duration: steps as f64 * rng.gen_range(0.45..0.65),
        position: [
            rng.gen_range(0.3..room[0] - 0.3),
            rng.gen_range(0.3..room[1] - 0.3),
        ],
        gain: 0.04 * rng.gen_range(0.6..1.4),
        seed,
    }
}

/// Sounds made by one person present over `[t_in, t_out)`.
fn person_sounds(
    config: &ScenarioConfig,
    person: u64,
    t_in: f64,
    t_out: f64,
    entered: bool,
    leaves: bool,
) -> Vec<SoundEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, person.wrapping_add(1)));
    let room = config.room;
    let seat = [
        rng.gen_range(0.5..room[0] - 0.5),
        rng.gen_range(0.5..room[1] - 0.5),
    ];
    let near = |rng: &mut ChaCha8Rng| {
        [
            (seat[0] + rng.gen_range(-0.2..0.2)).clamp(0.1, room[0] - 0.1),
            (seat[1] + rng.gen_range(-0.2..0.2)).clamp(0.1, room[1] - 0.1),
        ]
    };
    let mut out = Vec::new();
    if entered {
        out.push(footstep_burst(&mut rng, room, t_in));
    }
    if leaves {
        let ev = footstep_burst(&mut rng, room, t_out);
        if ev.end() < config.duration_s as f64 {
            out.push(ev);
        }
    }
    let poisson = |rng: &mut ChaCha8Rng,
                   per_min: f64,
                   out: &mut Vec<SoundEvent>,
                   make: &dyn Fn(&mut ChaCha8Rng, f64) -> SoundEvent| {
        if per_min <= 0.0 {
            return;
        }
        let mut t = t_in;
        loop {
            t += exp_sample(rng, 60.0 / per_min);
            if t >= t_out {
                break;
            }
            out.push(make(rng, t));
        }
    };
    poisson(&mut rng, config.cough_per_min, &mut out, &|rng, t| {
        SoundEvent {
            kind: SoundKind::Cough,
            start: t,
            duration: rng.gen_range(0.3..0.5),
            position: near(rng),
            gain: 0.08 * rng.gen_range(0.6..1.4),
            seed: rng.gen(),
        }
    });
    poisson(
        &mut rng,
        config.footstep_bursts_per_min,
        &mut out,
        &|rng, t| footstep_burst(rng, room, t),
    );
    poisson(&mut rng, config.rustle_per_min, &mut out, &|rng, t| {
        SoundEvent {
            kind: SoundKind::Rustle,
            start: t,
            duration: rng.gen_range(0.5..2.0),
            position: near(rng),
            gain: 0.01 * rng.gen_range(0.6..1.4),
            seed: rng.gen(),
        }
    });
    // Speech as an alternating renewal process: mean talk 3 s, mean gap
    // chosen so talk time is `speech_fraction` of the stay.
    let f = config.speech_fraction;
    if f > 0.0 {
        let gap = 3.0 * (1.0 - f) / f;
        let mut t = t_in + exp_sample(&mut rng, gap);
        while t < t_out {
            let d = rng.gen_range(1.5..4.5f64).min(t_out - t);
            if d >= 0.05 {
                out.push(SoundEvent {
                    kind: SoundKind::Speech,
                    start: t,
                    duration: d,
                    position: near(&mut rng),
                    gain: 0.1 * rng.gen_range(0.6..1.4),
                    seed: rng.gen(),
                });
            }
            t += d + exp_sample(&mut rng, gap);
        }
    }
    out.retain(|e| e.start < config.duration_s as f64);
    for e in &mut out {
        e.duration = e.duration.min(config.duration_s as f64 - e.start);
    }
    out
}

/// Everything needed to render any stretch of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPlan {
    pub config: ScenarioConfig,
    pub events: Vec<EntryExitEvent>,
    /// Sorted by start time.
    pub sounds: Vec<SoundEvent>,
}

impl ScenarioPlan {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let events = generate_events(&config, &mut rng)?;
        Self::from_events(config, events)
    }

    /// Plans sounds for a given entry/exit history.
    pub fn from_events(config: ScenarioConfig, events: Vec<EntryExitEvent>) -> Result<Self> {
        config.validate()?;
        occupancy_from_events(&events, config.duration_s)?;
        let end = config.duration_s as f64;
        let mut stays: Vec<(u64, f64, Option<f64>)> = Vec::new();
        for e in &events {
            if e.delta > 0 {
                stays.push((e.person_id, e.timestamp, None));
            } else if let Some(s) = stays
                .iter_mut()
                .rev()
                .find(|s| s.0 == e.person_id && s.2.is_none())
            {
                s.2 = Some(e.timestamp);
            } else {
                return Err(Error::data(format!(
                    "person {} leaves without entering",
                    e.person_id
                )));
            }
        }
        let mut sounds: Vec<SoundEvent> = stays
            .iter()
            .flat_map(|&(id, t_in, t_out)| {
                person_sounds(
                    &config,
                    id,
                    t_in,
                    t_out.unwrap_or(end),
                    true,
                    t_out.is_some(),
                )
            })
            .collect();
        sounds.sort_by(|a, b| a.start.total_cmp(&b.start));
        Ok(Self {
            config,
            events,
            sounds,
        })
    }

    pub fn truth(&self) -> Result<OccupancySeries> {
        occupancy_from_events(&self.events, self.config.duration_s)
    }

    /// Per-second flag: does any speech sound overlap `[s, s + 1)`.
    pub fn speech_labels(&self) -> Vec<bool> {
        let mut labels = vec![false; self.config.duration_s as usize];
        for s in self.sounds.iter().filter(|s| s.kind == SoundKind::Speech) {
            let first = s.start.floor() as usize;
            let last = (s.end().ceil() as usize).min(labels.len());
            for l in &mut labels[first.min(last)..last] {
                *l = true;
            }
        }
        labels
    }

    /// Audio for seconds `[start, start + seconds)`.
    pub fn render(&self, start: u64, seconds: u64) -> Result<MultichannelClip> {
        let cfg = &self.config;
        if seconds == 0 || start + seconds > cfg.duration_s {
            return Err(Error::config(format!(
                "render range {start}+{seconds} s outside scenario of {} s",
                cfg.duration_s
            )));
        }
        let fs = cfg.sample_rate as f64;
        let per_sec = cfg.sample_rate as usize;
        let n = seconds as usize * per_sec;
        let base = start as usize * per_sec;
        let mut channels: Vec<Vec<f64>> = Vec::with_capacity(cfg.mics.len());
        for m in 0..cfg.mics.len() {
            let mut ch = Vec::with_capacity(n);
            for s in start..start + seconds {
                let hvac = sounds::pink(mix(mix(cfg.seed, 0x4856_4143), mix(m as u64, s)), per_sec);
                ch.extend(hvac.into_iter().map(|v| v * cfg.noise_floor));
            }
            channels.push(ch);
        }
        let range_end = (start + seconds) as f64;
        let first = self
            .sounds
            .partition_point(|s| s.start < start as f64 - MAX_SOUND_S - 1.0);
        for s in &self.sounds[first..] {
            if s.start >= range_end {
                break;
            }
            if s.end() + 0.1 < start as f64 {
                continue;
            }
            let wave = s.waveform(fs);
            let onset = (s.start * fs).round() as i64;
            for (m, mic) in cfg.mics.iter().enumerate() {
                let (delay, gain) = propagation(s.position, *mic, fs);
                let at = onset + delay - base as i64;
                let ch = &mut channels[m];
                let lo = (-at).max(0) as usize;
                let hi = ((n as i64 - at).max(0) as usize).min(wave.len());
                for k in lo..hi {
                    ch[(at + k as i64) as usize] += gain * wave[k];
                }
            }
        }
        MultichannelClip::new(cfg.sample_rate, channels)
    }
}

/// Integer-sample delay and `1/distance` gain from `source` to `mic`.
pub fn propagation(source: [f64; 2], mic: [f64; 2], fs: f64) -> (i64, f64) {
    let d = ((source[0] - mic[0]).powi(2) + (source[1] - mic[1]).powi(2)).sqrt();
    (
        (d / SPEED_OF_SOUND * fs).round() as i64,
        1.0 / d.max(MIN_DISTANCE),
    )
}

/// Renders one mono source at a fixed position to every microphone.
pub fn render_point_source(
    signal: &[f64],
    source: [f64; 2],
    mics: &[[f64; 2]],
    sample_rate: u32,
) -> Result<MultichannelClip> {
    if mics.is_empty() {
        return Err(Error::config("microphone geometry is empty"));
    }
    let fs = sample_rate as f64;
    let channels = mics
        .iter()
        .map(|mic| {
            let (delay, gain) = propagation(source, *mic, fs);
            (0..signal.len())
                .map(|i| {
                    let j = i as i64 - delay;
                    if j >= 0 {
                        gain * signal[j as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    MultichannelClip::new(sample_rate, channels)
}

/// A fully rendered scenario held in memory.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plan: ScenarioPlan,
    pub truth: OccupancySeries,
    pub audio: MultichannelClip,
    pub chunk_labels: Vec<bool>,
}

impl Scenario {
    pub fn generate(config: ScenarioConfig) -> Result<Self> {
        let plan = ScenarioPlan::new(config)?;
        let truth = plan.truth()?;
        let audio = plan.render(0, plan.config.duration_s)?;
        let chunk_labels = plan.speech_labels();
        Ok(Self {
            plan,
            truth,
            audio,
            chunk_labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::gcc_phat_tdoa;

    fn quiet(duration_s: u64) -> ScenarioConfig {
        ScenarioConfig {
            duration_s,
            arrival_rate: 0.0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn no_arrivals_no_events() {
        let plan = ScenarioPlan::new(quiet(5)).unwrap();
        assert!(plan.events.is_empty() && plan.sounds.is_empty());
        assert!(plan.speech_labels().iter().all(|l| !l));
        let audio = plan.render(0, 5).unwrap();
        let rms = (audio.channel(0).iter().map(|v| v * v).sum::<f64>() / audio.len() as f64).sqrt();
        assert!((rms - 0.002).abs() < 1e-6);
    }

    #[test]
    fn events_reproduce_with_seed() {
        let cfg = ScenarioConfig {
            duration_s: 7200,
            seed: 4,
            ..ScenarioConfig::default()
        };
        let a = generate_events(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = generate_events(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn littles_law_over_long_run() {
        let cfg = ScenarioConfig {
            duration_s: 100 * 3600,
            arrival_rate: 10.0,
            mean_dwell_s: 1800.0,
            ..ScenarioConfig::default()
        };
        let events = generate_events(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let truth = occupancy_from_events(&events, cfg.duration_s).unwrap();
        let mean = truth.counts.iter().map(|&c| c as f64).sum::<f64>() / truth.len() as f64;
        assert!((mean - 5.0).abs() < 0.5, "{mean}");
        assert_eq!(truth.counts[0], 0);
    }

    #[test]
    fn talk_time_matches_speech_fraction() {
        let cfg = ScenarioConfig {
            duration_s: 200 * 3600,
            speech_fraction: 0.2,
            cough_per_min: 0.0,
            footstep_bursts_per_min: 0.0,
            rustle_per_min: 0.0,
            ..ScenarioConfig::default()
        };
        let plan = ScenarioPlan::new(cfg).unwrap();
        let presence: f64 = plan.truth().unwrap().counts.iter().map(|&c| c as f64).sum();
        let talk: f64 = plan
            .sounds
            .iter()
            .filter(|s| s.kind == SoundKind::Speech)
            .map(|s| s.duration)
            .sum();
        let frac = talk / presence;
        assert!((frac - 0.2).abs() < 0.01, "{frac}");
    }

    #[test]
    fn any_range_renders_identically() {
        let cfg = ScenarioConfig {
            duration_s: 600,
            arrival_rate: 60.0,
            seed: 8,
            ..ScenarioConfig::default()
        };
        let plan = ScenarioPlan::new(cfg).unwrap();
        let long = plan.render(290, 12).unwrap();
        let short = plan.render(295, 3).unwrap();
        let off = 5 * 16_000;
        for m in 0..4 {
            assert_eq!(&long.channel(m)[off..off + 3 * 16_000], short.channel(m));
        }
    }

    #[test]
    fn two_mic_delay_is_recovered() {
        let mics = [[1.0, 4.0], [3.0, 4.0]];
        let source = [1.5, 5.0];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise: Vec<f64> = (0..16_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let clip = render_point_source(&noise, source, &mics, 16_000).unwrap();
        let (d0, _) = propagation(source, mics[0], 16_000.0);
        let (d1, _) = propagation(source, mics[1], 16_000.0);
        let lag = gcc_phat_tdoa(&clip.mono(0).unwrap(), &clip.mono(1).unwrap(), 128).unwrap();
        assert_eq!(lag, d1 - d0);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ScenarioPlan::new(ScenarioConfig {
            mics: vec![],
            ..quiet(5)
        })
        .is_err());
        assert!(ScenarioPlan::new(ScenarioConfig {
            arrival_rate: -1.0,
            ..quiet(5)
        })
        .is_err());
        assert!(ScenarioPlan::new(quiet(5)).unwrap().render(4, 2).is_err());
    }
}
