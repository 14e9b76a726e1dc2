use std::io::Write;

use serde::{Deserialize, Serialize};

use super::SPEECH_THRESHOLD;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// Transformer window length in seconds.
pub const DEFAULT_WINDOW: usize = 60;

/// Which speech-handling scheme builds the windows.
/// Serialized as the number 1 or 2; the strings "1" and "2" are accepted too.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "SchemeRepr")]
pub enum Scheme {
    /// Discard speech seconds, pack survivors.
    Discard,
    /// Zero speech seconds in place, append probabilities.
    ZeroMask,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SchemeRepr {
    Number(u8),
    Text(String),
}

impl TryFrom<SchemeRepr> for Scheme {
    type Error = Error;

    fn try_from(r: SchemeRepr) -> Result<Self> {
        match r {
            SchemeRepr::Number(n) => Scheme::from_number(n),
            SchemeRepr::Text(s) => s
                .trim()
                .parse::<u8>()
                .map_err(|_| Error::config(format!("bad scheme `{s}`")))
                .and_then(Scheme::from_number),
        }
    }
}

impl From<Scheme> for u8 {
    fn from(s: Scheme) -> u8 {
        s.number()
    }
}

impl Scheme {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Scheme::Discard),
            2 => Ok(Scheme::ZeroMask),
            other => Err(Error::config(format!("scheme must be 1 or 2, got {other}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Scheme::Discard => 1,
            Scheme::ZeroMask => 2,
        }
    }
}

/// Per-second payload that can be replaced by its all-zero counterpart.
pub trait Maskable: Clone {
    fn masked(&self) -> Self;
}

impl Maskable for Spectrogram {
    fn masked(&self) -> Self {
        self.zeroed()
    }
}

/// One gated second of audio.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledChunk<P = Spectrogram> {
    pub payload: P,
    pub speech_prob: f64,
    /// Seconds since stream start.
    pub timestamp: u64,
}

impl<P> LabeledChunk<P> {
    pub fn new(payload: P, speech_prob: f64, timestamp: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&speech_prob) {
            return Err(Error::data(format!(
                "speech probability {speech_prob} outside [0, 1]"
            )));
        }
        Ok(Self {
            payload,
            speech_prob,
            timestamp,
        })
    }

    pub fn is_speech(&self, threshold: f64) -> bool {
        self.speech_prob > threshold
    }
}

/// A fixed-length sequence of seconds ready for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct InputWindow<P = Spectrogram> {
    pub chunks: Vec<P>,
    /// `false` where the second was zeroed for speech.
    pub mask: Vec<bool>,
    pub probs: Vec<f64>,
    pub timestamps: Vec<u64>,
}

impl<P> InputWindow<P> {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Streaming fold from labeled seconds to windows.
pub trait Assembler<P> {
    fn push(&mut self, chunk: LabeledChunk<P>) -> Option<InputWindow<P>>;
}

#[derive(Debug)]
struct Buffer<P> {
    window: usize,
    chunks: Vec<P>,
    mask: Vec<bool>,
    probs: Vec<f64>,
    timestamps: Vec<u64>,
}

impl<P> Buffer<P> {
    fn new(window: usize) -> Self {
        assert!(window >= 1, "window size must be at least 1");
        Self {
            window,
            chunks: Vec::with_capacity(window),
            mask: Vec::with_capacity(window),
            probs: Vec::with_capacity(window),
            timestamps: Vec::with_capacity(window),
        }
    }

    fn add(&mut self, payload: P, kept: bool, prob: f64, timestamp: u64) -> Option<InputWindow<P>> {
        self.chunks.push(payload);
        self.mask.push(kept);
        self.probs.push(prob);
        self.timestamps.push(timestamp);
        (self.chunks.len() == self.window).then(|| InputWindow {
            chunks: std::mem::take(&mut self.chunks),
            mask: std::mem::take(&mut self.mask),
            probs: std::mem::take(&mut self.probs),
            timestamps: std::mem::take(&mut self.timestamps),
        })
    }
}

/// Scheme 1: speech seconds are dropped; every `window` survivors form a
/// window. A trailing partial window is never emitted.
#[derive(Debug)]
pub struct Scheme1Assembler<P> {
    threshold: f64,
    buf: Buffer<P>,
}

impl<P> Scheme1Assembler<P> {
    pub fn new(window: usize) -> Self {
        Self::with_threshold(window, SPEECH_THRESHOLD)
    }

    pub fn with_threshold(window: usize, threshold: f64) -> Self {
        Self {
            threshold,
            buf: Buffer::new(window),
        }
    }
}

impl<P> Assembler<P> for Scheme1Assembler<P> {
    fn push(&mut self, chunk: LabeledChunk<P>) -> Option<InputWindow<P>> {
        if chunk.is_speech(self.threshold) {
            return None;
        }
        self.buf
            .add(chunk.payload, true, chunk.speech_prob, chunk.timestamp)
    }
}

/// Scheme 2: consecutive blocks of `window` seconds; speech seconds become
/// all-zero payloads with `mask = false` and keep their probability.
#[derive(Debug)]
pub struct Scheme2Assembler<P> {
    threshold: f64,
    buf: Buffer<P>,
}

impl<P> Scheme2Assembler<P> {
    pub fn new(window: usize) -> Self {
        Self::with_threshold(window, SPEECH_THRESHOLD)
    }

    pub fn with_threshold(window: usize, threshold: f64) -> Self {
        Self {
            threshold,
            buf: Buffer::new(window),
        }
    }
}

impl<P: Maskable> Assembler<P> for Scheme2Assembler<P> {
    fn push(&mut self, chunk: LabeledChunk<P>) -> Option<InputWindow<P>> {
        let speech = chunk.is_speech(self.threshold);
        let payload = if speech {
            chunk.payload.masked()
        } else {
            chunk.payload
        };
        self.buf
            .add(payload, !speech, chunk.speech_prob, chunk.timestamp)
    }
}

/// Iterator adapter yielding windows as the underlying chunk stream advances.
pub struct WindowIter<I, A> {
    chunks: I,
    assembler: A,
}

impl<I, A> WindowIter<I, A> {
    pub fn new(chunks: I, assembler: A) -> Self {
        Self { chunks, assembler }
    }
}

impl<P, I, A> Iterator for WindowIter<I, A>
where
    I: Iterator<Item = LabeledChunk<P>>,
    A: Assembler<P>,
{
    type Item = InputWindow<P>;

    fn next(&mut self) -> Option<Self::Item> {
        for chunk in self.chunks.by_ref() {
            if let Some(w) = self.assembler.push(chunk) {
                return Some(w);
            }
        }
        None
    }
}

pub fn assemble_scheme1<P>(
    stream: impl IntoIterator<Item = LabeledChunk<P>>,
    window: usize,
) -> Vec<InputWindow<P>> {
    WindowIter::new(stream.into_iter(), Scheme1Assembler::new(window)).collect()
}

pub fn assemble_scheme2<P: Maskable>(
    stream: impl IntoIterator<Item = LabeledChunk<P>>,
    window: usize,
) -> Vec<InputWindow<P>> {
    WindowIter::new(stream.into_iter(), Scheme2Assembler::new(window)).collect()
}

pub fn assemble<P: Maskable>(
    stream: impl IntoIterator<Item = LabeledChunk<P>>,
    scheme: Scheme,
    window: usize,
) -> Vec<InputWindow<P>> {
    match scheme {
        Scheme::Discard => assemble_scheme1(stream, window),
        Scheme::ZeroMask => assemble_scheme2(stream, window),
    }
}

/// Writes `timestamp,speech_prob,kept` rows for an audit trail of gate
/// decisions.
pub fn write_gate_audit<W: Write>(
    w: W,
    decisions: impl IntoIterator<Item = (u64, f64)>,
    threshold: f64,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["timestamp", "speech_prob", "kept"])?;
    for (t, p) in decisions {
        out.write_record([
            t.to_string(),
            format!("{p:.6}"),
            u8::from(p <= threshold).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Payload standing in for a spectrogram: an id, or 0 when masked.
    #[derive(Debug, Clone, Copy, PartialEq)]
    struct Id(u32);

    impl Maskable for Id {
        fn masked(&self) -> Self {
            Id(0)
        }
    }

    fn stream(labels: &str) -> Vec<LabeledChunk<Id>> {
        labels
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let p = if c == 's' { 0.9 } else { 0.1 };
                LabeledChunk::new(Id(i as u32 + 1), p, i as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn worked_example_scheme1() {
        let windows = assemble_scheme1(stream("nnsnsnnn"), 6);
        assert_eq!(windows.len(), 1);
        assert_eq!(
            windows[0].chunks,
            vec![Id(1), Id(2), Id(4), Id(6), Id(7), Id(8)]
        );
        assert_eq!(windows[0].timestamps, vec![0, 1, 3, 5, 6, 7]);
        assert!(windows[0].mask.iter().all(|k| *k));
    }

    #[test]
    fn worked_example_scheme2() {
        let windows = assemble_scheme2(stream("nnsnsnnn"), 8);
        assert_eq!(windows.len(), 1);
        let w = &windows[0];
        assert_eq!(
            w.chunks,
            vec![Id(1), Id(2), Id(0), Id(4), Id(0), Id(6), Id(7), Id(8)]
        );
        assert_eq!(
            w.mask,
            vec![true, true, false, true, false, true, true, true]
        );
        assert_eq!(w.probs, vec![0.1, 0.1, 0.9, 0.1, 0.9, 0.1, 0.1, 0.1]);
    }

    #[test]
    fn below_threshold_and_exact_multiples() {
        assert!(assemble_scheme1(stream(&"n".repeat(8)), 60).is_empty());
        let ws = assemble_scheme1(stream(&"n".repeat(120)), 60);
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[0].timestamps, (0..60).collect::<Vec<_>>());
        assert_eq!(ws[1].timestamps, (60..120).collect::<Vec<_>>());
    }

    #[test]
    fn scheme2_all_speech_and_all_clear() {
        let clear = assemble_scheme2(stream("nnnn"), 4);
        assert_eq!(clear[0].chunks, vec![Id(1), Id(2), Id(3), Id(4)]);
        assert!(clear[0].mask.iter().all(|k| *k));
        let speech = assemble_scheme2(stream("ssss"), 4);
        assert!(speech[0].chunks.iter().all(|c| *c == Id(0)));
        assert_eq!(speech[0].probs, vec![0.9; 4]);
    }

    #[test]
    fn probability_at_threshold_is_kept() {
        let chunk = LabeledChunk::new(Id(1), 0.5, 0).unwrap();
        assert_eq!(assemble_scheme1(vec![chunk], 1).len(), 1);
        assert!(LabeledChunk::new(Id(1), 1.5, 0).is_err());
    }

    #[test]
    fn audit_csv() {
        let mut buf = Vec::new();
        write_gate_audit(&mut buf, vec![(0, 0.2), (1, 0.7)], 0.5).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "timestamp,speech_prob,kept\n0,0.200000,1\n1,0.700000,0\n"
        );
    }

    fn random_stream(probs: &[f64]) -> Vec<LabeledChunk<Id>> {
        probs
            .iter()
            .enumerate()
            .map(|(i, p)| LabeledChunk::new(Id(i as u32 + 1), *p, i as u64).unwrap())
            .collect()
    }

    proptest! {
        #[test]
        fn scheme1_invariants(probs in prop::collection::vec(0.0f64..=1.0, 0..300), w in 1usize..40) {
            let s = random_stream(&probs);
            let windows = assemble_scheme1(s.clone(), w);
            let survivors: Vec<Id> = s.iter().filter(|c| c.speech_prob <= 0.5).map(|c| c.payload).collect();
            prop_assert_eq!(windows.len(), survivors.len() / w);
            let flat: Vec<Id> = windows.iter().flat_map(|w| w.chunks.clone()).collect();
            prop_assert_eq!(&flat[..], &survivors[..flat.len()]);
            for win in &windows {
                prop_assert_eq!(win.len(), w);
                prop_assert!(win.probs.iter().all(|p| *p <= 0.5));
            }
        }

        #[test]
        fn scheme2_invariants(probs in prop::collection::vec(0.0f64..=1.0, 0..300), w in 1usize..40) {
            let s = random_stream(&probs);
            let windows = assemble_scheme2(s.clone(), w);
            prop_assert_eq!(windows.len(), s.len() / w);
            for (k, win) in windows.iter().enumerate() {
                for j in 0..w {
                    let src = &s[k * w + j];
                    prop_assert_eq!(win.timestamps[j], src.timestamp);
                    prop_assert_eq!(win.probs[j], src.speech_prob);
                    let speech = src.speech_prob > 0.5;
                    prop_assert_eq!(win.mask[j], !speech);
                    prop_assert_eq!(win.chunks[j], if speech { Id(0) } else { src.payload });
                }
            }
        }
    }
}
