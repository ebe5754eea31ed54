//! Patch scorers: anything that maps 256x256 RGB patches to tumor
//! probabilities.
//!
//! Built-in scorers are a constant and an annotation oracle; real models run
//! out of process behind [`ExternalScorer`].

pub mod protocol;

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patches::{IntegralMask, PATCH_SIZE};
use crate::slide_io::AnnotationMask;

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer process exited or closed its pipe: {0}")]
    ScorerCrashed(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("scorer did not answer within {0:?}")]
    Timeout(Duration),
    #[error("failed to spawn scorer `{cmd}`: {reason}")]
    SpawnFailed { cmd: String, reason: String },
    #[error("handshake mismatch: expected {expected:?}, got {got:?}")]
    HandshakeMismatch { expected: String, got: String },
    #[error("patch at ({x}, {y}) is {w}x{h}, expected 256x256")]
    BadPatch { x: u32, y: u32, w: u32, h: u32 },
    #[error("oracle has no annotation for slide {0}")]
    UnknownSlide(String),
    #[error("invalid scorer spec: {0}")]
    BadSpec(String),
}

/// A patch with its level-0 location.
#[derive(Debug, Clone)]
pub struct PatchInput {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub raster: RgbImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchScore {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub prob: f32,
}

pub trait PatchScorer: Send {
    /// One score per patch, in input order.
    fn score_batch(&mut self, batch: &[PatchInput]) -> Result<Vec<PatchScore>, ScoreError>;
}

fn check_shapes(batch: &[PatchInput]) -> Result<(), ScoreError> {
    for p in batch {
        let (w, h) = p.raster.dimensions();
        if (w, h) != (PATCH_SIZE, PATCH_SIZE) {
            return Err(ScoreError::BadPatch {
                x: p.x,
                y: p.y,
                w,
                h,
            });
        }
    }
    Ok(())
}

fn scored(p: &PatchInput, prob: f32) -> PatchScore {
    PatchScore {
        slide_id: p.slide_id.clone(),
        x: p.x,
        y: p.y,
        prob,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer {
    pub value: f32,
}

impl PatchScorer for ConstantScorer {
    fn score_batch(&mut self, batch: &[PatchInput]) -> Result<Vec<PatchScore>, ScoreError> {
        check_shapes(batch)?;
        Ok(batch.iter().map(|p| scored(p, self.value)).collect())
    }
}

/// Scores a patch as its annotated tumor fraction plus seeded gaussian noise,
/// clamped to `[0, 1]`.
///
/// The noise for a patch depends only on `(seed, slide, x, y)`, so results do
/// not change with batching, ordering or parallelism.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    sigma: f64,
    seed: u64,
    annotations: HashMap<String, IntegralMask>,
}

impl OracleScorer {
    pub fn new(sigma: f64, seed: u64) -> Self {
        OracleScorer {
            sigma,
            seed,
            annotations: HashMap::new(),
        }
    }

    pub fn with_annotation(mut self, annot: &AnnotationMask) -> Self {
        self.add_annotation(annot);
        self
    }

    pub fn add_annotation(&mut self, annot: &AnnotationMask) {
        self.annotations
            .insert(annot.slide_id.clone(), IntegralMask::new(&annot.grid));
    }

    fn patch_seed(&self, slide: &str, x: u32, y: u32) -> u64 {
        // FNV-1a over the patch identity
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for b in slide.bytes().chain(x.to_le_bytes()).chain(y.to_le_bytes()) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn score_one(&self, slide: &str, x: u32, y: u32) -> Result<f32, ScoreError> {
        let integral = self
            .annotations
            .get(slide)
            .ok_or_else(|| ScoreError::UnknownSlide(slide.to_string()))?;
        let fraction = integral.patch_fraction(x as i64, y as i64);
        if self.sigma == 0.0 {
            return Ok(fraction as f32);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.patch_seed(slide, x, y));
        let noise = Normal::new(0.0, self.sigma)
            .expect("sigma validated at construction")
            .sample(&mut rng);
        Ok((fraction + noise).clamp(0.0, 1.0) as f32)
    }
}

impl PatchScorer for OracleScorer {
    fn score_batch(&mut self, batch: &[PatchInput]) -> Result<Vec<PatchScore>, ScoreError> {
        check_shapes(batch)?;
        batch
            .iter()
            .map(|p| Ok(scored(p, self.score_one(&p.slide_id, p.x, p.y)?)))
            .collect()
    }
}

enum FromChild {
    Hello([u8; 4]),
    Frame(u64, Vec<f32>),
    Closed(String),
}

/// A scorer running as a child process speaking [`protocol`] on stdio.
pub struct ExternalScorer {
    cmd: String,
    child: Child,
    /// Request bytes for the writer thread; dropping it closes the child's stdin.
    stdin: Option<Sender<Vec<u8>>>,
    rx: Receiver<FromChild>,
    next_id: u64,
    pub batch_size: usize,
    pub timeout: Duration,
}

impl std::fmt::Debug for ExternalScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalScorer")
            .field("cmd", &self.cmd)
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl ExternalScorer {
    /// Spawns `argv` and performs the handshake.
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self, ScoreError> {
        let cmd = argv.join(" ");
        let (prog, args) = argv.split_first().ok_or_else(|| ScoreError::SpawnFailed {
            cmd: cmd.clone(),
            reason: "empty command".into(),
        })?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScoreError::SpawnFailed {
                cmd: cmd.clone(),
                reason: e.to_string(),
            })?;
        let stdout = child.stdout.take().expect("piped stdout");
        let mut pipe = BufWriter::new(child.stdin.take().expect("piped stdin"));
        // Writes happen off this thread so a child that stops reading cannot
        // block us past the timeout. Write errors are left to the reader,
        // which sees the closed stdout.
        let (stdin, requests) = mpsc::channel::<Vec<u8>>();
        thread::spawn(move || {
            for bytes in requests {
                if pipe.write_all(&bytes).and_then(|_| pipe.flush()).is_err() {
                    return;
                }
            }
        });
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut r = BufReader::new(stdout);
            let mut hello = [0u8; 4];
            if let Err(e) = r.read_exact(&mut hello) {
                let _ = tx.send(FromChild::Closed(e.to_string()));
                return;
            }
            if tx.send(FromChild::Hello(hello)).is_err() {
                return;
            }
            loop {
                let msg = match protocol::decode_response(&mut r) {
                    Ok(Some((id, probs))) => FromChild::Frame(id, probs),
                    Ok(None) => FromChild::Closed("end of stream".into()),
                    Err(e) => FromChild::Closed(e.to_string()),
                };
                let done = matches!(msg, FromChild::Closed(_));
                if tx.send(msg).is_err() || done {
                    return;
                }
            }
        });
        let mut scorer = ExternalScorer {
            cmd,
            child,
            stdin: Some(stdin),
            rx,
            next_id: 1,
            batch_size: DEFAULT_BATCH_SIZE,
            timeout,
        };
        scorer.handshake()?;
        Ok(scorer)
    }

    fn send(&mut self, bytes: &[u8]) -> Result<(), ScoreError> {
        self.stdin
            .as_ref()
            .and_then(|tx| tx.send(bytes.to_vec()).ok())
            .ok_or_else(|| ScoreError::ScorerCrashed("stdin closed".into()))
    }

    fn recv(&mut self) -> Result<FromChild, ScoreError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                Err(ScoreError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(ScoreError::ScorerCrashed("reader thread ended".into()))
            }
        }
    }

    fn handshake(&mut self) -> Result<(), ScoreError> {
        let magic = protocol::MAGIC;
        self.send(&magic).map_err(|e| ScoreError::SpawnFailed {
            cmd: self.cmd.clone(),
            reason: e.to_string(),
        })?;
        match self.recv()? {
            FromChild::Hello(h) if h == magic => Ok(()),
            FromChild::Hello(h) => {
                let _ = self.child.kill();
                Err(ScoreError::HandshakeMismatch {
                    expected: String::from_utf8_lossy(&magic).into_owned(),
                    got: String::from_utf8_lossy(&h).into_owned(),
                })
            }
            FromChild::Closed(reason) => Err(ScoreError::SpawnFailed {
                cmd: self.cmd.clone(),
                reason: format!("no handshake: {reason}"),
            }),
            FromChild::Frame(..) => unreachable!("frames follow the handshake"),
        }
    }

    fn score_chunk(&mut self, chunk: &[PatchInput]) -> Result<Vec<PatchScore>, ScoreError> {
        let id = self.next_id;
        self.next_id += 1;
        let rasters: Vec<&RgbImage> = chunk.iter().map(|p| &p.raster).collect();
        self.send(&protocol::encode_request(id, &rasters))?;
        let (got_id, probs) = match self.recv()? {
            FromChild::Frame(i, p) => (i, p),
            FromChild::Closed(reason) => return Err(ScoreError::ScorerCrashed(reason)),
            FromChild::Hello(_) => {
                return Err(ScoreError::ProtocolViolation("unexpected handshake".into()))
            }
        };
        if got_id != id {
            return Err(ScoreError::ProtocolViolation(format!(
                "response id {got_id} for request {id}"
            )));
        }
        if probs.len() != chunk.len() {
            return Err(ScoreError::ProtocolViolation(format!(
                "{} probabilities for {} patches",
                probs.len(),
                chunk.len()
            )));
        }
        if let Some(bad) = probs
            .iter()
            .find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p)))
        {
            return Err(ScoreError::ProtocolViolation(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(chunk.iter().zip(probs).map(|(p, v)| scored(p, v)).collect())
    }
}

impl PatchScorer for ExternalScorer {
    fn score_batch(&mut self, batch: &[PatchInput]) -> Result<Vec<PatchScore>, ScoreError> {
        check_shapes(batch)?;
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(self.batch_size.max(1)) {
            out.extend(self.score_chunk(chunk)?);
        }
        Ok(out)
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        // closing stdin asks the child to exit
        self.stdin.take();
        let _ = self.child.wait();
    }
}

/// Declarative scorer selection, as found in pipeline configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerSpec {
    Constant {
        value: f32,
    },
    Oracle {
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    External {
        cmd: Vec<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
        #[serde(default)]
        batch_size: Option<usize>,
    },
}

impl ScorerSpec {
    pub fn validate(&self) -> Result<(), ScoreError> {
        match self {
            ScorerSpec::Constant { value } if !(0.0..=1.0).contains(value) => Err(
                ScoreError::BadSpec(format!("constant {value} outside [0, 1]")),
            ),
            ScorerSpec::Oracle { sigma, .. } if !(sigma.is_finite() && *sigma >= 0.0) => {
                Err(ScoreError::BadSpec(format!("oracle sigma {sigma}")))
            }
            ScorerSpec::External { cmd, .. } if cmd.is_empty() => Err(ScoreError::BadSpec(
                "external scorer needs a command".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Whether this scorer can be cloned across worker threads.
    pub fn is_builtin(&self) -> bool {
        !matches!(self, ScorerSpec::External { .. })
    }

    /// Instantiates the scorer. The oracle is loaded with `annotations`.
    pub fn build(
        &self,
        annotations: &[&AnnotationMask],
    ) -> Result<Box<dyn PatchScorer>, ScoreError> {
        self.validate()?;
        Ok(match self {
            ScorerSpec::Constant { value } => Box::new(ConstantScorer { value: *value }),
            ScorerSpec::Oracle { sigma, seed } => {
                let mut o = OracleScorer::new(*sigma, *seed);
                for a in annotations {
                    o.add_annotation(a);
                }
                Box::new(o)
            }
            ScorerSpec::External {
                cmd,
                timeout_secs,
                batch_size,
            } => {
                let timeout = timeout_secs.map_or(DEFAULT_TIMEOUT, Duration::from_secs);
                let mut s = ExternalScorer::spawn(cmd, timeout)?;
                if let Some(b) = batch_size {
                    s.batch_size = *b;
                }
                Box::new(s)
            }
        })
    }
}

impl std::str::FromStr for ScorerSpec {
    type Err = ScoreError;

    /// `constant:V`, `oracle:SIGMA[:SEED]` or `external:PROGRAM [ARGS...]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScoreError::BadSpec(s.to_string());
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let spec = match kind {
            "constant" => ScorerSpec::Constant {
                value: rest.parse().map_err(|_| bad())?,
            },
            "oracle" => {
                let mut parts = rest.split(':');
                let sigma = match parts.next().filter(|p| !p.is_empty()) {
                    Some(p) => p.parse().map_err(|_| bad())?,
                    None => 0.0,
                };
                let seed = match parts.next() {
                    Some(p) => p.parse().map_err(|_| bad())?,
                    None => 0,
                };
                ScorerSpec::Oracle { sigma, seed }
            }
            "external" => ScorerSpec::External {
                cmd: rest.split_whitespace().map(str::to_string).collect(),
                timeout_secs: None,
                batch_size: None,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn input(slide: &str, x: u32, y: u32) -> PatchInput {
        PatchInput {
            slide_id: slide.into(),
            x,
            y,
            raster: RgbImage::new(256, 256),
        }
    }

    fn annotation() -> AnnotationMask {
        // tumor square [128, 384)^2 on a 512 slide
        AnnotationMask {
            slide_id: "s".into(),
            level: 0,
            grid: Array2::from_shape_fn((512, 512), |(y, x)| {
                (128..384).contains(&x) && (128..384).contains(&y)
            }),
        }
    }

    #[test]
    fn constant_scores_everything_alike() {
        let mut s = ConstantScorer { value: 0.5 };
        let out = s
            .score_batch(&[input("a", 0, 0), input("a", 128, 0)])
            .unwrap();
        assert!(out.iter().all(|p| p.prob == 0.5));
        assert_eq!(out[1].x, 128);
    }

    #[test]
    fn noiseless_oracle_is_the_tumor_fraction() {
        let mut o = OracleScorer::new(0.0, 1).with_annotation(&annotation());
        let out = o
            .score_batch(&[
                input("s", 128, 128),
                input("s", 0, 0),
                input("s", 384, 384),
                input("s", 0, 128),
            ])
            .unwrap();
        let probs: Vec<f32> = out.iter().map(|p| p.prob).collect();
        assert_eq!(probs, vec![1.0, 0.25, 0.0, 0.5]);
    }

    #[test]
    fn noisy_oracle_is_order_independent_and_bounded() {
        let mut o = OracleScorer::new(0.3, 9).with_annotation(&annotation());
        let batch: Vec<_> = (0..4)
            .flat_map(|i| (0..4).map(move |j| input("s", i * 128, j * 128)))
            .collect();
        let all = o.score_batch(&batch).unwrap();
        let mut one_by_one = Vec::new();
        for p in batch.iter().rev() {
            one_by_one.push(o.score_batch(std::slice::from_ref(p)).unwrap().remove(0));
        }
        one_by_one.reverse();
        assert_eq!(all, one_by_one);
        assert!(all.iter().all(|p| (0.0..=1.0).contains(&p.prob)));
        assert!(matches!(
            o.score_one("other", 0, 0),
            Err(ScoreError::UnknownSlide(_))
        ));
    }

    #[test]
    fn wrong_patch_size_rejected() {
        let mut p = input("a", 0, 0);
        p.raster = RgbImage::new(128, 256);
        assert!(matches!(
            ConstantScorer { value: 0.1 }.score_batch(&[p]),
            Err(ScoreError::BadPatch { w: 128, .. })
        ));
    }

    #[test]
    fn spec_parsing_and_validation() {
        let s: ScorerSpec = toml::from_str("kind = \"oracle\"\nsigma = 0.05\nseed = 3").unwrap();
        assert_eq!(
            s,
            ScorerSpec::Oracle {
                sigma: 0.05,
                seed: 3
            }
        );
        assert!(ScorerSpec::Constant { value: 1.5 }.validate().is_err());
        assert!(ScorerSpec::External {
            cmd: vec![],
            timeout_secs: None,
            batch_size: None
        }
        .validate()
        .is_err());
    }

    #[test]
    fn spec_from_flag_text() {
        assert_eq!(
            "constant:0.5".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Constant { value: 0.5 }
        );
        assert_eq!(
            "oracle:0.05:7".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Oracle {
                sigma: 0.05,
                seed: 7
            }
        );
        assert_eq!(
            "oracle".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Oracle {
                sigma: 0.0,
                seed: 0
            }
        );
        assert!(matches!(
            "external:python3 scorer.py".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::External { cmd, .. } if cmd == ["python3", "scorer.py"]
        ));
        assert!("external:".parse::<ScorerSpec>().is_err());
        assert!("magic:1".parse::<ScorerSpec>().is_err());
    }

    #[test]
    fn missing_program_fails_to_spawn() {
        let err = ExternalScorer::spawn(&["/nonexistent/scorer-binary".into()], DEFAULT_TIMEOUT)
            .unwrap_err();
        assert!(matches!(err, ScoreError::SpawnFailed { .. }));
    }
}
