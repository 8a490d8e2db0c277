//! Dataset synthesis, feature export, enhancement and evaluation.
//!
//! A dataset directory holds `dataset.json` plus one directory per clip:
//!
//! ```text
//! <clip>/mixture.wav      M-channel mixture
//! <clip>/target_ref.wav   reverberant target at the reference microphone
//! <clip>/interf_ref.wav   scaled reverberant interference at the reference microphone
//! <clip>/clip.json        sidecar (angles, SNR, geometry, source files)
//! ```
//!
//! An enhanced directory holds `manifest.json`, `<clip>.wav` and `<clip>.json`
//! (per-clip metrics). Channel 0 is the reference microphone throughout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use log::{info, warn};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{Container, Tensor};
use crate::crn::{apply_mask, crn_forward, CrnWeights, MaskSpectrogram};
use crate::error::{Error, Result};
use crate::metrics::{si_sdr, stoi};
use crate::room::{place_scene_in, render, simulate_rir, snr_gain, ArrayGeometry, RoomConfig};
use crate::spatial::{feature_stack, FeatureConfig, FeatureKind, FeatureStack};
use crate::speaker::{embed_utterance, EncoderWeights, SpeakerEmbedding};
use crate::stft::{istft, magnitude, stft, MultiChannelSpectrogram, StftConfig};
use crate::wave::{read_wav, write_wav, WaveBuffer, SAMPLE_RATE};

pub const REF_CHANNEL: usize = 0;
const PEAK_TARGET: f64 = 0.9;
const ACTIVITY_FRAME: usize = 320;
const ACTIVITY_RANGE_DB: f64 = 30.0;
const MAX_DRAWS: usize = 20;

/// Everything a run needs. Loaded from JSON; missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target_dir: Option<PathBuf>,
    pub interference_dir: Option<PathBuf>,
    /// Geometry specs such as `uca:0.035:4`, `ula:0.02:4` or `mics:x,y,z;...`.
    pub geometries: Vec<String>,
    pub snrs_db: Vec<f64>,
    pub clip_seconds: f64,
    /// Clips per geometry.
    pub clips: usize,
    pub seed: u64,
    pub feature: FeatureKind,
    pub lambdas: [f64; 2],
    pub averaging: usize,
    pub stft: StftConfig,
    pub room: RoomConfig,
    pub weights: Option<PathBuf>,
    /// A d-vector file, or a directory of `<speaker>.dvec` files.
    pub embedding: Option<PathBuf>,
    /// Speaker encoder used when no stored embedding is given.
    pub encoder_weights: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    /// Minimum fraction of active target frames in a clip.
    pub min_target_activity: f64,
    pub pesq_binary: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            target_dir: None,
            interference_dir: None,
            geometries: vec!["uca:0.035:4".into()],
            snrs_db: vec![0.0, 5.0, 10.0, 15.0],
            clip_seconds: 6.0,
            clips: 3000,
            seed: 42,
            feature: FeatureKind::GLstsc,
            lambdas: [crate::spatial::GLOBAL_FORGETTING, crate::spatial::LOCAL_FORGETTING],
            averaging: crate::spatial::DEFAULT_AVERAGING,
            stft: StftConfig::default(),
            room: RoomConfig::default(),
            weights: None,
            embedding: None,
            encoder_weights: None,
            output_dir: PathBuf::from("out"),
            workers: 0,
            min_target_activity: 0.5,
            pesq_binary: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            ref_channel: REF_CHANNEL,
            averaging: self.averaging,
            global_lambda: self.lambdas[0],
            local_lambda: self.lambdas[1],
        }
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_seconds * f64::from(SAMPLE_RATE)).round() as usize
    }

    pub fn parsed_geometries(&self) -> Result<Vec<ArrayGeometry>> {
        if self.geometries.is_empty() {
            return Err(Error::Config("at least one geometry is required".into()));
        }
        self.geometries.iter().map(|g| g.parse()).collect()
    }

    /// Checks everything that does not depend on the command being run.
    pub fn validate(&self) -> Result<()> {
        if self.snrs_db.is_empty() {
            return Err(Error::Config("the SNR list is empty".into()));
        }
        if self.snrs_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNRs must be finite".into()));
        }
        if !(self.clip_seconds > 0.0) {
            return Err(Error::Config("clip length must be positive".into()));
        }
        if self.clip_len() < self.stft.window_len {
            return Err(Error::Config("clip is shorter than one STFT window".into()));
        }
        if !(0.0..=1.0).contains(&self.min_target_activity) {
            return Err(Error::Config("min_target_activity must lie in [0, 1]".into()));
        }
        if self.averaging == 0 || self.averaging % 2 != 0 {
            return Err(Error::Config(format!(
                "averaging R must be even and positive, got {}",
                self.averaging
            )));
        }
        if self.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::Config("forgetting factors must lie in [0, 1]".into()));
        }
        self.stft.validate()?;
        for geometry in self.parsed_geometries()? {
            if geometry.mic_count() < 2 && self.feature != FeatureKind::None {
                return Err(Error::Config(format!(
                    "{} needs at least two microphones",
                    self.feature
                )));
            }
        }
        for path in [&self.weights, &self.embedding, &self.encoder_weights, &self.pesq_binary]
            .into_iter()
            .flatten()
        {
            ensure_exists(path)?;
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }
}

fn ensure_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

/// One utterance in a corpus directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub path: PathBuf,
    /// First directory below the corpus root, or the file stem for flat corpora.
    pub speaker: String,
}

/// All `.wav` files below `root`, sorted by path.
pub fn scan_corpus(root: &Path) -> Result<Vec<Utterance>> {
    ensure_exists(root)?;
    let mut stack = vec![root.to_path_buf()];
    let mut files = Vec::new();
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            {
                files.push(path);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("corpus {} has no WAV files", root.display())));
    }
    Ok(files
        .into_iter()
        .map(|path| {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let mut parts = rel.components();
            let first = parts.next().map(|c| c.as_os_str().to_string_lossy().into_owned());
            let speaker = if parts.next().is_some() {
                first.unwrap_or_default()
            } else {
                path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
            };
            Utterance { path, speaker }
        })
        .collect())
}

/// Fraction of 20 ms frames within 30 dB of the loudest frame.
pub fn activity_fraction(x: &[f64]) -> f64 {
    let energies: Vec<f64> = x
        .chunks(ACTIVITY_FRAME)
        .filter(|c| c.len() == ACTIVITY_FRAME)
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect();
    let max = energies.iter().copied().fold(0.0, f64::max);
    if energies.is_empty() || max == 0.0 {
        return 0.0;
    }
    let threshold = max * 10f64.powf(-ACTIVITY_RANGE_DB / 10.0);
    energies.iter().filter(|e| **e > threshold).count() as f64 / energies.len() as f64
}

/// Crops `x` to `len` samples from `offset`, looping when it is too short.
pub fn crop_or_loop(x: &[f64], len: usize, offset: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; len];
    }
    (0..len).map(|n| x[(offset + n) % x.len()]).collect()
}

fn read_mono(path: &Path) -> Result<Vec<f64>> {
    let wave = read_wav(path)?;
    Ok(wave.channel(0).to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSidecar {
    pub clip_id: String,
    pub geometry: String,
    pub mic_positions: Vec<[f64; 3]>,
    pub target_angle_deg: f64,
    pub interferer_angle_deg: f64,
    pub snr_db: f64,
    /// Gain applied to the interference before mixing.
    pub interferer_gain: f64,
    /// Common gain applied to all three files before writing.
    pub output_gain: f64,
    pub target_file: String,
    pub target_offset: usize,
    pub interferer_file: String,
    pub interferer_offset: usize,
    pub speaker_id: String,
    pub enrollment_file: String,
    pub target_activity: f64,
    pub t60: f64,
    pub sample_rate: u32,
}

/// A rendered clip before it is written to disk.
#[derive(Debug, Clone)]
pub struct SimulatedClip {
    pub sidecar: ClipSidecar,
    pub mixture: WaveBuffer,
    /// Reverberant target on every microphone.
    pub target: WaveBuffer,
    /// Scaled reverberant interference on every microphone.
    pub interference: WaveBuffer,
}

fn clip_rng(seed: u64, geometry_index: usize, clip_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((geometry_index as u64) << 32) | clip_index as u64);
    rng
}

fn geometry_slug(g: &str) -> String {
    g.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
        .collect()
}

pub fn clip_id(geometry: &str, index: usize) -> String {
    format!("{}_{index:05}", geometry_slug(geometry))
}

/// Renders one clip: angles on their 1° grids, SNRs cycling through the list.
pub fn simulate_clip(
    cfg: &ExperimentConfig,
    targets: &[Utterance],
    interferers: &[Utterance],
    geometry_index: usize,
    clip_index: usize,
) -> Result<SimulatedClip> {
    let geometries = cfg.parsed_geometries()?;
    let geometry = geometries
        .get(geometry_index)
        .ok_or_else(|| Error::Config(format!("no geometry {geometry_index}")))?;
    let geometry_spec = &cfg.geometries[geometry_index];
    let mut rng = clip_rng(cfg.seed, geometry_index, clip_index);
    let len = cfg.clip_len();
    let snr_db = cfg.snrs_db[clip_index % cfg.snrs_db.len()];

    let target_angle = f64::from(rng.gen_range(0..=180u32));
    let interferer_angle = f64::from(rng.gen_range(180..360u32));
    let scene = place_scene_in(&cfg.room, target_angle, interferer_angle, geometry)?;

    let mut chosen = None;
    for _ in 0..MAX_DRAWS {
        let target = &targets[rng.gen_range(0..targets.len())];
        let samples = read_mono(&target.path)?;
        let offset = if samples.len() > len {
            rng.gen_range(0..=samples.len() - len)
        } else {
            0
        };
        let dry = crop_or_loop(&samples, len, offset);
        let activity = activity_fraction(&dry);
        if activity >= cfg.min_target_activity {
            chosen = Some((target, dry, offset, activity));
            break;
        }
    }
    let (target, target_dry, target_offset, activity) = chosen.ok_or_else(|| {
        Error::Data(format!(
            "no target crop reached {:.0}% activity after {MAX_DRAWS} draws",
            100.0 * cfg.min_target_activity
        ))
    })?;

    let others: Vec<&Utterance> = interferers.iter().filter(|u| u.speaker != target.speaker).collect();
    let pool: Vec<&Utterance> = if others.is_empty() {
        interferers.iter().collect()
    } else {
        others
    };
    let interferer = pool[rng.gen_range(0..pool.len())];
    let samples = read_mono(&interferer.path)?;
    let interferer_offset = if samples.len() > len {
        rng.gen_range(0..=samples.len() - len)
    } else {
        0
    };
    let interf_dry = crop_or_loop(&samples, len, interferer_offset);

    let enrollment_pool: Vec<&Utterance> = targets
        .iter()
        .filter(|u| u.speaker == target.speaker && u.path != target.path)
        .collect();
    let enrollment = if enrollment_pool.is_empty() {
        target
    } else {
        enrollment_pool[rng.gen_range(0..enrollment_pool.len())]
    };

    let rirs = simulate_rir(&scene, SAMPLE_RATE)?;
    let target_wet = render(&WaveBuffer::mono(target_dry, SAMPLE_RATE)?, &rirs[0])?.truncated(len);
    let interf_wet = render(&WaveBuffer::mono(interf_dry, SAMPLE_RATE)?, &rirs[1])?.truncated(len);
    let gain = snr_gain(&target_wet, &interf_wet, snr_db, REF_CHANNEL)?;
    let interf_wet = interf_wet.scaled(gain);
    let mixture = WaveBuffer::new(target_wet.samples() + interf_wet.samples(), SAMPLE_RATE)?;

    let peak = mixture.peak().max(target_wet.peak()).max(interf_wet.peak());
    let output_gain = if peak > 0.0 { PEAK_TARGET / peak } else { 1.0 };

    let sidecar = ClipSidecar {
        clip_id: clip_id(geometry_spec, clip_index),
        geometry: geometry_spec.clone(),
        mic_positions: scene.mic_positions(),
        target_angle_deg: target_angle,
        interferer_angle_deg: interferer_angle,
        snr_db,
        interferer_gain: gain,
        output_gain,
        target_file: target.path.display().to_string(),
        target_offset,
        interferer_file: interferer.path.display().to_string(),
        interferer_offset,
        speaker_id: target.speaker.clone(),
        enrollment_file: enrollment.path.display().to_string(),
        target_activity: activity,
        t60: cfg.room.t60,
        sample_rate: SAMPLE_RATE,
    };
    Ok(SimulatedClip {
        sidecar,
        mixture: mixture.scaled(output_gain),
        target: target_wet.scaled(output_gain),
        interference: interf_wet.scaled(output_gain),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub geometries: Vec<String>,
    pub snrs_db: Vec<f64>,
    pub clip_seconds: f64,
    pub clips: Vec<String>,
}

impl DatasetManifest {
    pub fn load(dataset: &Path) -> Result<Self> {
        read_json(&dataset.join("dataset.json"))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_clip(dir: &Path, clip: &SimulatedClip) -> Result<()> {
    create_dir(dir)?;
    write_wav(dir.join("mixture.wav"), &clip.mixture)?;
    write_wav(dir.join("target_ref.wav"), &clip.target.select_channel(REF_CHANNEL)?)?;
    write_wav(
        dir.join("interf_ref.wav"),
        &clip.interference.select_channel(REF_CHANNEL)?,
    )?;
    write_json(&dir.join("clip.json"), &clip.sidecar)
}

/// Synthesizes `clips` mixtures per geometry into `out`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let target_dir = cfg
        .target_dir
        .as_ref()
        .ok_or_else(|| Error::Config("target_dir is required".into()))?;
    let interference_dir = cfg
        .interference_dir
        .as_ref()
        .ok_or_else(|| Error::Config("interference_dir is required".into()))?;
    let targets = scan_corpus(target_dir)?;
    let interferers = scan_corpus(interference_dir)?;
    create_dir(out)?;

    let jobs: Vec<(usize, usize)> = (0..cfg.geometries.len())
        .flat_map(|g| (0..cfg.clips).map(move |i| (g, i)))
        .collect();
    let ids = cfg.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(g, i)| {
                let clip = simulate_clip(cfg, &targets, &interferers, g, i)?;
                write_clip(&out.join(&clip.sidecar.clip_id), &clip)?;
                Ok(clip.sidecar.clip_id)
            })
            .collect::<Result<Vec<String>>>()
    })?;
    info!("simulated {} clips into {}", ids.len(), out.display());
    let manifest = DatasetManifest {
        seed: cfg.seed,
        geometries: cfg.geometries.clone(),
        snrs_db: cfg.snrs_db.clone(),
        clip_seconds: cfg.clip_seconds,
        clips: ids,
    };
    write_json(&out.join("dataset.json"), &manifest)?;
    Ok(manifest)
}

/// A clip read back from a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetClip {
    pub sidecar: ClipSidecar,
    pub mixture: WaveBuffer,
    pub target_ref: WaveBuffer,
    pub interf_ref: WaveBuffer,
}

pub fn load_clip(dataset: &Path, clip_id: &str) -> Result<DatasetClip> {
    let dir = dataset.join(clip_id);
    Ok(DatasetClip {
        sidecar: read_json(&dir.join("clip.json"))?,
        mixture: read_wav(dir.join("mixture.wav"))?,
        target_ref: read_wav(dir.join("target_ref.wav"))?,
        interf_ref: read_wav(dir.join("interf_ref.wav"))?,
    })
}

fn features_path(dataset: &Path, clip_id: &str, kind: FeatureKind) -> PathBuf {
    dataset.join(clip_id).join(format!("features-{}.sift", kind.label()))
}

/// Feature export for one clip: the network input planes plus the reference
/// magnitudes of target and interference.
pub fn clip_features(
    clip: &DatasetClip,
    cfg: &ExperimentConfig,
) -> Result<(FeatureStack, Container)> {
    let spec = stft(&clip.mixture, &cfg.stft)?;
    let features = feature_stack(&spec, cfg.feature, &cfg.feature_config())?;
    let mut container = features.to_container();
    container.set_attribute("clip_id", clip.sidecar.clip_id.clone());
    container.set_attribute("speaker_id", clip.sidecar.speaker_id.clone());
    container.set_attribute("snr_db", clip.sidecar.snr_db.to_string());
    container.set_attribute("geometry", clip.sidecar.geometry.clone());
    for (name, wave) in [("target_magnitude", &clip.target_ref), ("interf_magnitude", &clip.interf_ref)] {
        let mag = magnitude(&stft(wave, &cfg.stft)?);
        let plane = mag.index_axis(Axis(0), 0);
        container.insert(
            name,
            Tensor::new(
                vec![plane.nrows(), plane.ncols()],
                plane.iter().map(|v| *v as f32).collect(),
            ),
        );
    }
    Ok((features, container))
}

/// Writes `features-<kind>.sift` next to every clip in the dataset.
pub fn cmd_features(cfg: &ExperimentConfig, dataset: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(dataset)?;
    cfg.pool()?.install(|| {
        manifest
            .clips
            .par_iter()
            .map(|id| {
                let clip = load_clip(dataset, id)?;
                let (_, container) = clip_features(&clip, cfg)?;
                let path = features_path(dataset, id, cfg.feature);
                container.write(&path)?;
                Ok(path)
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnhanceMode {
    /// Trained sifting network.
    Network,
    /// Ideal ratio mask from the clean reference signals.
    OracleIrm,
    /// Mask of ones.
    Identity,
}

impl std::str::FromStr for EnhanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "network" => Ok(EnhanceMode::Network),
            "oracle-irm" | "oracle" => Ok(EnhanceMode::OracleIrm),
            "identity" => Ok(EnhanceMode::Identity),
            other => Err(Error::Config(format!("unknown enhance mode `{other}`"))),
        }
    }
}

impl EnhanceMode {
    pub fn label(self, feature: FeatureKind) -> String {
        match self {
            EnhanceMode::Network => feature.label().to_string(),
            EnhanceMode::OracleIrm => "oracle-irm".into(),
            EnhanceMode::Identity => "identity".into(),
        }
    }
}

/// `|S| / (|S| + |N|)` clamped to `[0, 1]`; bins where both are zero get 0.
pub fn oracle_irm(target: &MultiChannelSpectrogram, interf: &MultiChannelSpectrogram) -> Result<MaskSpectrogram> {
    let s = magnitude(target);
    let n = magnitude(interf);
    if s.dim() != n.dim() {
        return Err(Error::Shape("target and interference spectrograms differ".into()));
    }
    let s = s.index_axis(Axis(0), 0);
    let n = n.index_axis(Axis(0), 0);
    let mut values = Array2::zeros(s.dim());
    ndarray::Zip::from(&mut values).and(&s).and(&n).for_each(|m, s, n| {
        let d = s + n;
        *m = if d > 0.0 { (s / d).clamp(0.0, 1.0) } else { 0.0 };
    });
    MaskSpectrogram::new(values)
}

/// Loaded model state for network mode.
pub struct NetworkModel {
    pub weights: CrnWeights,
    pub embeddings: EmbeddingSource,
}

pub enum EmbeddingSource {
    Fixed(SpeakerEmbedding),
    Directory(PathBuf),
    Encoder(EncoderWeights),
}

impl NetworkModel {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let path = cfg
            .weights
            .as_ref()
            .ok_or_else(|| Error::Config("network mode needs `weights`".into()))?;
        let weights = CrnWeights::load(path)?;
        if weights.input_planes() != cfg.feature.plane_count() {
            return Err(Error::Config(format!(
                "weights take {} planes but feature `{}` has {}",
                weights.input_planes(),
                cfg.feature,
                cfg.feature.plane_count()
            )));
        }
        let embeddings = match (&cfg.embedding, &cfg.encoder_weights) {
            (Some(p), _) if p.is_dir() => EmbeddingSource::Directory(p.clone()),
            (Some(p), _) => EmbeddingSource::Fixed(SpeakerEmbedding::load(p)?),
            (None, Some(p)) => EmbeddingSource::Encoder(EncoderWeights::load(p)?),
            (None, None) => {
                return Err(Error::Config(
                    "network mode needs `embedding` or `encoder_weights`".into(),
                ))
            }
        };
        Ok(NetworkModel {
            weights,
            embeddings,
        })
    }

    fn embedding_for(&self, sidecar: &ClipSidecar) -> Result<SpeakerEmbedding> {
        match &self.embeddings {
            EmbeddingSource::Fixed(e) => Ok(e.clone()),
            EmbeddingSource::Directory(dir) => {
                SpeakerEmbedding::load(dir.join(format!("{}.dvec", sidecar.speaker_id)))
            }
            EmbeddingSource::Encoder(w) => {
                let wave = read_wav(&sidecar.enrollment_file)?;
                embed_utterance(&wave, w, &sidecar.speaker_id)
            }
        }
    }
}

/// Per-clip scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: String,
    pub geometry: String,
    pub feature: String,
    pub snr_db: f64,
    pub stoi: f64,
    pub si_sdr_db: f64,
    pub pesq: Option<f64>,
}

/// Enhances the reference channel of one clip, returning the output signal
/// (same length as the mixture) and the mask that produced it.
pub fn enhance_clip(
    clip: &DatasetClip,
    cfg: &ExperimentConfig,
    mode: EnhanceMode,
    model: Option<&NetworkModel>,
) -> Result<(WaveBuffer, MaskSpectrogram)> {
    let spec = stft(&clip.mixture, &cfg.stft)?;
    let mask = match mode {
        EnhanceMode::Identity => MaskSpectrogram::constant(spec.frames(), spec.bins(), 1.0)?,
        EnhanceMode::OracleIrm => oracle_irm(
            &stft(&clip.target_ref, &cfg.stft)?,
            &stft(&clip.interf_ref, &cfg.stft)?,
        )?,
        EnhanceMode::Network => {
            let model =
                model.ok_or_else(|| Error::Config("network mode needs loaded weights".into()))?;
            let features = feature_stack(&spec, cfg.feature, &cfg.feature_config())?;
            let embedding = model.embedding_for(&clip.sidecar)?;
            crn_forward(&features, &embedding, &model.weights)?
        }
    };
    let masked = apply_mask(spec.channel(REF_CHANNEL), &mask)?;
    let masked = MultiChannelSpectrogram::new(masked.insert_axis(Axis(0)), spec.sample_rate())?;
    let out = istft(&masked, &cfg.stft)?.truncated(clip.mixture.len());
    Ok((out, mask))
}

fn score(
    clip_id: &str,
    sidecar: &ClipSidecar,
    feature: &str,
    clean: &WaveBuffer,
    estimate: &WaveBuffer,
    pesq_binary: Option<&Path>,
    scratch: &Path,
) -> Result<ClipScore> {
    let x = clean.channel(0).to_vec();
    let y = estimate.channel(0).to_vec();
    let pesq = match pesq_binary {
        Some(bin) => run_pesq(bin, clean, estimate, scratch),
        None => None,
    };
    Ok(ClipScore {
        clip_id: clip_id.to_string(),
        geometry: sidecar.geometry.clone(),
        feature: feature.to_string(),
        snr_db: sidecar.snr_db,
        stoi: stoi(&x, &y, clean.sample_rate())?,
        si_sdr_db: si_sdr(&x, &y)?,
        pesq,
    })
}

/// Runs `<bin> +16000 <ref.wav> <deg.wav>` and takes the last number printed.
fn run_pesq(bin: &Path, clean: &WaveBuffer, estimate: &WaveBuffer, scratch: &Path) -> Option<f64> {
    let reference = scratch.with_extension("pesq-ref.wav");
    let degraded = scratch.with_extension("pesq-deg.wav");
    let result = (|| {
        write_wav(&reference, clean).ok()?;
        write_wav(&degraded, estimate).ok()?;
        let output = Command::new(bin)
            .arg(format!("+{}", clean.sample_rate()))
            .arg(&reference)
            .arg(&degraded)
            .output()
            .ok()?;
        let text = String::from_utf8_lossy(&output.stdout);
        text.split(|c: char| c.is_whitespace() || c == '=')
            .filter_map(|t| t.parse::<f64>().ok())
            .next_back()
    })();
    let _ = std::fs::remove_file(&reference);
    let _ = std::fs::remove_file(&degraded);
    if result.is_none() {
        warn!("PESQ binary {} produced no score", bin.display());
    }
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceManifest {
    pub mode: EnhanceMode,
    pub feature_kind: FeatureKind,
    /// Row label used in reports.
    pub label: String,
    pub clips: Vec<String>,
}

impl EnhanceManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join("manifest.json"))
    }
}

/// Enhances every clip of `dataset` into `out`.
pub fn cmd_enhance(
    cfg: &ExperimentConfig,
    dataset: &Path,
    mode: EnhanceMode,
    out: &Path,
) -> Result<Vec<ClipScore>> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(dataset)?;
    let model = match mode {
        EnhanceMode::Network => Some(NetworkModel::load(cfg)?),
        _ => None,
    };
    create_dir(out)?;
    let label = mode.label(cfg.feature);
    let scores = cfg.pool()?.install(|| {
        manifest
            .clips
            .par_iter()
            .map(|id| {
                let clip = load_clip(dataset, id)?;
                let (enhanced, _) = enhance_clip(&clip, cfg, mode, model.as_ref())?;
                write_wav(out.join(format!("{id}.wav")), &enhanced)?;
                let score = score(
                    id,
                    &clip.sidecar,
                    &label,
                    &clip.target_ref,
                    &enhanced,
                    cfg.pesq_binary.as_deref(),
                    &out.join(id),
                )?;
                write_json(&out.join(format!("{id}.json")), &score)?;
                Ok(score)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    write_json(
        &out.join("manifest.json"),
        &EnhanceManifest {
            mode,
            feature_kind: cfg.feature,
            label,
            clips: manifest.clips.clone(),
        },
    )?;
    Ok(scores)
}

/// Mean scores for one (geometry, feature, SNR) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub geometry: String,
    pub feature: String,
    pub snr_db: f64,
    pub clips: usize,
    pub stoi: f64,
    pub si_sdr_db: f64,
    pub pesq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub clips: Vec<ClipScore>,
}

impl EvalReport {
    /// Groups clip scores by geometry, feature and SNR. Rows follow the first
    /// appearance of each geometry and feature and ascending SNR.
    pub fn from_scores(clips: Vec<ClipScore>) -> Self {
        let order = |items: Vec<&String>| {
            let mut seen: Vec<String> = Vec::new();
            for item in items {
                if !seen.contains(item) {
                    seen.push(item.clone());
                }
            }
            seen
        };
        let geometries = order(clips.iter().map(|c| &c.geometry).collect());
        let features = order(clips.iter().map(|c| &c.feature).collect());
        let mut snrs: Vec<f64> = clips.iter().map(|c| c.snr_db).collect();
        snrs.sort_by(f64::total_cmp);
        snrs.dedup();

        let mut rows = Vec::new();
        for g in &geometries {
            for f in &features {
                for snr in &snrs {
                    let cell: Vec<&ClipScore> = clips
                        .iter()
                        .filter(|c| &c.geometry == g && &c.feature == f && c.snr_db == *snr)
                        .collect();
                    if cell.is_empty() {
                        continue;
                    }
                    let n = cell.len() as f64;
                    let pesq = if cell.iter().all(|c| c.pesq.is_some()) {
                        Some(cell.iter().filter_map(|c| c.pesq).sum::<f64>() / n)
                    } else {
                        None
                    };
                    rows.push(EvalRow {
                        geometry: g.clone(),
                        feature: f.clone(),
                        snr_db: *snr,
                        clips: cell.len(),
                        stoi: cell.iter().map(|c| c.stoi).sum::<f64>() / n,
                        si_sdr_db: cell.iter().map(|c| c.si_sdr_db).sum::<f64>() / n,
                        pesq,
                    });
                }
            }
        }
        EvalReport { rows, clips }
    }

    pub fn row(&self, geometry: &str, feature: &str, snr_db: f64) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.geometry == geometry && r.feature == feature && r.snr_db == snr_db)
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("geometry,feature,snr_db,clips,stoi,si_sdr_db,pesq\n");
        for r in &self.rows {
            let pesq = r.pesq.map(|p| format!("{p:.4}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{}",
                r.geometry, r.feature, r.snr_db, r.clips, r.stoi, r.si_sdr_db, pesq
            );
        }
        out
    }

    pub fn clips_csv(&self) -> String {
        let mut out = String::from("clip_id,geometry,feature,snr_db,stoi,si_sdr_db,pesq\n");
        for c in &self.clips {
            let pesq = c.pesq.map(|p| format!("{p:.4}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{}",
                c.clip_id, c.geometry, c.feature, c.snr_db, c.stoi, c.si_sdr_db, pesq
            );
        }
        out
    }

    /// Writes `report.csv`, `clips.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.rows_csv()).map_err(|e| Error::io(&csv, e))?;
        let clips = dir.join("clips.csv");
        std::fs::write(&clips, self.clips_csv()).map_err(|e| Error::io(&clips, e))?;
        write_json(&dir.join("report.json"), self)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOptions {
    /// Also write a grayscale PNG of each coherence plane for every clip.
    pub plots: bool,
}

/// Scores the noisy mixtures and every enhanced directory against the
/// reverberant target, then writes the report into `out`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    dataset: &Path,
    enhanced: &[PathBuf],
    out: &Path,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let manifest = DatasetManifest::load(dataset)?;
    let mut runs = Vec::new();
    for dir in enhanced {
        let m = EnhanceManifest::load(dir)?;
        let mut expected = manifest.clips.clone();
        let mut got = m.clips.clone();
        expected.sort();
        got.sort();
        if expected != got {
            let missing: Vec<&String> = expected.iter().filter(|c| !got.contains(c)).collect();
            let extra: Vec<&String> = got.iter().filter(|c| !expected.contains(c)).collect();
            return Err(Error::Data(format!(
                "{} does not match the dataset clips (missing {missing:?}, unexpected {extra:?})",
                dir.display()
            )));
        }
        runs.push((dir.clone(), m));
    }
    create_dir(out)?;
    if options.plots {
        create_dir(&out.join("plots"))?;
    }
    let per_clip = cfg.pool()?.install(|| {
        manifest
            .clips
            .par_iter()
            .map(|id| {
                let clip = load_clip(dataset, id)?;
                let noisy = clip.mixture.select_channel(REF_CHANNEL)?;
                let scratch = out.join(id);
                let pesq = cfg.pesq_binary.as_deref();
                let mut scores =
                    vec![score(id, &clip.sidecar, "noisy", &clip.target_ref, &noisy, pesq, &scratch)?];
                for (dir, m) in &runs {
                    let estimate = read_wav(dir.join(format!("{id}.wav")))?;
                    if estimate.len() != clip.target_ref.len() {
                        return Err(Error::Data(format!(
                            "{id}: enhanced length {} differs from {}",
                            estimate.len(),
                            clip.target_ref.len()
                        )));
                    }
                    scores.push(score(
                        id,
                        &clip.sidecar,
                        &m.label,
                        &clip.target_ref,
                        &estimate,
                        pesq,
                        &scratch,
                    )?);
                }
                if options.plots {
                    plot_clip(&clip, cfg, &out.join("plots"))?;
                }
                Ok(scores)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let report = EvalReport::from_scores(per_clip.into_iter().flatten().collect());
    report.write(out)?;
    Ok(report)
}

fn plot_clip(clip: &DatasetClip, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let spec = stft(&clip.mixture, &cfg.stft)?;
    let stack = feature_stack(&spec, FeatureKind::GlLstsc, &cfg.feature_config())?;
    for name in ["g_lstsc", "l_lstsc"] {
        let plane = stack.plane(name).expect("gl-lstsc has both planes");
        write_plane_png(
            plane,
            -1.0,
            1.0,
            &dir.join(format!("{}_{name}.png", clip.sidecar.clip_id)),
        )?;
    }
    Ok(())
}

/// Grayscale image of a `(frame, bin)` plane: time left to right, frequency
/// bottom to top, `lo` black and `hi` white.
pub fn write_plane_png(plane: &Array2<f64>, lo: f64, hi: f64, path: &Path) -> Result<()> {
    let (frames, bins) = plane.dim();
    if frames == 0 || bins == 0 || !(hi > lo) {
        return Err(Error::Data("cannot plot an empty plane".into()));
    }
    let img = image::GrayImage::from_fn(frames as u32, bins as u32, |x, y| {
        let v = plane[[x as usize, bins - 1 - y as usize]];
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        image::Luma([(t * 255.0).round() as u8])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Human-readable summary of a weight, embedding or feature container.
pub fn describe_container(path: &Path) -> Result<String> {
    let c = Container::read(path)?;
    let mut out = String::new();
    for (k, v) in c.attributes() {
        let _ = writeln!(out, "{k} = {v}");
    }
    for (name, t) in c.tensors() {
        let _ = writeln!(out, "{name} {:?}", t.shape);
    }
    Ok(out)
}
