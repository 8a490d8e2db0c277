//! Spatial features: short-term relative transfer functions (RTFs), phase-only
//! whitening, recursively averaged long-term RTFs and their long-short-term
//! spatial coherence (LSTSC), plus the interchannel phase difference (IPD)
//! baseline.
//!
//! All RTFs are taken against a reference channel. For `M` channels every
//! time-frequency bin carries an `M - 1` entry vector ordered by channel index
//! with the reference skipped.
//!
//! Degenerate entries are flagged rather than reported as errors:
//! * a bin whose reference auto-spectrum (summed over the averaging window)
//!   falls below `1e-12 * mean reference power` marks every entry of that
//!   short-term RTF as floored;
//! * whitening marks entries with modulus below `1e-12` invalid;
//! * invalid entries never update the long-term state and are left out of the
//!   coherence average. A bin with no valid entry pair has coherence 0.

use std::collections::VecDeque;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::stft::{magnitude, MultiChannelSpectrogram};

/// Number of neighbouring frames averaged into one short-term RTF (`R`).
pub const DEFAULT_AVERAGING: usize = 2;
/// Forgetting factor of the global coherence plane.
pub const GLOBAL_FORGETTING: f64 = 0.999;
/// Forgetting factor of the local coherence plane.
pub const LOCAL_FORGETTING: f64 = 0.1;

const MODULUS_FLOOR: f64 = 1e-12;
const POWER_FLOOR_FACTOR: f64 = 1e-12;

fn check_rtf_args(channels: usize, ref_channel: usize, averaging: usize) -> Result<()> {
    if channels < 2 {
        return Err(Error::Config(format!(
            "relative transfer functions need at least 2 channels, got {channels}"
        )));
    }
    if ref_channel >= channels {
        return Err(Error::Config(format!(
            "reference channel {ref_channel} out of range for {channels} channels"
        )));
    }
    if averaging % 2 != 0 {
        return Err(Error::Config(format!(
            "averaging frame count R must be even so the window is centred, got {averaging}"
        )));
    }
    Ok(())
}

/// Auto-spectrum floor for a spectrogram: `1e-12` times the mean power of the
/// reference channel.
pub fn denominator_floor(spec: &MultiChannelSpectrogram, ref_channel: usize) -> f64 {
    let reference = spec.channel(ref_channel);
    let count = reference.len().max(1) as f64;
    POWER_FLOOR_FACTOR * reference.iter().map(|z| z.norm_sqr()).sum::<f64>() / count
}

/// Short-term RTF of one time-frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortTermRtfFrame {
    pub values: Vec<Complex64>,
    /// Set when the reference auto-spectrum hit the floor; `values` are then zero.
    pub floored: bool,
}

/// Short-term RTFs for a whole clip, `(frame, bin, entry)`.
#[derive(Debug, Clone)]
pub struct ShortTermRtf {
    values: Array3<Complex64>,
    floored: Array2<bool>,
}

impl ShortTermRtf {
    pub fn frames(&self) -> usize {
        self.floored.nrows()
    }

    pub fn bins(&self) -> usize {
        self.floored.ncols()
    }

    pub fn entries(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn frame(&self, l: usize, f: usize) -> ShortTermRtfFrame {
        ShortTermRtfFrame {
            values: self.values.slice(ndarray::s![l, f, ..]).to_vec(),
            floored: self.floored[[l, f]],
        }
    }

    pub fn values(&self) -> &Array3<Complex64> {
        &self.values
    }

    pub fn floored(&self) -> &Array2<bool> {
        &self.floored
    }
}

/// Cross-spectral ratio over a window of frames, each `(channel, bin)`.
fn rtf_over_window(
    window: &[ArrayView2<'_, Complex64>],
    f: usize,
    ref_channel: usize,
    floor: f64,
    out: &mut [Complex64],
) -> bool {
    let channels = window[0].nrows();
    let mut auto = 0.0;
    for frame in window {
        auto += frame[[ref_channel, f]].norm_sqr();
    }
    let floored = auto <= floor;
    let mut k = 0;
    for m in (0..channels).filter(|&m| m != ref_channel) {
        if floored {
            out[k] = Complex64::new(0.0, 0.0);
        } else {
            let mut cross = Complex64::new(0.0, 0.0);
            for frame in window {
                cross += frame[[m, f]] * frame[[ref_channel, f]].conj();
            }
            out[k] = cross / auto;
        }
        k += 1;
    }
    floored
}

/// Frames `[l - R/2, l + R/2]` clamped to the clip.
fn window_bounds(l: usize, half: usize, frames: usize) -> (usize, usize) {
    (l.saturating_sub(half), (l + half).min(frames - 1))
}

/// Short-term RTFs of every bin, averaging `averaging + 1` frames centred on
/// each frame. The window shrinks at the clip edges rather than padding.
pub fn short_term_rtf(
    spec: &MultiChannelSpectrogram,
    ref_channel: usize,
    averaging: usize,
) -> Result<ShortTermRtf> {
    check_rtf_args(spec.channels(), ref_channel, averaging)?;
    let floor = denominator_floor(spec, ref_channel);
    short_term_rtf_with_floor(spec, ref_channel, averaging, floor)
}

pub fn short_term_rtf_with_floor(
    spec: &MultiChannelSpectrogram,
    ref_channel: usize,
    averaging: usize,
    floor: f64,
) -> Result<ShortTermRtf> {
    check_rtf_args(spec.channels(), ref_channel, averaging)?;
    let (frames, bins, entries) = (spec.frames(), spec.bins(), spec.channels() - 1);
    let mut values = Array3::zeros((frames, bins, entries));
    let mut floored = Array2::from_elem((frames, bins), false);
    let views: Vec<ArrayView2<'_, Complex64>> = (0..frames)
        .map(|l| spec.data().slice(ndarray::s![.., l, ..]))
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); entries];
    for l in 0..frames {
        let (lo, hi) = window_bounds(l, averaging / 2, frames);
        for f in 0..bins {
            floored[[l, f]] = rtf_over_window(&views[lo..=hi], f, ref_channel, floor, &mut out);
            for (k, v) in out.iter().enumerate() {
                values[[l, f, k]] = *v;
            }
        }
    }
    Ok(ShortTermRtf { values, floored })
}

/// Phase-only vector: unit-modulus entries plus a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedVector {
    pub values: Vec<Complex64>,
    pub valid: Vec<bool>,
}

impl WhitenedVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Entrywise negation, used by the coherence bound checks.
    pub fn negated(&self) -> WhitenedVector {
        WhitenedVector {
            values: self.values.iter().map(|z| -z).collect(),
            valid: self.valid.clone(),
        }
    }
}

fn whiten_entry(z: Complex64) -> Option<Complex64> {
    let modulus = z.norm();
    (modulus >= MODULUS_FLOOR).then(|| z / modulus)
}

/// Divides every entry by its modulus. Entries below the modulus floor become
/// invalid and read as `1 + 0j`.
pub fn whiten(v: &[Complex64]) -> WhitenedVector {
    let mut values = Vec::with_capacity(v.len());
    let mut valid = Vec::with_capacity(v.len());
    for z in v {
        match whiten_entry(*z) {
            Some(w) => {
                values.push(w);
                valid.push(true);
            }
            None => {
                values.push(Complex64::new(1.0, 0.0));
                valid.push(false);
            }
        }
    }
    WhitenedVector { values, valid }
}

fn whiten_frame(frame: &ShortTermRtfFrame) -> WhitenedVector {
    let mut w = whiten(&frame.values);
    if frame.floored {
        w.valid.iter_mut().for_each(|v| *v = false);
    }
    w
}

/// Recursively averaged, re-whitened RTF of one frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTermRtfState {
    mean: WhitenedVector,
    lambda: f64,
    initialized: bool,
}

impl LongTermRtfState {
    pub fn new(entries: usize, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!(
                "forgetting factor must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(LongTermRtfState {
            mean: WhitenedVector {
                values: vec![Complex64::new(1.0, 0.0); entries],
                valid: vec![false; entries],
            },
            lambda,
            initialized: false,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn current(&self) -> &WhitenedVector {
        &self.mean
    }

    /// `mean <- lambda * mean + (1 - lambda) * r`, then re-whitened.
    ///
    /// The first update copies `r`. Afterwards an invalid entry of `r` leaves
    /// the state entry untouched, a state entry that is still invalid takes the
    /// next valid `r` entry, and an average that cancels to (near) zero
    /// invalidates the state entry.
    pub fn update(&mut self, r: &WhitenedVector) -> Result<()> {
        if r.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "long-term state has {} entries, whitened vector has {}",
                self.mean.len(),
                r.len()
            )));
        }
        if !self.initialized {
            self.mean = r.clone();
            self.initialized = true;
            return Ok(());
        }
        for m in 0..r.len() {
            if !r.valid[m] {
                continue;
            }
            if !self.mean.valid[m] {
                self.mean.values[m] = r.values[m];
                self.mean.valid[m] = true;
                continue;
            }
            let blended = self.mean.values[m] * self.lambda + r.values[m] * (1.0 - self.lambda);
            match whiten_entry(blended) {
                Some(w) => self.mean.values[m] = w,
                None => {
                    self.mean.values[m] = Complex64::new(1.0, 0.0);
                    self.mean.valid[m] = false;
                }
            }
        }
        Ok(())
    }
}

/// Coherence of one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coherence {
    pub gamma: f64,
    pub valid_entries: usize,
}

impl Coherence {
    pub fn is_degenerate(&self) -> bool {
        self.valid_entries == 0
    }
}

/// `Re{conj(a) b}` for unit-modulus `a` and `b`, via the chord length on the
/// unit circle. Exact at `b = a` and `b = -a`.
fn unit_inner(a: Complex64, b: Complex64) -> f64 {
    let diff = (a - b).norm_sqr();
    let sum = (a + b).norm_sqr();
    if diff <= sum {
        1.0 - 0.5 * diff
    } else {
        0.5 * sum - 1.0
    }
}

/// `Re{r^H r_bar}` averaged over the entries valid in both vectors, clamped to
/// `[-1, 1]`.
pub fn lstsc(r: &WhitenedVector, r_bar: &WhitenedVector) -> Result<Coherence> {
    if r.len() != r_bar.len() {
        return Err(Error::Shape(format!(
            "coherence of vectors with {} and {} entries",
            r.len(),
            r_bar.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0;
    for m in 0..r.len() {
        if r.valid[m] && r_bar.valid[m] {
            total += unit_inner(r.values[m], r_bar.values[m]);
            count += 1;
        }
    }
    let gamma = if count == 0 {
        0.0
    } else {
        (total / count as f64).clamp(-1.0, 1.0)
    };
    Ok(Coherence {
        gamma,
        valid_entries: count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstscConfig {
    pub ref_channel: usize,
    /// `R`, must be even.
    pub averaging: usize,
    pub lambda: f64,
}

impl LstscConfig {
    pub fn global() -> Self {
        LstscConfig {
            ref_channel: 0,
            averaging: DEFAULT_AVERAGING,
            lambda: GLOBAL_FORGETTING,
        }
    }

    pub fn local() -> Self {
        LstscConfig {
            lambda: LOCAL_FORGETTING,
            ..Self::global()
        }
    }
}

/// Coherence plane `(frame, bin)` for one forgetting factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LstscMap {
    pub gamma: Array2<f64>,
    pub lambda: f64,
}

/// Batch coherence planes, one per forgetting factor, sharing the short-term
/// RTFs.
pub fn lstsc_maps(
    spec: &MultiChannelSpectrogram,
    ref_channel: usize,
    averaging: usize,
    lambdas: &[f64],
) -> Result<Vec<LstscMap>> {
    let rtf = short_term_rtf(spec, ref_channel, averaging)?;
    lstsc_maps_from_rtf(&rtf, lambdas)
}

pub fn lstsc_maps_from_rtf(rtf: &ShortTermRtf, lambdas: &[f64]) -> Result<Vec<LstscMap>> {
    let (frames, bins, entries) = (rtf.frames(), rtf.bins(), rtf.entries());
    let mut maps = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut gamma = Array2::zeros((frames, bins));
        for f in 0..bins {
            let mut state = LongTermRtfState::new(entries, lambda)?;
            for l in 0..frames {
                let r = whiten_frame(&rtf.frame(l, f));
                state.update(&r)?;
                gamma[[l, f]] = lstsc(&r, state.current())?.gamma;
            }
        }
        maps.push(LstscMap { gamma, lambda });
    }
    Ok(maps)
}

pub fn lstsc_map(spec: &MultiChannelSpectrogram, cfg: &LstscConfig) -> Result<LstscMap> {
    let mut maps = lstsc_maps(spec, cfg.ref_channel, cfg.averaging, &[cfg.lambda])?;
    Ok(maps.remove(0))
}

/// One frame of coherence output from [`LstscStream`]: `gamma[k][f]` for the
/// `k`-th forgetting factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceFrame {
    pub frame: usize,
    pub gamma: Vec<Vec<f64>>,
}

/// Frame-at-a-time coherence. Output for frame `l` is released once frame
/// `l + R/2` has arrived, or by [`LstscStream::finish`] at the end of a clip.
///
/// The auto-spectrum floor is fixed up front; pass
/// [`denominator_floor`] of the whole clip to reproduce batch output exactly.
#[derive(Debug, Clone)]
pub struct LstscStream {
    channels: usize,
    bins: usize,
    ref_channel: usize,
    half: usize,
    floor: f64,
    buffer: VecDeque<Array2<Complex64>>,
    received: usize,
    emitted: usize,
    states: Vec<Vec<LongTermRtfState>>,
    scratch: Vec<Complex64>,
}

impl LstscStream {
    pub fn new(
        channels: usize,
        bins: usize,
        ref_channel: usize,
        averaging: usize,
        lambdas: &[f64],
        floor: f64,
    ) -> Result<Self> {
        check_rtf_args(channels, ref_channel, averaging)?;
        let states = lambdas
            .iter()
            .map(|&lambda| {
                (0..bins)
                    .map(|_| LongTermRtfState::new(channels - 1, lambda))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LstscStream {
            channels,
            bins,
            ref_channel,
            half: averaging / 2,
            floor,
            buffer: VecDeque::new(),
            received: 0,
            emitted: 0,
            states,
            scratch: vec![Complex64::new(0.0, 0.0); channels - 1],
        })
    }

    /// Feeds one STFT frame laid out `(channel, bin)`.
    pub fn push(&mut self, frame: ArrayView2<'_, Complex64>) -> Result<Option<CoherenceFrame>> {
        if frame.dim() != (self.channels, self.bins) {
            return Err(Error::Shape(format!(
                "stream expects ({}, {}) frames, got {:?}",
                self.channels,
                self.bins,
                frame.dim()
            )));
        }
        self.buffer.push_back(frame.to_owned());
        self.received += 1;
        if self.received > self.half {
            let l = self.received - 1 - self.half;
            return Ok(Some(self.emit(l, self.received)?));
        }
        Ok(None)
    }

    /// Flushes the trailing frames whose look-ahead runs past the clip end.
    pub fn finish(mut self) -> Result<Vec<CoherenceFrame>> {
        let total = self.received;
        let mut out = Vec::new();
        while self.emitted < total {
            out.push(self.emit(self.emitted, total)?);
        }
        Ok(out)
    }

    /// Emits frame `l` given that frames `< available` are known.
    fn emit(&mut self, l: usize, available: usize) -> Result<CoherenceFrame> {
        let (lo, hi) = window_bounds(l, self.half, available);
        // The buffer starts at absolute frame `first`.
        let first = self.received - self.buffer.len();
        let views: Vec<ArrayView2<'_, Complex64>> = (lo..=hi)
            .map(|n| self.buffer[n - first].view())
            .collect();
        let mut gamma = vec![vec![0.0; self.bins]; self.states.len()];
        for f in 0..self.bins {
            let floored =
                rtf_over_window(&views, f, self.ref_channel, self.floor, &mut self.scratch);
            let r = whiten_frame(&ShortTermRtfFrame {
                values: self.scratch.clone(),
                floored,
            });
            for (k, states) in self.states.iter_mut().enumerate() {
                states[f].update(&r)?;
                gamma[k][f] = lstsc(&r, states[f].current())?.gamma;
            }
        }
        self.emitted = l + 1;
        // Frames before the next window start are no longer needed.
        let keep_from = (l + 1).saturating_sub(self.half);
        while self.received - self.buffer.len() < keep_from {
            self.buffer.pop_front();
        }
        Ok(CoherenceFrame { frame: l, gamma })
    }
}

/// Wraps a phase to `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    use std::f64::consts::PI;
    let mut wrapped = phi.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped -= 2.0 * PI;
    }
    wrapped
}

/// Per-pair IPD planes: `cos(wrap(angle(Y^m) - angle(Y^ref)))` for every
/// non-reference channel. The plane count, `M - 1`, grows with the array.
pub fn ipd_pairs(spec: &MultiChannelSpectrogram, ref_channel: usize) -> Result<Vec<Array2<f64>>> {
    check_rtf_args(spec.channels(), ref_channel, 0)?;
    let reference = spec.channel(ref_channel);
    Ok((0..spec.channels())
        .filter(|&m| m != ref_channel)
        .map(|m| {
            let channel = spec.channel(m);
            Array2::from_shape_fn((spec.frames(), spec.bins()), |(l, f)| {
                wrap_phase(channel[[l, f]].arg() - reference[[l, f]].arg()).cos()
            })
        })
        .collect())
}

/// Baseline IPD plane: the pairwise IPD cosines averaged over the `M - 1` pairs.
pub fn ipd_feature(spec: &MultiChannelSpectrogram, ref_channel: usize) -> Result<Array2<f64>> {
    let pairs = ipd_pairs(spec, ref_channel)?;
    let count = pairs.len() as f64;
    let mut sum = Array2::zeros((spec.frames(), spec.bins()));
    for plane in &pairs {
        sum += plane;
    }
    Ok(sum / count)
}

/// Which spatial planes accompany the reference magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Magnitude only.
    None,
    GLstsc,
    GlLstsc,
    Ipd,
}

impl FeatureKind {
    pub fn plane_count(self) -> usize {
        match self {
            FeatureKind::None => 1,
            FeatureKind::GLstsc | FeatureKind::Ipd => 2,
            FeatureKind::GlLstsc => 3,
        }
    }

    pub fn plane_names(self) -> &'static [&'static str] {
        match self {
            FeatureKind::None => &["magnitude"],
            FeatureKind::GLstsc => &["magnitude", "g_lstsc"],
            FeatureKind::GlLstsc => &["magnitude", "g_lstsc", "l_lstsc"],
            FeatureKind::Ipd => &["magnitude", "ipd"],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FeatureKind::None => "none",
            FeatureKind::GLstsc => "g-lstsc",
            FeatureKind::GlLstsc => "gl-lstsc",
            FeatureKind::Ipd => "ipd",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "magnitude" => Ok(FeatureKind::None),
            "g-lstsc" | "glstsc" => Ok(FeatureKind::GLstsc),
            "gl-lstsc" | "gllstsc" => Ok(FeatureKind::GlLstsc),
            "ipd" => Ok(FeatureKind::Ipd),
            other => Err(Error::Config(format!("unknown feature kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub ref_channel: usize,
    pub averaging: usize,
    pub global_lambda: f64,
    pub local_lambda: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            ref_channel: 0,
            averaging: DEFAULT_AVERAGING,
            global_lambda: GLOBAL_FORGETTING,
            local_lambda: LOCAL_FORGETTING,
        }
    }
}

/// Network input planes, each `(frame, bin)`.
///
/// Plane order is fixed: reference magnitude first, then `g_lstsc`, then
/// `l_lstsc`; or magnitude then `ipd`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub kind: FeatureKind,
    pub planes: Vec<Array2<f64>>,
}

impl FeatureStack {
    pub fn new(kind: FeatureKind, planes: Vec<Array2<f64>>) -> Result<Self> {
        if planes.len() != kind.plane_count() {
            return Err(Error::Shape(format!(
                "{kind} expects {} planes, got {}",
                kind.plane_count(),
                planes.len()
            )));
        }
        let dim = planes[0].dim();
        if planes.iter().any(|p| p.dim() != dim) {
            return Err(Error::Shape("feature planes differ in shape".into()));
        }
        Ok(FeatureStack { kind, planes })
    }

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn frames(&self) -> usize {
        self.planes[0].nrows()
    }

    pub fn bins(&self) -> usize {
        self.planes[0].ncols()
    }

    pub fn plane(&self, name: &str) -> Option<&Array2<f64>> {
        self.kind
            .plane_names()
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.planes[i])
    }

    /// Packs the planes as `[frames, bins]` f32 tensors named after the planes.
    pub fn to_container(&self) -> Container {
        let mut container = Container::new();
        container.set_attribute("kind", "features");
        container.set_attribute("feature_kind", self.kind.label());
        for (name, plane) in self.kind.plane_names().iter().zip(&self.planes) {
            let data = plane.iter().map(|v| *v as f32).collect();
            container.insert(*name, Tensor::new(vec![plane.nrows(), plane.ncols()], data));
        }
        container
    }
}

/// Builds the feature stack for a multichannel spectrogram. The magnitude plane
/// comes from the reference channel.
pub fn feature_stack(
    spec: &MultiChannelSpectrogram,
    kind: FeatureKind,
    cfg: &FeatureConfig,
) -> Result<FeatureStack> {
    if cfg.ref_channel >= spec.channels() {
        return Err(Error::Config(format!(
            "reference channel {} out of range for {} channels",
            cfg.ref_channel,
            spec.channels()
        )));
    }
    let mag = magnitude(&spec.select_channel(cfg.ref_channel));
    let mut planes = vec![mag.index_axis(ndarray::Axis(0), 0).to_owned()];
    match kind {
        FeatureKind::None => {}
        FeatureKind::GLstsc => {
            let maps = lstsc_maps(spec, cfg.ref_channel, cfg.averaging, &[cfg.global_lambda])?;
            planes.extend(maps.into_iter().map(|m| m.gamma));
        }
        FeatureKind::GlLstsc => {
            let maps = lstsc_maps(
                spec,
                cfg.ref_channel,
                cfg.averaging,
                &[cfg.global_lambda, cfg.local_lambda],
            )?;
            planes.extend(maps.into_iter().map(|m| m.gamma));
        }
        FeatureKind::Ipd => planes.push(ipd_feature(spec, cfg.ref_channel)?),
    }
    FeatureStack::new(kind, planes)
}
