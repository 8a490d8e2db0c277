//! Shoebox-room image-source RIRs, convolutional rendering and SNR mixing.
//!
//! Coordinates are meters. Angles are degrees in the horizontal plane, 0° along
//! +x from the array centre and increasing counterclockwise (90° is +y).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wave::WaveBuffer;

pub type Point = [f64; 3];

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Half-width of the windowed-sinc fractional delay kernel (81 taps).
pub const SINC_HALF_WIDTH: usize = 40;
pub const MAX_IMAGE_ORDER: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryKind {
    Uca { radius: f64 },
    Ula { spacing: f64 },
    Arbitrary,
}

/// Microphone offsets relative to the array centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub kind: GeometryKind,
    pub offsets: Vec<Point>,
}

impl ArrayGeometry {
    /// `count` microphones on a horizontal circle, the first on +x.
    pub fn uca(radius: f64, count: usize) -> Result<Self> {
        if !(radius > 0.0) || count == 0 {
            return Err(Error::Geometry(format!(
                "UCA needs a positive radius and at least one mic, got r={radius} M={count}"
            )));
        }
        let offsets = (0..count)
            .map(|k| {
                let phi = 2.0 * PI * k as f64 / count as f64;
                [radius * phi.cos(), radius * phi.sin(), 0.0]
            })
            .collect();
        Self::checked(GeometryKind::Uca { radius }, offsets)
    }

    /// `count` microphones along x, centred on the array centre.
    pub fn ula(spacing: f64, count: usize) -> Result<Self> {
        if !(spacing > 0.0) || count == 0 {
            return Err(Error::Geometry(format!(
                "ULA needs a positive spacing and at least one mic, got d={spacing} M={count}"
            )));
        }
        let mid = (count as f64 - 1.0) / 2.0;
        let offsets = (0..count)
            .map(|k| [(k as f64 - mid) * spacing, 0.0, 0.0])
            .collect();
        Self::checked(GeometryKind::Ula { spacing }, offsets)
    }

    pub fn arbitrary(offsets: Vec<Point>) -> Result<Self> {
        Self::checked(GeometryKind::Arbitrary, offsets)
    }

    fn checked(kind: GeometryKind, offsets: Vec<Point>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::Geometry("an array needs at least one microphone".into()));
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("non-finite microphone position".into()));
        }
        for (i, a) in offsets.iter().enumerate() {
            for b in &offsets[i + 1..] {
                if distance(a, b) < 1e-9 {
                    return Err(Error::Geometry(format!(
                        "duplicate microphone position {a:?}"
                    )));
                }
            }
        }
        Ok(ArrayGeometry { kind, offsets })
    }

    pub fn mic_count(&self) -> usize {
        self.offsets.len()
    }

    pub fn positions(&self, center: Point) -> Vec<Point> {
        self.offsets
            .iter()
            .map(|o| [center[0] + o[0], center[1] + o[1], center[2] + o[2]])
            .collect()
    }
}

/// Parses `uca:<radius>:<count>`, `ula:<spacing>:<count>` or
/// `mics:x,y,z;x,y,z;...` (offsets in meters).
impl FromStr for ArrayGeometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Geometry(format!("cannot parse geometry `{s}`"));
        let mut parts = s.splitn(2, ':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let rest = parts.next().ok_or_else(bad)?;
        match kind.as_str() {
            "uca" | "ula" => {
                let (size, count) = rest.split_once(':').ok_or_else(bad)?;
                let size: f64 = size.trim().parse().map_err(|_| bad())?;
                let count: usize = count.trim().parse().map_err(|_| bad())?;
                if kind == "uca" {
                    Self::uca(size, count)
                } else {
                    Self::ula(size, count)
                }
            }
            "mics" => {
                let offsets = rest
                    .split(';')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| {
                        let v: Vec<f64> = p
                            .split(',')
                            .map(|c| c.trim().parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad())?;
                        <[f64; 3]>::try_from(v).map_err(|_| bad())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::arbitrary(offsets)
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ArrayGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GeometryKind::Uca { radius } => write!(f, "uca:{radius}:{}", self.mic_count()),
            GeometryKind::Ula { spacing } => write!(f, "ula:{spacing}:{}", self.mic_count()),
            GeometryKind::Arbitrary => {
                let mics: Vec<String> = self
                    .offsets
                    .iter()
                    .map(|p| format!("{},{},{}", p[0], p[1], p[2]))
                    .collect();
                write!(f, "mics:{}", mics.join(";"))
            }
        }
    }
}

fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Room and placement parameters. Defaults: a 4 x 4 x 3 m room with
/// T60 = 0.2 s, the array in the middle at 1.5 m height, target on a 1 m
/// circle over 0°..180° and interference on a 1.5 m circle over 180°..360°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomConfig {
    pub dims: Point,
    pub t60: f64,
    pub array_center: Point,
    pub speed_of_sound: f64,
    pub target_radius: f64,
    pub interferer_radius: f64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        RoomConfig {
            dims: [4.0, 4.0, 3.0],
            t60: 0.2,
            array_center: [2.0, 2.0, 1.5],
            speed_of_sound: SPEED_OF_SOUND,
            target_radius: 1.0,
            interferer_radius: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomScene {
    pub room_dims: Point,
    pub t60: f64,
    /// Target first, then interference, for scenes built by [`place_scene`].
    pub source_positions: Vec<Point>,
    pub array: ArrayGeometry,
    pub array_center: Point,
    pub speed_of_sound: f64,
}

impl RoomScene {
    pub fn mic_positions(&self) -> Vec<Point> {
        self.array.positions(self.array_center)
    }

    pub fn validate(&self) -> Result<()> {
        if self.room_dims.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Geometry(format!(
                "room dimensions must be positive, got {:?}",
                self.room_dims
            )));
        }
        if !(self.t60 >= 0.0) {
            return Err(Error::Parameter(format!("T60 must be >= 0, got {}", self.t60)));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::Parameter("speed of sound must be positive".into()));
        }
        let inside = |p: &Point| (0..3).all(|i| p[i] > 0.0 && p[i] < self.room_dims[i]);
        for p in &self.source_positions {
            if !inside(p) {
                return Err(Error::Geometry(format!("source {p:?} lies outside the room")));
            }
        }
        for p in self.mic_positions() {
            if !inside(&p) {
                return Err(Error::Geometry(format!(
                    "microphone {p:?} lies outside the room"
                )));
            }
        }
        Ok(())
    }
}

/// Point at `radius` and `angle_deg` around `center` in the horizontal plane.
pub fn polar_point(center: Point, radius: f64, angle_deg: f64) -> Point {
    let phi = angle_deg.to_radians();
    [
        center[0] + radius * phi.cos(),
        center[1] + radius * phi.sin(),
        center[2],
    ]
}

/// Target on the 0°..180° arc, interference on the 180°..360° arc, in the
/// default room.
pub fn place_scene(
    target_angle_deg: f64,
    interferer_angle_deg: f64,
    geometry: &ArrayGeometry,
) -> Result<RoomScene> {
    place_scene_in(
        &RoomConfig::default(),
        target_angle_deg,
        interferer_angle_deg,
        geometry,
    )
}

pub fn place_scene_in(
    room: &RoomConfig,
    target_angle_deg: f64,
    interferer_angle_deg: f64,
    geometry: &ArrayGeometry,
) -> Result<RoomScene> {
    if !(0.0..=180.0).contains(&target_angle_deg) {
        return Err(Error::Geometry(format!(
            "target angle {target_angle_deg}° outside the 0°..180° arc"
        )));
    }
    if !(180.0..=360.0).contains(&interferer_angle_deg) {
        return Err(Error::Geometry(format!(
            "interferer angle {interferer_angle_deg}° outside the 180°..360° arc"
        )));
    }
    let scene = RoomScene {
        room_dims: room.dims,
        t60: room.t60,
        source_positions: vec![
            polar_point(room.array_center, room.target_radius, target_angle_deg),
            polar_point(room.array_center, room.interferer_radius, interferer_angle_deg),
        ],
        array: geometry.clone(),
        array_center: room.array_center,
        speed_of_sound: room.speed_of_sound,
    };
    scene.validate()?;
    Ok(scene)
}

/// Uniform wall reflection coefficient for a requested T60,
/// `beta = sqrt(1 - 0.161 V / (S T60))`. T60 = 0 is anechoic; a T60 so short
/// that the required absorption exceeds 1 is unreachable.
pub fn reflection_coefficient(dims: Point, t60: f64) -> Result<f64> {
    if !(t60 >= 0.0) || !t60.is_finite() {
        return Err(Error::Parameter(format!("T60 must be finite and >= 0, got {t60}")));
    }
    if t60 == 0.0 {
        return Ok(0.0);
    }
    let volume = dims[0] * dims[1] * dims[2];
    let surface = 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2]);
    let absorption = 0.161 * volume / (surface * t60);
    if absorption > 1.0 {
        return Err(Error::Parameter(format!(
            "T60 = {t60} s is unreachable for a {dims:?} m room (needs absorption {absorption:.3} > 1)"
        )));
    }
    Ok((1.0 - absorption).sqrt())
}

/// Highest reflection order whose attenuation stays above -60 dB.
pub fn image_order(beta: f64) -> usize {
    if beta <= 0.0 {
        0
    } else if beta >= 1.0 {
        MAX_IMAGE_ORDER
    } else {
        ((1e-3f64).ln() / beta.ln()).ceil().min(MAX_IMAGE_ORDER as f64) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
}

/// RIR length: direct path of the farthest pair plus T60 worth of decay.
fn rir_len(scene: &RoomScene, fs: f64) -> usize {
    let mics = scene.mic_positions();
    let farthest = scene
        .source_positions
        .iter()
        .flat_map(|s| mics.iter().map(move |m| distance(s, m)))
        .fold(0.0, f64::max);
    (farthest * fs / scene.speed_of_sound).ceil() as usize
        + SINC_HALF_WIDTH
        + 1
        + (scene.t60 * fs).ceil() as usize
}

/// Adds `amplitude * w(n - delay) * sinc(n - delay)` with an 81-tap Hann window.
fn add_fractional_impulse(taps: &mut [f64], delay: f64, amplitude: f64) {
    let width = (2 * SINC_HALF_WIDTH + 1) as f64;
    let lo = (delay - SINC_HALF_WIDTH as f64).ceil().max(0.0) as usize;
    let hi = ((delay + SINC_HALF_WIDTH as f64).floor() as usize).min(taps.len().saturating_sub(1));
    for (n, tap) in taps.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let x = n as f64 - delay;
        let window = 0.5 * (1.0 + (2.0 * PI * x / width).cos());
        let sinc = if x == 0.0 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        };
        *tap += amplitude * window * sinc;
    }
}

fn image_source_rir(
    source: &Point,
    mic: &Point,
    scene: &RoomScene,
    beta: f64,
    order: usize,
    len: usize,
    fs: f64,
) -> Vec<f64> {
    let mut taps = vec![0.0; len];
    let dims = scene.room_dims;
    let max_delay = len as f64 + SINC_HALF_WIDTH as f64;
    let n = order as i64;
    // Images farther than the RIR length are skipped, which bounds each shift.
    let reach = max_delay * scene.speed_of_sound / fs;
    let bound = |axis: usize| n.min((reach / (2.0 * dims[axis])).ceil() as i64 + 1);
    let (nx, ny, nz) = (bound(0), bound(1), bound(2));
    for u in 0..2i64 {
        for v in 0..2i64 {
            for w in 0..2i64 {
                for lx in -nx..=nx {
                    let kx = (lx - u).abs() + lx.abs();
                    if kx > n {
                        continue;
                    }
                    let dx = (1 - 2 * u) as f64 * source[0] + 2.0 * lx as f64 * dims[0] - mic[0];
                    for ly in -ny..=ny {
                        let ky = (ly - v).abs() + ly.abs();
                        if kx + ky > n {
                            continue;
                        }
                        let dy =
                            (1 - 2 * v) as f64 * source[1] + 2.0 * ly as f64 * dims[1] - mic[1];
                        for lz in -nz..=nz {
                            let kz = (lz - w).abs() + lz.abs();
                            let reflections = kx + ky + kz;
                            if reflections > n {
                                continue;
                            }
                            let dz = (1 - 2 * w) as f64 * source[2] + 2.0 * lz as f64 * dims[2]
                                - mic[2];
                            let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                            let delay = dist * fs / scene.speed_of_sound;
                            if delay >= max_delay {
                                continue;
                            }
                            let gain = if reflections == 0 {
                                1.0
                            } else {
                                beta.powi(reflections as i32)
                            };
                            if gain == 0.0 {
                                continue;
                            }
                            add_fractional_impulse(&mut taps, delay, gain / (4.0 * PI * dist));
                        }
                    }
                }
            }
        }
    }
    taps
}

/// Image-source RIRs indexed `[source][mic]`.
pub fn simulate_rir(scene: &RoomScene, sample_rate: u32) -> Result<Vec<Vec<Rir>>> {
    scene.validate()?;
    let beta = reflection_coefficient(scene.room_dims, scene.t60)?;
    let order = image_order(beta);
    let fs = f64::from(sample_rate);
    let len = rir_len(scene, fs);
    let mics = scene.mic_positions();
    let pairs: Vec<(usize, usize)> = (0..scene.source_positions.len())
        .flat_map(|s| (0..mics.len()).map(move |m| (s, m)))
        .collect();
    let taps: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(s, m)| {
            image_source_rir(&scene.source_positions[s], &mics[m], scene, beta, order, len, fs)
        })
        .collect();
    let mut out: Vec<Vec<Rir>> = (0..scene.source_positions.len()).map(|_| Vec::new()).collect();
    for ((s, _), taps) in pairs.into_iter().zip(taps) {
        out[s].push(Rir { taps, sample_rate });
    }
    Ok(out)
}

/// Direct-path delay in samples between two points.
pub fn direct_delay(a: &Point, b: &Point, speed_of_sound: f64, sample_rate: u32) -> f64 {
    distance(a, b) * f64::from(sample_rate) / speed_of_sound
}

/// Full linear convolution, FFT-based for long operands.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 64 {
        let mut out = vec![0.0; out_len];
        for (i, x) in a.iter().enumerate() {
            for (j, h) in b.iter().enumerate() {
                out[i + j] += x * h;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let spectrum = |x: &[f64]| {
        let mut buf = forward.make_input_vec();
        buf[..x.len()].copy_from_slice(x);
        let mut out = forward.make_output_vec();
        forward.process(&mut buf, &mut out).expect("fft length");
        out
    };
    let fa = spectrum(a);
    let fb = spectrum(b);
    let mut product: Vec<_> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    product[0].im = 0.0;
    let last = product.len() - 1;
    product[last].im = 0.0;
    let mut out = inverse.make_output_vec();
    inverse.process(&mut product, &mut out).expect("fft length");
    out.truncate(out_len);
    let scale = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Convolves a mono dry signal with one RIR per microphone. Output length is
/// `dry + rir - 1` using the longest RIR.
pub fn render(dry: &WaveBuffer, rirs: &[Rir]) -> Result<WaveBuffer> {
    if dry.channels() != 1 {
        return Err(Error::Shape(format!(
            "dry source must be mono, got {} channels",
            dry.channels()
        )));
    }
    if rirs.is_empty() {
        return Err(Error::Shape("render needs at least one RIR".into()));
    }
    if let Some(rir) = rirs.iter().find(|r| r.sample_rate != dry.sample_rate()) {
        return Err(Error::Config(format!(
            "RIR sample rate {} Hz differs from source {} Hz",
            rir.sample_rate,
            dry.sample_rate()
        )));
    }
    let taps = rirs.iter().map(|r| r.taps.len()).max().unwrap_or(0);
    let len = dry.len() + taps.max(1) - 1;
    let signal = dry.channel(0).to_vec();
    let channels: Vec<Vec<f64>> = rirs
        .par_iter()
        .map(|rir| {
            let mut out = convolve(&signal, &rir.taps);
            out.resize(len, 0.0);
            out
        })
        .collect();
    let mut samples = Array2::zeros((rirs.len(), len));
    for (m, ch) in channels.iter().enumerate() {
        samples.row_mut(m).assign(&ndarray::ArrayView1::from(ch));
    }
    WaveBuffer::new(samples, dry.sample_rate())
}

/// Gain that brings `interference` to `snr_db` below `target` at `ref_channel`.
pub fn snr_gain(
    target: &WaveBuffer,
    interference: &WaveBuffer,
    snr_db: f64,
    ref_channel: usize,
) -> Result<f64> {
    if target.channels() != interference.channels() || target.len() != interference.len() {
        return Err(Error::Shape(format!(
            "target is {}x{}, interference is {}x{}",
            target.channels(),
            target.len(),
            interference.channels(),
            interference.len()
        )));
    }
    if ref_channel >= target.channels() {
        return Err(Error::Config(format!("reference channel {ref_channel} out of range")));
    }
    if !snr_db.is_finite() {
        return Err(Error::Parameter(format!("SNR must be finite, got {snr_db}")));
    }
    let e_target = target.energy(ref_channel);
    let e_interf = interference.energy(ref_channel);
    if e_target <= 0.0 || e_interf <= 0.0 {
        return Err(Error::Data(
            "cannot set an SNR with a zero-energy target or interference".into(),
        ));
    }
    Ok((e_target / (e_interf * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `target + g * interference` with `g` from [`snr_gain`], applied to all channels.
pub fn mix_at_snr(
    target: &WaveBuffer,
    interference: &WaveBuffer,
    snr_db: f64,
    ref_channel: usize,
) -> Result<WaveBuffer> {
    let gain = snr_gain(target, interference, snr_db, ref_channel)?;
    WaveBuffer::new(
        target.samples() + &(interference.samples() * gain),
        target.sample_rate(),
    )
}

/// Schroeder backward-integrated energy decay curve in dB, 0 dB at the start.
pub fn schroeder_decay(taps: &[f64]) -> Vec<f64> {
    let mut remaining: Vec<f64> = taps.iter().map(|t| t * t).collect();
    for i in (0..remaining.len().saturating_sub(1)).rev() {
        remaining[i] += remaining[i + 1];
    }
    let total = remaining.first().copied().unwrap_or(0.0);
    remaining
        .iter()
        .map(|e| 10.0 * (e / total).log10())
        .collect()
}

/// T60 from a least-squares fit of the decay curve between -5 dB and -25 dB,
/// extrapolated to 60 dB.
pub fn estimate_t60(taps: &[f64], sample_rate: u32) -> Option<f64> {
    let decay = schroeder_decay(taps);
    let points: Vec<(f64, f64)> = decay
        .iter()
        .enumerate()
        .filter(|(_, d)| **d <= -5.0 && **d >= -25.0)
        .map(|(i, d)| (i as f64 / f64::from(sample_rate), *d))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_d = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_d)).sum();
    let var: f64 = points.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    let slope = cov / var;
    (slope < 0.0).then(|| -60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave::SAMPLE_RATE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_point(p: Point, q: Point) {
        for i in 0..3 {
            assert!((p[i] - q[i]).abs() < 1e-12, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn placement_uses_documented_angle_convention() {
        let uca = ArrayGeometry::uca(0.035, 4).unwrap();
        let scene = place_scene(90.0, 270.0, &uca).unwrap();
        assert_point(scene.source_positions[0], [2.0, 3.0, 1.5]);
        assert_point(scene.source_positions[1], [2.0, 0.5, 1.5]);
        let scene = place_scene(0.0, 180.0, &uca).unwrap();
        assert_point(scene.source_positions[0], [3.0, 2.0, 1.5]);
        assert_point(scene.source_positions[1], [0.5, 2.0, 1.5]);
    }

    #[test]
    fn angles_off_their_arcs_are_rejected() {
        let uca = ArrayGeometry::uca(0.035, 4).unwrap();
        assert!(matches!(place_scene(200.0, 270.0, &uca), Err(Error::Geometry(_))));
        assert!(matches!(place_scene(90.0, 90.0, &uca), Err(Error::Geometry(_))));
        assert!(place_scene(-1.0, 270.0, &uca).is_err());
    }

    #[test]
    fn sources_outside_the_room_are_rejected() {
        let room = RoomConfig {
            dims: [2.0, 2.0, 3.0],
            array_center: [1.0, 1.0, 1.5],
            ..RoomConfig::default()
        };
        let uca = ArrayGeometry::uca(0.035, 4).unwrap();
        assert!(matches!(
            place_scene_in(&room, 90.0, 270.0, &uca),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn geometry_parsing_and_shapes() {
        let uca: ArrayGeometry = "uca:0.035:4".parse().unwrap();
        assert_eq!(uca.mic_count(), 4);
        for p in &uca.offsets {
            assert!(((p[0].powi(2) + p[1].powi(2)).sqrt() - 0.035).abs() < 1e-12);
        }
        let ula: ArrayGeometry = "ula:0.02:4".parse().unwrap();
        let xs: Vec<f64> = ula.offsets.iter().map(|p| p[0]).collect();
        for pair in xs.windows(2) {
            assert!((pair[1] - pair[0] - 0.02).abs() < 1e-12);
        }
        assert!(ula.offsets.iter().all(|p| p[1] == 0.0 && p[2] == 0.0));
        let custom: ArrayGeometry = "mics:0,0,0;0.05,0,0".parse().unwrap();
        assert_eq!(custom.mic_count(), 2);
        assert_eq!(custom.to_string().parse::<ArrayGeometry>().unwrap(), custom);
        assert_eq!(uca.to_string(), "uca:0.035:4");
        assert!("mics:0,0,0;0,0,0".parse::<ArrayGeometry>().is_err());
        assert!("hex:1:2".parse::<ArrayGeometry>().is_err());
        assert!("uca:-1:4".parse::<ArrayGeometry>().is_err());
    }

    #[test]
    fn anechoic_rir_is_a_single_direct_impulse() {
        let room = RoomConfig {
            t60: 0.0,
            ..RoomConfig::default()
        };
        let geometry = ArrayGeometry::arbitrary(vec![[0.0, 0.0, 0.0]]).unwrap();
        // 343 m/s at 16 kHz: 343 / 16000 * 50 m puts the source exactly 50 samples away.
        let mut scene = place_scene_in(&room, 0.0, 180.0, &geometry).unwrap();
        let d = 50.0 * SPEED_OF_SOUND / f64::from(SAMPLE_RATE);
        scene.source_positions = vec![[2.0 + d, 2.0, 1.5]];
        let rir = &simulate_rir(&scene, SAMPLE_RATE).unwrap()[0][0];
        let peak = 1.0 / (4.0 * PI * d);
        for (n, tap) in rir.taps.iter().enumerate() {
            let expected = if n == 50 { peak } else { 0.0 };
            assert!((tap - expected).abs() < 1e-12, "tap {n}: {tap}");
        }
    }

    #[test]
    fn one_meter_direct_delay() {
        let delay = direct_delay(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 343.0, 16_000);
        assert!((delay - 46.647).abs() < 1e-3);
    }

    #[test]
    fn reflection_coefficient_bounds() {
        assert_eq!(reflection_coefficient([4.0, 4.0, 3.0], 0.0).unwrap(), 0.0);
        let beta = reflection_coefficient([4.0, 4.0, 3.0], 0.2).unwrap();
        assert!(beta > 0.0 && beta < 1.0);
        assert!(reflection_coefficient([4.0, 4.0, 3.0], -1.0).is_err());
        assert!(matches!(
            reflection_coefficient([4.0, 4.0, 3.0], 0.05),
            Err(Error::Parameter(_))
        ));
        assert_eq!(image_order(0.0), 0);
        assert_eq!(image_order(1.0), MAX_IMAGE_ORDER);
        assert!(0.5f64.powi(image_order(0.5) as i32) <= 1e-3);
    }

    #[test]
    fn render_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rir = Rir {
            taps: (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            sample_rate: SAMPLE_RATE,
        };
        let mut impulse = vec![0.0; 10];
        impulse[0] = 1.0;
        let out = render(&WaveBuffer::mono(impulse, SAMPLE_RATE).unwrap(), &[rir.clone()]).unwrap();
        assert_eq!(out.len(), 10 + 300 - 1);
        for (a, b) in out.channel(0).iter().zip(&rir.taps) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = render(&WaveBuffer::mono(vec![0.0; 500], SAMPLE_RATE).unwrap(), &[rir]).unwrap();
        assert!(zero.samples().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn render_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dry: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rirs: Vec<Rir> = (0..3)
            .map(|_| Rir {
                taps: (0..700).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                sample_rate: SAMPLE_RATE,
            })
            .collect();
        let out = render(&WaveBuffer::mono(dry.clone(), SAMPLE_RATE).unwrap(), &rirs).unwrap();
        for (m, rir) in rirs.iter().enumerate() {
            for t in 0..out.len() {
                let mut expected = 0.0;
                for (k, h) in rir.taps.iter().enumerate() {
                    if t >= k && t - k < dry.len() {
                        expected += h * dry[t - k];
                    }
                }
                assert!((out.channel(m)[t] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn render_rejects_rate_mismatch() {
        let rir = Rir {
            taps: vec![1.0],
            sample_rate: 8_000,
        };
        let dry = WaveBuffer::mono(vec![1.0; 4], SAMPLE_RATE).unwrap();
        assert!(matches!(render(&dry, &[rir]), Err(Error::Config(_))));
    }

    #[test]
    fn mixing_hits_requested_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draw = |n: usize| -> WaveBuffer {
            let ch: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            WaveBuffer::from_channels(ch, SAMPLE_RATE).unwrap()
        };
        let target = draw(4000);
        let interf = draw(4000);
        for snr in [0.0, 5.0, 10.0, 15.0] {
            let gain = snr_gain(&target, &interf, snr, 0).unwrap();
            let scaled = interf.scaled(gain);
            let measured = 10.0 * (target.energy(0) / scaled.energy(0)).log10();
            assert!((measured - snr).abs() < 1e-9);
            let mix = mix_at_snr(&target, &interf, snr, 0).unwrap();
            let residual = WaveBuffer::new(mix.samples() - target.samples(), SAMPLE_RATE).unwrap();
            for m in 0..2 {
                assert!((residual.energy(m) - scaled.energy(m)).abs() < 1e-6 * scaled.energy(m));
            }
        }
        let silent = WaveBuffer::zeros(2, 4000, SAMPLE_RATE).unwrap();
        assert!(matches!(mix_at_snr(&silent, &interf, 0.0, 0), Err(Error::Data(_))));
        assert!(mix_at_snr(&target, &draw(10), 0.0, 0).is_err());
    }

    #[test]
    fn schroeder_curve_of_exponential_decay() {
        let fs = 16_000;
        let t60 = 0.3;
        // Amplitude decays 60 dB over t60 seconds.
        let taps: Vec<f64> = (0..fs)
            .map(|n| 10f64.powf(-3.0 * n as f64 / (t60 * fs as f64)))
            .collect();
        let decay = schroeder_decay(&taps);
        assert_eq!(decay[0], 0.0);
        assert!(decay.windows(2).all(|w| w[1] <= w[0]));
        let t = estimate_t60(&taps, fs as u32).unwrap();
        assert!((t - t60).abs() < 0.01, "{t}");
    }
}
