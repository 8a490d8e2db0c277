//! Objective quality metrics: STOI and SI-SDR.
//!
//! STOI follows the reference implementation: signals are resampled to
//! 10 kHz with an Octave-compatible Kaiser-windowed polyphase filter, frames
//! more than 40 dB below the loudest clean frame are dropped, 15 one-third
//! octave bands from 150 Hz are correlated over 30-frame segments after
//! normalization and clipping at -15 dB SDR.

use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::wave::WaveBuffer;

pub const STOI_RATE: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_FFT: usize = 512;
const STOI_HOP: usize = 128;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE: f64 = 40.0;
const EPS: f64 = f64::EPSILON;
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..500 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Octave-compatible anti-aliasing filter for rational resampling by `p/q`,
/// normalized to unit sum.
fn octave_resample_filter(p: usize, q: usize) -> Vec<f64> {
    let rejection_db: f64 = 60.0;
    let stopband = 1.0 / (2.0 * p.max(q) as f64);
    let roll_off = stopband / 10.0;
    let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as i64;
    let beta = 0.1102 * (rejection_db - 8.7);
    let len = 2 * half + 1;
    let denom = bessel_i0(beta);
    let h: Vec<f64> = (0..len)
        .map(|n| {
            let t = (n - half) as f64;
            let ratio = 2.0 * n as f64 / (len - 1) as f64 - 1.0;
            let kaiser = bessel_i0(beta * (1.0 - ratio * ratio).max(0.0).sqrt()) / denom;
            kaiser * 2.0 * p as f64 * stopband * sinc(2.0 * stopband * t)
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.into_iter().map(|v| v / sum).collect()
}

/// Polyphase resampling by `up/down` with a zero-phase FIR `h`, zero
/// extension at the edges and `ceil(n * up / down)` output samples.
pub fn resample_poly(x: &[f64], up: usize, down: usize, h: &[f64]) -> Vec<f64> {
    let g = gcd(up, down);
    let (up, down) = (up / g, down / g);
    if up == 1 && down == 1 {
        return x.to_vec();
    }
    let half = (h.len() - 1) / 2;
    let n_out = (x.len() * up).div_ceil(down);
    let upsampled_len = (x.len() * up) as i64;
    (0..n_out)
        .map(|k| {
            // Output k takes h[j] * u[k*down + half - j], u nonzero only at
            // multiples of `up`.
            let centre = (k * down + half) as i64;
            let first = centre.rem_euclid(up as i64) as usize;
            let mut acc = 0.0;
            let mut j = first;
            while j < h.len() {
                let idx = centre - j as i64;
                if idx < 0 {
                    break;
                }
                if idx < upsampled_len {
                    acc += h[j] * x[idx as usize / up];
                }
                j += up;
            }
            acc * up as f64
        })
        .collect()
}

/// Resamples a signal at `fs` to the 10 kHz STOI rate.
pub fn resample_for_stoi(x: &[f64], fs: u32) -> Vec<f64> {
    let fs = fs as usize;
    let target = STOI_RATE as usize;
    let g = gcd(target, fs);
    let (p, q) = (target / g, fs / g);
    if p == q {
        return x.to_vec();
    }
    resample_poly(x, p, q, &octave_resample_filter(p, q))
}

fn stoi_window() -> Vec<f64> {
    // Symmetric Hann of length 258 without its zero end points.
    (1..=STOI_FRAME)
        .map(|n| {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (STOI_FRAME + 1) as f64).cos()
        })
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(STOI_FRAME)).step_by(STOI_HOP)
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = stoi_window();
    let mut kept = Vec::new();
    let mut energies = Vec::new();
    for start in frame_starts(x.len()) {
        let norm = (0..STOI_FRAME)
            .map(|n| (w[n] * x[start + n]).powi(2))
            .sum::<f64>()
            .sqrt();
        energies.push((start, 20.0 * (norm + EPS).log10()));
    }
    let max = energies.iter().map(|(_, e)| *e).fold(f64::NEG_INFINITY, f64::max);
    for (start, e) in energies {
        if max - STOI_DYN_RANGE - e < 0.0 {
            kept.push(start);
        }
    }
    let out_len = match kept.len() {
        0 => 0,
        k => (k - 1) * STOI_HOP + STOI_FRAME,
    };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (k, start) in kept.iter().enumerate() {
        for n in 0..STOI_FRAME {
            xs[k * STOI_HOP + n] += w[n] * x[start + n];
            ys[k * STOI_HOP + n] += w[n] * y[start + n];
        }
    }
    (xs, ys)
}

/// One-third octave band edges as FFT bin ranges `[lo, hi)`.
fn third_octave_bins() -> Vec<(usize, usize)> {
    let bins = STOI_FFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * f64::from(STOI_RATE) / STOI_FFT as f64)
        .collect();
    let nearest = |target: f64| {
        let mut best = 0;
        for (k, f) in freqs.iter().enumerate() {
            if (f - target).powi(2) < (freqs[best] - target).powi(2) {
                best = k;
            }
        }
        best
    };
    (0..STOI_BANDS)
        .map(|i| {
            let k = i as f64;
            let lo = STOI_MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes `[band][frame]`.
fn band_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = stoi_window();
    let bands = third_octave_bins();
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(STOI_FFT);
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut out = vec![Vec::new(); STOI_BANDS];
    for start in frame_starts(x.len()) {
        input.fill(0.0);
        for n in 0..STOI_FRAME {
            input[n] = w[n] * x[start + n];
        }
        fft.process(&mut input, &mut spectrum).expect("fft sizes match");
        for (b, (lo, hi)) in bands.iter().enumerate() {
            let power: f64 = spectrum[*lo..*hi].iter().map(|z| z.norm_sqr()).sum();
            out[b].push(power.sqrt());
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn centre_and_normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|a| *a -= mean);
    let n = norm(v) + EPS;
    v.iter_mut().for_each(|a| *a /= n);
}

/// Short-time objective intelligibility of `processed` against `clean`.
pub fn stoi(clean: &[f64], processed: &[f64], fs: u32) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::Length(format!(
            "clean has {} samples, processed has {}",
            clean.len(),
            processed.len()
        )));
    }
    if clean.iter().all(|v| *v == 0.0) {
        return Err(Error::Data("STOI clean signal is silent".into()));
    }
    let x = resample_for_stoi(clean, fs);
    let y = resample_for_stoi(processed, fs);
    let (x, y) = remove_silent_frames(&x, &y);
    let x_env = band_envelopes(&x);
    let y_env = band_envelopes(&y);
    let frames = x_env[0].len();
    if frames < STOI_SEGMENT {
        return Err(Error::Data(format!(
            "only {frames} non-silent frames, need at least {STOI_SEGMENT}"
        )));
    }
    let clip = 1.0 + 10f64.powf(-STOI_BETA_DB / 20.0);
    let segments = frames - STOI_SEGMENT + 1;
    let mut total = 0.0;
    for m in STOI_SEGMENT..=frames {
        for b in 0..STOI_BANDS {
            let xs = &x_env[b][m - STOI_SEGMENT..m];
            let ys = &y_env[b][m - STOI_SEGMENT..m];
            let scale = norm(xs) / (norm(ys) + EPS);
            let mut yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(yv, xv)| (yv * scale).min(xv * clip))
                .collect();
            let mut xc = xs.to_vec();
            centre_and_normalize(&mut yp);
            centre_and_normalize(&mut xc);
            total += yp.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok((total / (segments * STOI_BANDS) as f64).clamp(0.0, 1.0))
}

/// [`stoi`] on two mono buffers.
pub fn stoi_wave(clean: &WaveBuffer, processed: &WaveBuffer) -> Result<f64> {
    if clean.channels() != 1 || processed.channels() != 1 {
        return Err(Error::Shape("STOI expects mono signals".into()));
    }
    if clean.sample_rate() != processed.sample_rate() {
        return Err(Error::Data("STOI signals have different sample rates".into()));
    }
    let x = clean.channel(0).to_vec();
    let y = processed.channel(0).to_vec();
    stoi(&x, &y, clean.sample_rate())
}

/// Scale-invariant SDR in dB, capped at ±100 dB. No mean is removed.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Length(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    if rr == 0.0 {
        return Err(Error::Data("SI-SDR reference is silent".into()));
    }
    let alpha = reference.iter().zip(estimate).map(|(r, e)| r * e).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let residual: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (e - alpha * r).powi(2))
        .sum();
    let db = if target == 0.0 {
        -SI_SDR_CAP_DB
    } else if residual == 0.0 {
        SI_SDR_CAP_DB
    } else {
        10.0 * (target / residual).log10()
    };
    Ok(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}
