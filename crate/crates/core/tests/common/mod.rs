//! Shared helpers for integration tests: a speech-like signal generator and
//! small on-disk corpora.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sift_core::wave::{write_wav, WaveBuffer, SAMPLE_RATE};

fn resonance(f: f64, centre: f64, bandwidth: f64) -> f64 {
    1.0 / (1.0 + ((f - centre) / bandwidth).powi(2))
}

/// Speech-like test signal: syllables of formant-shaped harmonics with a
/// drifting pitch, fricative bursts and short pauses. The pitch range and
/// formants depend on `seed`, so different seeds sound like different
/// talkers. Peak is normalized to 0.5.
pub fn synthetic_speech(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = f64::from(SAMPLE_RATE);
    let f0_base = rng.gen_range(95.0..230.0);
    let mut out = vec![0.0; len];
    let mut pos = rng.gen_range(0..1600);
    let mut phase = 0.0f64;
    while pos < len {
        let dur = rng.gen_range((0.12 * fs) as usize..(0.32 * fs) as usize);
        let f1 = rng.gen_range(300.0..850.0);
        let f2 = rng.gen_range(900.0..2400.0);
        let f3 = rng.gen_range(2500.0..3200.0);
        let glide = rng.gen_range(-0.25..0.25);
        let level = rng.gen_range(0.4..1.0);
        let fricative = rng.gen_bool(0.35);
        let fric_len = (0.05 * fs) as usize;
        let mut prev = 0.0;
        for n in 0..dur {
            let idx = pos + n;
            if idx >= len {
                break;
            }
            let u = n as f64 / dur as f64;
            let env = (PI * u).sin().powf(0.6) * level;
            let f0 = f0_base * (1.0 + glide * (u - 0.5));
            phase += 2.0 * PI * f0 / fs;
            let mut v = 0.0;
            let mut h = 1;
            while (h as f64) * f0 < 4000.0 {
                let f = h as f64 * f0;
                let gain = resonance(f, f1, 90.0) + 0.6 * resonance(f, f2, 120.0)
                    + 0.3 * resonance(f, f3, 160.0);
                v += gain * (h as f64 * phase).sin() / (h as f64).sqrt();
                h += 1;
            }
            out[idx] += env * v;
            if fricative && n < fric_len {
                let white = rng.gen_range(-1.0..1.0);
                let hp = white - prev;
                prev = white;
                let e = (PI * n as f64 / fric_len as f64).sin();
                out[idx] += 0.25 * level * e * hp;
            }
        }
        pos += dur;
        let gap = if rng.gen_bool(0.15) {
            rng.gen_range((0.2 * fs) as usize..(0.35 * fs) as usize)
        } else {
            rng.gen_range((0.02 * fs) as usize..(0.08 * fs) as usize)
        };
        pos += gap;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// Writes `speakers` directories with `utterances` files of `seconds` each.
pub fn write_corpus(root: &Path, speakers: usize, utterances: usize, seconds: f64, seed: u64) {
    let len = (seconds * f64::from(SAMPLE_RATE)) as usize;
    for s in 0..speakers {
        let dir = root.join(format!("spk{s:02}"));
        std::fs::create_dir_all(&dir).unwrap();
        for u in 0..utterances {
            let x = synthetic_speech(seed * 1000 + (s * 100 + u) as u64, len);
            let wave = WaveBuffer::mono(x, SAMPLE_RATE).unwrap();
            write_wav(dir.join(format!("utt{u:02}.wav")), &wave).unwrap();
        }
    }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
