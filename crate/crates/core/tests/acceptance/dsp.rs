use std::f64::consts::PI;

use protoaudio::dsp::{frame_count, griffin_lim, power_stft, standardize, unstandardize, LogMel, Waveform};
use protoaudio::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::oracles::pearson;
use crate::Outcome;

pub fn check() -> Outcome {
    let dsp = synth::dsp_config();
    let front = LogMel::new(&dsp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);

    let n = dsp.clip_samples();
    let noise: Vec<f32> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
    let raw = front.compute_any_length(&noise);
    let back = unstandardize(&standardize(&raw, &dsp).unwrap(), &dsp).unwrap();
    let z_err = raw.values.iter().zip(&back.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let sr = dsp.sample_rate as f64;
    let tone: Vec<f32> = (0..n).map(|i| (0.5 * (2.0 * PI * 1000.0 * i as f64 / sr).sin()) as f32).collect();
    let s = front.compute(&Waveform::new(tone, dsp.sample_rate).unwrap()).unwrap();
    let audio = griffin_lim(&s, &dsp, dsp.griffin_lim_iterations, 3).unwrap();
    let s2 = front.compute_any_length(&audio.samples);
    let frames = s.frames.min(s2.frames);
    let r = pearson(&s.slice_frames(0, frames).values, &s2.slice_frames(0, frames).values);

    let mut frames_ok = 0;
    for _ in 0..20 {
        let len = rng.random_range(1..4 * dsp.fft_size);
        let buf = vec![0.1f32; len];
        let expected = 1 + len / dsp.hop;
        if frame_count(len, dsp.hop) == expected && power_stft(&buf, dsp.fft_size, dsp.hop).len() == expected {
            frames_ok += 1;
        }
    }

    Outcome::new(
        z_err <= 1e-6 && r >= 0.9 && frames_ok == 20,
        format!(
            "z-score round trip max error {z_err:.1e}; 1 kHz tone log-mel vs Griffin-Lim resynthesis r = {r:.4} ({} iterations); frame count matches 1 + len/hop in {frames_ok}/20 lengths",
            dsp.griffin_lim_iterations
        ),
    )
}
