//! Interpretable prototype-learning classifier for multi-label audio.
//!
//! Spectrograms are embedded by a frozen backbone, compared to learned
//! per-class prototypes by cosine similarity, max-pooled, and combined by a
//! non-negative class-wired linear head into sigmoid confidences. Each
//! prediction can be traced back to the prototypes and spectrogram regions
//! that caused it.
//!
//! ```text
//! waveform -> dsp::logmel -> dsp::standardize -> embed::Backbone
//!          -> protonet::similarity -> protonet::predict
//! ```
//!
//! ```
//! use protoaudio::{dsp, embed::Backbone, protonet, synth};
//!
//! let cfg = synth::dsp_config();
//! let backbone = Backbone::new(&synth::backbone_config())?;
//! let clip = &synth::generate(&synth::SynthConfig::default(), 1, 0, "demo")[0];
//! let s = dsp::standardize(&dsp::logmel(&clip.waveform, &cfg)?, &cfg)?;
//! let z = backbone.extract(&s)?;
//! let bank = protonet::PrototypeBank::init(synth::NUM_CLASSES, 5, z.d, 0)?;
//! let pred = protonet::predict(&protonet::similarity(&z, &bank)?, &bank)?;
//! assert_eq!(pred.confidences.len(), synth::NUM_CLASSES);
//! # Ok::<(), protoaudio::Error>(())
//! ```

pub mod augment;
pub mod dsp;
pub mod embed;
pub mod error;
pub mod eval;
pub mod explain;
pub mod objective;
pub mod par;
pub mod protonet;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
