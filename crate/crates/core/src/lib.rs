//! In-context binary segmentation.
//!
//! A support set of image / mask pairs is encoded into a key/value
//! [`MemoryBank`](memory::MemoryBank); each query patch reads out an
//! affinity-weighted label, which a decoder upsamples into a logit map.
//! Support sets are chosen from a larger meta-support pool by nearest
//! neighbours over whole-image embeddings, at random, or as a fixed prefix.
//!
//! ```
//! use icl_seg::predictor::{Predictor, PredictorConfig, Query};
//! use icl_seg::synthbench::{generate, SynthSpec};
//!
//! let set = generate(&SynthSpec { n_classes: 1, pairs_per_class: 6, ..Default::default() }).unwrap();
//! let pairs = &set.classes[0].pairs;
//! let predictor = Predictor::toy(PredictorConfig { support_size: 3, ..Default::default() }).unwrap();
//! let meta = predictor.prepare(&pairs[1..]).unwrap();
//! let prediction = predictor.predict(&Query::from(&pairs[0]), &meta).unwrap();
//! assert_eq!(prediction.mask.height(), pairs[0].mask.height());
//! ```

pub mod cli;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod io;
pub mod memory;
pub mod predictor;
pub mod selection;
pub mod synthbench;

pub use error::{Error, Result};
pub use image::{BinaryMask, Image, LabeledPair, LogitMap};
