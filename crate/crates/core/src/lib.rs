//! Cell detection and classification for multiplex immunohistochemistry-style
//! images with strong class imbalance.
//!
//! Cells are annotated as single dots (one point per cell center, with a class
//! label). The pipeline turns those dots into dense training targets, trains a
//! detector whose loss is re-weighted by class abundance, and scores detections
//! by distance-capped one-to-one matching:
//!
//! 1. [`annotations`] — dot-annotation parsing, validation, class census, splits.
//! 2. [`targetgen`] — binary reference images and abundance-weight images,
//!    aligned training patches.
//! 3. [`losses`] — weight-regularized Dice loss and class-weighted cross-entropy.
//! 4. [`nets`] — inception-block encoder–decoder detector and a small VGG-style
//!    patch classifier, with seeded Glorot init and Adam.
//! 5. [`train`] — config-driven training loops with checkpointing and early
//!    stopping.
//! 6. [`infer`] — tiled probability-map prediction, peak extraction, per-cell
//!    classification.
//! 7. [`evaluate`] — capped optimal bipartite matching, precision/recall/F1,
//!    distance sweeps, ROC/AUC.
//! 8. [`synthdata`] — deterministic synthetic image generator used as ground
//!    truth for desk-scale experiments.
//!
//! Everything is deterministic given a seed: parallel kernels (feature
//! `parallel`, on by default) only distribute work whose per-slot arithmetic
//! runs in a fixed sequential order, so enabling or disabling rayon does not
//! change a single bit of output.

pub mod annotations;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod losses;
pub mod nets;
pub mod npy;
pub(crate) mod par;
pub mod synthdata;
pub mod targetgen;
pub mod train;

pub use error::{Error, Result};
