//! Modality-independent detection of inaccurate organ segmentations from
//! binary masks alone.
//!
//! The toolkit trains a multi-organ denoising autoencoder on corrupted
//! ground-truth masks and scores auto-segmentations by the Dice loss
//! between each preprocessed mask and its reconstruction. Variational
//! autoencoder and Mahalanobis-distance baselines, synthetic phantom data,
//! and a full evaluation harness (AUROC/AUPR with bootstrap confidence
//! intervals) are included.
//!
//! Module map:
//! - [`voxelgrid`]: binary 3D masks, grid geometry, OMV file I/O
//! - [`corrupt`]: random-patch noise model and signed-Dice calibration
//! - [`metrics`]: Dice family, AUROC, AUPR, bootstrap CIs
//! - [`shapestats`]: geometric features + Gaussian/Mahalanobis baseline
//! - [`neural`]: minimal 3D tensor autodiff (conv, norm, Adam, soft Dice)
//! - [`nets`]: residual 3D U-Net and VAE builders
//! - [`phantom`]: synthetic anatomies and controlled degradations
//! - [`pipeline`]: preprocessing, training, scoring, labeling, evaluation
//! - [`config`]: experiment configuration file

pub mod config;
pub mod corrupt;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod neural;
pub mod phantom;
pub mod pipeline;
pub mod shapestats;
pub mod voxelgrid;

pub use error::{Error, Result};
