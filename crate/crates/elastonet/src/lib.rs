//! Constitutive modeling toolkit that learns hyperelastic energies and
//! evolving yield surfaces from data and embeds them in an implicit
//! elastoplastic stress integrator.
//!
//! The crate is organized in eight modules:
//!
//! * [`invariants`]: symmetric tensors, spectral decomposition, volumetric
//!   and deviatoric invariants, and pi-plane (Lode) coordinates
//! * [`autodiff`]: a scalar expression graph with reverse-mode gradients and
//!   forward-over-reverse Hessians, used as the correctness oracle
//! * [`network`]: small dense/multiply feed-forward networks with min-max
//!   scaling, exact input Jacobians and Hessians, and text checkpoints
//! * [`training`]: Sobolev-style losses (values, gradients, Hessians, Lode
//!   rotations, Eikonal residuals, sign penalties) and a Nadam trainer
//! * [`levelset`]: signed distance fields around sampled yield surfaces,
//!   fast-marching reinitialization, and level-set training datasets
//! * [`matlib`]: closed-form reference materials (linear elastic, modified
//!   Cam-Clay, J2 with hardening, fictitious laws, synthetic surfaces)
//! * [`returnmap`]: an implicit return mapping in principal stress space
//!   with consistent algorithmic tangents
//! * [`pipeline`]: dataset generation, path drivers, baseline models,
//!   experiment presets, and CSV/SVG artifact export

pub mod autodiff;
pub mod invariants;
pub mod levelset;
pub mod matlib;
pub mod network;
pub mod pipeline;
pub mod returnmap;
pub mod training;

pub use invariants::{SpectralDecomposition, SymTensor3};
pub use network::NetworkModel;
pub use pipeline::{Config, CsvTable, Experiment, PipelineError, Stage, PRESETS};
pub use returnmap::{integrate_step, MaterialModel, MaterialState, StepResult};
