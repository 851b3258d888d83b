//! Diffusion with structured noise: forward process, scores, denoisers,
//! training, samplers, restoration tasks and verification suites.

pub mod basis;
pub mod denoiser;
pub mod error;
pub mod field;
pub mod io;
pub mod metrics;
pub mod network;
pub mod process;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tasks;
pub mod training;
pub mod verify;

pub use basis::{
    legendre_trig_basis, pixel_basis, residual_basis, Basis, BasisMode, BasisSet, Conditioning,
    CovarianceInverse, CovarianceOp,
};
pub use denoiser::{
    analytic_dirac_denoiser, precondition_wrap, AnalyticDirac, ConstantOracle, Denoiser,
    Parameterization, Preconditioned,
};
pub use error::{Error, Result};
pub use field::Field;
pub use network::TinyNetwork;
pub use process::{ConditionalMoments, DiffusionProcess, DiracDataset};
pub use rng::{randn, Rng};
pub use sampler::{make_time_grid, sample_euler, sample_reference, GridScheme, TimeGrid};
pub use schedule::{make_ddpm_schedule, make_vp_schedule, Schedule, ScheduleKind};
pub use tasks::{run_restoration, TaskInstance};
pub use training::{train, Objective, OptimizerKind, TrainConfig};
pub use verify::{run_suite, Check, SuiteReport};
