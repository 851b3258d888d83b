//! Fixtures shared by the benchmarks.

use anynoise_core::{
    legendre_trig_basis, make_vp_schedule, pixel_basis, randn, DiffusionProcess, DiracDataset,
    Field, Rng, TinyNetwork,
};

/// The smooth-field process: VP schedule, `H_{3,5}` on a 16×16 grid, `η = 0`.
pub fn smooth_field_process() -> DiffusionProcess {
    DiffusionProcess::new(
        make_vp_schedule(1e-4, 0.02, 100.0).expect("valid schedule"),
        legendre_trig_basis(3, 5, [16, 16]).expect("valid basis"),
        0.0,
    )
    .expect("valid process")
}

/// Pixel basis on 16×16 with `η = 1`; its covariance is invertible, unlike
/// that of `H_{3,5}`, which has fewer elements than pixels.
pub fn pixel_process() -> DiffusionProcess {
    DiffusionProcess::new(
        make_vp_schedule(1e-4, 0.02, 100.0).expect("valid schedule"),
        pixel_basis(&[16, 16]),
        1.0,
    )
    .expect("valid process")
}

/// A Dirac dataset of `n` standard normal 16×16 fields.
pub fn dataset(n: usize, seed: u64) -> DiracDataset {
    let mut rng = Rng::new(seed, 0);
    DiracDataset::new((0..n).map(|_| randn(&[16, 16], &mut rng)).collect()).expect("nonempty")
}

pub fn field(seed: u64) -> Field {
    randn(&[16, 16], &mut Rng::new(seed, 1))
}

/// `[257, width, width, 256]` network.
pub fn network(width: usize) -> TinyNetwork {
    TinyNetwork::new(vec![257, width, width, 256], &mut Rng::new(3, 2)).expect("valid widths")
}
