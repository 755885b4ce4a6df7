//! Fixtures shared by the benchmarks.

use blobloss::{generate, RadiusSpec, SynthSample, SynthSpec};

/// A cube of side `n` with one large and a dozen small blobs, scaled to the cube.
pub fn scene(n: usize) -> SynthSample {
    let spec = SynthSpec {
        dims: [n; 3],
        n_large: 1,
        large_radius: RadiusSpec::Fixed((n / 8).max(2) as f64),
        n_small: 12,
        small_radius: RadiusSpec::Range([1.0, 2.0]),
        small_contrast: 0.45,
        noise_sigma: 0.08,
        min_gap: 1.0,
        seed: 5,
    };
    generate(&spec).expect("fixture spec is satisfiable")
}
