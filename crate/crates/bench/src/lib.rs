//! Shared fixtures for the benchmarks.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowmap_core::geometry::{uniform_so3_sample, Frame, FrameChain};
use flowmap_core::nn::{Activation, FlowModel, Head, NetConfig};

pub fn bench_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xbe5c)
}

pub fn random_vectors(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

pub fn random_chain(n: usize, rng: &mut ChaCha8Rng) -> FrameChain {
    FrameChain::new(
        (0..n)
            .map(|_| {
                Frame::new(
                    uniform_so3_sample(rng),
                    Vector3::new(
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-5.0..5.0),
                        rng.gen_range(-5.0..5.0),
                    ),
                )
            })
            .collect(),
    )
}

pub fn euclidean_model(dim: usize) -> FlowModel {
    let net = NetConfig {
        input_dim: dim,
        hidden: vec![64, 64],
        head: Head::Euclidean { dim },
        time_embed_dim: 8,
        activation: Activation::Silu,
    };
    FlowModel::new(net, 3).expect("valid config")
}

pub fn frame_model(frames: usize) -> FlowModel {
    let net = NetConfig {
        input_dim: 12 * frames,
        hidden: vec![64, 64],
        head: Head::Se3 { frames },
        time_embed_dim: 8,
        activation: Activation::Silu,
    };
    FlowModel::new(net, 3).expect("valid config")
}
