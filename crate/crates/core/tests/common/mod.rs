#![allow(dead_code)]

use latentfuse::gradcheck::check_params;
use latentfuse::image::{BinaryMask, Image};
use latentfuse::params::{Graph, ParamStore};
use latentfuse::sample::{BuildingSample, View};
use latentfuse::synth::Camera;
use latentfuse::taxonomy::{Labels, NUM_CLASSES};
use latentfuse::tensor::Tensor;
use latentfuse::Result;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub fn random_view(rng: &mut impl Rng, size: usize) -> View {
    let px = (0..3 * size * size).map(|_| rng.gen::<f32>()).collect();
    let mask = (0..size * size).map(|_| rng.gen_bool(0.5) as u8).collect();
    View { image: Image::new(3, size, size, px).unwrap(), mask: BinaryMask::new(size, size, mask).unwrap() }
}

pub fn random_labels(rng: &mut impl Rng) -> Labels {
    let mut flat = [false; NUM_CLASSES];
    flat.iter_mut().for_each(|f| *f = rng.gen_bool(0.5));
    Labels::from_flat(&flat)
}

/// A sample of random pixels with `n` street views.
pub fn random_sample(seed: u64, n: usize, size: usize) -> BuildingSample {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let satellite = random_view(&mut rng, size);
    let street = (0..n).map(|_| random_view(&mut rng, size)).collect();
    let cameras = (0..n)
        .map(|_| Camera { position: [10.0, 0.0, 1.6], yaw: std::f64::consts::PI, focal: 20.0, cx: 16.0, cy: 22.0 })
        .collect();
    BuildingSample { segment_id: seed, satellite, street, cameras, labels: random_labels(&mut rng) }
}

/// Worst relative error between backprop and finite differences over
/// every parameter scalar of `store`.
pub fn param_gradcheck<F>(store: &ParamStore<f64>, loss: F) -> f64
where
    F: Fn(&mut Graph<'_, f64>) -> Result<latentfuse::tape::Var>,
{
    check_params(store, loss, |_, _| true).unwrap().max_rel_error
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.max_abs_diff(b)
}
