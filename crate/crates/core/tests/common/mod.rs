#![allow(dead_code)]

use std::sync::Arc;

use fleeg_core::data::{generate, SynthSpec, TrialStore};
use fleeg_core::federation::{ClientHyper, ClientState};
use fleeg_core::rng::{keyed_rng, Stream};
use fleeg_core::{DatasetFormat, PersonalizedModel, Tensor4};
use rand::Rng;

pub fn random(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = keyed_rng(Stream::Subset, &[0xC0FFEE, seed]);
    let n = dims.iter().product();
    Tensor4::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn synth(name: &str, channels: usize, samples: usize, subjects: usize, per: usize, seed: u64) -> TrialStore {
    let format = DatasetFormat::new(name, channels, 100.0, samples, subjects, per).unwrap();
    generate(&SynthSpec {
        format,
        informative: [vec![0], vec![channels - 1]],
        rhythm_hz: 10.0,
        depth: 0.8,
        noise: 0.5,
        variability: 0.2,
        seed,
    })
    .unwrap()
}

pub fn client(id: usize, store: TrialStore, hyper: ClientHyper, seed: u64) -> ClientState {
    let model = PersonalizedModel::for_format(store.format(), seed, id as u64).unwrap();
    ClientState::new(id, model, Arc::new(store), hyper, seed).unwrap()
}

pub fn hyper(learning_rate: f64, batch_size: usize) -> ClientHyper {
    ClientHyper {
        learning_rate,
        batch_size,
    }
}
