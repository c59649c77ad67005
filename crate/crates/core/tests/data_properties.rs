mod common;

use std::f64::consts::PI;

use common::{client, hyper};
use fleeg_core::data::folds::validation_count;
use fleeg_core::data::{
    bandpass, decimate, generate, plan_client_folds, plan_folds, plan_folds_for_subjects, Provenance, SynthSpec,
    Trial, TrialStore,
};
use fleeg_core::evaluation::accuracy;
use fleeg_core::federation::{run_baseline, TrainConfig};
use fleeg_core::rng::{keyed_rng, Stream};
use fleeg_core::{DatasetFormat, Tensor4};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// A one-channel store holding `signal` twice, once per label.
fn signal_store(signal: Vec<f64>, sample_rate: f64) -> TrialStore {
    let t = signal.len();
    let format = DatasetFormat::new("sig", 1, sample_rate, t, 1, 2).unwrap();
    let trials = (0..2u8)
        .map(|label| Trial {
            subject: 0,
            label,
            data: Tensor4::new([1, 1, 1, t], signal.clone()).unwrap(),
        })
        .collect();
    TrialStore::new(format, trials, Provenance::Generated { seed: 0 }).unwrap()
}

/// Output RMS over input RMS of a 10 s sine through the 0.3 to 40 Hz band at 250 Hz.
fn band_gain(hz: f64) -> f64 {
    let fs = 250.0;
    let x: Vec<f64> = (0..2500).map(|i| (2.0 * PI * hz * i as f64 / fs).sin()).collect();
    let out = bandpass(&signal_store(x.clone(), fs), 0.3, 40.0).unwrap();
    rms(out.trials()[0].data.data()) / rms(&x)
}

#[test]
fn line_noise_is_removed() {
    let g = band_gain(50.0);
    assert!(g < 0.05, "{g}");
}

#[test]
fn alpha_rhythm_passes() {
    let g = band_gain(10.0);
    assert!((g - 1.0).abs() < 0.1, "{g}");
}

#[test]
fn dc_is_removed() {
    let out = bandpass(&signal_store(vec![1.0; 1000], 250.0), 0.3, 40.0).unwrap();
    let r = rms(out.trials()[0].data.data());
    assert!(r < 0.05, "{r}");
}

#[test]
fn band_outside_nyquist_is_rejected() {
    let store = signal_store(vec![0.0; 200], 100.0);
    assert!(bandpass(&store, 0.3, 60.0).is_err());
    assert!(bandpass(&store, 5.0, 2.0).is_err());
}

fn ramp_store(samples: usize, sample_rate: f64) -> TrialStore {
    signal_store((0..samples).map(|i| i as f64).collect(), sample_rate)
}

#[test]
fn ku_decimation() {
    let out = decimate(&ramp_store(4000, 1000.0), 4).unwrap();
    assert_eq!(out.format().sample_rate, 250.0);
    assert_eq!(out.format().trial_samples, 1000);
    let d = out.trials()[0].data.data();
    assert!(d.iter().enumerate().all(|(i, &v)| v == (4 * i) as f64));
}

#[test]
fn shin_decimation() {
    let out = decimate(&ramp_store(4000, 1000.0), 5).unwrap();
    assert_eq!(out.format().sample_rate, 200.0);
    assert_eq!(out.format().trial_samples, 800);
}

#[test]
fn unit_decimation_is_identity() {
    let store = ramp_store(300, 100.0);
    let out = decimate(&store, 1).unwrap();
    assert_eq!(out.format(), store.format());
    assert_eq!(out.trials(), store.trials());
    assert!(decimate(&store, 0).is_err());
}

fn synth_spec(depth: f64, noise: f64, subjects: usize, per: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        format: DatasetFormat::new("s", 4, 100.0, 200, subjects, per).unwrap(),
        informative: [vec![3], vec![0]],
        rhythm_hz: 10.0,
        depth,
        noise,
        variability: 0.2,
        seed,
    }
}

/// Mean periodogram power over the 8 to 12 Hz bins, by direct DFT.
fn alpha_power(x: &[f64], fs: f64) -> f64 {
    let n = x.len();
    let bins: Vec<usize> = (0..n / 2).filter(|&k| (8.0..=12.0).contains(&(k as f64 * fs / n as f64))).collect();
    let total: f64 = bins
        .iter()
        .map(|&k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let a = 2.0 * PI * (k * j) as f64 / n as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            (re * re + im * im) / n as f64
        })
        .sum();
    total / bins.len() as f64
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
}

#[test]
fn informative_channels_separate_by_band_power() {
    let store = generate(&synth_spec(0.8, 0.2, 2, 500, 11)).unwrap();
    assert_eq!(store.len(), 1000);
    for (channel, attenuated) in [(3usize, 0u8), (0, 1)] {
        let [mut on, mut off] = [Vec::new(), Vec::new()];
        for t in store.trials() {
            let p = alpha_power(&t.data.data()[channel * 200..(channel + 1) * 200], 100.0);
            if t.label == attenuated { on.push(p) } else { off.push(p) }
        }
        let ((m_on, v_on), (m_off, v_off)) = (mean_var(&on), mean_var(&off));
        let pooled = ((v_on + v_off) / 2.0).sqrt();
        assert!(m_off - m_on > 3.0 * pooled, "channel {channel}: {m_on} vs {m_off}, pooled sd {pooled}");
    }
}

#[test]
fn zero_depth_has_no_class_signal() {
    let test = generate(&synth_spec(0.0, 0.5, 2, 500, 21)).unwrap();
    // class-conditional per-trial variance of every channel
    for ch in 0..4 {
        let [mut a, mut b] = [Vec::new(), Vec::new()];
        for t in test.trials() {
            let v = mean_var(&t.data.data()[ch * 200..(ch + 1) * 200]).1;
            if t.label == 0 { a.push(v) } else { b.push(v) }
        }
        let ((ma, va), (mb, vb)) = (mean_var(&a), mean_var(&b));
        let z = (ma - mb) / (va / a.len() as f64 + vb / b.len() as f64).sqrt();
        assert!(z.abs() < 4.0, "channel {ch}: z = {z}");
    }

    let train = generate(&synth_spec(0.0, 0.5, 3, 60, 22)).unwrap();
    let plan = plan_folds(&[&train], 22).unwrap().remove(0);
    let mut c = client(0, train, hyper(0.01, 16), 22);
    c.begin_fold(0, plan.clients[0].clone()).unwrap();
    run_baseline(&mut c, &TrainConfig { rounds: 10, local_epochs: 1, seed: 22 }).unwrap();
    let all: Vec<usize> = (0..test.len()).collect();
    let acc = accuracy(c.model(), &test, &all).unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
}

#[test]
fn same_seed_gives_bit_identical_stores() {
    let a = generate(&synth_spec(0.8, 1.0, 2, 4, 5)).unwrap();
    let b = generate(&synth_spec(0.8, 1.0, 2, 4, 5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate(&synth_spec(0.8, 1.0, 2, 4, 6)).unwrap());
}

/// Per-client subject ids in a seeded random order; every subject has at
/// least two trials of each label.
fn subject_lists(sizes: &[(usize, usize)], seed: u64) -> Vec<Vec<usize>> {
    sizes
        .iter()
        .enumerate()
        .map(|(k, &(s, per))| {
            let mut v: Vec<usize> = (0..s * per).map(|i| i % s).collect();
            v.shuffle(&mut keyed_rng(Stream::Subset, &[seed, k as u64]));
            v
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fold_plans_partition_and_cycle(
        sizes in prop::collection::vec((2usize..9, 2usize..7), 1..5),
        seed in any::<u64>(),
    ) {
        let lists = subject_lists(&sizes, seed);
        let counts: Vec<usize> = sizes.iter().map(|s| s.0).collect();
        let plans = plan_folds_for_subjects(&lists, &counts, seed).unwrap();
        let folds = *counts.iter().max().unwrap();
        prop_assert_eq!(plans.len(), folds);
        for (k, trials) in lists.iter().enumerate() {
            let s = counts[k];
            let mut held = vec![0usize; s];
            for (f, plan) in plans.iter().enumerate() {
                prop_assert_eq!(plan.fold, f);
                let c = &plan.clients[k];
                prop_assert_eq!(c.held_out, f % s);
                held[c.held_out] += 1;
                prop_assert_eq!(&c.train_subjects, &(0..s).filter(|&x| x != c.held_out).collect::<Vec<_>>());
                let mut test: Vec<usize> = (0..trials.len()).filter(|&i| trials[i] == c.held_out).collect();
                test.sort_unstable();
                prop_assert_eq!(&c.test, &test);
                prop_assert!(c.train.iter().chain(&c.validation).all(|&i| trials[i] != c.held_out));
                let rest = trials.len() - test.len();
                prop_assert_eq!(c.validation.len(), validation_count(rest));
                let mut all: Vec<usize> = c.train.iter().chain(&c.validation).chain(&c.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..trials.len()).collect::<Vec<_>>());
            }
            let (lo, hi) = (folds / s, folds.div_ceil(s));
            prop_assert!(held.iter().all(|&n| n == lo || n == hi), "{:?}", held);
            prop_assert!(held.iter().all(|&n| n >= 1));
        }
    }

    #[test]
    fn single_client_plans_match_the_joint_plan(
        sizes in prop::collection::vec((2usize..7, 2usize..5), 1..4),
        seed in any::<u64>(),
    ) {
        let stores: Vec<TrialStore> = sizes
            .iter()
            .enumerate()
            .map(|(k, &(s, per))| {
                let mut spec = synth_spec(0.5, 1.0, s, 2 * per, seed.wrapping_add(k as u64));
                spec.format.trial_samples = 8;
                generate(&spec).unwrap()
            })
            .collect();
        let refs: Vec<&TrialStore> = stores.iter().collect();
        let joint = plan_folds(&refs, seed).unwrap();
        for (k, store) in stores.iter().enumerate() {
            let own = plan_client_folds(store, k, joint.len(), seed).unwrap();
            let from_joint: Vec<_> = joint.iter().map(|p| p.clients[k].clone()).collect();
            prop_assert_eq!(own, from_joint);
        }
    }

    #[test]
    fn decimation_composes(f in 1usize..5, g in 1usize..5, extra in 0usize..40) {
        let store = ramp_store(120 * f * g + extra, 1000.0);
        let twice = decimate(&decimate(&store, f).unwrap(), g).unwrap();
        let once = decimate(&store, f * g).unwrap();
        prop_assert_eq!(twice.trials(), once.trials());
        prop_assert_eq!(twice.format().trial_samples, once.format().trial_samples);
        prop_assert!((twice.format().sample_rate - once.format().sample_rate).abs() < 1e-9);
    }

    #[test]
    fn preprocessing_commutes_with_trial_order(seed in any::<u64>()) {
        let mut spec = synth_spec(0.8, 1.0, 2, 4, seed);
        spec.format.trial_samples = 240;
        let store = generate(&spec).unwrap();
        let mut order: Vec<usize> = (0..store.len()).collect();
        order.shuffle(&mut keyed_rng(Stream::Subset, &[seed]));
        let permuted = TrialStore::new(
            store.format().clone(),
            order.iter().map(|&i| store.trials()[i].clone()).collect(),
            store.provenance().clone(),
        )
        .unwrap();
        let a = decimate(&bandpass(&store, 0.3, 40.0).unwrap(), 2).unwrap();
        let b = decimate(&bandpass(&permuted, 0.3, 40.0).unwrap(), 2).unwrap();
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(&b.trials()[j], &a.trials()[i]);
        }
    }
}
