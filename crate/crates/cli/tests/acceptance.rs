//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line with the measured value and the pinned
//! tolerance, then asserts it.
//!
//! Criteria 6 and 7 train the desk configuration over five seeds and are
//! ignored by default; run them with `cargo test --test acceptance -- --ignored`.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use fleeg_cli::commands::{self, Common};
use fleeg_core::data::{bandpass, decimate, generate, plan_folds_for_subjects, Provenance, SynthSpec, Trial, TrialStore};
use fleeg_core::evaluation::summarize;
use fleeg_core::federation::{run_baseline, run_federation, ClientHyper, ClientState, ServerState, TrainConfig};
use fleeg_core::gradcheck::{finite_diff_report, FdOptions, FdReport};
use fleeg_core::harness::Mode;
use fleeg_core::network::{LayerSpec, Network};
use fleeg_core::rng::{keyed_rng, Stream};
use fleeg_core::{build_from_table, DatasetFormat, PersonalizedModel, Tensor4, WeightSet};
use fleeg_transport::{decode_weights, encode_weights};
use rand::seq::SliceRandom;
use rand::Rng;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n}: {detail}");
}

fn random(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = keyed_rng(Stream::Subset, &[0xACCE, seed]);
    let n = dims.iter().product();
    Tensor4::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

// 1 ------------------------------------------------------------------------

/// Rows of the published local-module table: name, input (C, T), temporal
/// kernel widths, pool widths and stated output width.
const PUBLISHED: [(&str, usize, usize, [usize; 3], [usize; 3], usize); 9] = [
    ("KU", 62, 1000, [10, 10, 10], [3, 3, 3], 32),
    ("SHU", 32, 1000, [10, 10, 10], [3, 3, 3], 32),
    ("Shin2017", 30, 2000, [8, 8, 8], [5, 4, 3], 30),
    ("BCI-IV-2a", 22, 1000, [10, 10, 10], [3, 3, 3], 32),
    ("Weibo2014", 60, 800, [8, 8, 8], [2, 3, 3], 30),
    ("MunichMI", 128, 3500, [10, 10, 10], [4, 4, 3], 32),
    ("HGD", 128, 2000, [20, 20, 10], [6, 3, 3], 31),
    ("Cho2017", 64, 1536, [22, 22, 22], [4, 3, 3], 32),
    ("Murat2018", 22, 200, [6, 6, 6], [1, 2, 3], 30),
];

#[test]
fn criterion_1_shape_fixtures() {
    let start = Instant::now();
    let mut bad = Vec::new();
    for (name, c, t, kernels, pools, width) in PUBLISHED {
        let (local, global) = build_from_table(name).unwrap();
        assert_eq!((local.channels, local.kernels, local.pools), (c, kernels, pools), "{name}");
        match PersonalizedModel::new(local, global, t, 0, 0) {
            Ok(m) if m.local().output_dims(1) == [1, 100, 1, width] && m.global().output_dims(1) == [1, 2, 1, 1] => {}
            Ok(m) => bad.push(format!("{name} gives {:?}", m.local().output_dims(1))),
            Err(e) => bad.push(format!("{name}: {e}")),
        }
    }
    let pass = bad.is_empty() && start.elapsed() < Duration::from_secs(1);
    report(1, pass, format!("{}/9 rows reproduce (100,1,w) -> (2,1,1) exactly; {}", 9 - bad.len(), bad.join("; ")));
}

// 2 ------------------------------------------------------------------------

#[test]
fn criterion_2_gradient_suite() {
    let start = Instant::now();
    let tol = 1e-4;
    let mut worst: Vec<(String, FdReport)> = Vec::new();
    let nets: [(&str, Vec<LayerSpec>); 4] = [
        ("conv", vec![LayerSpec::conv("a", 2, 2, 9)]),
        ("conv+elu", vec![LayerSpec::conv("a", 3, 1, 3), LayerSpec::Elu, LayerSpec::conv("b", 2, 2, 7)]),
        ("conv+pool", vec![LayerSpec::conv("a", 3, 1, 3), LayerSpec::pool(2), LayerSpec::conv("b", 2, 2, 3)]),
        ("conv+elu+pool", vec![LayerSpec::conv("a", 3, 1, 2), LayerSpec::Elu, LayerSpec::pool(3), LayerSpec::conv("b", 2, 2, 2)]),
    ];
    for seed in 0..5u64 {
        for (name, layers) in &nets {
            let mut net = Network::new(layers.clone(), [1, 2, 9], |i| keyed_rng(Stream::Init, &[seed, i as u64])).unwrap();
            let x = random([3, 1, 2, 9], 10 + seed);
            let r = finite_diff_report(&mut net, &x, &[0, 1, 1], FdOptions { seed, ..Default::default() }).unwrap();
            worst.push((format!("{name} seed {seed}"), r));
        }
        let format = DatasetFormat::new("tiny", 4, 100.0, 130, 2, 2).unwrap();
        let mut model = PersonalizedModel::for_format(&format, seed, 1).unwrap();
        let x = random([2, 1, 4, 130], 80 + seed);
        let r = finite_diff_report(&mut model, &x, &[1, 0], FdOptions { seed, ..Default::default() }).unwrap();
        worst.push((format!("derived model seed {seed}"), r));
    }
    let (local, global) = build_from_table("KU").unwrap();
    let mut ku = PersonalizedModel::new(local, global, 1000, 3, 0).unwrap();
    let x = random([2, 1, 62, 1000], 70);
    let r = finite_diff_report(&mut ku, &x, &[0, 1], FdOptions { per_entry: 4, ..Default::default() }).unwrap();
    worst.push(("KU model".into(), r));

    let failing: Vec<String> = worst
        .iter()
        .filter(|(_, r)| r.max_error >= tol)
        .map(|(n, r)| format!("{n} {:.2e} ({} kinks, kink-aware {:.2e})", r.max_error, r.kinks, r.max_kink_aware_error))
        .collect();
    let max = worst.iter().map(|w| w.1.max_error).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = failing.is_empty() && elapsed < Duration::from_secs(120);
    report(
        2,
        pass,
        format!(
            "max central-difference error {max:.2e} over {} checks (tol {tol:e}, eps 1e-5, {:.0}s); over tol: {}",
            worst.len(),
            elapsed.as_secs_f64(),
            failing.join("; ")
        ),
    );
}

// 3 ------------------------------------------------------------------------

#[test]
fn criterion_3_aggregation_exactness() {
    let start = Instant::now();
    let (_, global) = build_from_table("KU").unwrap();
    let shapes = fleeg_core::model::initial_global(&global, 0).unwrap();
    let sets: Vec<WeightSet> = (0..3u64)
        .map(|s| {
            let mut w = shapes.zeros_like();
            for e in w.entries_mut() {
                e.value = random(e.value.dims(), 100 + s);
            }
            w
        })
        .collect();
    let counts = [21600usize, 1740, 2592];
    let total: usize = counts.iter().sum();
    let mut server = ServerState::new(shapes.clone(), counts.iter().copied().enumerate().collect()).unwrap();
    let coeff_sum: f64 = server.coefficients().iter().map(|c| c.1).sum();
    let pairs: Vec<(usize, &WeightSet)> = sets.iter().enumerate().collect();
    let out = server.aggregate(&pairs).unwrap().clone();
    let mut max_dev: f64 = 0.0;
    for e in 0..out.len() {
        for i in 0..out.get(e).len() {
            let want: f64 = (0..3).map(|k| counts[k] as f64 / total as f64 * sets[k].get(e).data()[i]).sum();
            max_dev = max_dev.max((out.get(e).data()[i] - want).abs());
        }
    }
    let mut single = ServerState::new(shapes.zeros_like(), vec![(0, 17)]).unwrap();
    let identity = single.aggregate(&[(0, &sets[1])]).unwrap() == &sets[1];
    let sum_dev = (coeff_sum - 1.0).abs();
    let pass = max_dev <= 1e-15 && sum_dev <= 1e-15 && identity && start.elapsed() < Duration::from_secs(1);
    report(
        3,
        pass,
        format!("entrywise deviation {max_dev:.1e}, coefficient sum deviation {sum_dev:.1e} (tol 1e-15), K=1 bit-exact {identity}"),
    );
}

// 4 ------------------------------------------------------------------------

fn synth(name: &str, channels: usize, samples: usize, subjects: usize, per: usize, seed: u64) -> TrialStore {
    generate(&SynthSpec {
        format: DatasetFormat::new(name, channels, 100.0, samples, subjects, per).unwrap(),
        informative: [vec![0], vec![channels - 1]],
        rhythm_hz: 10.0,
        depth: 0.8,
        noise: 0.5,
        variability: 0.2,
        seed,
    })
    .unwrap()
}

fn single_client(seed: u64) -> ClientState {
    let store = synth("solo", 4, 130, 3, 10, seed);
    let plan = plan_folds_for_subjects(&[store.subject_of_trials()], &[3], seed).unwrap().remove(0);
    let model = PersonalizedModel::for_format(store.format(), seed, 0).unwrap();
    let hyper = ClientHyper {
        learning_rate: 0.02,
        batch_size: 8,
    };
    let mut c = ClientState::new(0, model, Arc::new(store), hyper, seed).unwrap();
    c.begin_fold(0, plan.clients[0].clone()).unwrap();
    c
}

#[test]
fn criterion_4_single_client_equivalence() {
    let start = Instant::now();
    let mut identical = 0;
    for seed in [1u64, 2, 3] {
        let config = TrainConfig {
            rounds: 10,
            local_epochs: 1,
            seed,
        };
        let mut fed = vec![single_client(seed)];
        let mut base = single_client(seed);
        let a = run_federation(&mut fed, &config).unwrap();
        let b = run_baseline(&mut base, &config).unwrap();
        if a.reports == b.reports && a.best == b.best && fed[0].model().split_weights() == base.model().split_weights() {
            identical += 1;
        }
    }
    let pass = identical == 3 && start.elapsed() < Duration::from_secs(60);
    report(4, pass, format!("{identical}/3 seeds bit-identical over 10 rounds (logs, best snapshots, final weights)"));
}

// 5 ------------------------------------------------------------------------

const LOOPBACK: &str = r#"
seed = 9
rounds = 3

[[client]]
name = "left"
learning_rate = 0.02
batch_size = 8
[client.synth]
channels = 3
sample_rate = 100.0
trial_samples = 130
subjects = 2
trials_per_subject = 10
informative = [[0], [2]]
depth = 0.8
noise = 0.5
variability = 0.2

[[client]]
name = "right"
learning_rate = 0.01
batch_size = 4
[client.synth]
channels = 5
sample_rate = 128.0
trial_samples = 160
subjects = 3
trials_per_subject = 8
informative = [[1], [4]]
depth = 0.8
noise = 0.5
variability = 0.2
"#;

fn common(config: &Path, out: &Path, seed: Option<u64>) -> Common {
    Common {
        config: config.to_path_buf(),
        out: Some(out.to_path_buf()),
        force: false,
        seed,
    }
}

fn random_set(rng: &mut impl Rng) -> WeightSet {
    let mut w = WeightSet::default();
    for e in 0..rng.gen_range(0..6) {
        let dims = [rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..6)];
        let n = dims.iter().product();
        // exponents across the whole finite range
        let values = (0..n)
            .map(|_| f64::from_bits(rng.gen::<u64>() & !(0x7ff << 52) | (rng.gen_range(1u64..0x7ff) << 52)))
            .collect();
        w.push(format!("entry.{e}"), Tensor4::new(dims, values).unwrap());
    }
    w
}

#[test]
fn criterion_5_transport_transparency() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("loop.cfg");
    std::fs::write(&cfg, LOOPBACK).unwrap();
    let (local, remote) = (dir.path().join("local"), dir.path().join("remote"));
    commands::train(&common(&cfg, &local, None), Mode::Federated).unwrap();

    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let server = {
        let (c, a) = (common(&cfg, &remote, None), addr.clone());
        std::thread::spawn(move || commands::serve_cmd(&c, Some(&a)).map(drop))
    };
    let manifest = remote.join("federated/manifest.json");
    while !manifest.exists() {
        std::thread::sleep(Duration::from_millis(10));
    }
    let clients: Vec<_> = ["right", "left"]
        .iter()
        .map(|name| {
            let (c, a) = (common(&cfg, &remote, None), addr.clone());
            std::thread::spawn(move || commands::client_cmd(&c, name, Some(&a)))
        })
        .collect();
    for c in clients {
        c.join().unwrap().unwrap();
    }
    server.join().unwrap().unwrap();
    let mut differing = Vec::new();
    for file in ["folds.csv", "accuracy.csv", "rounds.jsonl"] {
        if std::fs::read(local.join("federated").join(file)).unwrap() != std::fs::read(remote.join("federated").join(file)).unwrap() {
            differing.push(file);
        }
    }

    let mut rng = keyed_rng(Stream::Subset, &[55]);
    let mut exact = 0;
    for _ in 0..100 {
        let w = random_set(&mut rng);
        let bytes = encode_weights(&w).unwrap();
        let back = decode_weights(&bytes).unwrap();
        let bits = back.values().zip(w.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        if bits && back.layout() == w.layout() && encode_weights(&back).unwrap() == bytes {
            exact += 1;
        }
    }
    let pass = differing.is_empty() && exact == 100 && start.elapsed() < Duration::from_secs(120);
    report(
        5,
        pass,
        format!("loopback vs in-process differing outputs {differing:?}; codec bit-exact round trips {exact}/100"),
    );
}

// 6 and 7 -----------------------------------------------------------------

const DESK_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct DeskSeed {
    /// `(client, acc_fl, acc_base)`.
    clients: Vec<(String, f64, f64)>,
    /// Ranks of the small client's informative channels, 0 = most salient.
    informative_ranks: Vec<usize>,
    channels: usize,
}

fn small_client_saliency(paths: &[PathBuf]) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0;
    for p in paths.iter().filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("saliency_small_")) {
        let text = std::fs::read_to_string(p).unwrap();
        let scores: Vec<f64> = text.lines().skip(1).map(|l| l.split_once(',').unwrap().1.parse().unwrap()).collect();
        if sum.is_empty() {
            sum = vec![0.0; scores.len()];
        }
        for (a, v) in sum.iter_mut().zip(scores) {
            *a += v;
        }
        n += 1;
    }
    sum.into_iter().map(|v| v / n as f64).collect()
}

fn desk_runs() -> &'static Vec<DeskSeed> {
    static RUNS: OnceLock<Vec<DeskSeed>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = fixture("desk-three.cfg");
        let loaded = fleeg_cli::config::Loaded::read(&cfg, None).unwrap();
        let synth = match &loaded.clients[0].source {
            fleeg_cli::config::Source::Synth(s) => s.clone(),
            _ => panic!("small client must be synthetic"),
        };
        let informative: Vec<usize> = synth.informative.concat();
        let names = loaded.names();
        DESK_SEEDS
            .iter()
            .map(|&seed| {
                let dir = tempfile::tempdir().unwrap();
                let c = common(&cfg, dir.path(), Some(seed));
                let t = Instant::now();
                let fl = commands::train(&c, Mode::Federated).unwrap();
                let base = commands::train(&c, Mode::Baseline).unwrap();
                let paths = commands::saliency(&c, None).unwrap();
                let summary = summarize(&fl, &base).unwrap();
                let scores = small_client_saliency(&paths);
                let mut order: Vec<usize> = (0..scores.len()).collect();
                order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
                let rank: BTreeMap<usize, usize> = order.iter().enumerate().map(|(r, &ch)| (ch, r)).collect();
                let run = DeskSeed {
                    clients: summary.clients.iter().map(|r| (names[r.client].clone(), r.acc_fl, r.acc_base)).collect(),
                    informative_ranks: informative.iter().map(|ch| rank[ch]).collect(),
                    channels: scores.len(),
                };
                eprintln!(
                    "desk seed {seed}: {:?}, small informative ranks {:?} of {} ({:.0}s)",
                    run.clients,
                    run.informative_ranks,
                    run.channels,
                    t.elapsed().as_secs_f64()
                );
                run
            })
            .collect()
    })
}

#[test]
#[ignore = "trains three clients over 4 folds, 30 rounds, 5 seeds and both modes; about 50 minutes on one core"]
fn criterion_6_federation_benefits_the_smallest_client() {
    let runs = desk_runs();
    let k = runs[0].clients.len();
    let mean = |i: usize, fl: bool| {
        runs.iter().map(|r| if fl { r.clients[i].1 } else { r.clients[i].2 }).sum::<f64>() / runs.len() as f64
    };
    let gains: Vec<(String, f64)> = (0..k).map(|i| (runs[0].clients[i].0.clone(), 100.0 * (mean(i, true) - mean(i, false)))).collect();
    // the first configured client is the smallest
    let small_gain = gains[0].1;
    let worst = gains.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
    let pass = small_gain >= 3.0 && worst >= -2.0;
    let detail: Vec<String> = gains.iter().map(|(n, g)| format!("{n} {g:+.2}")).collect();
    report(6, pass, format!("mean accuracy gain in points over {} seeds: {} (need small >= +3, all >= -2)", runs.len(), detail.join(", ")));
}

#[test]
#[ignore = "reuses the trained models of criterion 6"]
fn criterion_7_saliency_finds_the_informative_channels() {
    let runs = desk_runs();
    let hits = runs
        .iter()
        .filter(|r| {
            let top = r.channels.div_ceil(4);
            r.informative_ranks.iter().all(|&rank| rank < top)
        })
        .count();
    let ranks: Vec<String> = runs.iter().map(|r| format!("{:?}", r.informative_ranks)).collect();
    report(7, hits >= 4, format!("{hits}/5 seeds with every informative channel in the top 25% (ranks {})", ranks.join(" ")));
}

// 8 ------------------------------------------------------------------------

#[test]
fn criterion_8_fold_plan_properties() {
    let start = Instant::now();
    let mut rng = keyed_rng(Stream::Subset, &[8]);
    let cases = 1000;
    let mut violations = 0;
    for case in 0..cases {
        let k = rng.gen_range(1..6);
        let sizes: Vec<(usize, usize)> = (0..k).map(|_| (rng.gen_range(2..12), rng.gen_range(2..8))).collect();
        let lists: Vec<Vec<usize>> = sizes
            .iter()
            .map(|&(s, per)| {
                let mut v: Vec<usize> = (0..s * per).map(|i| i % s).collect();
                v.shuffle(&mut rng);
                v
            })
            .collect();
        let counts: Vec<usize> = sizes.iter().map(|s| s.0).collect();
        let plans = plan_folds_for_subjects(&lists, &counts, case).unwrap();
        let folds = *counts.iter().max().unwrap();
        let mut ok = plans.len() == folds;
        for (c, trials) in lists.iter().enumerate() {
            let s = counts[c];
            let mut held = vec![0usize; s];
            for (f, p) in plans.iter().enumerate() {
                let cf = &p.clients[c];
                held[cf.held_out] += 1;
                let mut all: Vec<usize> = cf.train.iter().chain(&cf.validation).chain(&cf.test).copied().collect();
                all.sort_unstable();
                ok &= cf.held_out == f % s
                    && all == (0..trials.len()).collect::<Vec<_>>()
                    && cf.test.iter().all(|&i| trials[i] == cf.held_out)
                    && cf.train.iter().chain(&cf.validation).all(|&i| trials[i] != cf.held_out)
                    && !cf.validation.is_empty();
            }
            ok &= held.iter().all(|&n| n == folds / s || n == folds.div_ceil(s));
        }
        violations += usize::from(!ok);
    }
    let pass = violations == 0 && start.elapsed() < Duration::from_secs(60);
    report(8, pass, format!("{violations} violations in {cases} random subject-count configurations"));
}

// 9 ------------------------------------------------------------------------

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn one_channel(signal: Vec<f64>, fs: f64) -> TrialStore {
    let t = signal.len();
    let trials = (0..2u8)
        .map(|label| Trial {
            subject: 0,
            label,
            data: Tensor4::new([1, 1, 1, t], signal.clone()).unwrap(),
        })
        .collect();
    TrialStore::new(DatasetFormat::new("x", 1, fs, t, 1, 2).unwrap(), trials, Provenance::Generated { seed: 0 }).unwrap()
}

#[test]
fn criterion_9_preprocessing() {
    let start = Instant::now();
    let fs = 250.0;
    let sine = |hz: f64| -> Vec<f64> { (0..2500).map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / fs).sin()).collect() };
    let gain = |x: Vec<f64>| {
        let out = bandpass(&one_channel(x.clone(), fs), 0.3, 40.0).unwrap();
        rms(out.trials()[0].data.data()) / rms(&x)
    };
    let (g50, g10, gdc) = (gain(sine(50.0)), gain(sine(10.0)), gain(vec![1.0; 2500]));
    let ramp: Vec<f64> = (0..4000).map(|i| i as f64).collect();
    let d4 = decimate(&one_channel(ramp.clone(), 1000.0), 4).unwrap();
    let d5 = decimate(&one_channel(ramp, 1000.0), 5).unwrap();
    let ku = d4.format().sample_rate == 250.0
        && d4.format().trial_samples == 1000
        && d4.trials()[0].data.data().iter().enumerate().all(|(i, &v)| v == (4 * i) as f64);
    let shin = d5.format().sample_rate == 200.0 && d5.format().trial_samples == 800;
    let pass = g50 < 0.05 && (g10 - 1.0).abs() < 0.1 && gdc < 0.05 && ku && shin && start.elapsed() < Duration::from_secs(60);
    report(
        9,
        pass,
        format!(
            "50 Hz gain {g50:.4} (< 0.05), 10 Hz gain {g10:.4} (within 0.1 of 1), DC gain {gdc:.4} (< 0.05), 1000->250 Hz x4 {ku}, 1000->200 Hz x5 {shin}"
        ),
    );
}
