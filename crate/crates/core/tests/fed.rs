mod common;

use common::*;
use moonfl::checkpoint;
use moonfl::data::{self, make_blobs, BlobSpec, Dataset, Partition, PartitionMode, PartitionSpec};
use moonfl::fed::{self, AlgorithmConfig, Federation, PartyState, RunOptions, Variant};
use moonfl::losses;
use moonfl::metrics::top1_accuracy;
use moonfl::nn::{Architecture, Network, ParamVector, SgdState};
use moonfl::rng::Rng;
use moonfl::tensor::{Tape, Tensor};

fn blobs(seed: u64) -> Dataset {
    make_blobs(&BlobSpec {
        num_classes: 3,
        samples_per_class: 40,
        dim: 4,
        spread: 1.0,
        seed,
    })
    .unwrap()
}

fn split(ds: &Dataset, parties: usize, seed: u64) -> Partition {
    data::partition(
        ds,
        &PartitionSpec {
            num_parties: parties,
            beta: 0.5,
            seed,
            mode: PartitionMode::Dirichlet,
        },
    )
    .unwrap()
}

fn arch() -> Architecture {
    Architecture::new(4, vec![8], 4, 3)
}

fn cfg(variant: Variant) -> AlgorithmConfig {
    AlgorithmConfig {
        variant,
        local_epochs: 1,
        rounds: 3,
        batch_size: 16,
        learning_rate: 0.05,
        master_seed: 3,
        ..Default::default()
    }
}

#[test]
fn golden_five_round_moon_run() {
    let ds = blobs(21);
    let (train, test) = ds.stratified_split(0.25, 4).unwrap();
    let p = split(&train, 4, 8);
    let config = AlgorithmConfig {
        rounds: 5,
        ..cfg(Variant::Moon)
    };
    let out = fed::run(&config, &arch(), &p, &train, &test, RunOptions::default()).unwrap();
    let acc = out.records.last().unwrap().accuracy.unwrap();
    // first-run snapshot
    assert_eq!(acc, GOLDEN_ACCURACY, "final accuracy drifted");
    assert_eq!(
        checksum(out.final_model.as_slice()),
        GOLDEN_MODEL_CHECKSUM,
        "final model drifted"
    );
}

const GOLDEN_ACCURACY: f64 = 1.0;
const GOLDEN_MODEL_CHECKSUM: u64 = 0xefdc_6080_0cda_7947;

#[test]
fn fedavg_loss_on_a_fixed_batch_does_not_increase() {
    let ds = make_blobs(&BlobSpec {
        num_classes: 3,
        samples_per_class: 20,
        dim: 4,
        spread: 0.2,
        seed: 2,
    })
    .unwrap();
    let net_arch = arch();
    let mut net = Network::init(&net_arch, 1);
    let mut sgd = SgdState::new(0.01, 0.0, 0.0, net_arch.param_count()).unwrap();
    let mut last = f64::INFINITY;
    for step in 0..50 {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let x = tape.constant(ds.features().clone());
        let logits = bound.forward_full(&mut tape, x).unwrap();
        let loss = losses::cross_entropy(&mut tape, logits, ds.labels()).unwrap();
        let value = tape.value(loss).item();
        assert!(value <= last + 1e-12, "step {step}: {value} > {last}");
        last = value;
        tape.backward(loss).unwrap();
        let g = bound.gradient(&tape).unwrap();
        sgd.step(net.params_mut(), &g).unwrap();
    }
}

#[test]
fn moon_with_duplicated_negative_matches_single() {
    let ds = blobs(5);
    let p = split(&ds, 3, 1);
    let mut party = PartyState::new(0, ds.subset(p.party(0)));
    let arch = arch();
    let global = Network::init(&arch, 10).into_params();
    let prev = Network::init(&arch, 11).into_params();
    party.record_local_model(prev.clone(), 2);
    let k1 = fed::local_train_moon(&party, &global, &arch, &cfg(Variant::Moon), 0).unwrap();
    party.record_local_model(prev, 2);
    assert_eq!(party.prev_models().len(), 2);
    let k1_again = fed::local_train_moon(&party, &global, &arch, &cfg(Variant::Moon), 0).unwrap();
    assert_eq!(k1.model, k1_again.model);
    let k2_cfg = AlgorithmConfig {
        max_negative_pairs: 2,
        ..cfg(Variant::Moon)
    };
    let k2 = fed::local_train_moon(&party, &global, &arch, &k2_cfg, 0).unwrap();
    // two identical negatives add log 2 inside the softplus, so the paths differ
    assert!(k2.model.max_abs_diff(&k1.model).unwrap() > 0.0);
}

#[test]
fn moon_mu_zero_single_step_equals_fedavg() {
    let ds = blobs(6).subset(&(0..10).collect::<Vec<_>>());
    let mut party = PartyState::new(0, ds);
    let arch = arch();
    let global = Network::init(&arch, 4).into_params();
    party.record_local_model(Network::init(&arch, 5).into_params(), 1);
    let config = AlgorithmConfig {
        mu: 0.0,
        batch_size: 64,
        ..cfg(Variant::Moon)
    };
    let moon = fed::local_train_moon(&party, &global, &arch, &config, 0).unwrap();
    let avg = fed::local_train_fedavg(&party, &global, &arch, &config, 0).unwrap();
    assert_eq!(moon.steps, 1);
    assert_eq!(moon.model, avg.model);
    assert!(moon.mean_con_loss.is_some());
}

#[test]
fn huge_proximal_weight_pins_the_model() {
    let ds = blobs(7);
    let party = PartyState::new(0, ds);
    let arch = arch();
    let global = Network::init(&arch, 2).into_params();
    let base = AlgorithmConfig {
        // lr * mu = 1: each step resets the drift to a single gradient step
        learning_rate: 1e-6,
        momentum: 0.0,
        weight_decay: 0.0,
        local_epochs: 4,
        ..cfg(Variant::FedProx)
    };
    let free = fed::local_train_fedavg(&party, &global, &arch, &base, 0).unwrap();
    let pinned = fed::local_train_fedprox(
        &party,
        &global,
        &arch,
        &AlgorithmConfig {
            mu: 1e6,
            ..base.clone()
        },
        0,
    )
    .unwrap();
    let d_free = free.model.l2_distance(&global).unwrap();
    let d_pinned = pinned.model.l2_distance(&global).unwrap();
    assert!(d_pinned * 10.0 <= d_free, "{d_pinned} vs {d_free}");
    let zero = fed::local_train_fedprox(&party, &global, &arch, &AlgorithmConfig { mu: 0.0, ..base }, 0).unwrap();
    assert_eq!(zero.model, free.model);
}

#[test]
fn proximal_gradient_is_mu_times_drift() {
    let mut rng = Rng::new(3);
    let w = random_vec(&mut rng, 12, 1.0);
    let anchor = ParamVector::new(random_vec(&mut rng, 12, 1.0));
    let mu = 2.5;
    let mut tape = Tape::new();
    let leaves = [
        tape.param(Tensor::new(vec![3, 2], w[..6].to_vec()).unwrap()),
        tape.param(Tensor::new(vec![6], w[6..].to_vec()).unwrap()),
    ];
    let prox = losses::proximal_term(&mut tape, &leaves, &anchor).unwrap();
    let scaled = tape.scale(prox, mu);
    tape.backward(scaled).unwrap();
    let analytic: Vec<f64> = leaves
        .iter()
        .flat_map(|&l| tape.grad(l).unwrap().data().to_vec())
        .collect();
    let numeric = central_diff(&w, 1e-6, |v| mu * ref_proximal(v, anchor.as_slice()));
    assert!(rel_err(&analytic, &numeric) <= 1e-6);
    for ((g, wi), ai) in analytic.iter().zip(&w).zip(anchor.as_slice()) {
        assert!((g - mu * (wi - ai)).abs() < 1e-12);
    }
}

#[test]
fn scaffold_zero_controls_single_step_is_plain_sgd() {
    let ds = blobs(8).subset(&(0..12).collect::<Vec<_>>());
    let party = PartyState::new(0, ds);
    let arch = arch();
    let global = Network::init(&arch, 3).into_params();
    let config = AlgorithmConfig {
        batch_size: 64,
        momentum: 0.0,
        ..cfg(Variant::Scaffold)
    };
    let zero = ParamVector::zeros(global.len());
    let scaffold = fed::local_train_scaffold(&party, &global, &zero, &arch, &config, 0).unwrap();
    let plain = fed::local_train_fedavg(&party, &global, &arch, &config, 0).unwrap();
    assert_eq!(scaffold.steps, 1);
    assert_eq!(scaffold.model, plain.model);
    // one step of lr * g: c_i+ recovers g exactly up to rounding
    let (c_plus, delta) = scaffold.control.unwrap();
    assert_eq!(c_plus, delta);
}

#[test]
fn scaffold_server_control_is_mean_of_party_controls() {
    let ds = blobs(9);
    let p = split(&ds, 4, 2);
    let mut fed = Federation::new(cfg(Variant::Scaffold), arch(), &ds, &p).unwrap();
    for _ in 0..3 {
        fed.round().unwrap();
        let c = fed.global().control_variate.clone().unwrap();
        let mut mean = ParamVector::zeros(c.len());
        for party in fed.parties() {
            mean.add_scaled(0.25, party.control_variate().unwrap()).unwrap();
        }
        assert!(c.max_abs_diff(&mean).unwrap() < 1e-12);
    }
}

#[test]
fn non_participants_are_bit_unchanged() {
    let ds = blobs(10);
    let p = split(&ds, 6, 3);
    for variant in [Variant::Moon, Variant::Scaffold] {
        let config = AlgorithmConfig {
            sample_fraction: 0.5,
            ..cfg(variant)
        };
        let mut fed = Federation::new(config, arch(), &ds, &p).unwrap();
        for _ in 0..4 {
            let before: Vec<PartyState> = fed.parties().to_vec();
            let record = fed.round().unwrap();
            for (id, (old, new)) in before.iter().zip(fed.parties()).enumerate() {
                if !record.participants.contains(&id) {
                    assert_eq!(old.prev_models(), new.prev_models());
                    assert_eq!(old.control_variate(), new.control_variate());
                }
            }
        }
    }
}

#[test]
fn solo_single_class_party_fits_its_data() {
    let ds = blobs(11);
    let only_class_one: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == 1).collect();
    let party = PartyState::new(0, ds.subset(&only_class_one));
    let arch = arch();
    let config = AlgorithmConfig {
        solo_epochs: 20,
        ..cfg(Variant::Solo)
    };
    let out = fed::solo_train(&party, &arch, &config).unwrap();
    let net = Network::from_vector(&arch, out.model.clone()).unwrap();
    assert!(top1_accuracy(&net, party.data()).unwrap() >= 0.99);
    assert_eq!(fed::solo_train(&party, &arch, &config).unwrap().model, out.model);
}

#[test]
fn runs_are_deterministic_and_seed_sensitive() {
    let ds = blobs(12);
    let p = split(&ds, 3, 4);
    let opts = RunOptions::default();
    let a = fed::run(&cfg(Variant::Moon), &arch(), &p, &ds, &ds, opts).unwrap();
    let b = fed::run(&cfg(Variant::Moon), &arch(), &p, &ds, &ds, opts).unwrap();
    assert_eq!(a.final_model, b.final_model);
    assert_eq!(
        a.records.iter().map(|r| r.accuracy).collect::<Vec<_>>(),
        b.records.iter().map(|r| r.accuracy).collect::<Vec<_>>()
    );
    let other = AlgorithmConfig {
        master_seed: 4,
        ..cfg(Variant::Moon)
    };
    let c = fed::run(&other, &arch(), &p, &ds, &ds, opts).unwrap();
    assert_ne!(a.final_model, c.final_model);
}

#[test]
fn evaluation_cadence() {
    let ds = blobs(13);
    let p = split(&ds, 3, 5);
    let config = AlgorithmConfig {
        rounds: 5,
        ..cfg(Variant::FedAvg)
    };
    let out = fed::run(
        &config,
        &arch(),
        &p,
        &ds,
        &ds,
        RunOptions {
            workers: 1,
            eval_every: 2,
        },
    )
    .unwrap();
    let evaluated: Vec<usize> = out
        .records
        .iter()
        .filter(|r| r.accuracy.is_some())
        .map(|r| r.round)
        .collect();
    assert_eq!(evaluated, vec![2, 4, 5]);
    for r in &out.records {
        assert!(r.accuracy.is_none_or(|a| (0.0..=1.0).contains(&a)));
    }
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let ds = blobs(14);
    let p = split(&ds, 4, 6);
    let config = AlgorithmConfig {
        rounds: 4,
        max_negative_pairs: 2,
        server_momentum: 0.5,
        ..cfg(Variant::Moon)
    };
    let mut straight = Federation::new(config.clone(), arch(), &ds, &p).unwrap();
    for _ in 0..4 {
        straight.round().unwrap();
    }

    let mut first = Federation::new(config.clone(), arch(), &ds, &p).unwrap();
    first.round().unwrap();
    first.round().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.bin");
    checkpoint::save_state(&path, &first).unwrap();

    let mut resumed = Federation::new(config, arch(), &ds, &p).unwrap();
    checkpoint::load_state_into(&path, &mut resumed).unwrap();
    assert_eq!(resumed.global(), first.global());
    resumed.round().unwrap();
    resumed.round().unwrap();
    assert_eq!(resumed.global(), straight.global());
}

#[test]
fn checkpoint_rejects_mismatched_federation() {
    let ds = blobs(15);
    let fed3 = Federation::new(cfg(Variant::Scaffold), arch(), &ds, &split(&ds, 3, 1)).unwrap();
    let bytes = checkpoint::encode_state(&fed3);
    let mut fed4 = Federation::new(cfg(Variant::Scaffold), arch(), &ds, &split(&ds, 4, 1)).unwrap();
    assert!(checkpoint::decode_state_into(&bytes, &mut fed4).is_err());
    let mut truncated = Federation::new(cfg(Variant::Scaffold), arch(), &ds, &split(&ds, 3, 1)).unwrap();
    assert!(checkpoint::decode_state_into(&bytes[..bytes.len() - 3], &mut truncated).is_err());
}

#[test]
fn model_checkpoint_file_round_trip() {
    let net = Network::init(&Architecture::new(5, vec![7, 3], 4, 6), 99);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    checkpoint::save_model(&path, &net).unwrap();
    let back = checkpoint::load_model(&path).unwrap();
    assert_eq!(back.params(), net.params());
    assert_eq!(back.architecture(), net.architecture());
}

#[test]
fn learning_rate_zero_run_returns_initial_model() {
    let ds = blobs(16);
    let p = split(&ds, 3, 7);
    for variant in [Variant::FedAvg, Variant::Moon, Variant::FedProx, Variant::Scaffold] {
        let config = AlgorithmConfig {
            learning_rate: 0.0,
            ..cfg(variant)
        };
        let initial = Federation::new(config.clone(), arch(), &ds, &p)
            .unwrap()
            .global()
            .model
            .clone();
        let out = fed::run(&config, &arch(), &p, &ds, &ds, RunOptions::default()).unwrap();
        assert_eq!(out.final_model, initial, "{variant}");
    }
}
