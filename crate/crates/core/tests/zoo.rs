use mpcd_core::data::{normalize_minmax, NormalizedPdp, STANDARD_CHUNK_LENGTHS};
use mpcd_core::synth::{generate_dataset, SynthDatasetSpec, SynthParams};
use mpcd_core::zoo::{evaluate_mse, train, validation_split, Arch, Autoencoder, ModelConfig, TrainConfig, TrainedModel};
use mpcd_core::CoreError;
use mpcd_nn::{AdamState, Graph, Tensor};

fn conv_len(n: usize) -> usize {
    (n + 2 * 7 - 14) / 2 + 1
}

#[test]
fn cnn_bottleneck_length() {
    let m = Autoencoder::build(&ModelConfig::reference(Arch::Cnn), 0).unwrap();
    let mut want = vec![820];
    for _ in 0..4 {
        want.push(conv_len(*want.last().unwrap()));
    }
    assert_eq!(m.cnn_length_chain(820).unwrap(), want);
    assert_eq!(want[4], 53);
}

#[test]
fn transformer_parameter_count() {
    let d = 8;
    let ffn = 32;
    let input = d + d;
    let attention = 3 * (d * d + d) + (d * d + d);
    let feed_forward = (d * ffn + ffn) + (ffn * d + d);
    let norms = 2 * (2 * d);
    let head = d + 1;
    let want = input + attention + feed_forward + norms + head;
    assert_eq!(want, 897);
    let m = Autoencoder::build(&ModelConfig::reference(Arch::Transformer), 0).unwrap();
    assert_eq!(m.parameter_count(), want);
}

#[test]
fn reconstruction_preserves_length() {
    let x: Vec<f64> = (0..820).map(|i| ((i as f64) * 0.05).sin() * 0.5 + 0.5).collect();
    for arch in Arch::ALL {
        let base = ModelConfig::reference(arch);
        let configs: Vec<ModelConfig> = if arch.is_recurrent() {
            STANDARD_CHUNK_LENGTHS.iter().map(|&c| base.clone().with_chunk(c)).collect()
        } else {
            vec![base]
        };
        for cfg in configs {
            let m = Autoencoder::build(&cfg, 1).unwrap();
            let y = m.reconstruct(&x).unwrap();
            assert_eq!(y.len(), x.len(), "{arch} chunk {:?}", cfg.chunk_length);
            assert!(y.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn odd_lengths_reconstruct_for_cnn() {
    let m = Autoencoder::build(&ModelConfig::reference(Arch::Cnn), 2).unwrap();
    for len in [37, 100, 203] {
        assert_eq!(m.reconstruct(&vec![0.3; len]).unwrap().len(), len);
    }
}

#[test]
fn builds_are_seed_deterministic() {
    for arch in Arch::ALL {
        let cfg = ModelConfig::reference(arch);
        let a = Autoencoder::build(&cfg, 9).unwrap();
        assert_eq!(a, Autoencoder::build(&cfg, 9).unwrap());
        assert_ne!(a.params(), Autoencoder::build(&cfg, 10).unwrap().params());
    }
}

#[test]
fn config_errors_name_the_row() {
    let mut c = ModelConfig::reference(Arch::Cnn);
    c.kernel_size = Some(3);
    match Autoencoder::build(&c, 0) {
        Err(CoreError::Config(msg)) => assert!(msg.contains("CNN"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
    let mut c = ModelConfig::reference(Arch::Lstm);
    c.chunk_length = None;
    assert!(matches!(c.validate(), Err(CoreError::Config(m)) if m.contains("LSTM")));
    let mut c = ModelConfig::reference(Arch::Transformer);
    c.attention_heads = Some(2);
    assert!(matches!(c.validate(), Err(CoreError::Config(m)) if m.contains("TRANSFORMER")));
}

#[test]
fn one_adam_step_lowers_the_loss() {
    for arch in Arch::ALL {
        let cfg = ModelConfig::reference(arch);
        let len = if arch.is_recurrent() { cfg.chunk_length.unwrap() } else { 64 };
        let data: Vec<f64> = (0..2 * len).map(|i| ((i as f64) * 0.3).cos() * 0.4 + 0.5).collect();
        let target = Tensor::new(vec![2, len], data).unwrap();
        let mut model = Autoencoder::build(&cfg, 4).unwrap();
        let loss_of = |m: &Autoencoder| {
            let mut g = Graph::new();
            let y = m.forward(&mut g, &target).unwrap();
            let loss = g.mse_loss(y, &target).unwrap();
            let grads = g.backward(loss).unwrap().param_grads(m.params());
            (g.value(loss).item(), grads)
        };
        let (before, grads) = loss_of(&model);
        let mut store = model.params().clone();
        let mut adam = AdamState::new(store.tensors(), 1e-4).unwrap();
        adam.apply(store.tensors_mut(), &grads).unwrap();
        model.load_params(&store).unwrap();
        let (after, _) = loss_of(&model);
        assert!(after < before, "{arch}: {after} !< {before}");
    }
}

fn constant(id: u64, len: usize, level: f64) -> NormalizedPdp {
    NormalizedPdp {
        values: vec![level; len],
        scale_min: -100.0,
        scale_max: -50.0,
        source_id: id,
        variant: 0,
        labels: vec![],
    }
}

#[test]
fn learns_a_constant_signal() {
    let samples: Vec<NormalizedPdp> = (0..10).map(|i| constant(i, 64, 0.37)).collect();
    let model = Autoencoder::build(&ModelConfig::reference(Arch::Transformer), 3).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        max_epochs: 200,
        batch_size: 4,
        early_stop_patience: 20,
        ..TrainConfig::default()
    };
    let trained = train(model, &samples, &cfg).unwrap();
    let y = trained.reconstruct(&samples[0].values).unwrap();
    let mse = y.iter().map(|v| (v - 0.37) * (v - 0.37)).sum::<f64>() / y.len() as f64;
    assert!(mse < 1e-4, "mse {mse}");
}

fn small_dataset() -> Vec<NormalizedPdp> {
    let spec = SynthDatasetSpec {
        n_records: 20,
        params: SynthParams {
            length: 160,
            n_peaks_min: 1,
            n_peaks_max: 3,
            seed: 5,
            ..SynthParams::default()
        },
    };
    generate_dataset(&spec)
        .unwrap()
        .records()
        .iter()
        .map(|r| normalize_minmax(r).unwrap())
        .collect()
}

#[test]
fn training_contract() {
    let samples = small_dataset();
    let cfg = TrainConfig {
        max_epochs: 12,
        batch_size: 4,
        early_stop_patience: 3,
        learning_rate: 0.005,
        seed: 1,
        ..TrainConfig::default()
    };
    let build = || Autoencoder::build(&ModelConfig::reference(Arch::Transformer), 8).unwrap();
    let a = train(build(), &samples, &cfg).unwrap();
    let b = train(build(), &samples, &cfg).unwrap();
    assert_eq!(a.checkpoint(), b.checkpoint());
    assert_eq!(a.loss_history, b.loss_history);
    assert!(a.is_frozen());

    let best = a.loss_history.iter().find(|e| e.epoch == a.best_epoch).unwrap();
    assert!(a.loss_history.iter().all(|e| e.val_mse >= best.val_mse));
    let (_, val) = validation_split(&samples, &cfg).unwrap();
    assert_eq!(evaluate_mse(a.model(), &val).unwrap(), best.val_mse);

    let x = &samples[0].values;
    assert_eq!(a.reconstruct(x).unwrap(), a.reconstruct(x).unwrap());

    let restored = TrainedModel::load(&a.manifest(), &a.checkpoint()).unwrap();
    assert_eq!(restored, a);
}

#[test]
fn recurrent_training_is_bit_reproducible() {
    let samples = small_dataset();
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 4,
        early_stop_patience: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    for arch in [Arch::Lstm, Arch::Gru] {
        let build = || Autoencoder::build(&ModelConfig::reference(arch).with_chunk(17), 6).unwrap();
        let a = train(build(), &samples, &cfg).unwrap();
        let b = train(build(), &samples, &cfg).unwrap();
        assert_eq!(a.checkpoint(), b.checkpoint(), "{arch}");
        assert_eq!(a.loss_history, b.loss_history, "{arch}");
    }
}

#[test]
fn divergence_is_reported() {
    let mut samples = small_dataset();
    samples[0].values[3] = f64::NAN;
    let model = Autoencoder::build(&ModelConfig::reference(Arch::Transformer), 0).unwrap();
    let cfg = TrainConfig {
        max_epochs: 3,
        early_stop_patience: 1,
        ..TrainConfig::default()
    };
    assert!(matches!(train(model, &samples, &cfg), Err(CoreError::Divergence { epoch: 1 })));
}
