use std::fs;

use lowres_asr::audio::FrontendConfig;
use lowres_asr::data::synth;
use lowres_asr::model::{AcousticModel, ModelConfig};
use lowres_asr::tensor::Tensor;
use lowres_asr::training::checkpoint::{resolve_checkpoint_dir, write_best_marker};
use lowres_asr::training::{Checkpoint, CheckpointMeta, Optimizer, OptimizerConfig};

fn tiny() -> (AcousticModel, Optimizer) {
    let cfg = ModelConfig {
        n_rcnn_blocks: 1,
        n_rnn_blocks: 1,
        cnn_channels: 2,
        rnn_hidden: 6,
        ..ModelConfig::new(8, synth::charset().len())
    };
    let model = AcousticModel::new(cfg, 11).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::adamw(), model.params());
    let mut params = model.params().clone();
    let grads: Vec<Tensor> = params
        .ids()
        .map(|id| Tensor::full(params.get(id).shape(), 0.01 * (id.index() as f64 + 1.0)))
        .collect();
    opt.step(&mut params, &grads, 1e-3).unwrap();
    let mut model = model;
    model.params_mut().load_values(&params).unwrap();
    (model, opt)
}

fn meta(model: &AcousticModel, opt: &Optimizer) -> CheckpointMeta {
    CheckpointMeta {
        epoch: 3,
        step: opt.steps_taken(),
        val_wer: 12.5,
        val_cer: 4.0,
        val_loss: 0.75,
        config_hash: "abc".into(),
        charset_hash: synth::charset().hash(),
        frontend: FrontendConfig {
            n_mels: 8,
            ..FrontendConfig::igbo()
        },
        model: model.config().clone(),
        optimizer: *opt.config(),
    }
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (model, opt) = tiny();
    let ckpt = Checkpoint::capture(meta(&model, &opt), &model, &opt, &synth::charset()).unwrap();
    ckpt.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.meta, ckpt.meta);
    assert_eq!(back.charset.hash(), synth::charset().hash());

    let restored = back.model().unwrap();
    let x = Tensor::new(vec![2, 8, 12], (0..192).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect()).unwrap();
    let (a, la) = model.infer(&x, &[12, 9]).unwrap();
    let (b, lb) = restored.infer(&x, &[12, 9]).unwrap();
    assert_eq!(la, lb);
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));

    let opt2 = back.optimizer(&restored).unwrap();
    assert_eq!(opt2.steps_taken(), opt.steps_taken());
    let bytes = |o: &Optimizer, m: &AcousticModel| {
        let mut buf = Vec::new();
        o.to_store(m.params()).unwrap().write(&mut buf).unwrap();
        buf
    };
    assert_eq!(bytes(&opt2, &restored), bytes(&opt, &model));
}

#[test]
fn saving_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (model, opt) = tiny();
    let ckpt = Checkpoint::capture(meta(&model, &opt), &model, &opt, &synth::charset()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ckpt.save(&a).unwrap();
    ckpt.save(&b).unwrap();
    for f in ["params.okwp", "optimizer.okwp", "checkpoint.toml", "charset.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn run_dir_resolves_through_the_best_marker() {
    let dir = tempfile::tempdir().unwrap();
    let (model, opt) = tiny();
    let ckpt = Checkpoint::capture(meta(&model, &opt), &model, &opt, &synth::charset()).unwrap();
    ckpt.save(&dir.path().join("epoch_00003")).unwrap();
    write_best_marker(dir.path(), "epoch_00003").unwrap();
    assert_eq!(resolve_checkpoint_dir(dir.path()).unwrap(), dir.path().join("epoch_00003"));
    assert_eq!(Checkpoint::load(dir.path()).unwrap().meta.epoch, 3);
}

#[test]
fn truncated_params_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (model, opt) = tiny();
    let ckpt = Checkpoint::capture(meta(&model, &opt), &model, &opt, &synth::charset()).unwrap();
    ckpt.save(dir.path()).unwrap();
    let p = dir.path().join("params.okwp");
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}
