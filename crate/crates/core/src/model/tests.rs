use super::*;
use crate::ctc::ctc_batch_loss;
use crate::tensor::gradcheck::check_store_gradients;
use rand::Rng;

fn tiny(n_mels: usize, charset: usize) -> ModelConfig {
    ModelConfig {
        n_rcnn_blocks: 1,
        n_rnn_blocks: 1,
        cnn_channels: 2,
        cnn_kernel: [3, 3],
        stem_stride: 2,
        rnn_hidden: 4,
        dropout: 0.1,
        stem_batch_norm: true,
        activation_function: "GeLU".into(),
        n_mels,
        charset_size: charset,
    }
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn zero_param(m: &mut AcousticModel, id: ParamId) {
    let n = m.params().get(id).numel();
    m.params_mut().set(id, &vec![0.0; n]).unwrap();
}

#[test]
fn config_validation() {
    assert!(tiny(6, 3).validate().is_ok());
    let mut c = tiny(6, 1);
    assert!(c.validate().is_err());
    c = tiny(6, 3);
    c.n_rnn_blocks = 0;
    assert!(c.validate().is_err());
    c = tiny(6, 3);
    c.cnn_kernel = [2, 3];
    assert!(c.validate().is_err());
    c = tiny(6, 3);
    c.activation_function = "relu".into();
    assert!(c.validate().is_err());
}

#[test]
fn dimension_bookkeeping() {
    let c = tiny(6, 3);
    assert_eq!(c.reduced_mels(), 3);
    assert_eq!(c.decoder_output_dim(), 16);
    for t in 3..40 {
        assert_eq!(c.output_frames(t), t.div_ceil(2));
    }
    assert_eq!(c.min_input_frames(), 3);
    let mut three = c.clone();
    three.n_rnn_blocks = 3;
    assert_eq!(three.decoder_output_dim(), 2 * 4 * 8);
}

#[test]
fn rcnn_zero_convs_are_identity() {
    let mut m = AcousticModel::new(tiny(6, 3), 1).unwrap();
    for id in m.rcnn_conv_params(0).unwrap() {
        zero_param(&mut m, id);
    }
    let x = rand_t(&[2, 2, 3, 5], 2);
    let mut g = Graph::new();
    let bound = m.params().bind(&mut g);
    let xv = g.leaf(x.clone(), true);
    let y = m.rcnn_block_forward(&mut g, &bound, 0, xv, Mode::Train { seed: 3 }).unwrap();
    assert_eq!(g.value(y), &x);

    // the only path to x is the skip connection
    let w = g.constant(rand_t(&[2, 2, 3, 5], 4));
    let p = g.mul(y, w).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    assert_eq!(g.grad(xv).unwrap(), g.value(w));
}

#[test]
fn rcnn_preserves_shape() {
    let m = AcousticModel::new(tiny(6, 3), 1).unwrap();
    let mut g = Graph::new();
    let bound = m.params().bind(&mut g);
    let x = g.constant(rand_t(&[3, 2, 3, 7], 5));
    let y = m.rcnn_block_forward(&mut g, &bound, 0, x, Mode::Eval).unwrap();
    assert_eq!(g.shape(y), &[3, 2, 3, 7]);
}

#[test]
fn flatten_is_a_reshape_under_identity() {
    let mut cfg = tiny(6, 3);
    cfg.rnn_hidden = 6;
    let mut m = AcousticModel::new(cfg, 1).unwrap();
    let w = m.params().id("flatten.weight").unwrap();
    let b = m.params().id("flatten.bias").unwrap();
    let eye: Vec<f64> = (0..36).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect();
    m.params_mut().set(w, &eye).unwrap();
    zero_param(&mut m, b);
    let x = rand_t(&[1, 2, 3, 4], 6);
    let mut g = Graph::new();
    let bound = m.params().bind(&mut g);
    let xv = g.constant(x.clone());
    let y = m.flatten_fc(&mut g, &bound, xv).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 6]);
    for t in 0..4 {
        for c in 0..2 {
            for f in 0..3 {
                assert_eq!(g.value(y).get(&[0, t, c * 3 + f]), x.get(&[0, c, f, t]));
            }
        }
    }
}

#[test]
fn encoder_zero_lstm_and_composition() {
    let mut cfg = tiny(6, 3);
    cfg.n_rnn_blocks = 2;
    let mut m = AcousticModel::new(cfg, 7).unwrap();
    let x = rand_t(&[2, 5, 4], 8);

    let mut g = Graph::new();
    let bound = m.params().bind(&mut g);
    let xv = g.constant(x.clone());
    let full = m.encoder_forward(&mut g, &bound, xv, Mode::Eval).unwrap();
    assert_eq!(g.shape(full), &[2, 5, 8]);
    let b0 = m.encoder_block_forward(&mut g, &bound, 0, xv, Mode::Eval).unwrap();
    let b1 = m.encoder_block_forward(&mut g, &bound, 1, b0, Mode::Eval).unwrap();
    assert_eq!(g.value(full), g.value(b1));

    for dir in ["fwd", "bwd"] {
        for part in ["w_ih", "w_hh", "bias"] {
            for blk in 0..2 {
                let id = m.params().id(&format!("encoder.{blk}.{dir}.{part}")).unwrap();
                zero_param(&mut m, id);
            }
        }
    }
    let mut g = Graph::new();
    let bound = m.params().bind(&mut g);
    let xv = g.constant(x);
    let y = m.encoder_forward(&mut g, &bound, xv, Mode::Eval).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn decoder_width_and_determinism() {
    let m = AcousticModel::new(tiny(6, 3), 9).unwrap();
    let x = rand_t(&[2, 4, 8], 10);
    let run = || {
        let mut g = Graph::new();
        let bound = m.params().bind(&mut g);
        let xv = g.constant(x.clone());
        let (y, weights) = m.decoder_forward(&mut g, &bound, xv, Mode::Eval).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 16]);
        for w in weights {
            for row in g.value(w).data().chunks(8) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        g.value(y).clone()
    };
    let (a, b) = (run(), run());
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn forward_contract() {
    let m = AcousticModel::new(tiny(6, 3), 11).unwrap();
    let x = rand_t(&[2, 6, 9], 12);
    let (lp, lens) = m.infer(&x, &[9, 9]).unwrap();
    assert_eq!(lp.shape(), &[2, 5, 3]);
    assert_eq!(lens, vec![5, 5]);
    for row in lp.data().chunks(3) {
        assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
    }
    match m.infer(&rand_t(&[1, 6, 2], 1), &[2]) {
        Err(Error::InputTooShort { frames: 2, min_frames: 3 }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert!(m.infer(&rand_t(&[1, 5, 9], 1), &[9]).is_err());
}

#[test]
fn batch_matches_single_utterances() {
    let m = AcousticModel::new(tiny(6, 3), 13).unwrap();
    let a = rand_t(&[1, 6, 11], 14);
    let b = rand_t(&[1, 6, 7], 15);
    let mut batch = Tensor::zeros(&[2, 6, 11]);
    for f in 0..6 {
        for t in 0..11 {
            batch.data_mut()[f * 11 + t] = a.get(&[0, f, t]);
            if t < 7 {
                batch.data_mut()[66 + f * 11 + t] = b.get(&[0, f, t]);
            }
        }
    }
    let (lp, lens) = m.infer(&batch, &[11, 7]).unwrap();
    let (la, _) = m.infer(&a, &[11]).unwrap();
    let (lb, lb_len) = m.infer(&b, &[7]).unwrap();
    assert_eq!(lens, vec![6, lb_len[0]]);
    for t in 0..6 {
        for k in 0..3 {
            assert!((lp.get(&[0, t, k]) - la.get(&[0, t, k])).abs() < 1e-6);
        }
    }
    for t in 0..lb_len[0] {
        for k in 0..3 {
            assert!((lp.get(&[1, t, k]) - lb.get(&[0, t, k])).abs() < 1e-6);
        }
    }
}

#[test]
fn end_to_end_gradients() {
    let mut m = AcousticModel::new(tiny(4, 3), 16).unwrap();
    let x = rand_t(&[2, 4, 8], 17);
    let targets = vec![vec![1, 2], vec![2]];
    let cfg = m.config().clone();
    let report = check_store_gradients(m.params_mut(), 1, |g, store, bound| {
        let model = AcousticModel::from_params(cfg.clone(), store)?;
        let xv = g.constant(x.clone());
        let out = model.forward(g, bound, xv, &[8, 6], Mode::Train { seed: 5 })?;
        let loss = ctc_batch_loss(g, out.log_probs, &targets, &out.output_lengths)?;
        Ok(loss.loss.expect("feasible"))
    })
    .unwrap();
    assert!(report.checked > 100);
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}

#[test]
fn parameter_names_are_stable() {
    let m = AcousticModel::new(tiny(6, 3), 0).unwrap();
    let names: Vec<&str> = m.params().ids().map(|id| m.params().name(id)).collect();
    assert_eq!(names[0], "stem.weight");
    assert!(names.contains(&"decoder.0.attn.w1"));
    assert!(names.contains(&"decoder.0.attn.v.bias"));
    assert_eq!(*names.last().unwrap(), "classifier.bias");
    let bn = m.params().id("stem.bn.running_mean").unwrap();
    assert!(!m.params().is_trainable(bn));
}
