//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unicode_segmentation::UnicodeSegmentation;

use lowres_asr::audio::{
    build_mel_filterbank, hertz_to_mel, mel_spectrogram, mel_to_hertz, power_spectrum, FrontendConfig, Waveform,
};
use lowres_asr::ctc::{ctc_batch_loss, ctc_loss};
use lowres_asr::data::{load_manifest, prepare_all, synth};
use lowres_asr::metrics::{cer, levenshtein, wer};
use lowres_asr::model::{attention_apply, attention_scores, pad_hidden_state, AcousticModel, AttentionHead, Mode, ModelConfig};
use lowres_asr::tensor::gradcheck::{check_gradients, check_store_gradients};
use lowres_asr::tensor::{bidirectional_rnn, Graph, GruCell, GruWeights, LstmCell, LstmWeights, Tensor, Var};
use lowres_asr::training::{adamw_update, evaluate, nesterov_update, AdamWConfig, Checkpoint, EarlyStopping, EpochRecord, Verdict};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_log_probs(t: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(t * c);
    for _ in 0..t {
        let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        data.extend(logits.iter().map(|l| l - lse));
    }
    Tensor::new(vec![t, c], data).unwrap()
}

/// Probability of `labels` by summing over every length-T path.
fn brute_force_prob(lp: &Tensor, labels: &[usize]) -> f64 {
    let (t, c) = (lp.shape()[0], lp.shape()[1]);
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    for code in 0..c.pow(t as u32) {
        let mut k = code;
        for p in path.iter_mut() {
            *p = k % c;
            k /= c;
        }
        let mut collapsed = Vec::new();
        let mut prev = usize::MAX;
        for &s in &path {
            if s != prev && s != 0 {
                collapsed.push(s);
            }
            prev = s;
        }
        if collapsed == labels {
            total += path.iter().enumerate().map(|(i, &s)| lp.get(&[i, s])).sum::<f64>().exp();
        }
    }
    total
}

fn ctc_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let n = 1500;
    for _ in 0..n {
        let t = rng.random_range(1..=6);
        let c = rng.random_range(2..=4);
        let l = rng.random_range(0..=3);
        let labels: Vec<usize> = (0..l).map(|_| rng.random_range(1..c)).collect();
        let lp = random_log_probs(t, c, &mut rng);
        let dp = ctc_loss(&lp, &labels).map_err(|e| e.to_string())?.loss;
        let bf = -brute_force_prob(&lp, &labels).ln();
        if dp.is_infinite() || bf.is_infinite() {
            ensure(dp == bf, || format!("T={t} C={c} {labels:?}: dp {dp} vs brute force {bf}"))?;
            continue;
        }
        worst = worst.max((dp - bf).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-9, || format!("max |dp - brute| = {worst:e}"))?;
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{n} instances, max |diff| {worst:.1e}, {secs:.2}s"))
}

fn label_strings(len: usize, symbols: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| symbols.iter().map(move |&s| [p.clone(), vec![s]].concat()))
            .collect();
    }
    out
}

fn ctc_completeness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for t in 1..=4 {
        for _ in 0..5 {
            let lp = random_log_probs(t, 3, &mut rng);
            let mut total = 0.0;
            for len in 0..=t {
                for labels in label_strings(len, &[1, 2]) {
                    total += (-ctc_loss(&lp, &labels).map_err(|e| e.to_string())?.loss).exp();
                }
            }
            worst = worst.max((total - 1.0).abs());
        }
    }
    ensure(worst < 1e-9, || format!("max |sum - 1| = {worst:e}"))?;
    Ok(format!("T = 1..4, charset 3: max |sum - 1| {worst:.1e}"))
}

/// Reduces `y` to a scalar through fixed random weights.
fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).to_vec();
    let w = g.constant(rand_tensor(&shape, &mut ChaCha8Rng::seed_from_u64(seed), 1.0));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

type Primitive = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Graph, &[Var]) -> Var>);

fn primitives() -> Vec<Primitive> {
    vec![
        ("add", vec![vec![2, 3], vec![2, 3]], Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
        ("sub", vec![vec![2, 3], vec![2, 3]], Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
        ("mul", vec![vec![2, 3], vec![2, 3]], Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
        ("scale", vec![vec![4]], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("add_along", vec![vec![2, 3, 4], vec![3]], Box::new(|g, v| g.add_along(v[0], v[1], 1).unwrap())),
        ("scale_along", vec![vec![2, 3, 4], vec![3]], Box::new(|g, v| g.scale_along(v[0], v[1], 1).unwrap())),
        ("add_bias", vec![vec![2, 3], vec![3]], Box::new(|g, v| g.add_bias(v[0], v[1]).unwrap())),
        ("matmul", vec![vec![2, 3, 4], vec![4, 5]], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        ("linear", vec![vec![3, 4], vec![4, 2], vec![2]], Box::new(|g, v| g.linear(v[0], v[1], Some(v[2])).unwrap())),
        (
            "conv2d",
            vec![vec![2, 2, 5, 6], vec![3, 2, 3, 3], vec![3]],
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), (2, 2), (1, 1)).unwrap()),
        ),
        ("standardize", vec![vec![2, 5, 3]], Box::new(|g, v| g.standardize(v[0], 1, 1e-5).unwrap())),
        (
            "layer_norm",
            vec![vec![2, 3, 4], vec![3], vec![3]],
            Box::new(|g, v| g.layer_norm(v[0], 1, v[1], v[2], 1e-5).unwrap()),
        ),
        ("gelu", vec![vec![3, 4]], Box::new(|g, v| g.gelu(v[0]))),
        ("tanh", vec![vec![3, 4]], Box::new(|g, v| g.tanh(v[0]))),
        ("sigmoid", vec![vec![3, 4]], Box::new(|g, v| g.sigmoid(v[0]))),
        ("softmax", vec![vec![3, 4]], Box::new(|g, v| g.softmax(v[0]))),
        ("log_softmax", vec![vec![3, 4]], Box::new(|g, v| g.log_softmax(v[0]))),
        ("dropout", vec![vec![4, 5]], Box::new(|g, v| g.dropout(v[0], 0.3, true, 11).unwrap())),
        ("reshape", vec![vec![2, 6]], Box::new(|g, v| g.reshape(v[0], &[3, 4]).unwrap())),
        ("permute", vec![vec![2, 3, 4]], Box::new(|g, v| g.permute(v[0], &[2, 0, 1]).unwrap())),
        ("concat", vec![vec![2, 3], vec![2, 2]], Box::new(|g, v| g.concat(&[v[0], v[1]], 1).unwrap())),
        ("slice", vec![vec![3, 5]], Box::new(|g, v| g.slice(v[0], 1, 1, 3).unwrap())),
        ("pad_to", vec![vec![2, 2, 3]], Box::new(|g, v| g.pad_to(v[0], 1, 4).unwrap())),
        (
            "gather",
            vec![vec![2, 3]],
            Box::new(|g, v| g.gather(v[0], &[2, 2], vec![5, 0, 0, 3]).unwrap()),
        ),
        (
            "lstm",
            vec![vec![2, 3, 2], vec![2, 8], vec![2, 8], vec![8]],
            Box::new(|g, v| {
                let cell = |g: &Graph| {
                    LstmCell::new(
                        g,
                        LstmWeights {
                            w_ih: v[1],
                            w_hh: v[2],
                            bias: v[3],
                        },
                    )
                    .unwrap()
                };
                let (f, b) = (cell(g), cell(g));
                bidirectional_rnn(g, v[0], &f, &b).unwrap().0
            }),
        ),
        (
            "gru",
            vec![vec![2, 3, 2], vec![2, 6], vec![6], vec![2, 6], vec![6]],
            Box::new(|g, v| {
                let cell = |g: &Graph| {
                    GruCell::new(
                        g,
                        GruWeights {
                            w_ih: v[1],
                            b_ih: v[2],
                            w_hh: v[3],
                            b_hh: v[4],
                        },
                    )
                    .unwrap()
                };
                let (f, b) = (cell(g), cell(g));
                let (out, fin) = bidirectional_rnn(g, v[0], &f, &b).unwrap();
                let fin = g.reshape(fin, &[2, 4]).unwrap();
                let out = g.reshape(out, &[2, 12]).unwrap();
                g.concat(&[out, fin], 1).unwrap()
            }),
        ),
        (
            "attention",
            vec![vec![2, 3, 4], vec![2, 2, 2], vec![4, 2], vec![2, 2], vec![2, 4], vec![4]],
            Box::new(|g, v| {
                let head = AttentionHead {
                    w1: v[2],
                    w2: v[3],
                    v: v[4],
                    v_bias: v[5],
                };
                attention_apply(g, v[0], v[1], &head).unwrap().output
            }),
        ),
        (
            "ctc",
            vec![vec![2, 5, 3]],
            Box::new(|g, v| {
                let lp = g.log_softmax(v[0]);
                ctc_batch_loss(g, lp, &[vec![1, 2], vec![2, 2]], &[5, 4]).unwrap().loss.unwrap()
            }),
        ),
    ]
}

fn gradient_suite() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_prim = (0.0f64, "");
    for (i, (name, shapes, f)) in primitives().into_iter().enumerate() {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(s, &mut rng, 1.0)).collect();
        let report = check_gradients(&inputs, |g, v| {
            let y = f(g, v);
            if g.shape(y).is_empty() || g.shape(y) == [1] {
                y
            } else {
                project(g, y, 100 + i as u64)
            }
        })
        .map_err(|e| format!("{name}: {e}"))?;
        ensure(report.checked > 0, || format!("{name}: nothing checked"))?;
        ensure(report.max_rel_err < 1e-4, || format!("{name}: rel err {:e} ({:?})", report.max_rel_err, report.worst))?;
        if report.max_rel_err > worst_prim.0 {
            worst_prim = (report.max_rel_err, name);
        }
    }

    let cfg = ModelConfig {
        n_rcnn_blocks: 1,
        n_rnn_blocks: 1,
        cnn_channels: 2,
        rnn_hidden: 4,
        ..ModelConfig::new(4, 3)
    };
    let mut model = AcousticModel::new(cfg.clone(), 5).map_err(|e| e.to_string())?;
    let x = rand_tensor(&[2, 4, 8], &mut rng, 1.0);
    let targets = vec![vec![1, 2], vec![2]];
    let report = check_store_gradients(model.params_mut(), 1, |g, store, bound| {
        let m = AcousticModel::from_params(cfg.clone(), store)?;
        let xv = g.constant(x.clone());
        let out = m.forward(g, bound, xv, &[8, 7], Mode::Train { seed: 9 })?;
        Ok(ctc_batch_loss(g, out.log_probs, &targets, &out.output_lengths)?.loss.expect("feasible"))
    })
    .map_err(|e| e.to_string())?;
    ensure(report.max_rel_err < 1e-3, || format!("end-to-end rel err {:e} ({:?})", report.max_rel_err, report.worst))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} primitives (worst {} {:.1e}), end-to-end {} params rel err {:.1e}, {secs:.1}s",
        primitives().len(),
        worst_prim.1,
        worst_prim.0,
        report.checked,
        report.max_rel_err
    ))
}

fn mel_formula() -> Result<String, String> {
    let m = hertz_to_mel(700.0).map_err(|e| e.to_string())?;
    let expect = 2595.0 * 2f64.log10();
    let rel = ((m - expect) / expect).abs();
    ensure(rel < 1e-9, || format!("hertz_to_mel(700) = {m}, expected {expect}"))?;
    let mut worst = 0.0f64;
    for i in 0..=20_000 {
        let f = 1.0 + 23_999.0 * i as f64 / 20_000.0;
        let back = mel_to_hertz(hertz_to_mel(f).unwrap()).unwrap();
        worst = worst.max(((back - f) / f).abs());
    }
    ensure(worst < 1e-9, || format!("round trip rel err {worst:e}"))?;
    Ok(format!("mel(700) rel err {rel:.1e}; round trip max rel err {worst:.1e}"))
}

fn dsp_sanity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for cfg in [FrontendConfig::fon(), FrontendConfig::igbo()] {
        let n = cfg.n_fft;
        let window = cfg.window.coefficients(n);
        for _ in 0..50 {
            let frame: Vec<f64> = (0..n).map(|i| rng.random_range(-1.0..1.0) * window[i]).collect();
            let p = power_spectrum(&frame);
            let time: f64 = frame.iter().map(|x| x * x).sum();
            let interior: f64 = p[1..n / 2].iter().sum();
            let freq = (p[0] + 2.0 * interior + p[n / 2]) / n as f64;
            worst = worst.max(((time - freq) / time).abs());
        }
    }
    ensure(worst < 1e-6, || format!("Parseval rel err {worst:e}"))?;

    let mut placed = 0;
    for mut cfg in [FrontendConfig::fon(), FrontendConfig::igbo()] {
        cfg.log_compress = false;
        let fb = build_mel_filterbank(&cfg).map_err(|e| e.to_string())?;
        let sr = cfg.sample_rate as f64;
        for _ in 0..20 {
            let m = rng.random_range(0..cfg.n_mels);
            let hz = fb.center_bins()[m] as f64 * sr / cfg.n_fft as f64;
            let samples = (0..cfg.sample_rate as usize)
                .map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / sr).sin())
                .collect();
            let wave = Waveform::new(samples, cfg.sample_rate).unwrap();
            let spec = mel_spectrogram(&wave, &cfg, &fb).map_err(|e| e.to_string())?;
            let totals = spec.band_totals();
            let best = (0..totals.len()).max_by(|&a, &b| totals[a].total_cmp(&totals[b])).unwrap();
            ensure(best == m, || format!("{} Hz / {} mels: sine at {hz} Hz peaked in band {best}, expected {m}", cfg.sample_rate, cfg.n_mels))?;
            placed += 1;
        }
    }
    Ok(format!("Parseval max rel err {worst:.1e}; {placed}/40 sines in their band"))
}

fn architecture() -> Result<String, String> {
    let cfg = ModelConfig {
        n_rcnn_blocks: 2,
        n_rnn_blocks: 2,
        cnn_channels: 3,
        rnn_hidden: 6,
        ..ModelConfig::new(8, 5)
    };
    let mut model = AcousticModel::new(cfg, 1).map_err(|e| e.to_string())?;
    for id in model.rcnn_conv_params(1).unwrap() {
        let n = model.params().get(id).numel();
        model.params_mut().set(id, &vec![0.0; n]).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&[2, 3, 4, 7], &mut rng, 2.0);
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let xv = g.constant(x.clone());
    for mode in [Mode::Eval, Mode::Train { seed: 3 }] {
        let y = model.rcnn_block_forward(&mut g, &bound, 1, xv, mode).map_err(|e| e.to_string())?;
        ensure(g.value(y) == &x, || "zeroed residual block is not the identity".into())?;
    }

    let feats = rand_tensor(&[2, 8, 13], &mut rng, 1.0);
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);
    let fv = g.constant(feats);
    let out = model.forward(&mut g, &bound, fv, &[13, 10], Mode::Eval).map_err(|e| e.to_string())?;
    let mut worst_sum = 0.0f64;
    for w in &out.attention_weights {
        let d = *g.shape(*w).last().unwrap();
        for row in g.value(*w).data().chunks(d) {
            worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst_sum < 1e-6, || format!("attention weights sum off by {worst_sum:e}"))?;

    let mut g = Graph::new();
    let d = 6;
    let head = AttentionHead {
        w1: g.leaf(rand_tensor(&[d, d / 2], &mut rng, 1.0), true),
        w2: g.leaf(rand_tensor(&[d / 2, d / 2], &mut rng, 1.0), true),
        v: g.leaf(rand_tensor(&[d / 2, d], &mut rng, 1.0), true),
        v_bias: g.leaf(rand_tensor(&[d], &mut rng, 1.0), true),
    };
    let x_full = rand_tensor(&[2, 5, d], &mut rng, 1.0);
    let mut head_rows = Vec::new();
    for b in 0..2 {
        head_rows.extend_from_slice(&x_full.data()[b * 5 * d..b * 5 * d + 2 * d]);
    }
    let x_head = Tensor::new(vec![2, 2, d], head_rows).unwrap();
    let h = g.constant(rand_tensor(&[2, 2, d / 2], &mut rng, 1.0));
    let (xf, xh) = (g.constant(x_full), g.constant(x_head));
    let padded = pad_hidden_state(&mut g, h, 5).unwrap();
    let s_pad = attention_scores(&mut g, xf, padded, &head).unwrap();
    let s_raw = attention_scores(&mut g, xh, h, &head).unwrap();
    let mut worst_pad = 0.0f64;
    for b in 0..2 {
        for k in 0..2 {
            for j in 0..d {
                worst_pad = worst_pad.max((g.value(s_pad).get(&[b, k, j]) - g.value(s_raw).get(&[b, k, j])).abs());
            }
        }
    }
    ensure(worst_pad <= 1e-12, || format!("padding changed scores by {worst_pad:e}"))?;
    let att = attention_apply(&mut g, xf, h, &head).unwrap();
    ensure(g.shape(att.output) == [2, 5, 2 * d], || format!("attention output {:?}", g.shape(att.output)))?;
    Ok(format!(
        "residual identity exact; weight sums within {worst_sum:.1e}; padding neutral within {worst_pad:.1e}; width {d} -> {}",
        2 * d
    ))
}

fn table_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

const GRAPHEMES: [&str; 8] = ["a", "b", "e", "ɔ", "ɔ́", "ɛ̃", "ŋ", "ọ"];

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let words = rng.random_range(1..=6);
    (0..words)
        .map(|_| {
            let len = rng.random_range(1..=4);
            (0..len).map(|_| GRAPHEMES[rng.random_range(0..GRAPHEMES.len())]).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn metrics_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..100 {
        let r = random_sentence(&mut rng);
        let h = if i % 10 == 0 { r.clone() } else { random_sentence(&mut rng) };
        let (rw, hw): (Vec<&str>, Vec<&str>) = (r.split(' ').collect(), h.split(' ').collect());
        let (rg, hg): (Vec<&str>, Vec<&str>) = (r.graphemes(true).collect(), h.graphemes(true).collect());
        let w = wer(&r, &h);
        let c = cer(&r, &h);
        ensure(w.distance == table_distance(&rw, &hw) && w.reference_length == rw.len(), || format!("WER mismatch on {r:?} / {h:?}"))?;
        ensure(c.distance == table_distance(&rg, &hg) && c.reference_length == rg.len(), || format!("CER mismatch on {r:?} / {h:?}"))?;
        let expect = 100.0 * table_distance(&rw, &hw) as f64 / rw.len() as f64;
        ensure(w.rate().unwrap() == expect, || format!("WER rate {} vs {expect}", w.rate().unwrap()))?;
    }
    for _ in 0..1000 {
        let s: Vec<Vec<char>> = (0..3)
            .map(|_| {
                let n = rng.random_range(0..8);
                (0..n).map(|_| ['x', 'y', 'z'][rng.random_range(0..3)]).collect()
            })
            .collect();
        let (a, b, c) = (&s[0], &s[1], &s[2]);
        let ab = levenshtein(a, b);
        ensure(ab == levenshtein(b, a), || "asymmetric".into())?;
        ensure((ab == 0) == (a == b), || "identity of indiscernibles".into())?;
        ensure(levenshtein(a, c) <= ab + levenshtein(b, c), || "triangle inequality".into())?;
        ensure(ab == table_distance(a, b), || "disagrees with table".into())?;
    }
    Ok("100 pairs match the table oracle; axioms hold on 1000 triples".into())
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lowres-asr")
}

fn synth_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join("synth.cfg")
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_history(run: &Path) -> Result<Vec<EpochRecord>, String> {
    let text = fs::read_to_string(run.join("history.jsonl")).map_err(|e| e.to_string())?;
    text.lines().map(|l| serde_json::from_str(l).map_err(|e| e.to_string())).collect()
}

fn overfit() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");
    let (corpus_s, run_s) = (corpus.to_str().unwrap(), run.to_str().unwrap());
    let manifest = corpus.join(synth::MANIFEST_NAME);
    let manifest_s = manifest.to_str().unwrap();
    run_cli(&["synth-corpus", "--out-dir", corpus_s, "--n", "5", "--seed", "1"])?;

    let start = Instant::now();
    let config = synth_config();
    run_cli(&[
        "--config",
        config.to_str().unwrap(),
        "train",
        "--manifest",
        manifest_s,
        "--val-manifest",
        manifest_s,
        "--out-dir",
        run_s,
    ])?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(600), || format!("training took {elapsed:?}"))?;

    let ckpt = Checkpoint::load(&run).map_err(|e| e.to_string())?;
    ensure(ckpt.charset.len() <= 8, || format!("charset has {} symbols", ckpt.charset.len()))?;
    let m = &ckpt.meta.model;
    ensure((m.n_rcnn_blocks, m.n_rnn_blocks, m.rnn_hidden) == (2, 1, 32), || format!("model {m:?}"))?;
    ensure(ckpt.meta.step <= 2000, || format!("{} optimizer steps", ckpt.meta.step))?;
    let history = read_history(&run)?;
    ensure(history.last().is_some_and(|r| r.steps <= 2000), || "history exceeds 2000 steps".into())?;

    // score the saved weights independently of the training loop's bookkeeping
    let model = ckpt.model().map_err(|e| e.to_string())?;
    let entries = load_manifest(&manifest).map_err(|e| e.to_string())?;
    let fb = build_mel_filterbank(&ckpt.meta.frontend).unwrap();
    let utts = prepare_all(&entries, &ckpt.charset, &ckpt.meta.frontend, &fb).map_err(|e| e.to_string())?;
    let summary = evaluate(&model, &utts, &ckpt.charset, 5).map_err(|e| e.to_string())?;
    ensure(summary.wer == 0.0, || format!("train WER {}%", summary.wer))?;
    ensure(summary.loss < 0.1, || format!("train CTC loss {}", summary.loss))?;

    let wavs: Vec<String> = entries.iter().map(|e| e.audio_path.display().to_string()).collect();
    let mut args = vec!["transcribe", "--checkpoint", run_s];
    args.extend(wavs.iter().map(String::as_str));
    let out = run_cli(&args)?;
    let got: HashMap<&str, &str> = out.lines().filter_map(|l| l.split_once('\t')).collect();
    for e in &entries {
        let path = e.audio_path.display().to_string();
        ensure(got.get(path.as_str()) == Some(&e.text.as_str()), || {
            format!("{path}: transcribed {:?}, expected {:?}", got.get(path.as_str()), e.text)
        })?;
    }
    Ok(format!(
        "WER 0%, loss {:.4} after {} steps in {:.1}s; transcribe reproduces all 5 transcripts",
        summary.loss,
        ckpt.meta.step,
        elapsed.as_secs_f64()
    ))
}

fn dir_bytes(root: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).map_err(|e| e.to_string())?;
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    run_cli(&["synth-corpus", "--out-dir", corpus.to_str().unwrap(), "--n", "5", "--seed", "1"])?;
    let manifest = corpus.join(synth::MANIFEST_NAME);
    let config = synth_config();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let run = dir.path().join(name);
        run_cli(&[
            "--config",
            config.to_str().unwrap(),
            "--deterministic",
            "--seed",
            "7",
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--val-manifest",
            manifest.to_str().unwrap(),
            "--out-dir",
            run.to_str().unwrap(),
            "--epochs",
            "3",
        ])?;
        let mut files = dir_bytes(&run)?;
        // the recorded config names its own run directory; everything else must match
        for (p, bytes) in files.iter_mut() {
            if p == Path::new("config.toml") {
                let text = String::from_utf8_lossy(bytes);
                let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("output_dir")).collect();
                ensure(kept.len() + 1 == text.lines().count(), || "config.toml has no output_dir".into())?;
                *bytes = kept.join("\n").into_bytes();
            }
        }
        runs.push(files);
    }
    let history = runs[0].iter().find(|(p, _)| p == Path::new("history.jsonl")).ok_or("no history")?;
    let lines = String::from_utf8_lossy(&history.1).lines().count();
    ensure(lines == 3, || format!("history has {lines} lines"))?;
    ensure(runs[0].iter().any(|(p, _)| p.ends_with("params.okwp")), || "no checkpoint written".into())?;
    let names = |r: &Vec<(PathBuf, Vec<u8>)>| r.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    ensure(names(&runs[0]) == names(&runs[1]), || "runs wrote different files".into())?;
    for ((p, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
        ensure(a == b, || format!("{} differs between runs", p.display()))?;
    }
    Ok(format!("{} files byte-identical across two runs", runs[0].len()))
}

fn optimizer_checks() -> Result<String, String> {
    let close = |a: f64, b: f64, what: &str| ensure((a - b).abs() < 1e-12, || format!("{what}: {a} vs {b}"));
    let no_decay = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let (mut t, mut m, mut v) = ([1.0], [0.0], [0.0]);
    adamw_update(&mut t, &[1.0], &mut m, &mut v, 1, 0.1, &no_decay).unwrap();
    close(t[0], 1.0 - 0.1 * (1.0 / (1.0 + 1e-8)), "adamw first step")?;

    let (mut t, mut m, mut v) = ([1.0], [0.0], [0.0]);
    adamw_update(&mut t, &[0.0], &mut m, &mut v, 1, 0.1, &no_decay).unwrap();
    close(t[0], 1.0, "adamw zero gradient")?;

    let decay = AdamWConfig {
        weight_decay: 0.1,
        ..AdamWConfig::default()
    };
    let (mut t, mut m, mut v) = ([3.0], [0.0], [0.0]);
    adamw_update(&mut t, &[0.0], &mut m, &mut v, 1, 0.2, &decay).unwrap();
    adamw_update(&mut t, &[0.0], &mut m, &mut v, 2, 0.2, &decay).unwrap();
    close(t[0], 3.0 * 0.98 * 0.98, "adamw decay, two steps")?;

    let (mut t, mut vel) = ([2.0], [0.0]);
    nesterov_update(&mut t, &[0.5], &mut vel, 0.1, 0.0).unwrap();
    close(t[0], 1.95, "nesterov without momentum")?;

    let (mut t, mut vel) = ([1.0], [0.0]);
    nesterov_update(&mut t, &[1.0], &mut vel, 0.1, 0.9).unwrap();
    close(vel[0], -0.1, "nesterov v1")?;
    close(t[0], 0.9, "nesterov theta1")?;
    nesterov_update(&mut t, &[1.0], &mut vel, 0.1, 0.9).unwrap();
    close(vel[0], -0.19, "nesterov v2")?;
    close(t[0], 1.0 - 0.29, "nesterov theta2")?;

    let stub = [0.9, 0.8, 0.8, 0.85, 0.8];
    let mut es = EarlyStopping::new(3);
    let verdicts: Vec<Verdict> = stub.iter().map(|&m| es.observe(m)).collect();
    let expect = vec![Verdict::Improved, Verdict::Improved, Verdict::Stale(1), Verdict::Stale(2), Verdict::Stop];
    ensure(verdicts == expect, || format!("early stopping verdicts {verdicts:?}"))?;
    Ok("AdamW and Nesterov examples within 1e-12; stop after exactly 3 stagnant epochs".into())
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("CTC matches brute-force enumeration", ctc_oracle),
        ("CTC probabilities sum to one", ctc_completeness),
        ("finite-difference gradient suite", gradient_suite),
        ("mel scale formula", mel_formula),
        ("DSP sanity (Parseval, sine placement)", dsp_sanity),
        ("architectural invariants", architecture),
        ("WER/CER against table oracle", metrics_oracle),
        ("overfit synthetic corpus", overfit),
        ("deterministic training", determinism),
        ("optimizer and early stopping", optimizer_checks),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {e} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
