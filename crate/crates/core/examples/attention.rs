//! One additive attention head over a short sequence.
//!
//!     cargo run --example attention

use lowres_asr::model::{attention_apply, AttentionHead};
use lowres_asr::tensor::{Graph, Tensor};

fn ramp(shape: &[usize], step: f64) -> Tensor {
    let n = shape.iter().product::<usize>();
    Tensor::new(shape.to_vec(), (0..n).map(|i| (i as f64 * step).sin()).collect()).unwrap()
}

fn main() -> lowres_asr::Result<()> {
    let (b, t, d) = (1, 5, 4);
    let mut g = Graph::new();
    let head = AttentionHead {
        w1: g.leaf(ramp(&[d, d / 2], 0.7), true),
        w2: g.leaf(ramp(&[d / 2, d / 2], 1.3), true),
        v: g.leaf(ramp(&[d / 2, d], 0.4), true),
        v_bias: g.leaf(Tensor::zeros(&[d]), true),
    };
    let x = g.constant(ramp(&[b, t, d], 0.3));
    // previous hidden states (forward and backward) of a bidirectional cell
    let h = g.constant(ramp(&[b, 2, d / 2], 0.9));
    let out = attention_apply(&mut g, x, h, &head)?;

    println!("input {:?} -> output {:?}", g.shape(x), g.shape(out.output));
    let w = g.value(out.weights);
    let cols = *w.shape().last().unwrap();
    for (k, row) in w.data().chunks(cols).enumerate() {
        let sum: f64 = row.iter().sum();
        println!("weights[{k}] = {:?} (sum {sum:.6})", row.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>());
    }
    Ok(())
}
