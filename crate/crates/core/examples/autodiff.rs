//! Reverse-mode gradients on the tape, checked against finite differences.
//!
//!     cargo run --example autodiff

use lowres_asr::tensor::gradcheck::check_gradients;
use lowres_asr::tensor::{Graph, Tensor};

fn main() -> lowres_asr::Result<()> {
    // f(x, w) = sum(log_softmax(tanh(x w)) * 0.5)
    let x = Tensor::new(vec![2, 3], vec![0.1, -0.4, 0.7, 1.2, 0.0, -0.3])?;
    let w = Tensor::new(vec![3, 2], vec![0.5, -1.0, 0.25, 0.8, -0.6, 0.3])?;

    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let wv = g.leaf(w.clone(), true);
    let h = g.matmul(xv, wv)?;
    let h = g.tanh(h);
    let lp = g.log_softmax(h);
    let s = g.sum(lp);
    let f = g.scale(s, 0.5);
    g.backward(f)?;
    println!("f = {:.6}", g.value(f).data()[0]);
    println!("df/dw = {:?}", g.grad(wv).unwrap().data());

    let report = check_gradients(&[x, w], |g, v| {
        let h = g.matmul(v[0], v[1]).unwrap();
        let h = g.tanh(h);
        let lp = g.log_softmax(h);
        let s = g.sum(lp);
        g.scale(s, 0.5)
    })?;
    println!("finite differences: {} entries, max relative error {:.2e}", report.checked, report.max_rel_err);
    Ok(())
}
