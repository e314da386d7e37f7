//! CTC loss and its gradient for a random posterior.
//!
//!     cargo run --example ctc_loss

use lowres_asr::ctc::{ctc_loss, min_alignable_length};
use lowres_asr::tensor::Tensor;
use rand::{Rng, SeedableRng};

fn main() -> lowres_asr::Result<()> {
    let (t, c) = (8, 4);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut lp = Vec::with_capacity(t * c);
    for _ in 0..t {
        let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
        lp.extend(logits.iter().map(|x| x - lse));
    }
    let log_probs = Tensor::new(vec![t, c], lp)?;

    for labels in [vec![1, 2, 3], vec![1, 1, 2], vec![2; 5]] {
        let out = ctc_loss(&log_probs, &labels)?;
        println!(
            "labels {labels:?} (needs {} frames): loss {:.4}",
            min_alignable_length(&labels),
            out.loss
        );
        if out.is_feasible() {
            // gradient with respect to the first frame's log-probabilities
            println!("  d loss / d log p[0] = {:?}", &out.grad[..c].iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>());
        }
    }
    Ok(())
}
