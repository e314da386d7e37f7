//! Best-path decoding: collapse repeats, drop blanks.
//!
//!     cargo run --example greedy_decode

use lowres_asr::ctc::{best_path, collapse, greedy_decode};
use lowres_asr::tensor::Tensor;
use lowres_asr::text::CharSet;

fn main() -> lowres_asr::Result<()> {
    let cs = CharSet::from_symbols([" ", "ɔ", "ɖ", "é", "n"])?;
    // frame-wise winners: ɖ ɖ _ ɔ ɔ " " _ n n _ é é
    let winners = [3, 3, 0, 2, 2, 1, 0, 5, 5, 0, 4, 4];
    let mut lp = vec![(0.02f64).ln(); winners.len() * cs.len()];
    for (f, &w) in winners.iter().enumerate() {
        lp[f * cs.len() + w] = (1.0 - 0.02 * (cs.len() - 1) as f64).ln();
    }
    let log_probs = Tensor::new(vec![winners.len(), cs.len()], lp)?;

    let path = best_path(&log_probs);
    println!("best path : {path:?}");
    println!("collapsed : {:?}", collapse(&path));
    println!("text      : {:?}", greedy_decode(&log_probs, &cs)?);
    Ok(())
}
