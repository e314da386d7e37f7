//! Word and character error rates on tonal text.
//!
//!     cargo run --example error_rates

use lowres_asr::metrics::{cer, corpus_rate, wer};

fn main() -> lowres_asr::Result<()> {
    let pairs = [
        ("a ɖò wè", "a ɖo wè"),
        ("mɛ̌ ɖé ɖò xwé mɛ̀", "mɛ̌ ɖé ɖò xwé mɛ̀"),
        ("Ụ́mụ̀ nwaanyị", "ụ́mụ̀ nwanyị"),
    ];
    let mut words = Vec::new();
    let mut chars = Vec::new();
    for (r, h) in pairs {
        let (w, c) = (wer(r, h), cer(r, h));
        println!("{r:>22} | {h:<22} WER {:6.2}%  CER {:6.2}%", w.rate()?, c.rate()?);
        words.push(w);
        chars.push(c);
    }
    println!("corpus WER {:.2}%, CER {:.2}%", corpus_rate(&words)?, corpus_rate(&chars)?);
    Ok(())
}
