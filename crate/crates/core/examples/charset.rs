//! Grapheme encoding against a shipped charset.
//!
//!     cargo run --example charset

use std::path::Path;

use lowres_asr::text::{graphemes, normalize_text, CharSet};

fn main() -> lowres_asr::Result<()> {
    let cs = CharSet::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("charsets/fon.txt"))?;
    println!("{} symbols, hash {}", cs.len(), &cs.hash()[..16]);

    // decomposed input; normalization recomposes it
    let raw = "Ɖe\u{301} WE\u{300}";
    let text = normalize_text(raw);
    println!("{raw:?} -> {text:?} -> {:?}", graphemes(&text));
    let ids = cs.encode(&text)?;
    println!("ids {:?}", ids.ids());
    println!("decoded {:?}", cs.decode(ids.ids())?);
    match cs.encode("ø") {
        Ok(_) => println!("unexpected: ø encoded"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
