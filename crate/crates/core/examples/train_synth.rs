//! Fit the small model to a synthetic corpus and transcribe it.
//!
//!     cargo run --release --example train_synth [epochs]

use std::path::Path;

use lowres_asr::audio::build_mel_filterbank;
use lowres_asr::config::RunConfig;
use lowres_asr::data::{prepare_all, synth};
use lowres_asr::model::AcousticModel;
use lowres_asr::training::{evaluate, train, Optimizer, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(400);
    let dir = tempfile::tempdir()?;
    let entries = synth::synth_corpus(dir.path(), 5, 1)?;
    let cs = synth::charset();

    let mut cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/synth.cfg"))?;
    cfg.finalize(&cs)?;
    let tc = TrainConfig { epochs, ..cfg.train.clone() };
    let fb = build_mel_filterbank(&cfg.frontend)?;
    let utts = prepare_all(&entries, &cs, &cfg.frontend, &fb)?;

    let mut model = AcousticModel::new(cfg.model.clone(), tc.seed)?;
    let mut opt = Optimizer::new(tc.optimizer_config(), model.params());
    let outcome = train(&mut model, &mut opt, &utts, &utts, &cs, &tc, |r, _, _| {
        if r.epoch % 25 == 0 {
            println!("epoch {:4}: train {:.3}  val {:.3}  WER {:5.1}%", r.epoch, r.train_loss, r.val_loss, r.val_wer);
        }
        Ok(())
    })?;
    println!("stopped: {:?}, best epoch {}", outcome.stop, outcome.best_epoch);

    let summary = evaluate(&model, &utts, &cs, 5)?;
    for u in &summary.utterances {
        println!("{:>10} | {}", u.reference, u.hypothesis);
    }
    println!("WER {:.1}%, CER {:.1}%, loss {:.4}", summary.wer, summary.cer, summary.loss);
    Ok(())
}
