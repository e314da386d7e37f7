//! Build the acoustic model, count parameters and run a padded batch.
//!
//!     cargo run --example model_forward

use lowres_asr::model::{AcousticModel, ModelConfig};
use lowres_asr::tensor::Tensor;

fn main() -> lowres_asr::Result<()> {
    let cfg = ModelConfig {
        n_rcnn_blocks: 2,
        n_rnn_blocks: 2,
        cnn_channels: 8,
        rnn_hidden: 32,
        ..ModelConfig::new(32, 10)
    };
    let model = AcousticModel::new(cfg.clone(), 42)?;
    println!(
        "{} tensors, {} scalars; decoder width {}",
        model.params().len(),
        model.params().num_scalars(),
        cfg.decoder_output_dim()
    );

    let lengths = [60, 41];
    let t_max = lengths[0];
    let feats = Tensor::new(
        vec![2, cfg.n_mels, t_max],
        (0..2 * cfg.n_mels * t_max).map(|i| ((i % 97) as f64 / 48.0) - 1.0).collect(),
    )?;
    let (log_probs, out_lengths) = model.infer(&feats, &lengths)?;
    println!("features {:?}, lengths {lengths:?}", feats.shape());
    println!("log-probs {:?}, output lengths {out_lengths:?}", log_probs.shape());
    let row: f64 = log_probs.data()[..cfg.charset_size].iter().map(|v| v.exp()).sum();
    println!("first frame probabilities sum to {row:.12}");
    Ok(())
}
