//! An SNR sweep over a small image set, written as the CSV metric table.
//!
//! cargo run --release --example snr_sweep

use diffjscc::pipeline::{evaluate, synth_dataset, train_stage, TrainConfig};

fn main() -> diffjscc::Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.image_size = 16;
    cfg.model.unet_widths = (8, 16);
    cfg.model.unet_blocks = 1;
    cfg.lr = 1e-3;
    (cfg.steps_stage1, cfg.steps_stage2) = (60, 60);
    let train = synth_dataset(cfg.seed, 16, cfg.image_size)?;
    let s1 = train_stage(&cfg, 1, None, &train, &mut |_| {})?;
    let s2 = train_stage(&cfg, 2, Some(&s1.checkpoint), &train, &mut |_| {})?;

    let eval: Vec<(String, _)> = synth_dataset(7, 4, cfg.image_size)?.into_iter().enumerate().map(|(i, t)| (format!("img{i}"), t)).collect();
    let snrs = [0.0, 5.0, 10.0, 15.0];
    let table = evaluate(&s2.checkpoint, &eval, &snrs, 0, cfg.n_test)?;
    print!("{}", table.to_csv());
    Ok(())
}
