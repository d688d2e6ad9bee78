//! Three-stage training of a small model on synthetic images, with the
//! freeze contract checked after each stage and the checkpoint round trip.
//!
//! cargo run --release --example train_stages

use diffjscc::pipeline::train::smoothed_ends;
use diffjscc::pipeline::{synth_dataset, train_stage, Checkpoint, StageResult, TrainConfig};

fn main() -> diffjscc::Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.image_size = 16;
    cfg.model.unet_widths = (8, 16);
    cfg.model.unet_blocks = 1;
    cfg.lr = 1e-3;
    (cfg.steps_stage1, cfg.steps_stage2, cfg.steps_stage3) = (60, 40, 20);
    let images = synth_dataset(cfg.seed, 16, cfg.image_size)?;

    let mut done: Vec<StageResult> = Vec::new();
    for stage in 1..=3 {
        let r = train_stage(&cfg, stage, done.last().map(|s| &s.checkpoint), &images, &mut |_| {})?;
        let (start, end) = smoothed_ends(&r.losses(), 10).expect("stage ran");
        println!("stage {stage}: loss {start:.4} -> {end:.4}, frozen parameters moved: {}", r.moved_frozen().len());
        done.push(r);
    }
    let last = &done[2].checkpoint;
    let bytes = last.to_bytes()?;
    println!("checkpoint: {} bytes, round trip exact: {}", bytes.len(), Checkpoint::from_bytes(&bytes)? == *last);
    Ok(())
}
