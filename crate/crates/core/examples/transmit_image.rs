//! One image through the trained link at several SNRs: rate map, CBR, frame
//! size and PSNR. Trains a small model first, so run in release mode.
//!
//! cargo run --release --example transmit_image

use diffjscc::numerics::RngStream;
use diffjscc::objective::psnr;
use diffjscc::pipeline::{synth_dataset, train_stage, Link, TrainConfig};

fn main() -> diffjscc::Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.image_size = 16;
    cfg.model.unet_widths = (8, 16);
    cfg.model.unet_blocks = 1;
    cfg.lr = 1e-3;
    (cfg.steps_stage1, cfg.steps_stage2, cfg.steps_stage3) = (80, 80, 0);
    let images = synth_dataset(cfg.seed, 16, cfg.image_size)?;
    let s1 = train_stage(&cfg, 1, None, &images, &mut |_| {})?;
    let s2 = train_stage(&cfg, 2, Some(&s1.checkpoint), &images, &mut |_| {})?;

    let link = Link::<f64>::from_checkpoint(&s2.checkpoint)?;
    let image = &images[3];
    for snr in [0.0, 10.0, 20.0] {
        let t = link.transmit(image, snr, 4, &mut RngStream::new(1), &mut RngStream::new(2))?;
        println!(
            "snr {snr:>4} dB: k_total {:>3}  cbr {:.4}  frame {} bytes  rate {:.0} bits  psnr {:.2} dB",
            t.rate_map.k_total(),
            t.cbr,
            t.frame_bytes.len(),
            t.rate_bits,
            psnr(image, &t.reconstruction, 1.0)?
        );
    }
    Ok(())
}
