//! The noise schedule, forward noising, and the few-step x0-prediction
//! sampler driven by an oracle denoiser and by a deliberately biased one.
//!
//! cargo run --example diffusion_sampler

use diffjscc::diffusion::{sample, to_diffusion_space, NoiseSchedule};
use diffjscc::numerics::{unif_draw, RngStream, Tensor};
use diffjscc::objective::psnr;

fn main() -> diffjscc::Result<()> {
    let sched = NoiseSchedule::default_schedule();
    let ab = sched.alpha_bars();
    println!("{} steps, alpha_bar_1 {:.4}, alpha_bar_N {:.2e}", sched.steps(), ab[0], ab[ab.len() - 1]);
    for count in [1, 2, 4, 8] {
        println!("{count} sampling steps visit {:?}", sched.strided_steps(count)?);
    }

    let mut rng = RngStream::new(5);
    let image: Tensor = unif_draw(&mut rng, &[3, 16, 16], 0.0, 1.0);
    let target = to_diffusion_space(&image);
    let cond = Tensor::zeros(vec![1, 4, 4]);
    let oracle = |_: &Tensor, _: &Tensor, _: f64| Ok(target.clone());
    // Blends the truth with the current input, more of the input when noisier.
    let biased = |x: &Tensor, _: &Tensor, t: f64| target.zip_map(x, "blend", |a, b| (1.0 - 0.3 * t) * a + 0.3 * t * b);
    for steps in [1, 4, 64] {
        let a = sample(&oracle, &cond, &[3, 16, 16], steps, &mut RngStream::new(9), &sched)?;
        let b = sample(&biased, &cond, &[3, 16, 16], steps, &mut RngStream::new(9), &sched)?;
        println!("{steps:>2} steps: oracle {:.1} dB, biased {:.1} dB", psnr(&image, &a, 1.0)?, psnr(&image, &b, 1.0)?);
    }
    Ok(())
}
