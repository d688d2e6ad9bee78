//! Discretised Gaussian likelihoods and the bit cost of a latent.
//!
//! cargo run --example entropy_model

use diffjscc::entropy::{gaussian_bin_mass, quantize, rate_bits, LikelihoodGrid, QuantMode};
use diffjscc::numerics::{gauss_draw, RngStream, Tensor};

fn main() -> diffjscc::Result<()> {
    println!("P(z = 0 | N(0, 1)) = {:.7}", gaussian_bin_mass(0.0, 0.0, 1.0));
    for sigma in [0.1f64, 1.0, 10.0] {
        // Bins far outside the support sit at the likelihood floor, so sum over mu +- 30 sigma.
        let reach = (30.0 * sigma).ceil() as i64;
        let total: f64 = (-reach..=reach).map(|z| gaussian_bin_mass(z as f64, 0.0, sigma)).sum();
        println!("sigma {sigma:>4}: bin masses sum to {total:.9}");
    }

    // A latent of 16 channels on an 8x8 grid, coded under a shared N(0, s^2):
    // wider scales cost more bits per element.
    let mut rng = RngStream::new(7);
    let z: Tensor = gauss_draw(&mut rng, &[16, 8, 8]);
    let z = z.map(|v| 3.0 * v);
    let hard = quantize(&z, QuantMode::Round, &mut rng);
    for s in [0.5, 3.0, 20.0] {
        let masses = hard.map(|v| gaussian_bin_mass(v, 0.0, s));
        let bits = rate_bits(&[&LikelihoodGrid::new(masses)]);
        println!("model scale {s:>4}: {bits:8.1} bits ({:.2} per element)", bits / hard.numel() as f64);
    }
    Ok(())
}
