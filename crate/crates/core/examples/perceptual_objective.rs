//! The loss terms: MSE, the frozen random-feature perceptual proxy, PSNR, and
//! how eta and lambda weigh them.
//!
//! cargo run --example perceptual_objective

use diffjscc::numerics::{gauss_draw, RngStream, Tensor};
use diffjscc::objective::{mse, psnr, total_loss, PerceptualProxy};

fn main() -> diffjscc::Result<()> {
    let proxy = PerceptualProxy::<f64>::new();
    let flat = Tensor::full(vec![3, 16, 16], 0.5);
    let mut rng = RngStream::new(3);
    for sigma in [0.01, 0.05, 0.1, 0.2] {
        let noise: Tensor = gauss_draw(&mut rng, &[3, 16, 16]);
        let noisy = flat.zip_map(&noise, "perturb", |a, n| (a + sigma * n).clamp(0.0, 1.0))?;
        println!(
            "sigma {sigma:<4}: mse {:.5}  psnr {:5.2} dB  proxy {:.5}",
            mse(&flat, &noisy)?,
            psnr(&flat, &noisy, 1.0)?,
            proxy.distance(&flat, &noisy)?
        );
    }
    let noise: Tensor = gauss_draw(&mut rng, &[3, 16, 16]);
    let x_hat = flat.zip_map(&noise, "perturb", |a, n| a + 0.1 * n)?;
    let x_bar = flat.zip_map(&noise, "perturb", |a, n| a - 0.05 * n)?;
    for (eta, lambda) in [(0.0, 0.0), (0.1, 1e-4), (1.0, 1e-4)] {
        let r = total_loss(&proxy, &flat, &x_hat, &x_bar, 500.0, eta, lambda)?;
        println!("eta {eta:<3} lambda {lambda:<6}: total {:.5} (rate term {:.5})", r.total, lambda * r.rate_bits);
    }
    Ok(())
}
