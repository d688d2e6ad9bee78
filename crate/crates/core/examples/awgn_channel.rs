//! Framing projected latents into unit-power complex symbols, sending them
//! through AWGN at several SNRs, and the frame wire format.
//!
//! cargo run --example awgn_channel

use diffjscc::link::{awgn, checkerboard_order, decode_frame, encode_frame, frame_symbols, noise_variance, unframe_symbols, RateMap};
use diffjscc::numerics::{gauss_draw, RngStream, Tensor};

fn main() -> diffjscc::Result<()> {
    let (side, c) = (8, 16);
    let l = side * side;
    let mut rng = RngStream::new(1);
    let projected: Tensor = gauss_draw(&mut rng, &[l, c]);
    let projected = projected.map(|v| 5.0 * v);
    let rate_map = RateMap::new((0..l).map(|i| 1 + i % 8).collect(), 0, 8)?;
    let order = checkerboard_order(l, (side, side))?;
    let sent = frame_symbols(&projected, &rate_map, &order)?;
    println!("{} symbols, raw power {:.3}, sent power {:.6}", sent.k_total(), sent.power, sent.average_power());

    let clean = unframe_symbols(&sent, c)?;
    for snr in [0.0, 10.0, 20.0] {
        let received = awgn(&sent, snr, &mut rng);
        let back = unframe_symbols(&received, c)?;
        let err: f64 = back.data().iter().zip(clean.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / rate_map.k_total() as f64;
        println!("snr {snr:>4} dB: noise variance {:.4}, latent error per symbol {err:.4}", noise_variance(snr));
    }

    let bytes = encode_frame(&sent)?;
    let parsed = decode_frame(&bytes, 0, 8)?;
    println!("frame file: {} bytes, {} symbols parsed back", bytes.len(), parsed.k_total());
    Ok(())
}
