//! Per-vector symbol budgets from likelihoods, the checkerboard transmission
//! order, and the resulting channel bandwidth ratio.
//!
//! cargo run --example rate_allocation

use diffjscc::entropy::LikelihoodGrid;
use diffjscc::link::{allocate_from_bits, allocate_rates, cbr, checkerboard_order, vector_bits};
use diffjscc::numerics::Tensor;

fn main() -> diffjscc::Result<()> {
    let beta = 0.5;
    for bits in [0.0, 3.0, 8.0, 13.0, 40.0] {
        let k = allocate_from_bits(&[bits], beta, 0, 8)?.k[0];
        println!("{bits:>5.1} bits, beta {beta} -> k = {k}");
    }

    // A 4x4 grid whose left half is cheap and right half expensive.
    let (c, h, w) = (4, 4, 4);
    let masses: Vec<f64> = (0..c * h * w).map(|i| if i % w < 2 { 0.9 } else { 0.05 }).collect();
    let grid = LikelihoodGrid::new(Tensor::new(vec![c, h, w], masses)?);
    let bits = vector_bits(&grid)?;
    let map = allocate_rates(&grid, beta, 0, 8)?;
    for r in 0..h {
        let row: Vec<String> = (0..w).map(|col| format!("{:5.1}b k={}", bits[r * w + col], map.k[r * w + col])).collect();
        println!("{}", row.join("  "));
    }
    println!("transmission order: {:?}", checkerboard_order(h * w, (h, w))?);
    println!("k_total {} over {} source values: cbr {:.5}", map.k_total(), 3 * 16 * 16, cbr(&map, 3 * 16 * 16)?);
    Ok(())
}
