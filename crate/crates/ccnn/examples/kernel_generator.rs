//! One generator, several resolutions: the same parameters produce kernels
//! on any grid, and nested grids share values exactly.
//!
//! ```text
//! cargo run --release --example kernel_generator [-- OUT.csv]
//! ```

use ccnn::kernelgen::{kernel_csv, CoordinateGrid, GeneratorConfig, KernelGenerator};

fn main() -> ccnn::Result<()> {
    let cfg = GeneratorConfig::new(1, 32, 4, 30.0);
    let g = KernelGenerator::<f64>::new(cfg.clone(), 0)?;
    println!("generator parameters: {}", cfg.param_count());

    let coarse_grid = CoordinateGrid::regular(1, &[33], true)?;
    let fine_grid = CoordinateGrid::regular(1, &[65], true)?;
    let coarse = g.generate_masked(&coarse_grid)?;
    let fine = g.generate_masked(&fine_grid)?;
    let shared = (0..33).all(|i| (0..4).all(|c| coarse.data()[i * 4 + c] == fine.data()[2 * i * 4 + c]));
    println!("33-point kernel equals every other point of the 65-point kernel: {shared}");
    println!("mask mu {:?}, sigma {:?}", g.mask_mu().data(), g.mask_sigma().data());

    let csv = kernel_csv(&fine_grid, &fine)?;
    match std::env::args().nth(1) {
        Some(path) => std::fs::write(&path, csv)?,
        None => print!("{}", csv.lines().take(6).map(|l| format!("{l}\n")).collect::<String>()),
    }

    let image = KernelGenerator::<f64>::new(GeneratorConfig::new(2, 32, 2, 10.0), 1)?;
    let k = image.generate_masked(&CoordinateGrid::regular(2, &[9, 9], false)?)?;
    println!("2D kernel on a 9x9 grid: shape {:?}, max |k| {:.4}", k.shape(), k.max_abs());
    Ok(())
}
