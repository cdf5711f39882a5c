//! A kernel trained at one resolution applied at another: responses match once
//! scaled by the ratio of grid spacings (raised to the number of dimensions).
//!
//! ```text
//! cargo run --release --example resolution_equivalence
//! ```

use ccnn::verify::{resolution_ratio_2d, resolution_error_1d};

fn main() -> ccnn::Result<()> {
    for omega0 in [5.0, 10.0, 30.0] {
        let err = resolution_error_1d(128, omega0, 0)?;
        println!("1D, 128 vs 256 points, omega0 {omega0:>4}: relative error {err:.4}");
    }
    for n in [17, 33] {
        let (omitted, applied) = resolution_ratio_2d(n, 30.0, 0)?;
        println!("2D, {n} vs {} points: ratio without factor {omitted:.3}, with factor {applied:.3}", 2 * n - 1);
    }
    Ok(())
}
