//! Prints the soft-copy kernel that maps 4 source states onto 6 target slots.

use narmt::nar::{soft_copy, soft_copy_weights};
use narmt::tensor::Tensor;

fn main() -> narmt::Result<()> {
    for sigma_sq in [0.1, 1.0] {
        let w = soft_copy_weights(4, 6, sigma_sq, true)?;
        println!("sigma^2 = {sigma_sq}");
        for t in 0..6 {
            let row: Vec<String> = w.row(t).iter().map(|v| format!("{v:.3}")).collect();
            println!("  target {}: [{}]", t + 1, row.join(", "));
        }
    }
    // one-dimensional "encoder states" 1..4 show the interpolation directly
    let enc = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0])?;
    println!("copied states: {:?}", soft_copy(&enc, 6, 0.5, true)?.data());
    Ok(())
}
