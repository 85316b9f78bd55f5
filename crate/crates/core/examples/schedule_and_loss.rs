//! Learning-rate schedule values and the label-smoothed loss of a fixed
//! prediction.

use narmt::tensor::Tensor;
use narmt::train::{smoothed_ce_loss, LrSchedule};

fn main() -> narmt::Result<()> {
    let s = LrSchedule::with_peak(64, 400, 1e-3);
    for step in [1, 100, 400, 800, 1600, 6400] {
        println!("step {step:>5}: lr {:.6}", s.lr(step));
    }
    let pred = Tensor::new(vec![1, 4], vec![0.1, 0.7, 0.1, 0.1])?;
    for eps in [0.0, 0.1, 0.3] {
        println!("epsilon {eps}: loss {:.5}", smoothed_ce_loss(&pred, &[1], eps)?);
    }
    Ok(())
}
