//! Compares every student gradient against central finite differences.

use narmt::data::Pair;
use narmt::model::{Flavor, ModelConfig, ModelParams};
use narmt::train::model_grad_check;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> narmt::Result<()> {
    let mut cfg = ModelConfig::desk(36, Flavor::Nar);
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.model_dim = 8;
    cfg.hidden_dim = 16;
    cfg.max_len = 16;
    cfg.shared_layer_positions = false;
    let params = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(3))?;
    let pairs = [Pair::new(vec![4, 5, 6], vec![7, 8, 9, 10])];
    let report = model_grad_check(&params, &pairs, 0.1, &[1e-5, 1e-7], 1e-4)?;
    for c in &report.checks {
        println!("{:<28} {:>5} entries  max rel err {:.2e}", c.name, c.entries, c.max_rel_err);
    }
    println!("passed: {}", report.passed());
    Ok(())
}
