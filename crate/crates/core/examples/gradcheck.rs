//! Finite-difference checks: the built-in suite, then a custom function.
//!
//! `cargo run --example gradcheck`

use audiotext::diffcore::{gradient_check, Tensor};
use audiotext::pipeline::{gradcheck, gradcheck_table};
use rand::SeedableRng;

fn main() -> audiotext::Result<()> {
    let (entries, report) = gradcheck(0);
    print!("{}", gradcheck_table(&entries));
    print!("{}", report.summary());

    // any scalar function of tape variables can be checked the same way
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
    let w = Tensor::randn(&[3, 5], 0.5, &mut rng);
    let custom = gradient_check(|_, v| Ok(v[0].matmul(v[1]).tanh().log_softmax().mean()), &[x, w], 1e-6, 1e-4)?;
    println!("custom tanh/log_softmax chain: max rel err {:.2e}, passed {}", custom.max_relative_error, custom.passed());
    Ok(())
}
