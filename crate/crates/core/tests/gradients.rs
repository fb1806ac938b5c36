//! Finite-difference checks for every differentiable operation and layer.

use audiotext::diffcore::{gradient_suite, CheckStatus, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_check_passes_on_three_shapes() {
    let entries = gradient_suite();
    let failed: Vec<_> = entries.iter().filter(|e| e.status != CheckStatus::Pass).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    let mut names: Vec<&str> = entries.iter().map(|e| e.name.as_str()).collect();
    names.dedup();
    for n in names {
        assert_eq!(entries.iter().filter(|e| e.name == n).count(), 3, "{n}");
    }
    for must in ["cross_entropy", "info_nce", "bce_with_logits", "layer/bigru", "layer/transformer_block", "layer/conv3x3"] {
        assert!(entries.iter().any(|e| e.name == must), "{must} missing");
    }
}

#[test]
fn gradients_are_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let w = Tensor::randn(&[4, 2], 1.0, &mut rng);
    let grad_of = |which: u8| {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.constant(w.clone());
        let l1 = xv.matmul(wv).tanh().sum();
        let l2 = xv.mul(xv).log_softmax().mean();
        let loss = match which {
            0 => l1,
            1 => l2,
            _ => l1.add(l2),
        };
        tape.backward(loss).unwrap().get(xv).unwrap().clone()
    };
    let (g1, g2, g12) = (grad_of(0), grad_of(1), grad_of(2));
    for ((a, b), c) in g1.data().iter().zip(g2.data()).zip(g12.data()) {
        assert!((a + b - c).abs() <= 1e-10);
    }
}
