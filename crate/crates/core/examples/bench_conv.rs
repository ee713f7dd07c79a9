use std::time::Instant;
use rand::SeedableRng;
use vnetseg::nnops::{Conv3d, ConvGeometry};
use vnetseg::tensor::Tensor;

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for &(ci, co, n, reps) in &[(2, 4, 32, 1), (8, 8, 32, 1), (16, 16, 16, 2), (32, 32, 8, 3), (64, 64, 4, 3), (64, 64, 2, 3), (8, 8, 16, 2)] {
        let mut conv = Conv3d::new(ci, co, ConvGeometry::same(5).unwrap(), &mut rng).unwrap();
        let x = Tensor::full(&[ci, n, n, n], 0.5).unwrap();
        let t = Instant::now();
        let y = conv.forward(&x).unwrap();
        let tf = t.elapsed();
        let t = Instant::now();
        conv.backward(&x, &y).unwrap();
        let tb = t.elapsed();
        let macs = (ci * co * 125 * n * n * n) as f64;
        println!("ci {ci} co {co} n {n} x{reps}: fwd {:?} ({:.2} GMAC/s) bwd {:?}", tf, macs / tf.as_secs_f64() / 1e9, tb);
    }
}
