use std::time::Instant;
use vnetseg::tensor::Tensor;
use vnetseg::vnet::{VNetConfig, VNetModel};

fn main() {
    let config = VNetConfig::desk();
    let mut model = VNetModel::build(config, 1).unwrap();
    let n = config.input_extent;
    let x = Tensor::full(&[config.in_channels, n, n, n], 0.3).unwrap();
    for _ in 0..3 {
        let t = Instant::now();
        let out = model.forward(&x, true).unwrap();
        let tf = t.elapsed();
        let g = out.map(|v| v * 1e-3);
        model.backward(&g).unwrap();
        println!("forward {:?}, total {:?}, params {}", tf, t.elapsed(), model.count_parameters());
    }
}
