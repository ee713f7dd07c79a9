//! Desk-scale training run: prints loss and dice every ten epochs.
//!
//! `cargo run --release --example desk_run -- [epochs] [lr] [sigma]`

use std::time::Instant;

use vnetseg::imageio::Case;
use vnetseg::phantom::{make_dataset, PhantomSpec};
use vnetseg::preprocess::{gaussian_filter3d, normalize_intensity, GaussianSpec};
use vnetseg::trainer::{evaluate, train, TrainConfig, TrainState};
use vnetseg::vnet::{VNetConfig, VNetModel};

fn prepare(cases: Vec<Case>, sigma: f64) -> Vec<Case> {
    cases
        .into_iter()
        .map(|mut c| {
            c.image = normalize_intensity(&c.image);
            if sigma > 0.0 {
                c.image = gaussian_filter3d(&c.image, GaussianSpec::new(sigma).unwrap());
            }
            c
        })
        .collect()
}

fn main() -> vnetseg::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(200, |s| s.parse().unwrap());
    let lr = args.get(2).map_or(1e-2, |s| s.parse().unwrap());
    let sigma = args.get(3).map_or(0.0, |s| s.parse().unwrap());
    let (train_set, test_set) = make_dataset(&PhantomSpec::desk(), 4, 2, 0)?;
    let (train_set, test_set) = (prepare(train_set, sigma), prepare(test_set, sigma));
    let mut model = VNetModel::build(VNetConfig::desk(), 0)?;
    let cfg = TrainConfig { epochs, learning_rate: lr, ..TrainConfig::default() };
    let mut state = TrainState::new(&model);
    let start = Instant::now();
    train(&mut model, &train_set, &cfg, &mut state, |m, s| {
        let r = s.history.last().unwrap();
        if r.epoch % 10 == 0 {
            let held = evaluate(m, &test_set)?.mean_dice;
            println!("{:>4} loss {:.4} train {:.4} held {:.4} ({:.0}s)", r.epoch, r.loss, r.train_dice, held, start.elapsed().as_secs_f64());
        }
        Ok(())
    })?;
    println!("final train eval {:.4}", evaluate(&model, &train_set)?.mean_dice);
    println!("final held eval {:.4}", evaluate(&model, &test_set)?.mean_dice);
    Ok(())
}
