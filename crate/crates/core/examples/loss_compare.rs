//! Held-out dice of dice loss vs unweighted and weighted cross entropy.
//!
//! `cargo run --release --example loss_compare -- [extent] [epochs] [n_train] [base]`

use vnetseg::imageio::Case;
use vnetseg::loss::LossKind;
use vnetseg::phantom::{make_dataset, PhantomSpec};
use vnetseg::preprocess::normalize_intensity;
use vnetseg::trainer::{evaluate, train, TrainConfig, TrainState};
use vnetseg::vnet::{VNetConfig, VNetModel};

fn normalized(cases: Vec<Case>) -> Vec<Case> {
    cases.into_iter().map(|mut c| { c.image = normalize_intensity(&c.image); c }).collect()
}

fn main() -> vnetseg::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|s| s.parse().unwrap()).collect();
    let extent = args.first().copied().unwrap_or(16);
    let epochs = args.get(1).copied().unwrap_or(40);
    let n_train = args.get(2).copied().unwrap_or(4);
    let base = args.get(3).copied().unwrap_or(4);
    for seed in 0..3u64 {
        let spec = PhantomSpec::desk().with_extent(extent);
        let (tr, te) = make_dataset(&spec, n_train, 2, 100 * seed)?;
        let (tr, te) = (normalized(tr), normalized(te));
        let mut line = format!("seed {seed}:");
        for (name, loss, w) in [("dice", LossKind::Dice, None), ("ce", LossKind::WeightedCe, Some(1.0)), ("wce", LossKind::WeightedCe, None)] {
            let config = VNetConfig { input_extent: extent, base_channels: base, ..VNetConfig::desk() };
            let mut model = VNetModel::build(config, seed)?;
            let cfg = TrainConfig { epochs, loss, fg_weight: w, seed, ..TrainConfig::default() };
            let mut state = TrainState::new(&model);
            train(&mut model, &tr, &cfg, &mut state, |_, _| Ok(()))?;
            let d = evaluate(&model, &te)?.mean_dice;
            line += &format!(" {name} {d:.4} (train {:.4})", state.history.last().unwrap().train_dice);
        }
        println!("{line}");
    }
    Ok(())
}
