//! Trains the full objective, the fixed-label baseline and each single
//! ablation on the default synthetic world and prints novel SRT results.
//!
//! Optional arguments: a JSON `SyntheticConfig` and a JSON `TrainConfig`.

use std::time::Instant;

use ace_core::embedding::{generate_synthetic_dataset, SyntheticConfig};
use ace_core::eval::{evaluate, srt, EvalConfig, EvalMode, LabelTable};
use ace_core::loss::LossFlags;
use ace_core::trainer::{train, TrainConfig};

fn main() -> ace_core::Result<()> {
    let synth: SyntheticConfig = match std::env::args().nth(1) {
        Some(json) => serde_json::from_str(&json)?,
        None => SyntheticConfig::default(),
    };
    let base: TrainConfig = match std::env::args().nth(2) {
        Some(json) => serde_json::from_str(&json)?,
        None => TrainConfig {
            learning_rate: 0.001,
            ..TrainConfig::default()
        },
    };
    let ds = generate_synthetic_dataset(&synth)?;
    let eval_cfg = EvalConfig::default();
    let table = LabelTable::generate(&ds.novel_vocab, eval_cfg.srt_runs, eval_cfg.seed)?;

    let mut runs = vec![("full", LossFlags::full()), ("fixed only", LossFlags::fixed_only())];
    runs.extend(LossFlags::single_ablations());
    runs.push(("pretrained", LossFlags::fixed_only()));
    for (name, flags) in runs {
        let start = Instant::now();
        let enc = if name == "pretrained" {
            ds.encoders.clone()
        } else {
            let cfg = TrainConfig { flags, ..base.clone() };
            train(cfg, &ds.train, &ds.base_vocab, ds.encoders.clone())?.0
        };
        let cfg = EvalConfig {
            leaf_augment: flags.leaf_augment,
            ..eval_cfg.clone()
        };
        let report = srt(&cfg, &enc, &ds.novel_vocab, &ds.novel_test, &table)?;
        let base_cfg = EvalConfig {
            mode: EvalMode::Base,
            ..cfg.clone()
        };
        let base_acc = evaluate(&base_cfg, &enc, &ds.base_vocab, &ds.base_test)?.accuracy;
        println!(
            "{name:<26} base {:6.2}  novel acc {:6.2} ± {:5.2}   f1 {:6.2} ± {:5.2}   ({:.1}s)",
            base_acc,
            report.accuracy.mean,
            report.accuracy.std,
            report.macro_f1.mean,
            report.macro_f1.std,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
