use std::path::Path;

use serde_json::{json, Value};
use ttv_core::corpus::FragmentDataset;
use ttv_core::eval::reconstruction;
use ttv_core::vae::gradcheck::check_tiny_model;
use ttv_core::vae::{ledger_csv, train_with, StopReason};
use ttv_core::Error;

use super::{create_dir, to_json, write};
use crate::settings::Settings;

pub fn train(s: &Settings, seed: Option<u64>, dataset: &Path, out: &Path) -> anyhow::Result<Value> {
    let data = FragmentDataset::load(dataset)?;
    let mut cfg = s.model.clone();
    if let Some(seed) = seed {
        cfg.rng_seed = seed;
    }
    create_dir(out)?;
    let outcome = train_with(&data, &cfg, |row| {
        log::info!("epoch {} {}: total {:.5} kl {:.4} beta {:.6}", row.epoch, row.split, row.loss.total, row.loss.kl, row.loss.beta);
    })?;
    let ck = &outcome.checkpoint;
    ck.save(&out.join("model.ttvc"))?;
    write(&out.join("ledger.csv"), ledger_csv(&outcome.ledger))?;
    let train_fit = reconstruction(&ck.params, &data, &outcome.splits[0])?;
    let summary = json!({
        "checkpoint": out.join("model.ttvc").display().to_string(),
        "checkpoint_id": ck.id(),
        "stop": outcome.stop,
        "diagnostic": outcome.diagnostic,
        "epochs_run": ck.schedule.epochs_run,
        "best_epoch": ck.schedule.best_epoch,
        "split_sizes": outcome.splits.iter().map(Vec::len).collect::<Vec<_>>(),
        "train_reconstruction": train_fit,
        "config": cfg,
    });
    write(&out.join("summary.json"), to_json(&summary))?;
    if outcome.stop == StopReason::NumericFailure {
        // The last good weights were saved, but the run did not finish.
        return Err(Error::NumericFailure {
            layer: "training".into(),
            detail: outcome.diagnostic.unwrap_or_default(),
        }
        .into());
    }
    Ok(summary)
}

pub fn gradcheck(seed: u64, samples: usize) -> anyhow::Result<Value> {
    let report = check_tiny_model(seed, samples)?;
    if !report.passed(samples) {
        anyhow::bail!("gradient check failed: {}", serde_json::to_string(&report)?);
    }
    Ok(json!({ "passed": true, "report": report }))
}
