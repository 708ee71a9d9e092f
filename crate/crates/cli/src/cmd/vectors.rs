use std::path::Path;

use clap::ValueEnum;
use serde_json::{json, Value};
use ttv_core::corpus::FragmentDataset;
use ttv_core::latent::{extract_vector, Criterion, ShapeTemplate, VectorFile};
use ttv_core::vae::train::split_indices;
use ttv_core::vae::Checkpoint;

use super::{invalid, Kind};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Pool {
    /// The training split recorded by the checkpoint's configuration.
    Train,
    All,
}

fn pool_ids(ck: &Checkpoint, data: &FragmentDataset, pool: Pool) -> Vec<usize> {
    match pool {
        Pool::All => (0..data.len()).collect(),
        Pool::Train => {
            let cfg = &ck.params.config;
            let mut ids = split_indices(data.len(), cfg.split, cfg.rng_seed)[0].clone();
            ids.sort_unstable();
            ids
        }
    }
}

fn criteria(kinds: &str) -> anyhow::Result<Vec<Criterion>> {
    if kinds == "all" {
        return Ok(Criterion::standard());
    }
    let list = kinds
        .split(',')
        .map(|k| Criterion::from_vector_name(k.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if list.is_empty() {
        return Err(invalid("no vector kinds requested"));
    }
    Ok(list)
}

fn extract(
    model: &Path,
    dataset: &Path,
    criteria: &[Criterion],
    target_n: usize,
    pool: Pool,
) -> anyhow::Result<(VectorFile, Vec<Value>)> {
    if target_n == 0 {
        return Err(invalid("--target-n must be positive"));
    }
    let ck = Checkpoint::load(model)?;
    let data = FragmentDataset::load(dataset)?;
    let ids = pool_ids(&ck, &data, pool);
    if ids.len() < 2 {
        return Err(invalid(format!("need at least 2 fragments to form classes, the pool has {}", ids.len())));
    }
    let mut file = VectorFile { checkpoint_id: ck.id(), latent_dim: ck.params.config.latent_dim, vectors: Vec::new() };
    let mut notes = Vec::new();
    for c in criteria {
        let (v, sel) = extract_vector(&ck.params, &data, &ids, c, target_n)?;
        for w in &sel.warnings {
            log::warn!("{w}");
        }
        notes.push(json!({ "name": v.name, "class_sizes": v.class_sizes, "thresholds": v.thresholds, "warnings": sel.warnings }));
        file.vectors.push(v);
    }
    Ok((file, notes))
}

pub fn vectors(model: &Path, dataset: &Path, kinds: &str, target_n: usize, pool: Pool, out: &Path) -> anyhow::Result<Value> {
    let (file, notes) = extract(model, dataset, &criteria(kinds)?, target_n, pool)?;
    file.save(out)?;
    Ok(json!({ "vectors_file": out.display().to_string(), "checkpoint_id": file.checkpoint_id, "vectors": notes }))
}

#[allow(clippy::too_many_arguments)]
pub fn shape_vector(
    model: &Path,
    dataset: &Path,
    template: &str,
    kind: Kind,
    target_n: usize,
    pool: Pool,
    append: bool,
    out: &Path,
) -> anyhow::Result<Value> {
    let criterion = Criterion::Shape(kind.into(), ShapeTemplate::by_name(template)?);
    let (fresh, notes) = extract(model, dataset, &[criterion], target_n, pool)?;
    let file = if append && out.exists() {
        let mut old = VectorFile::load(out)?;
        old.check_compatible(&fresh.checkpoint_id, fresh.latent_dim)?;
        for v in fresh.vectors {
            old.vectors.retain(|o| o.name != v.name);
            old.vectors.push(v);
        }
        old
    } else {
        fresh
    };
    file.save(out)?;
    Ok(json!({ "vectors_file": out.display().to_string(), "checkpoint_id": file.checkpoint_id, "vectors": notes }))
}
