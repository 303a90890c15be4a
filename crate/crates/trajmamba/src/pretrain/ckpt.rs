//! Checkpoint helpers shared by both pretraining stages.

use crate::Result;
use gradcore::checkpoint::Checkpoint;
use gradcore::{AdamState, ParamStore, Real};
use std::path::Path;

pub fn checkpoint_metadata(
    echo: &str,
    seed: u64,
    extra: &[(&str, serde_json::Value)],
) -> String {
    let mut map = serde_json::Map::new();
    map.insert("config_echo".into(), serde_json::Value::String(echo.into()));
    map.insert("seed".into(), serde_json::Value::from(seed));
    for (k, v) in extra {
        map.insert((*k).into(), v.clone());
    }
    serde_json::Value::Object(map).to_string()
}

/// Writes store entries whose names pass `filter` plus (optionally) the
/// optimizer moments, so interrupted runs resume exactly.
pub fn save_store_checkpoint<F: Real>(
    store: &ParamStore<F>,
    path: impl AsRef<Path>,
    filter: impl Fn(&str) -> bool,
    adam: Option<&AdamState<F>>,
    metadata: String,
) -> Result<()> {
    let mut ck = Checkpoint::from_store(store, filter, metadata);
    if let Some(adam) = adam {
        ck.tensors.extend(adam.export_tensors());
    }
    ck.save(path)?;
    Ok(())
}

/// Loads a rolling epoch checkpoint if it matches this run's config echo
/// and seed; returns the next epoch to run.
pub fn try_resume<F: Real>(
    path: impl AsRef<Path>,
    echo: &str,
    seed: u64,
    store: &mut ParamStore<F>,
    adam: &mut AdamState<F>,
) -> Result<Option<usize>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(None);
    }
    let ck = Checkpoint::<F>::load(path)?;
    let meta = ck.metadata_json()?;
    if meta["config_echo"].as_str() != Some(echo) || meta["seed"].as_u64() != Some(seed) {
        return Ok(None);
    }
    let epoch = meta["epoch"]
        .as_u64()
        .ok_or_else(|| crate::TrajError::Data("epoch checkpoint missing epoch".into()))?
        as usize;
    let adam_step = meta["adam_step"].as_u64().unwrap_or(0);

    let values: Vec<(&str, &gradcore::Tensor<F>)> = ck
        .tensors
        .iter()
        .filter(|(n, _)| !n.starts_with("optim."))
        .map(|(n, t)| (n.as_str(), t))
        .collect();
    store.load_values(values, |_| false)?;
    adam.import_tensors(&ck.tensors, adam_step)?;
    Ok(Some(epoch + 1))
}
