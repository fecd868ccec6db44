//! Provider construction and dataset loading from a resolved manifest.

use std::path::Path;

use adlab::corpus::{load_dataset, Dataset, DatasetSpec};
use adlab::llm::{ChatProvider, LiveProvider, RecordingProvider, ReplayProvider};

use crate::manifest::{run_err, usage, CliError, ProviderConfig, ProviderMode, RunManifest};

/// Builds the chat provider. Live and record modes read the API key from
/// ADLAB_API_KEY; there is deliberately no flag or config field for it.
pub fn build_provider(cfg: &ProviderConfig) -> Result<Box<dyn ChatProvider>, CliError> {
    match cfg.mode {
        ProviderMode::Replay => {
            let store = required_store(cfg)?;
            if !store.exists() {
                return Err(usage(format!(
                    "replay store {} does not exist",
                    store.display()
                )));
            }
            Ok(Box::new(ReplayProvider::from_file(store).map_err(run_err)?))
        }
        ProviderMode::Live => Ok(Box::new(live_provider(cfg)?)),
        ProviderMode::Record => {
            let store = required_store(cfg)?.to_path_buf();
            let inner = live_provider(cfg)?;
            Ok(Box::new(
                RecordingProvider::new(inner, &store).map_err(run_err)?,
            ))
        }
    }
}

fn required_store(cfg: &ProviderConfig) -> Result<&Path, CliError> {
    cfg.store
        .as_deref()
        .ok_or_else(|| usage("provider store path required: pass --store or set provider.store"))
}

fn live_provider(cfg: &ProviderConfig) -> Result<LiveProvider, CliError> {
    let base_url = cfg
        .base_url
        .clone()
        .or_else(|| std::env::var("ADLAB_BASE_URL").ok())
        .ok_or_else(|| usage("no endpoint: set ADLAB_BASE_URL or provider.base_url"))?;
    LiveProvider::from_env(base_url).map_err(|e| usage(e.to_string()))
}

pub fn load_spec(manifest: &RunManifest) -> Result<DatasetSpec, CliError> {
    let path = manifest
        .dataset
        .spec
        .as_deref()
        .ok_or_else(|| usage("no dataset spec: pass --dataset or set dataset.spec"))?;
    if !path.exists() {
        return Err(usage(format!(
            "dataset spec {} does not exist",
            path.display()
        )));
    }
    DatasetSpec::from_file(path).map_err(|e| usage(e.to_string()))
}

pub fn load_configured_dataset(manifest: &RunManifest) -> Result<Dataset, CliError> {
    let spec = load_spec(manifest)?;
    let train = manifest
        .dataset
        .train
        .as_deref()
        .ok_or_else(|| usage("no train split: pass --train or set dataset.train"))?;
    let test = manifest
        .dataset
        .test
        .as_deref()
        .ok_or_else(|| usage("no test split: pass --test or set dataset.test"))?;
    for path in [train, test] {
        if !path.exists() {
            return Err(usage(format!(
                "dataset file {} does not exist",
                path.display()
            )));
        }
    }
    load_dataset(train, test, &spec).map_err(run_err)
}
