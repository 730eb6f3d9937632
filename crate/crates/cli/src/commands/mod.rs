pub mod encode;
pub mod eval;
pub mod losses_check;
pub mod profile;
pub mod report;
pub mod run;
pub mod transform;

use crate::{CliError, CliResult};
use std::path::Path;

/// Reads a file with path context on failure (validation: the caller named it).
pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path)
        .map_err(|e| CliError::validation(anyhow::anyhow!("cannot read {}: {e}", path.display())))
}

pub fn read_string(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(anyhow::anyhow!("cannot read {}: {e}", path.display())))
}

/// Single funnel for file output.
pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Loads a single tensor from an SNNW container, or encodes a raw EVT1 stream
/// as a 2-channel histogram.
pub fn load_input_tensor(path: &Path) -> CliResult<spikedet_core::tensor::Tensor> {
    let bytes = read_bytes(path)?;
    if bytes.len() >= 4 && bytes[0..4] == spikedet_core::event::EVT1_MAGIC {
        let window = spikedet_core::event::parse_events(&bytes)?;
        return Ok(spikedet_core::event::encode_histogram(&window));
    }
    let set = spikedet_core::model::weights::read_weight_set(&bytes)?;
    match set.tensors.len() {
        1 => Ok(set.tensors.into_iter().next().unwrap()),
        n => Err(CliError::validation(anyhow::anyhow!(
            "{} holds {n} tensors, expected a single input tensor",
            path.display()
        ))),
    }
}
