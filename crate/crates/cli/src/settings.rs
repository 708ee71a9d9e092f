use std::path::Path;

use serde::Deserialize;
use ttv_core::spiral::SpiralConfig;
use ttv_core::vae::ModelConfig;
use ttv_core::Error;

/// Contents of the `--config` file. Both sections are optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub model: ModelConfig,
    pub spiral: SpiralConfig,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Settings = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("bad config {}: {e}", path.display())))?;
        s.model.validate()?;
        s.spiral.validate()?;
        Ok(s)
    }
}
