pub mod corpus;
pub mod eval;
pub mod generate;
pub mod train;
pub mod vectors;

use std::path::Path;

use clap::ValueEnum;
use ttv_core::spiral::TensionKind;
use ttv_core::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Tensile,
    Diameter,
}

impl From<Kind> for TensionKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Tensile => TensionKind::TensileStrain,
            Kind::Diameter => TensionKind::CloudDiameter,
        }
    }
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidInput(msg.into()).into()
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}
