use std::path::Path;

use vlab_core::bundled;
use vlab_core::formats::{
    parse_pack, parse_pack_unchecked, parse_scene, parse_scene_unchecked, FormatError, PackRef, ScenarioPack, SceneFile,
    PACK_FORMAT, SCENE_FORMAT,
};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn domain(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn env(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn format(path: &Path, e: FormatError) -> Self {
        let message = format!("{}: {e}", path.display());
        match e {
            FormatError::Syntax { .. } => Failure::env(message),
            _ => Failure::domain(message),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::env(format!("{}: {e}", path.display())))
}

/// A pack from a file, or a bundled pack by id when no such file exists.
pub fn load_pack(arg: &str) -> Result<ScenarioPack, Failure> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(p) = bundled::by_id(arg) {
            return Ok(p);
        }
    }
    parse_pack(&read(path)?).map_err(|e| Failure::format(path, e))
}

pub fn load_scene(path: &Path) -> Result<SceneFile, Failure> {
    parse_scene(&read(path)?).map_err(|e| Failure::format(path, e))
}

pub fn resolve_bundled(pack_ref: &PackRef) -> Option<ScenarioPack> {
    bundled::by_id(&pack_ref.pack_id).filter(|p| p.version == pack_ref.version)
}

pub enum Document {
    Pack(Box<ScenarioPack>),
    Scene(SceneFile),
}

/// Reads a pack or scene, chosen by extension or else by `format_version`.
pub fn read_document(path: &Path) -> Result<Document, Failure> {
    let bytes = read(path)?;
    let is_pack = match path.extension().and_then(|e| e.to_str()) {
        Some("vpack") => true,
        Some("vscene") => false,
        _ => {
            let sniff: Option<String> = serde_json::from_slice::<serde_json::Value>(&bytes)
                .ok()
                .and_then(|v| v.get("format_version")?.as_str().map(str::to_string));
            match sniff.as_deref() {
                Some(PACK_FORMAT) => true,
                Some(SCENE_FORMAT) => false,
                _ => return parse_scene_unchecked(&bytes).map(Document::Scene).map_err(|e| Failure::format(path, e)),
            }
        }
    };
    if is_pack {
        parse_pack_unchecked(&bytes).map(|p| Document::Pack(Box::new(p))).map_err(|e| Failure::format(path, e))
    } else {
        parse_scene_unchecked(&bytes).map(Document::Scene).map_err(|e| Failure::format(path, e))
    }
}
