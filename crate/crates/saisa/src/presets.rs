//! JSON preset files.
//!
//! ```json
//! {"llms": {"my-llm": {"n": 2, "h": 16, "heads": 4, "kv_heads": 2, "m": 32}},
//!  "encoders": {"my-enc": {"v": 6, "d": 8}}}
//! ```
//!
//! File entries are added to the built-in presets, replacing any with the
//! same id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use saisa_core::config::{CrossCheckFlag, EncoderGeometry, ModelGeometry, PresetRegistry, BUILTIN};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// Environment variable naming an extra preset file.
pub const PRESETS_ENV: &str = "SAISA_PRESETS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmEntry {
    pub n: usize,
    pub h: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderEntry {
    pub v: usize,
    pub d: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetFile {
    #[serde(default)]
    pub llms: BTreeMap<String, LlmEntry>,
    #[serde(default)]
    pub encoders: BTreeMap<String, EncoderEntry>,
}

impl From<ModelGeometry> for LlmEntry {
    fn from(g: ModelGeometry) -> Self {
        Self {
            n: g.n,
            h: g.h,
            heads: g.heads,
            kv_heads: g.kv_heads,
            m: g.m,
        }
    }
}

impl From<LlmEntry> for ModelGeometry {
    fn from(e: LlmEntry) -> Self {
        ModelGeometry::new(e.n, e.h, e.heads, e.kv_heads, e.m)
    }
}

impl From<EncoderGeometry> for EncoderEntry {
    fn from(g: EncoderGeometry) -> Self {
        Self { v: g.v, d: g.d }
    }
}

impl From<EncoderEntry> for EncoderGeometry {
    fn from(e: EncoderEntry) -> Self {
        EncoderGeometry { v: e.v, d: e.d }
    }
}

impl PresetFile {
    pub fn from_registry(r: &PresetRegistry) -> Self {
        Self {
            llms: r.llms().map(|(id, p)| (id.to_string(), p.geometry.into())).collect(),
            encoders: r
                .encoders()
                .map(|(id, p)| (id.to_string(), p.geometry.into()))
                .collect(),
        }
    }

    /// Adds every entry to `base`, validating each one.
    pub fn apply(&self, base: &mut PresetRegistry, source: &str) -> saisa_core::Result<()> {
        for (id, e) in &self.llms {
            base.insert_llm(id, (*e).into(), source)?;
        }
        for (id, e) in &self.encoders {
            base.insert_encoder(id, (*e).into(), source)?;
        }
        Ok(())
    }
}

/// Parses preset JSON on top of the built-in registry.
pub fn parse_presets(json: &str, path: &Path) -> AppResult<PresetRegistry> {
    let file: PresetFile = serde_json::from_str(json).map_err(|e| AppError::PresetFile {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut reg = PresetRegistry::builtin();
    file.apply(&mut reg, &path.display().to_string())
        .map_err(|e| AppError::PresetFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    Ok(reg)
}

pub fn load_presets(path: &Path) -> AppResult<PresetRegistry> {
    let json = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_presets(&json, path)
}

pub fn presets_to_json(r: &PresetRegistry) -> String {
    serde_json::to_string_pretty(&PresetFile::from_registry(r)).expect("preset file serializes")
}

/// Built-in presets, extended by `explicit` or else by the file named in
/// `SAISA_PRESETS`.
pub fn resolve_presets(explicit: Option<&Path>) -> AppResult<PresetRegistry> {
    let from_env = std::env::var_os(PRESETS_ENV).map(PathBuf::from);
    match explicit.map(Path::to_path_buf).or(from_env) {
        Some(p) => load_presets(&p),
        None => Ok(PresetRegistry::builtin()),
    }
}

/// Reference-cost disagreements that involve presets not shipped with the
/// tool, plus those touching the given pair.
pub fn relevant_flags(r: &PresetRegistry, llm: &str, encoder: &str) -> Vec<CrossCheckFlag> {
    let from_file = |id: &str, enc: bool| {
        if enc {
            r.encoders().any(|(k, p)| k == id && p.source != BUILTIN)
        } else {
            r.llms().any(|(k, p)| k == id && p.source != BUILTIN)
        }
    };
    r.cross_check()
        .into_iter()
        .filter(|f| {
            (f.llm == llm && f.encoder == encoder) || from_file(&f.llm, false) || from_file(&f.encoder, true)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let r = PresetRegistry::builtin();
        let json = presets_to_json(&r);
        let back = parse_presets(&json, Path::new("x.json")).unwrap();
        assert_eq!(PresetFile::from_registry(&back), PresetFile::from_registry(&r));
    }

    #[test]
    fn adds_and_overrides() {
        let json = r#"{"llms": {"tiny": {"n": 1, "h": 8, "heads": 2, "kv_heads": 1, "m": 16}},
                       "encoders": {"toy": {"v": 3, "d": 4}}}"#;
        let r = parse_presets(json, Path::new("p.json")).unwrap();
        assert_eq!(r.llm("tiny").unwrap(), ModelGeometry::new(1, 8, 2, 1, 16));
        assert_eq!(r.encoder("toy").unwrap(), EncoderGeometry { v: 3, d: 4 });
        assert!(r.llm("vicuna-7b").is_ok());
    }

    #[test]
    fn diagnostics() {
        let missing = r#"{"llms": {"x": {"n": 1, "h": 8, "heads": 2, "kv_heads": 1}}}"#;
        let e = parse_presets(missing, Path::new("p.json")).unwrap_err().to_string();
        assert!(e.contains("missing field `m`") && e.contains("p.json"), "{e}");

        let unknown = r#"{"llms": {}, "extra": 1}"#;
        let e = parse_presets(unknown, Path::new("p.json")).unwrap_err().to_string();
        assert!(e.contains("unknown field `extra`"), "{e}");

        let invalid = r#"{"llms": {"bad": {"n": 1, "h": 10, "heads": 4, "kv_heads": 2, "m": 8}}}"#;
        let e = parse_presets(invalid, Path::new("p.json")).unwrap_err().to_string();
        assert!(e.contains("bad") && e.contains("h mod heads"), "{e}");
    }

    #[test]
    fn file_overrides_raise_reference_flags() {
        let json = r#"{"encoders": {"clip-vit-l-336": {"v": 576, "d": 2048}}}"#;
        let r = parse_presets(json, Path::new("p.json")).unwrap();
        let flags = relevant_flags(&r, "toy", "toy");
        assert!(flags.iter().any(|f| f.encoder == "clip-vit-l-336"));
        let builtin = PresetRegistry::builtin();
        assert!(relevant_flags(&builtin, "toy", "toy").is_empty());
        assert_eq!(relevant_flags(&builtin, "vicuna-7b", "convnext-xxl-1024").len(), 1);
    }
}
