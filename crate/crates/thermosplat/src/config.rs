//! TOML configuration files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn to_toml<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })
}

pub fn from_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })
}

pub fn save<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_toml(value, path)?).map_err(Error::io(path))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    from_toml(&text, path)
}

/// Read `path`, or write the full defaults there first if it does not exist.
/// The flag is true when defaults were written.
pub fn load_or_init<T: Serialize + DeserializeOwned + Default>(path: &Path) -> Result<(T, bool)> {
    if path.exists() {
        return Ok((load(path)?, false));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let value = T::default();
    save(path, &value)?;
    Ok((value, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use thermosplat_core::scene::SceneSpec;
    use thermosplat_core::trainer::TrainConfig;

    #[test]
    fn defaults_round_trip_exactly() {
        let p = Path::new("c.toml");
        let cfg = TrainConfig::default();
        assert_eq!(from_toml::<TrainConfig>(&to_toml(&cfg, p).unwrap(), p).unwrap(), cfg);
        let spec = SceneSpec::default();
        assert_eq!(from_toml::<SceneSpec>(&to_toml(&spec, p).unwrap(), p).unwrap(), spec);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let p = Path::new("c.toml");
        let cfg: TrainConfig = from_toml("iterations = 7\n[pipeline]\nuse_heat = false\n[lr]\nsh = 0.5\n", p).unwrap();
        assert_eq!(cfg.iterations, 7);
        assert!(!cfg.pipeline.use_heat);
        assert_eq!(cfg.lr.sh, 0.5);
        assert_eq!(cfg.lr.opacity, TrainConfig::default().lr.opacity);
        assert_eq!(cfg.pipeline.render, TrainConfig::default().pipeline.render);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let p = Path::new("c.toml");
        let e = from_toml::<TrainConfig>("iteratons = 7\n", p).unwrap_err();
        assert!(e.to_string().contains("iteratons"), "{e}");
        assert!(from_toml::<TrainConfig>("[densify]\nenable = true\n", p).is_err());
    }

    #[test]
    fn missing_file_gets_full_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cfg.toml");
        let (cfg, created) = load_or_init::<TrainConfig>(&path).unwrap();
        assert!(created);
        assert_eq!(cfg, TrainConfig::default());
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["iterations", "[lr]", "[densify]", "[pipeline.radiation]", "[appearance]"] {
            assert!(text.contains(key), "{key}");
        }
        let (again, created) = load_or_init::<TrainConfig>(&path).unwrap();
        assert!(!created);
        assert_eq!(again, cfg);
    }
}
