//! Checkpoint directories.
//!
//! ```text
//! run/
//!   cloud.ply      Gaussian attributes (see `ply`)
//!   params.bin     every other learnable array
//!   config.toml    resolved training config
//!   cameras.json   cameras of the training views, in order
//! ```
//!
//! `params.bin` is `b"TSPARAM1"`, a `u32` array count, then per array a `u16` name
//! length, the UTF-8 name, a `u64` value count and the values as `f64`; all little-endian.

use std::path::Path;

use rand::SeedableRng;
use thermosplat_core::model::Model;
use thermosplat_core::raster::Camera;
use thermosplat_core::trainer::TrainConfig;

use crate::error::{Error, Result};
use crate::{config, ply};

pub const CLOUD: &str = "cloud.ply";
pub const PARAMS: &str = "params.bin";
pub const CONFIG: &str = "config.toml";
pub const CAMERAS: &str = "cameras.json";
const MAGIC: &[u8; 8] = b"TSPARAM1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    pub cameras: Vec<Camera>,
}

fn cloud_names(model: &Model) -> Vec<&'static str> {
    model.cloud.families().iter().map(|(n, _)| *n).collect()
}

pub fn encode_params(model: &Model) -> Vec<u8> {
    let skip = cloud_names(model);
    let mut arrays: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit(&mut |name, v| {
        if !skip.contains(&name) {
            arrays.push((name.to_string(), v.to_vec()));
        }
    });
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, v) in &arrays {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(v.len() as u64).to_le_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<(String, Vec<f64>)>> {
    let err = |offset: usize, message: &str| Error::Parse { format: "params", offset, message: message.to_string() };
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| err(bytes.len(), "truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(err(0, "bad magic"));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| err(0, "array name is not UTF-8"))?;
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let raw = take(n.checked_mul(8).ok_or_else(|| err(0, "array too large"))?)?;
        out.push((name, raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()));
    }
    if pos != bytes.len() {
        return Err(err(pos, "trailing bytes"));
    }
    Ok(out)
}

pub fn save(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    ply::save(&dir.join(CLOUD), &ckpt.model.cloud)?;
    let p = dir.join(PARAMS);
    std::fs::write(&p, encode_params(&ckpt.model)).map_err(Error::io(&p))?;
    config::save(&dir.join(CONFIG), &ckpt.config)?;
    let p = dir.join(CAMERAS);
    std::fs::write(&p, serde_json::to_string_pretty(&ckpt.cameras)? + "\n").map_err(Error::io(&p))?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let config: TrainConfig = config::load(&dir.join(CONFIG))?;
    let cloud = ply::load(&dir.join(CLOUD))?;
    let dims = &config.appearance;
    if (cloud.sh_degree, cloud.embed_dim) != (dims.sh_degree, dims.embed_dim) {
        return Err(Error::Checkpoint(format!(
            "cloud has SH degree {} and {} embedding dims, config says {} and {}",
            cloud.sh_degree, cloud.embed_dim, dims.sh_degree, dims.embed_dim
        )));
    }
    // every learned array is overwritten below; the generator only fixes the shapes
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(cloud, dims, config.neighbors, &mut rng)?;
    let p = dir.join(PARAMS);
    let arrays = decode_params(&std::fs::read(&p).map_err(Error::io(&p))?)?;
    let skip = cloud_names(&model);
    let mut problem: Option<String> = None;
    let mut used = 0;
    model.visit_mut(&mut |name, v| {
        if skip.contains(&name) || problem.is_some() {
            return;
        }
        match arrays.iter().find(|(n, _)| n == name) {
            Some((_, vals)) if vals.len() == v.len() => {
                v.copy_from_slice(vals);
                used += 1;
            }
            Some((_, vals)) => problem = Some(format!("array `{name}` has {} values, expected {}", vals.len(), v.len())),
            None => problem = Some(format!("array `{name}` is missing")),
        }
    });
    if let Some(m) = problem {
        return Err(Error::Checkpoint(format!("{}: {m}", p.display())));
    }
    if used != arrays.len() {
        return Err(Error::Checkpoint(format!("{}: {} unexpected arrays", p.display(), arrays.len() - used)));
    }
    model.check()?;
    let p = dir.join(CAMERAS);
    let text = std::fs::read_to_string(&p).map_err(Error::io(&p))?;
    let cameras: Vec<Camera> = serde_json::from_str(&text)?;
    Ok(Checkpoint { model, config, cameras })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_decode_rejects_damage() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cfg = TrainConfig::default();
        let cloud = thermosplat_core::scene::random_cloud(&cfg.init, cfg.appearance.sh_degree, cfg.appearance.embed_dim, 1);
        let m = Model::new(cloud.select(&[0, 1]), &cfg.appearance, 8, &mut rng).unwrap();
        let bytes = encode_params(&m);
        let arrays = decode_params(&bytes).unwrap();
        assert!(arrays.iter().any(|(n, _)| n == "w_a"));
        assert!(!arrays.iter().any(|(n, _)| n == "mu"));
        assert!(decode_params(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(1);
        assert!(decode_params(&long).is_err());
        assert!(decode_params(b"TSPARAM2\0\0\0\0").is_err());
    }
}
