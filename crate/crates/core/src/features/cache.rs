//! Binary single-plane float files, used for fusion-map cache entries and
//! persisted score matrices: 8-byte magic, `u32` height, `u32` width, then
//! little-endian `f32` values row by row.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, IoContext, Result};

use super::FusionMap;

pub const MAP_MAGIC: &[u8; 8] = b"INVLFMAP";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn encode_plane(height: usize, width: usize, data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + data.len() * 4);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_plane(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let corrupt = |msg: &str| Error::Corrupted {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAP_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    if payload.len() != h * w * 4 {
        return Err(corrupt("payload length does not match header"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((h, w, data))
}

/// Writes through a uniquely named temporary file and renames it into place,
/// so concurrent writers of the same entry never expose a partial file.
pub fn write_plane(path: &Path, height: usize, width: usize, data: &[f32]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp{}.{n}", std::process::id()));
    fs::write(&tmp, encode_plane(height, width, data)).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn read_plane(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    decode_plane(&fs::read(path).at(path)?, path)
}

/// On-disk fusion maps keyed by (checkpoint hash, layer, image key).
#[derive(Clone, Debug)]
pub struct FeatureCache {
    pub root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn entry_path(&self, checkpoint_hash: &str, layer: &str, image_key: &str) -> PathBuf {
        let short = &checkpoint_hash[..checkpoint_hash.len().min(16)];
        let key = image_key.replace(['/', '\\'], "_");
        self.root
            .join(short)
            .join(layer)
            .join(format!("{key}.fmap"))
    }

    pub fn get(&self, checkpoint_hash: &str, layer: &str, image_key: &str) -> Option<FusionMap> {
        let path = self.entry_path(checkpoint_hash, layer, image_key);
        let (h, w, data) = read_plane(&path).ok()?;
        FusionMap::new(h, w, data).ok()
    }

    pub fn put(
        &self,
        checkpoint_hash: &str,
        layer: &str,
        image_key: &str,
        map: &FusionMap,
    ) -> Result<()> {
        write_plane(
            &self.entry_path(checkpoint_hash, layer, image_key),
            map.height,
            map.width,
            &map.data,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_round_trip_and_corruption() {
        let bytes = encode_plane(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, -6.5]);
        assert_eq!(&bytes[..8], b"INVLFMAP");
        let (h, w, d) = decode_plane(&bytes, Path::new("x")).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(d[5], -6.5);
        assert!(decode_plane(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }

    #[test]
    fn cache_put_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let m = FusionMap::new(2, 2, vec![0.5, 1.5, 2.5, 3.5]).unwrap();
        assert!(cache.get("abcdef", "Conv3", "summer/00001").is_none());
        cache.put("abcdef", "Conv3", "summer/00001", &m).unwrap();
        assert_eq!(
            cache.get("abcdef", "Conv3", "summer/00001").unwrap().data,
            m.data
        );
    }
}
