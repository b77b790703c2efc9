//! Versioned binary checkpoints: magic, JSON header, little-endian parameters.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mlp::{Mlp, NetScalar};
use super::policy::PolicyNet;
use super::ppo::PpoConfig;

pub const MAGIC: &[u8; 8] = b"BLDRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("checkpoint stores {stored} parameters, header implies {expected}")]
    Size { stored: usize, expected: usize },
    #[error("checkpoint is {stored}, requested {requested}")]
    Dtype { stored: String, requested: String },
    #[error("observation layout mismatch: checkpoint {stored}, environment {expected}")]
    Layout { stored: String, expected: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layout_hash: String,
    pub obs_len: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    /// `f32` or `f64`.
    pub dtype: String,
    /// Physical joint-rate scale of one policy action unit.
    pub action_scale: Vec<f64>,
    pub ppo: PpoConfig,
    pub iteration: u64,
    pub seed: u64,
}

pub fn dtype_name<T: NetScalar>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

pub fn write_checkpoint<T: NetScalar>(
    w: &mut impl Write,
    header: &CheckpointHeader,
    net: &PolicyNet<T>,
) -> Result<(), CheckpointError> {
    let json = serde_json::to_vec(header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let params = net.flat_params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for p in params {
        match dtype_name::<T>() {
            "f32" => buf.extend_from_slice(&(p.as_f64() as f32).to_le_bytes()),
            _ => buf.extend_from_slice(&p.as_f64().to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<T: NetScalar>(r: &mut impl Read) -> Result<(CheckpointHeader, PolicyNet<T>), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    r.read_exact(&mut u32b)?;
    let mut json = vec![0u8; u32::from_le_bytes(u32b) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.dtype != dtype_name::<T>() {
        return Err(CheckpointError::Dtype {
            stored: header.dtype.clone(),
            requested: dtype_name::<T>().into(),
        });
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let count = u64::from_le_bytes(u64b) as usize;
    let sizes = |out: usize| {
        let mut s = vec![header.obs_len];
        s.extend_from_slice(&header.hidden);
        s.push(out);
        s
    };
    let actor = Mlp::<T>::zeros(&sizes(header.act_dim), header.leaky_slope);
    let critic = Mlp::<T>::zeros(&sizes(1), header.leaky_slope);
    let mut net = PolicyNet {
        actor,
        critic,
        log_std: vec![T::ZERO; header.act_dim],
    };
    if count != net.num_params() {
        return Err(CheckpointError::Size {
            stored: count,
            expected: net.num_params(),
        });
    }
    let width = if header.dtype == "f32" { 4 } else { 8 };
    let mut raw = vec![0u8; count * width];
    r.read_exact(&mut raw)?;
    let params: Vec<T> = raw
        .chunks_exact(width)
        .map(|c| {
            if width == 4 {
                T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)
            } else {
                T::lit(f64::from_le_bytes(c.try_into().unwrap()))
            }
        })
        .collect();
    net.set_flat_params(&params);
    Ok((header, net))
}

pub fn save_checkpoint<T: NetScalar>(
    path: &Path,
    header: &CheckpointHeader,
    net: &PolicyNet<T>,
) -> Result<(), CheckpointError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, header, net)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: NetScalar>(path: &Path) -> Result<(CheckpointHeader, PolicyNet<T>), CheckpointError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}

/// Reject checkpoints trained on a different observation layout.
pub fn check_layout(header: &CheckpointHeader, layout_hash: &str) -> Result<(), CheckpointError> {
    if header.layout_hash != layout_hash {
        return Err(CheckpointError::Layout {
            stored: header.layout_hash.clone(),
            expected: layout_hash.into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn header<T: NetScalar>() -> CheckpointHeader {
        CheckpointHeader {
            layout_hash: "abc".into(),
            obs_len: 6,
            act_dim: 2,
            hidden: vec![8, 8],
            leaky_slope: 0.01,
            dtype: dtype_name::<T>().into(),
            action_scale: vec![0.3, 0.2],
            ppo: PpoConfig::default(),
            iteration: 3,
            seed: 1,
        }
    }

    fn round_trip<T: NetScalar>() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = PolicyNet::<T>::new(6, 2, &[8, 8], 0.4, 0.01, &mut rng);
        let h = header::<T>();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &h, &net).unwrap();
        let (h2, back) = read_checkpoint::<T>(&mut buf.as_slice()).unwrap();
        assert_eq!(h2, h);
        assert_eq!(back, net);
        let probe = Array2::from_shape_fn((4, 6), |(i, j)| T::lit((i as f64 - j as f64) * 0.2));
        assert_eq!(back.means(probe.view()), net.means(probe.view()));
    }

    #[test]
    fn round_trip_both_precisions() {
        round_trip::<f32>();
        round_trip::<f64>();
    }

    #[test]
    fn rejects_corruption_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = PolicyNet::<f32>::new(6, 2, &[8, 8], 0.4, 0.01, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &header::<f32>(), &net).unwrap();
        assert!(matches!(read_checkpoint::<f64>(&mut buf.as_slice()), Err(CheckpointError::Dtype { .. })));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint::<f32>(&mut bad.as_slice()), Err(CheckpointError::BadMagic)));
        let short = &buf[..buf.len() - 3];
        assert!(read_checkpoint::<f32>(&mut &short[..]).is_err());
        assert!(check_layout(&header::<f32>(), "abc").is_ok());
        assert!(check_layout(&header::<f32>(), "def").is_err());
    }
}
