//! Binary checkpoints: "GTER" magic, format version, architecture key/values,
//! then named float arrays (parameters and batchnorm running statistics).
//!
//! Arrays are always stored as little-endian f32 regardless of the in-memory
//! scalar type, so f32 training round-trips bitwise.

use crate::error::{Error, Result};
use crate::model::{ArchConfig, GraphTerModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transforms::TransformKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

pub const MAGIC: &[u8; 4] = b"GTER";
pub const VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("invalid utf-8 in name".into()))
}

fn write_array<W: Write, F: Scalar>(w: &mut W, name: &str, shape: &[usize], values: &[F]) -> Result<()> {
    write_str(w, name)?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &e in shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    for v in values {
        w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_array<R: Read>(r: &mut R) -> Result<(String, Vec<usize>, Vec<f32>)> {
    let name = read_str(r)?;
    let mut rank = [0u8; 4];
    r.read_exact(&mut rank)?;
    let rank = u32::from_le_bytes(rank) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut e = [0u8; 8];
        r.read_exact(&mut e)?;
        shape.push(u64::from_le_bytes(e) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut values = Vec::with_capacity(numel);
    for _ in 0..numel {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        values.push(f32::from_le_bytes(b));
    }
    Ok((name, shape, values))
}

fn usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad extent list '{s}'"))))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
}

pub fn save_model<F: Scalar>(model: &GraphTerModel<F>, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;

    let mut config = BTreeMap::new();
    config.insert("kind".to_string(), model.kind.to_string());
    config.insert("encoder_widths".to_string(), join(&model.arch.encoder_widths));
    config.insert("shortcut_layers".to_string(), join(&model.arch.shortcut_layers));
    config.insert("decoder_widths".to_string(), join(&model.arch.decoder_widths));
    config.insert("k".to_string(), model.arch.k.to_string());
    config.insert("dynamic_graph".to_string(), model.arch.dynamic_graph.to_string());
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    for (key, value) in &config {
        write_str(&mut w, key)?;
        write_str(&mut w, value)?;
    }

    let bn = model.bn_states();
    let count = model.store.len() + 2 * bn.len();
    w.write_all(&(count as u32).to_le_bytes())?;
    for (name, tensor) in model.store.iter() {
        write_array(&mut w, name, tensor.shape(), tensor.values())?;
    }
    for (name, running) in bn {
        write_array(&mut w, &format!("{name}.mean"), &[running.mean.len()], &running.mean)?;
        write_array(&mut w, &format!("{name}.var"), &[running.var.len()], &running.var)?;
    }
    Ok(())
}

pub fn load_model<F: Scalar>(path: &Path) -> Result<GraphTerModel<F>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unknown format version {version}")));
    }

    let mut count = [0u8; 4];
    r.read_exact(&mut count)?;
    let mut config = BTreeMap::new();
    for _ in 0..u32::from_le_bytes(count) {
        let key = read_str(&mut r)?;
        let value = read_str(&mut r)?;
        config.insert(key, value);
    }
    let get = |key: &str| -> Result<&String> {
        config.get(key).ok_or_else(|| Error::Checkpoint(format!("missing config key '{key}'")))
    };
    let kind = TransformKind::from_str(get("kind")?)?;
    let arch = ArchConfig {
        encoder_widths: usize_list(get("encoder_widths")?)?,
        shortcut_layers: usize_list(get("shortcut_layers")?)?,
        decoder_widths: usize_list(get("decoder_widths")?)?,
        k: get("k")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad k".into()))?,
        dynamic_graph: get("dynamic_graph")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad dynamic_graph".into()))?,
    };

    // weights are overwritten below; the init rng seed does not matter
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = GraphTerModel::<F>::new(kind, arch, &mut rng);

    let mut count = [0u8; 4];
    r.read_exact(&mut count)?;
    let mut arrays = BTreeMap::new();
    for _ in 0..u32::from_le_bytes(count) {
        let (name, shape, values) = read_array(&mut r)?;
        arrays.insert(name, (shape, values));
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.name(id).to_string();
        let (shape, values) = arrays
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array '{name}'")))?;
        if shape != model.store.tensor(id).shape() {
            return Err(Error::Checkpoint(format!(
                "array '{name}' has shape {shape:?}, expected {:?}",
                model.store.tensor(id).shape()
            )));
        }
        let cast: Vec<F> = values.iter().map(|&v| F::of(v as f64)).collect();
        *model.store.tensor_mut(id) = Tensor::new(shape, cast)?;
    }
    for (name, running) in model.bn_states_mut() {
        for (suffix, field) in [("mean", &mut running.mean), ("var", &mut running.var)] {
            let full = format!("{name}.{suffix}");
            let (shape, values) = arrays
                .remove(&full)
                .ok_or_else(|| Error::Checkpoint(format!("missing array '{full}'")))?;
            if shape != [field.len()] {
                return Err(Error::Checkpoint(format!("array '{full}' has wrong shape {shape:?}")));
            }
            *field = values.iter().map(|&v| F::of(v as f64)).collect();
        }
    }
    Ok(model)
}
