//! Checkpoint directories: `checkpoint.manifest` (`key=value`) and
//! `params.lprr`, one binary64 matrix record per tensor in manifest order.
//!
//! The manifest lists `tensor.<i>=<name> <rows> <cols>`, the producing model
//! configuration under `model.*`, and the SHA-256 digest of the parameter
//! file.

use std::path::{Path, PathBuf};

use pillar_rerank_core::train::Checkpoint;
use pillar_rerank_core::Model;
use sha2::{Digest, Sha256};

use crate::error::{self, Error, Result};
use crate::matrix_file::{self, Dtype};
use crate::settings::{model_entries, model_from_entries};
use crate::textio::KeyValues;

pub const MANIFEST: &str = "checkpoint.manifest";
pub const PARAMS: &str = "params.lprr";

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST)
    } else {
        path.to_path_buf()
    }
}

fn encode_params(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    for t in model.tensors() {
        matrix_file::encode(t, Dtype::F64, &mut buf);
    }
    buf
}

/// Writes `ckpt` into `dir` and returns the parameter digest.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<String> {
    let params = encode_params(&ckpt.model);
    let digest = hex_digest(&params);
    error::write(&dir.join(PARAMS), &params)?;

    let mut kv = KeyValues::new();
    kv.set("format", 1);
    kv.set("epoch", ckpt.epoch);
    kv.set("seed", ckpt.seed);
    kv.set("best_val_rsum", format!("{:?}", ckpt.best_val_rsum));
    kv.set("params", PARAMS);
    kv.set("digest", &digest);
    for (k, v) in model_entries(&ckpt.config).iter() {
        kv.set(format!("model.{k}"), v);
    }
    for (i, (name, t)) in ckpt.model.tensor_names().into_iter().zip(ckpt.model.tensors()).enumerate() {
        kv.set(format!("tensor.{i}"), format!("{name} {} {}", t.rows(), t.cols()));
    }
    error::write(&dir.join(MANIFEST), kv.render())?;
    Ok(digest)
}

fn field<T: std::str::FromStr>(kv: &KeyValues, key: &str, path: &Path) -> Result<T> {
    kv.get(key)
        .ok_or_else(|| Error::manifest(path, format!("missing key {key:?}")))?
        .parse()
        .map_err(|_| Error::manifest(path, format!("bad value for {key:?}")))
}

/// Loads a checkpoint from its directory or manifest path.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let manifest = manifest_path(path);
    let kv = KeyValues::parse(&error::read_to_string(&manifest)?).map_err(|source| Error::Parse {
        path: manifest.clone(),
        source,
    })?;
    let base = manifest.parent().unwrap_or(Path::new("."));

    let mut model_kv = KeyValues::new();
    let mut shapes = Vec::new();
    for (k, v) in kv.iter() {
        if let Some(m) = k.strip_prefix("model.") {
            model_kv.set(m, v);
        } else if let Some(i) = k.strip_prefix("tensor.") {
            let i: usize = i
                .parse()
                .map_err(|_| Error::manifest(&manifest, format!("bad tensor key {k:?}")))?;
            let parts: Vec<&str> = v.split_whitespace().collect();
            let parsed = match parts.as_slice() {
                [name, r, c] => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()).map(|s| (name.to_string(), s)),
                _ => None,
            };
            let entry = parsed.ok_or_else(|| Error::manifest(&manifest, format!("bad tensor entry {v:?}")))?;
            shapes.push((i, entry));
        } else if !matches!(k, "format" | "epoch" | "seed" | "best_val_rsum" | "params" | "digest") {
            return Err(Error::manifest(&manifest, format!("unknown key {k:?}")));
        }
    }
    shapes.sort_by_key(|s| s.0);
    let config = model_from_entries(&model_kv)?;

    let params_path = base.join(kv.get("params").unwrap_or(PARAMS));
    let bytes = std::fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    if let Some(want) = kv.get("digest") {
        if hex_digest(&bytes) != want {
            return Err(Error::manifest(&params_path, "parameter digest does not match the manifest"));
        }
    }
    let records = matrix_file::decode_all(&bytes).map_err(|source| Error::Format {
        path: params_path.clone(),
        source,
    })?;
    if records.len() != shapes.len() {
        return Err(Error::manifest(
            &manifest,
            format!("{} tensors listed, {} stored", shapes.len(), records.len()),
        ));
    }
    let expected = Model::zeros(&config).tensor_names();
    let mut tensors = Vec::with_capacity(records.len());
    for (n, ((i, (name, shape)), (m, _))) in shapes.into_iter().zip(records).enumerate() {
        if i != n || expected.get(n) != Some(&name) || m.shape() != shape {
            return Err(Error::manifest(
                &manifest,
                format!("tensor {n} ({name}) does not match the configuration"),
            ));
        }
        tensors.push(m);
    }
    let model = Model::from_tensors(&config, tensors)?;
    Ok(Checkpoint {
        model,
        best_val_rsum: field(&kv, "best_val_rsum", &manifest)?,
        epoch: field(&kv, "epoch", &manifest)?,
        seed: field(&kv, "seed", &manifest)?,
        config,
    })
}
