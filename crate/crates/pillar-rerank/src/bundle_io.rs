//! Bundle directories.
//!
//! A bundle is a manifest (`bundle.manifest`, `key=value`) plus the files it
//! names, resolved relative to the manifest. Required keys: `source_tag`,
//! `cross`, `truth`. Optional: `intra_image`, `intra_text` (derived from the
//! embeddings when absent), `embeddings_image`, `embeddings_text`, and one
//! `split.<train|val|test>.<i2t|t2i>` file per split set. Keys starting with
//! `synth.` carry generator provenance and are ignored on load.

use std::path::{Path, PathBuf};

use pillar_rerank_core::{
    cosine_similarity_matrix, DatasetBundle, Direction, EmbeddingSet, GroundTruth, Matrix, Modality,
    SimilarityStore, Split, Splits,
};

use crate::error::{self, Error, Result};
use crate::matrix_file::{self, Dtype};
use crate::textio::{self, KeyValues};

pub const MANIFEST: &str = "bundle.manifest";

fn split_key(split: Split, dir: Direction) -> String {
    format!("split.{}.{}", split.name(), dir.name())
}

/// Accepts a bundle directory or its manifest path.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST)
    } else {
        path.to_path_buf()
    }
}

fn load_matrix(path: &Path) -> Result<Matrix> {
    matrix_file::load(path).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `bundle` into `dir` with binary32 matrices. `provenance` entries
/// are stored under `synth.`-style keys as given.
pub fn save_bundle(dir: &Path, bundle: &DatasetBundle, provenance: &KeyValues) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let store = &bundle.store;
    let mut kv = KeyValues::new();
    kv.set("format", 1);
    kv.set("source_tag", &store.source_tag);
    kv.set("num_images", store.num_images());
    kv.set("num_texts", store.num_texts());

    let mut put = |key: &str, file: &str, m: &Matrix| -> Result<()> {
        let p = dir.join(file);
        matrix_file::save(&p, m, Dtype::F32).map_err(|e| Error::io(&p, e))?;
        kv.set(key, file);
        Ok(())
    };
    put("cross", "cross.lprr", store.cross())?;
    put("intra_image", "intra_image.lprr", store.intra(Modality::Image))?;
    put("intra_text", "intra_text.lprr", store.intra(Modality::Text))?;
    if let Some(e) = &bundle.image_embeddings {
        put("embeddings_image", "embeddings_image.lprr", &e.rows)?;
    }
    if let Some(e) = &bundle.text_embeddings {
        put("embeddings_text", "embeddings_text.lprr", &e.rows)?;
    }

    error::write(&dir.join("truth.txt"), textio::render_truth(&bundle.truth))?;
    kv.set("truth", "truth.txt");
    for split in Split::ALL {
        for d in Direction::BOTH {
            let file = format!("splits/{}_{}.txt", split.name(), d.name());
            error::write(&dir.join(&file), textio::render_indices(bundle.splits.get(split, d)))?;
            kv.set(split_key(split, d), file);
        }
    }
    for (k, v) in provenance.iter() {
        kv.set(k, v);
    }
    error::write(&dir.join(MANIFEST), kv.render())
}

/// Loads a bundle from a directory or manifest path.
pub fn load_bundle(path: &Path) -> Result<DatasetBundle> {
    let manifest = manifest_path(path);
    let kv = KeyValues::parse(&error::read_to_string(&manifest)?).map_err(|source| Error::Parse {
        path: manifest.clone(),
        source,
    })?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let known = |k: &str| {
        matches!(
            k,
            "format"
                | "source_tag"
                | "num_images"
                | "num_texts"
                | "cross"
                | "intra_image"
                | "intra_text"
                | "embeddings_image"
                | "embeddings_text"
                | "truth"
        ) || k.starts_with("split.")
            || k.starts_with("synth.")
    };
    if let Some((k, _)) = kv.iter().find(|(k, _)| !known(k)) {
        return Err(Error::manifest(&manifest, format!("unknown key {k:?}")));
    }
    let file = |key: &str| kv.get(key).map(|v| base.join(v));
    let require = |key: &str| file(key).ok_or_else(|| Error::manifest(&manifest, format!("missing key {key:?}")));

    let cross = load_matrix(&require("cross")?)?;
    let (m, n) = cross.shape();
    let embedding = |key: &str, modality| -> Result<Option<EmbeddingSet>> {
        match file(key) {
            Some(p) => Ok(Some(EmbeddingSet::new(modality, load_matrix(&p)?)?)),
            None => Ok(None),
        }
    };
    let images = embedding("embeddings_image", Modality::Image)?;
    let texts = embedding("embeddings_text", Modality::Text)?;
    let intra = |key: &str, emb: &Option<EmbeddingSet>| -> Result<Matrix> {
        match (file(key), emb) {
            (Some(p), _) => load_matrix(&p),
            (None, Some(e)) => Ok(cosine_similarity_matrix(e, e)?),
            (None, None) => Err(Error::Core(pillar_rerank_core::Error::Capability(format!(
                "{key} is missing and no embeddings are available to derive it"
            )))),
        }
    };
    let intra_image = intra("intra_image", &images)?;
    let intra_text = intra("intra_text", &texts)?;
    let tag = kv.get("source_tag").unwrap_or("unknown");
    let store = SimilarityStore::new(cross, intra_image, intra_text, tag)?;

    for (key, want) in [("num_images", m), ("num_texts", n)] {
        if let Some(v) = kv.get(key) {
            if v.parse::<usize>().ok() != Some(want) {
                return Err(Error::manifest(
                    &manifest,
                    format!("{key}={v} but the cross matrix implies {want}"),
                ));
            }
        }
    }

    let truth_path = require("truth")?;
    let pairs = textio::parse_truth(&error::read_to_string(&truth_path)?).map_err(|source| Error::Parse {
        path: truth_path.clone(),
        source,
    })?;
    let truth = GroundTruth::new(m, n, pairs)?;

    let mut splits = Splits::default();
    for split in Split::ALL {
        for d in Direction::BOTH {
            if let Some(p) = file(&split_key(split, d)) {
                let ix = textio::parse_indices(&error::read_to_string(&p)?).map_err(|source| {
                    Error::Parse {
                        path: p.clone(),
                        source,
                    }
                })?;
                splits.set(split, d, ix);
            }
        }
    }
    Ok(DatasetBundle::new(store, truth, splits, images, texts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pillar_rerank_core::synthetic::{generate, SynthConfig};

    fn small() -> DatasetBundle {
        generate(&SynthConfig {
            concepts: 3,
            images_per_concept: 2,
            texts_per_image: 2,
            dim: 5,
            ..SynthConfig::s1()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let b = small();
        save_bundle(dir.path(), &b, &KeyValues::new()).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap(), b);
        assert_eq!(load_bundle(&dir.path().join(MANIFEST)).unwrap(), b);
    }

    #[test]
    fn intra_derived_from_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let b = small();
        save_bundle(dir.path(), &b, &KeyValues::new()).unwrap();
        let mp = dir.path().join(MANIFEST);
        let mut kv = KeyValues::parse(&std::fs::read_to_string(&mp).unwrap()).unwrap();
        kv.remove("intra_text");
        std::fs::write(&mp, kv.render()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        let d = back.store.intra(Modality::Text);
        let want = b.store.intra(Modality::Text);
        for (x, y) in d.as_slice().iter().zip(want.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }

        kv.remove("embeddings_text");
        std::fs::write(&mp, kv.render()).unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(Error::Core(pillar_rerank_core::Error::Capability(_)))
        ));
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(dir.path(), &small(), &KeyValues::new()).unwrap();
        let mp = dir.path().join(MANIFEST);
        let mut text = std::fs::read_to_string(&mp).unwrap();
        text.push_str("colour=blue\n");
        std::fs::write(&mp, text).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Manifest { .. })));
    }
}
