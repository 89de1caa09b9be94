//! Embedding backends and padded bag assembly.
//!
//! The classifier consumes fixed-length vectors, produced here by one of
//! three interchangeable backends: a lookup into a precomputed binary file,
//! an HTTP embedding service, or a hash-seeded pseudo-random generator that
//! makes the entire offline test suite possible. Assembly turns a [`Bag`]
//! into zero-padded matrices plus mask, weight, and one-hot target vectors.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Mutex;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::{Bag, DistortionInstance, LabelSchema};

pub const DEFAULT_DIMENSION: usize = 384;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no precomputed embedding for digest {digest} (text {preview:?})")]
    MissingEmbedding { digest: String, preview: String },
    #[error("embedding service: {0}")]
    Transport(String),
    #[error("expected {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bag {utterance_id} has {len} instances, exceeding the corpus maximum {n_max}")]
    BagOverflow {
        utterance_id: String,
        len: usize,
        n_max: usize,
    },
    #[error("gold label {0:?} is not in the schema")]
    UnknownLabel(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding file {path}: {msg}")]
    BadFile { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;

    /// Batched variant; backends with batch transports override this.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

fn text_digest(text: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().into()
}

// ---------------------------------------------------------------------------
// test_hash backend
// ---------------------------------------------------------------------------

/// Deterministic pseudo-random unit vectors seeded by the text digest.
/// Carries no semantics; exists so pipelines and tests run offline.
pub struct TestHashEmbedder {
    dimension: usize,
}

impl TestHashEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self { dimension }
    }
}

impl Embedder for TestHashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut rng = ChaCha8Rng::from_seed(text_digest(text));
        let mut v: Vec<f64> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in &mut v {
                *x /= norm;
            }
        } else {
            v[0] = 1.0;
        }
        Ok(v)
    }
}

// ---------------------------------------------------------------------------
// precomputed_file backend
// ---------------------------------------------------------------------------

const EMBED_FILE_MAGIC: &[u8; 4] = b"CGEB";
const EMBED_FILE_VERSION: u32 = 1;

/// Write the binary embedding file: magic, version u32, dim u32, count u32,
/// then per record a 32-byte sha256 text digest followed by dim little-endian
/// f32 values.
pub fn write_embedding_file(
    path: &Path,
    dimension: usize,
    entries: &[(String, Vec<f32>)],
) -> Result<(), EmbedError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(EMBED_FILE_MAGIC)?;
    w.write_all(&EMBED_FILE_VERSION.to_le_bytes())?;
    w.write_all(&(dimension as u32).to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (text, vector) in entries {
        if vector.len() != dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: dimension,
                got: vector.len(),
            });
        }
        w.write_all(&text_digest(text))?;
        for value in vector {
            w.write_all(&value.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Human-readable sidecar mapping digests back to texts, one JSON object per
/// line: {"digest": hex, "text": ...}.
pub fn write_embedding_manifest<W: Write>(
    mut w: W,
    entries: &[(String, Vec<f32>)],
) -> Result<(), EmbedError> {
    for (text, _) in entries {
        let row = serde_json::json!({
            "digest": hex::encode(text_digest(text)),
            "text": text,
        });
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Exact-lookup backend over a file produced by [`write_embedding_file`].
pub struct PrecomputedFileEmbedder {
    dimension: usize,
    vectors: HashMap<[u8; 32], Vec<f64>>,
}

impl PrecomputedFileEmbedder {
    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let bad = |msg: &str| EmbedError::BadFile {
            path: path.display().to_string(),
            msg: msg.to_string(),
        };
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != EMBED_FILE_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        if u32::from_le_bytes(u32buf) != EMBED_FILE_VERSION {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut u32buf)?;
        let dimension = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf) as usize;

        let mut vectors = HashMap::with_capacity(count);
        let mut digest = [0u8; 32];
        let mut f32buf = [0u8; 4];
        for _ in 0..count {
            r.read_exact(&mut digest)?;
            let mut v = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                r.read_exact(&mut f32buf)?;
                v.push(f32::from_le_bytes(f32buf) as f64);
            }
            vectors.insert(digest, v);
        }
        Ok(Self { dimension, vectors })
    }
}

impl Embedder for PrecomputedFileEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let digest = text_digest(text);
        self.vectors.get(&digest).cloned().ok_or_else(|| {
            EmbedError::MissingEmbedding {
                digest: hex::encode(digest),
                preview: text.chars().take(40).collect(),
            }
        })
    }
}

// ---------------------------------------------------------------------------
// http_service backend
// ---------------------------------------------------------------------------

/// Client for a service accepting POST {"texts":[...]} and answering
/// {"vectors":[[...]]}. Responses are memoized per process.
pub struct HttpEmbedder {
    url: String,
    dimension: usize,
    client: reqwest::blocking::Client,
    cache: Mutex<HashMap<[u8; 32], Vec<f64>>>,
}

impl HttpEmbedder {
    pub fn new(url: &str, dimension: usize) -> Self {
        Self {
            url: url.to_string(),
            dimension,
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(120))
                .build()
                .expect("default TLS backend is available"),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let body = serde_json::json!({ "texts": texts });
        let resp = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Transport(format!(
                "{} returned {}",
                self.url,
                resp.status()
            )));
        }
        #[derive(serde::Deserialize)]
        struct Reply {
            vectors: Vec<Vec<f64>>,
        }
        let reply: Reply = resp
            .json()
            .map_err(|e| EmbedError::Transport(format!("bad response body: {e}")))?;
        if reply.vectors.len() != texts.len() {
            return Err(EmbedError::Transport(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                reply.vectors.len()
            )));
        }
        for v in &reply.vectors {
            if v.len() != self.dimension {
                return Err(EmbedError::DimensionMismatch {
                    expected: self.dimension,
                    got: v.len(),
                });
            }
        }
        Ok(reply.vectors)
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.embed_batch(&[text])?.pop().unwrap())
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if texts.iter().any(|t| t.is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let digests: Vec<[u8; 32]> = texts.iter().map(|t| text_digest(t)).collect();
        let todo: Vec<&str> = {
            let cache = self.cache.lock().unwrap();
            texts
                .iter()
                .zip(&digests)
                .filter(|(_, d)| !cache.contains_key(*d))
                .map(|(t, _)| *t)
                .collect()
        };
        if !todo.is_empty() {
            let fresh = self.fetch(&todo)?;
            let mut cache = self.cache.lock().unwrap();
            for (text, vector) in todo.iter().zip(fresh) {
                cache.insert(text_digest(text), vector);
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(digests.iter().map(|d| cache[d].clone()).collect())
    }
}

// ---------------------------------------------------------------------------
// Bag assembly
// ---------------------------------------------------------------------------

/// Text form of an instance fed to the embedding backend.
pub fn instance_text(instance: &DistortionInstance) -> String {
    format!("{}: {}", instance.type_label, instance.relevant_text)
}

/// How per-instance weights are derived during assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SalienceWeighting {
    /// Equal weight over real instances (salience ablated).
    Uniform,
    /// Normalized salience distribution; the standard configuration.
    Normalized,
    /// Raw model scores, unnormalized; research flag, weights need not sum
    /// to one.
    Raw,
}

impl SalienceWeighting {
    pub fn from_use_salience(use_salience: bool) -> Self {
        if use_salience {
            SalienceWeighting::Normalized
        } else {
            SalienceWeighting::Uniform
        }
    }
}

/// Model-ready bag: sentence vector, padded instance matrix, and aligned
/// mask/weight/target vectors. The target participates in the loss only and
/// is never part of the model input.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedBag {
    pub utterance_ref: String,
    /// Sentence embedding, length d_e.
    pub z: Array1<f64>,
    /// Instance embeddings, N_max rows, zero-padded.
    pub x: Array2<f64>,
    /// 1.0 on real rows, 0.0 on padding.
    pub mask: Array1<f64>,
    /// Instance weights; 0.0 on padding.
    pub p: Array1<f64>,
    /// One-hot gold label, length C.
    pub y: Array1<f64>,
    pub label_index: usize,
}

impl EmbeddedBag {
    pub fn num_real(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.0).count()
    }
}

/// Corpus-wide padding width.
pub fn max_instances(bags: &[Bag]) -> usize {
    bags.iter().map(Bag::len).max().unwrap_or(0)
}

pub fn assemble(
    utterance_text: &str,
    bag: &Bag,
    backend: &dyn Embedder,
    n_max: usize,
    weighting: SalienceWeighting,
    schema: &LabelSchema,
) -> Result<EmbeddedBag, EmbedError> {
    let n = bag.len();
    if n > n_max {
        return Err(EmbedError::BagOverflow {
            utterance_id: bag.utterance_ref.clone(),
            len: n,
            n_max,
        });
    }
    let d_e = backend.dimension();

    let z = Array1::from(backend.embed(utterance_text)?);

    let mut x = Array2::zeros((n_max, d_e));
    let texts: Vec<String> = bag.instances.iter().map(instance_text).collect();
    let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    for (i, v) in backend.embed_batch(&text_refs)?.into_iter().enumerate() {
        if v.len() != d_e {
            return Err(EmbedError::DimensionMismatch {
                expected: d_e,
                got: v.len(),
            });
        }
        x.row_mut(i).assign(&Array1::from(v));
    }

    let mut mask = Array1::zeros(n_max);
    let mut p = Array1::zeros(n_max);
    for i in 0..n {
        mask[i] = 1.0;
        p[i] = match weighting {
            SalienceWeighting::Uniform => 1.0 / n as f64,
            SalienceWeighting::Normalized => bag.normalized_salience[i],
            SalienceWeighting::Raw => bag.instances[i].salience_raw,
        };
    }

    let gold = &bag.gold_labels[0];
    let label_index = schema
        .index_of(gold)
        .ok_or_else(|| EmbedError::UnknownLabel(gold.clone()))?;
    let mut y = Array1::zeros(schema.num_labels());
    y[label_index] = 1.0;

    Ok(EmbeddedBag {
        utterance_ref: bag.utterance_ref.clone(),
        z,
        x,
        mask,
        p,
        y,
        label_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Bag;

    fn instance(ty: &str, text: &str, s: f64) -> DistortionInstance {
        DistortionInstance {
            type_label: ty.to_string(),
            relevant_text: text.to_string(),
            salience_raw: s,
            provider_id: "p".to_string(),
        }
    }

    fn toy_bag(saliences: &[f64]) -> Bag {
        let instances: Vec<DistortionInstance> = saliences
            .iter()
            .enumerate()
            .map(|(i, &s)| instance("Labeling", &format!("span {i}"), s))
            .collect();
        Bag {
            utterance_ref: "u1".to_string(),
            gold_labels: vec!["Labeling".to_string()],
            normalized_salience: crate::bag::normalize_salience(saliences),
            instances,
        }
    }

    #[test]
    fn test_hash_is_deterministic_unit_norm() {
        let backend = TestHashEmbedder::new(384);
        let a = backend.embed("a").unwrap();
        let b = backend.embed("a").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 384);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-9);
        assert_ne!(a, backend.embed("b").unwrap());
    }

    #[test]
    fn instance_text_uses_colon_space_separator() {
        assert_eq!(
            instance_text(&instance("Labeling", "I'm definitely lacking.", 0.3)),
            "Labeling: I'm definitely lacking."
        );
        assert_eq!(
            instance_text(&instance("Should Statements", "I must do better.", 0.4)),
            "Should Statements: I must do better."
        );
    }

    #[test]
    fn precomputed_file_round_trips_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.bin");
        let entries = vec![
            ("hello".to_string(), vec![1.5f32, -2.25, 0.125]),
            ("world".to_string(), vec![0.0f32, 3.0, -1.0]),
            ("third".to_string(), vec![9.0f32, 8.0, 7.0]),
        ];
        write_embedding_file(&path, 3, &entries).unwrap();

        let backend = PrecomputedFileEmbedder::load(&path).unwrap();
        assert_eq!(backend.dimension(), 3);
        assert_eq!(backend.embed("hello").unwrap(), vec![1.5, -2.25, 0.125]);
        assert_eq!(backend.embed("world").unwrap(), vec![0.0, 3.0, -1.0]);
        assert!(matches!(
            backend.embed("unknown"),
            Err(EmbedError::MissingEmbedding { .. })
        ));
    }

    #[test]
    fn embedding_file_layout_is_pinned() {
        // Byte-for-byte check of the on-disk format so external producers
        // can write it: CGEB, version, dim, count, digest, LE f32 payload.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.bin");
        write_embedding_file(&path, 2, &[("hi".to_string(), vec![1.0f32, 2.0])]).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut expected = Vec::new();
        expected.extend_from_slice(b"CGEB");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        let mut hasher = Sha256::new();
        hasher.update(b"hi");
        expected.extend_from_slice(&hasher.finalize());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn manifest_lists_digest_per_text() {
        let entries = vec![("hi".to_string(), vec![1.0f32, 2.0])];
        let mut buf = Vec::new();
        write_embedding_manifest(&mut buf, &entries).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let row: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(row["text"], "hi");
        assert_eq!(row["digest"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn http_backend_surfaces_transport_errors() {
        // Nothing listens on this port; the error must be Transport, fast.
        let backend = HttpEmbedder::new("http://127.0.0.1:1/embed", 4);
        assert!(matches!(
            backend.embed("text"),
            Err(EmbedError::Transport(_))
        ));
    }

    #[test]
    fn assemble_pads_masks_and_one_hot_encodes() {
        let schema = LabelSchema::koacd();
        let backend = TestHashEmbedder::new(8);
        let bag = toy_bag(&[0.4, 0.4, 0.2]);
        let eb = assemble("the sentence", &bag, &backend, 5, SalienceWeighting::Normalized, &schema)
            .unwrap();

        assert_eq!(eb.x.nrows(), 5);
        assert_eq!(eb.mask.to_vec(), vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(eb.x.row(3).iter().all(|&v| v == 0.0));
        assert!(eb.x.row(4).iter().all(|&v| v == 0.0));
        assert_eq!(eb.p[3], 0.0);
        assert!((eb.p.sum() - 1.0).abs() <= 1e-9);

        let label_idx = schema.index_of("Labeling").unwrap();
        assert_eq!(eb.label_index, label_idx);
        assert_eq!(eb.y[label_idx], 1.0);
        assert_eq!(eb.y.sum(), 1.0);
    }

    #[test]
    fn assemble_weighting_modes() {
        let schema = LabelSchema::koacd();
        let backend = TestHashEmbedder::new(8);
        let bag = toy_bag(&[0.6, 0.2, 0.2]);

        let uniform =
            assemble("s", &bag, &backend, 4, SalienceWeighting::Uniform, &schema).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(uniform.p.to_vec(), vec![third, third, third, 0.0]);

        let norm =
            assemble("s", &bag, &backend, 4, SalienceWeighting::Normalized, &schema).unwrap();
        assert!((norm.p[0] - 0.6).abs() <= 1e-12);

        let raw = assemble("s", &bag, &backend, 4, SalienceWeighting::Raw, &schema).unwrap();
        assert_eq!(raw.p.to_vec(), vec![0.6, 0.2, 0.2, 0.0]);

        assert_eq!(
            SalienceWeighting::from_use_salience(true),
            SalienceWeighting::Normalized
        );
        assert_eq!(
            SalienceWeighting::from_use_salience(false),
            SalienceWeighting::Uniform
        );
    }

    #[test]
    fn assemble_rejects_oversized_bags() {
        let schema = LabelSchema::koacd();
        let backend = TestHashEmbedder::new(8);
        let bag = toy_bag(&[0.5, 0.5]);
        assert!(matches!(
            assemble("s", &bag, &backend, 1, SalienceWeighting::Uniform, &schema),
            Err(EmbedError::BagOverflow { .. })
        ));
    }

    #[test]
    fn assemble_is_deterministic() {
        let schema = LabelSchema::koacd();
        let backend = TestHashEmbedder::new(16);
        let bag = toy_bag(&[0.3, 0.7]);
        let a = assemble("s", &bag, &backend, 3, SalienceWeighting::Normalized, &schema).unwrap();
        let b = assemble("s", &bag, &backend, 3, SalienceWeighting::Normalized, &schema).unwrap();
        assert_eq!(a, b);
    }
}
