//! Text encoders producing token-embedding matrices and pooled vectors, plus
//! the dense fusion layer that combines atom and marker embeddings into the
//! Atom-Marker Representation.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("encode called with no texts or an empty text")]
    EmptyInput,
    #[error("text {index} has {tokens} tokens, over the {max_tokens}-token limit")]
    TokenLimitExceeded {
        index: usize,
        tokens: usize,
        max_tokens: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed embedding file at line {line}: {detail}")]
    MalformedEmbeddingFile { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// GeLU, tanh approximation. Both encoder backends and the classifier head use
// this exact form so checkpoints are backend-agnostic.
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// How a token matrix becomes one fixed-size vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Mean,
    FirstToken,
}

impl FromStr for Pooling {
    type Err = EncodingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "first_token" => Ok(Pooling::FirstToken),
            other => Err(EncodingError::MalformedEmbeddingFile {
                line: 0,
                detail: format!("unknown pooling `{other}`"),
            }),
        }
    }
}

/// An m'×d token-embedding matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Vec<f64>,
    pub token_count: usize,
    pub dim: usize,
}

impl EmbeddingMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn pool(&self, pooling: Pooling) -> Vec<f64> {
        match pooling {
            Pooling::FirstToken => self.row(0).to_vec(),
            Pooling::Mean => {
                let mut out = vec![0.0; self.dim];
                for t in 0..self.token_count {
                    let row = self.row(t);
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                let inv = 1.0 / self.token_count as f64;
                for o in &mut out {
                    *o *= inv;
                }
                out
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Token → embedding-row mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
enum Vocab {
    /// Hashed buckets; row 0 is reserved for token-free text.
    HashBuckets { buckets: usize },
    /// Explicit word table; row 0 is the unknown-word row.
    WordTable { index: BTreeMap<String, usize> },
}

/// A trainable token-embedding encoder. The `tiny` backend hashes tokens into
/// buckets and needs no external data; the `pretrained` backend loads a
/// word-vector table exported from any real-scale encoder. Both expose the
/// same matrix-and-pool interface and the same trainable parameter table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingEncoder {
    pub name: String,
    dim: usize,
    max_tokens: usize,
    vocab: Vocab,
    rows: usize,
    table: Vec<f64>,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl EmbeddingEncoder {
    /// Hash-bucket encoder with a seeded uniform table.
    ///
    /// The init range is wide on purpose: mean pooling over a document's ~m
    /// distinct tokens divides coordinates by roughly sqrt(m), and the
    /// reference learning rate is small, so pooled vectors need O(1)
    /// coordinates for optimizer steps to move the logits meaningfully.
    pub fn tiny(dim: usize, buckets: usize, max_tokens: usize, seed: u64) -> Self {
        const INIT_RANGE: f64 = 32.0;
        let rows = buckets.max(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..rows * dim)
            .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
            .collect();
        EmbeddingEncoder {
            name: format!("tiny-{dim}d"),
            dim,
            max_tokens,
            vocab: Vocab::HashBuckets { buckets: rows },
            rows,
            table,
        }
    }

    /// Loads a word-vector file (one `word v1 v2 ... vd` line per word).
    /// Row 0 becomes the unknown-word row, initialized to the vocabulary mean.
    pub fn from_embedding_file(
        path: impl AsRef<Path>,
        max_tokens: usize,
    ) -> Result<Self, EncodingError> {
        let reader = BufReader::new(File::open(path.as_ref())?);
        let mut index = BTreeMap::new();
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        let mut dim = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| EncodingError::MalformedEmbeddingFile {
                    line: i + 1,
                    detail: "missing word".into(),
                })?
                .to_string();
            let vec: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| EncodingError::MalformedEmbeddingFile {
                    line: i + 1,
                    detail: e.to_string(),
                })?;
            if vec.is_empty() {
                return Err(EncodingError::MalformedEmbeddingFile {
                    line: i + 1,
                    detail: "no vector components".into(),
                });
            }
            if dim == 0 {
                dim = vec.len();
            } else if vec.len() != dim {
                return Err(EncodingError::MalformedEmbeddingFile {
                    line: i + 1,
                    detail: format!("expected {dim} components, got {}", vec.len()),
                });
            }
            index.insert(word, vectors.len() + 1);
            vectors.push(vec);
        }
        if vectors.is_empty() {
            return Err(EncodingError::MalformedEmbeddingFile {
                line: 0,
                detail: "empty embedding file".into(),
            });
        }
        let rows = vectors.len() + 1;
        let mut table = vec![0.0; rows * dim];
        // Unknown-word row: vocabulary mean.
        for v in &vectors {
            for (j, x) in v.iter().enumerate() {
                table[j] += x / vectors.len() as f64;
            }
        }
        for (r, v) in vectors.into_iter().enumerate() {
            table[(r + 1) * dim..(r + 2) * dim].copy_from_slice(&v);
        }
        Ok(EmbeddingEncoder {
            name: format!("pretrained-{dim}d"),
            dim,
            max_tokens,
            vocab: Vocab::WordTable { index },
            rows,
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.table[r * self.dim..(r + 1) * self.dim]
    }

    fn token_row(&self, token: &str) -> usize {
        match &self.vocab {
            Vocab::HashBuckets { buckets } => {
                let mut h = DefaultHasher::new();
                token.hash(&mut h);
                1 + (h.finish() as usize) % (buckets - 1)
            }
            Vocab::WordTable { index } => index.get(token).copied().unwrap_or(0),
        }
    }

    /// Maps text to embedding-row indices, truncating at `max_tokens`.
    /// Token-free text maps to the reserved row 0 so the matrix is never empty.
    pub fn token_rows(&self, text: &str) -> (Vec<usize>, bool) {
        let tokens = tokenize(text);
        let truncated = tokens.len() > self.max_tokens;
        let mut rows: Vec<usize> = tokens
            .iter()
            .take(self.max_tokens)
            .map(|t| self.token_row(t))
            .collect();
        if rows.is_empty() {
            rows.push(0);
        }
        (rows, truncated)
    }

    /// Mean of the table rows for `rows` (the mean-pooled document vector).
    pub fn mean_rows(&self, rows: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &r in rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        for o in &mut out {
            *o *= inv;
        }
        out
    }

    /// Embeds one non-empty text as an m'×d matrix.
    pub fn embed(&self, text: &str) -> Result<EmbeddingMatrix, EncodingError> {
        if text.trim().is_empty() {
            return Err(EncodingError::EmptyInput);
        }
        let (rows, _) = self.token_rows(text);
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        for &r in &rows {
            values.extend_from_slice(self.row(r));
        }
        Ok(EmbeddingMatrix {
            values,
            token_count: rows.len(),
            dim: self.dim,
        })
    }
}

/// Pooled vectors for a batch of texts plus the indices that were truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutput {
    pub vectors: Vec<Vec<f64>>,
    pub truncated: Vec<usize>,
}

/// Encodes each text to one pooled d-vector. Over-long texts are truncated
/// and reported in `truncated` rather than failing.
pub fn encode(
    texts: &[String],
    encoder: &EmbeddingEncoder,
    pooling: Pooling,
) -> Result<EncodeOutput, EncodingError> {
    if texts.is_empty() {
        return Err(EncodingError::EmptyInput);
    }
    let mut vectors = Vec::with_capacity(texts.len());
    let mut truncated = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        if text.trim().is_empty() {
            return Err(EncodingError::EmptyInput);
        }
        let (rows, was_truncated) = encoder.token_rows(text);
        if was_truncated {
            truncated.push(i);
        }
        let vector = match pooling {
            Pooling::Mean => encoder.mean_rows(&rows),
            Pooling::FirstToken => encoder.row(rows[0]).to_vec(),
        };
        vectors.push(vector);
    }
    Ok(EncodeOutput { vectors, truncated })
}

/// Like `encode`, but treats truncation as an error.
pub fn encode_strict(
    texts: &[String],
    encoder: &EmbeddingEncoder,
    pooling: Pooling,
) -> Result<EncodeOutput, EncodingError> {
    let out = encode(texts, encoder, pooling)?;
    if let Some(&index) = out.truncated.first() {
        return Err(EncodingError::TokenLimitExceeded {
            index,
            tokens: tokenize(&texts[index]).len(),
            max_tokens: encoder.max_tokens(),
        });
    }
    Ok(out)
}

/// Dense fusion layer: `gelu(W · [e_atom; e_marker] + b)`.
///
/// Weights are (2d × d_f) row-major, initialized uniform in
/// ±sqrt(6 / (2d + d_f)) from a seeded stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub d_in: usize,
    pub d_f: usize,
}

impl FusionParams {
    pub fn init(d: usize, d_f: usize, seed: u64) -> Self {
        let d_in = 2 * d;
        let bound = (6.0 / (d_in + d_f) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..d_in * d_f)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        FusionParams {
            weights,
            bias: vec![0.0; d_f],
            d_in,
            d_f,
        }
    }

    /// Pre-activation `z = W·x + b` for a concatenated input.
    pub fn preactivation(&self, concat: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, x) in concat.iter().enumerate() {
            if *x == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.d_f..(i + 1) * self.d_f];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += x * w;
            }
        }
        z
    }
}

/// The fused Atom-Marker Representation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRepresentation {
    pub vector: Vec<f64>,
}

/// Fuses the atom and marker embeddings: concatenation (atom first), one
/// dense layer, then GeLU.
pub fn fuse_amr(
    e_atom: &[f64],
    e_marker: &[f64],
    params: &FusionParams,
) -> Result<FusedRepresentation, EncodingError> {
    if e_atom.len() != e_marker.len() {
        return Err(EncodingError::DimensionMismatch {
            expected: e_atom.len(),
            got: e_marker.len(),
        });
    }
    if e_atom.len() + e_marker.len() != params.d_in {
        return Err(EncodingError::DimensionMismatch {
            expected: params.d_in,
            got: e_atom.len() + e_marker.len(),
        });
    }
    let mut concat = Vec::with_capacity(params.d_in);
    concat.extend_from_slice(e_atom);
    concat.extend_from_slice(e_marker);
    let z = params.preactivation(&concat);
    Ok(FusedRepresentation {
        vector: z.into_iter().map(gelu).collect(),
    })
}
