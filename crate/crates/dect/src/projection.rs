//! 2-D embedding projection for cluster visualization: exact PCA and a
//! seed-controlled t-SNE, plus plot-ready import/export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("degenerate input: all vectors identical")]
    DegenerateInput,
    #[error("invalid projection input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

impl FromStr for ProjectionMethod {
    type Err = ProjectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pca" => Ok(ProjectionMethod::Pca),
            "tsne" => Ok(ProjectionMethod::Tsne),
            other => Err(ProjectionError::InvalidInput(format!(
                "unknown method `{other}` (expected pca or tsne)"
            ))),
        }
    }
}

/// Identity tags carried through the projection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointMeta {
    pub id: String,
    pub label: String,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub method: ProjectionMethod,
    pub points: Vec<ProjectedPoint>,
}

/// Seed and perplexity knobs (t-SNE only; PCA is exact and parameter-free).
#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    pub seed: u64,
    pub perplexity: f64,
    pub iterations: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            seed: 0,
            perplexity: 30.0,
            iterations: 500,
        }
    }
}

/// Mean vector and top-2 principal components of a dataset.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
}

impl PcaModel {
    pub fn project(&self, v: &[f64]) -> (f64, f64) {
        let mut x = 0.0;
        let mut y = 0.0;
        for (i, vi) in v.iter().enumerate() {
            let c = vi - self.mean[i];
            x += c * self.components[0][i];
            y += c * self.components[1][i];
        }
        (x, y)
    }

    /// Reconstructs a point from its 2-D coordinates.
    pub fn reconstruct(&self, x: f64, y: f64) -> Vec<f64> {
        self.mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + x * self.components[0][i] + y * self.components[1][i])
            .collect()
    }
}

fn validate_input(vectors: &[Vec<f64>]) -> Result<usize, ProjectionError> {
    if vectors.len() < 2 {
        return Err(ProjectionError::InvalidInput(format!(
            "need at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let d = vectors[0].len();
    if d < 2 {
        return Err(ProjectionError::InvalidInput(format!(
            "need dimension >= 2, got {d}"
        )));
    }
    if vectors.iter().any(|v| v.len() != d) {
        return Err(ProjectionError::InvalidInput(
            "inconsistent vector dimensions".to_string(),
        ));
    }
    if vectors.iter().all(|v| v == &vectors[0]) {
        return Err(ProjectionError::DegenerateInput);
    }
    Ok(d)
}

/// Exact top-2 PCA of mean-centered data. Component signs follow a fixed
/// convention (largest-magnitude entry positive) so output is deterministic.
pub fn pca_top2(vectors: &[Vec<f64>]) -> Result<PcaModel, ProjectionError> {
    let d = validate_input(vectors)?;
    let n = vectors.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for v in vectors {
        let centered: Vec<f64> = v.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            if centered[i] == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut components = [vec![0.0; d], vec![0.0; d]];
    let mut eigenvalues = [0.0; 2];
    for k in 0..2 {
        let col = eig.eigenvectors.column(order[k]);
        let mut comp: Vec<f64> = col.iter().cloned().collect();
        // Sign convention: the entry with the largest magnitude is positive.
        let pivot = comp
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if comp[pivot] < 0.0 {
            comp.iter_mut().for_each(|c| *c = -*c);
        }
        components[k] = comp;
        eigenvalues[k] = eig.eigenvalues[order[k]].max(0.0);
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

fn squared_distances(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut d2 = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let dist: f64 = vectors[i]
                .iter()
                .zip(&vectors[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2[i][j] = dist;
            d2[j][i] = dist;
        }
    }
    d2
}

// Binary search for the Gaussian bandwidth that hits the target perplexity.
fn conditional_probabilities(d2_row: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let n = d2_row.len();
    let target = perplexity.ln();
    let mut beta = 1.0;
    let (mut beta_min, mut beta_max) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut probs = vec![0.0; n];
    for _ in 0..64 {
        let mut sum = 0.0;
        for (j, p) in probs.iter_mut().enumerate() {
            *p = if j == i { 0.0 } else { (-beta * d2_row[j]).exp() };
            sum += *p;
        }
        if sum <= 0.0 {
            sum = f64::MIN_POSITIVE;
        }
        let mut entropy = 0.0;
        for p in probs.iter_mut() {
            *p /= sum;
            if *p > 1e-12 {
                entropy -= *p * p.ln();
            }
        }
        let diff = entropy - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            beta_min = beta;
            beta = if beta_max.is_finite() {
                (beta + beta_max) / 2.0
            } else {
                beta * 2.0
            };
        } else {
            beta_max = beta;
            beta = if beta_min.is_finite() {
                (beta + beta_min) / 2.0
            } else {
                beta / 2.0
            };
        }
    }
    probs
}

/// Standard t-SNE with early exaggeration and momentum, O(n²) per iteration.
#[allow(clippy::needless_range_loop)] // symmetric-matrix updates want raw indices
pub fn tsne_top2(
    vectors: &[Vec<f64>],
    opts: &ProjectionOptions,
) -> Result<Vec<(f64, f64)>, ProjectionError> {
    validate_input(vectors)?;
    let n = vectors.len();
    let perplexity = opts.perplexity.min((n as f64 - 1.0) / 3.0).max(2.0);
    let d2 = squared_distances(vectors);

    let mut p = vec![vec![0.0; n]; n];
    for (i, (p_row, d_row)) in p.iter_mut().zip(&d2).enumerate() {
        *p_row = conditional_probabilities(d_row, i, perplexity);
    }
    // Symmetrize.
    for i in 0..n {
        for j in i + 1..n {
            let v = (p[i][j] + p[j][i]) / (2.0 * n as f64);
            p[i][j] = v.max(1e-12);
            p[j][i] = p[i][j];
        }
        p[i][i] = 1e-12;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut y: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen_range(-1e-2..1e-2), rng.gen_range(-1e-2..1e-2)))
        .collect();
    let mut vel = vec![(0.0, 0.0); n];
    let lr = 200.0;
    let exaggeration_until = opts.iterations / 5;

    for iter in 0..opts.iterations {
        let exaggeration = if iter < exaggeration_until { 12.0 } else { 1.0 };
        let momentum = if iter < opts.iterations / 2 { 0.5 } else { 0.8 };

        // Student-t affinities in the embedding.
        let mut q_num = vec![vec![0.0; n]; n];
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i].0 - y[j].0;
                let dy = y[i].1 - y[j].1;
                let num = 1.0 / (1.0 + dx * dx + dy * dy);
                q_num[i][j] = num;
                q_num[j][i] = num;
                q_sum += 2.0 * num;
            }
        }
        let q_sum = q_sum.max(1e-12);

        for i in 0..n {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (q_num[i][j] / q_sum).max(1e-12);
                let coef = 4.0 * (exaggeration * p[i][j] - q) * q_num[i][j];
                gx += coef * (y[i].0 - y[j].0);
                gy += coef * (y[i].1 - y[j].1);
            }
            vel[i].0 = momentum * vel[i].0 - lr * gx;
            vel[i].1 = momentum * vel[i].1 - lr * gy;
        }
        for i in 0..n {
            y[i].0 += vel[i].0;
            y[i].1 += vel[i].1;
        }
    }
    Ok(y)
}

/// Projects labeled embeddings to 2-D points carrying their metadata.
pub fn project_embeddings(
    vectors: &[Vec<f64>],
    meta: &[PointMeta],
    method: ProjectionMethod,
    opts: &ProjectionOptions,
) -> Result<Projection2D, ProjectionError> {
    if vectors.len() != meta.len() {
        return Err(ProjectionError::InvalidInput(format!(
            "{} vectors but {} metadata entries",
            vectors.len(),
            meta.len()
        )));
    }
    let coords: Vec<(f64, f64)> = match method {
        ProjectionMethod::Pca => {
            let model = pca_top2(vectors)?;
            vectors.iter().map(|v| model.project(v)).collect()
        }
        ProjectionMethod::Tsne => tsne_top2(vectors, opts)?,
    };
    let points = coords
        .into_iter()
        .zip(meta)
        .map(|((x, y), m)| ProjectedPoint {
            id: m.id.clone(),
            x,
            y,
            label: m.label.clone(),
            strategy: m.strategy.clone(),
        })
        .collect();
    Ok(Projection2D { method, points })
}

/// One embedding row in the interchange JSONL format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub label: String,
    pub strategy: String,
    pub vector: Vec<f64>,
}

pub fn write_embeddings_jsonl(
    records: &[EmbeddingRecord],
    path: impl AsRef<Path>,
) -> Result<(), ProjectionError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_jsonl(
    path: impl AsRef<Path>,
) -> Result<Vec<EmbeddingRecord>, ProjectionError> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| {
            ProjectionError::InvalidInput(format!("line {}: {e}", i + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Writes `id,x,y,label,strategy` CSV, one row per projected point.
pub fn write_projection_csv(
    projection: &Projection2D,
    path: impl AsRef<Path>,
) -> Result<(), ProjectionError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "id,x,y,label,strategy")?;
    for p in &projection.points {
        writeln!(w, "{},{},{},{},{}", p.id, p.x, p.y, p.label, p.strategy)?;
    }
    w.flush()?;
    Ok(())
}
