//! The semantic mapping: token embeddings, k-means clustering, and the
//! resulting token -> cluster assignment that anchors the watermark.
//!
//! Real encoder embeddings are out of scope at desk scale; rows come either
//! from a synthetic Gaussian mixture or from an external text file, and are
//! always l2-normalized so Euclidean distance orders like cosine similarity.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::TokenId;
use crate::error::{Error, Result};
use crate::prf::SplitMix64;
use crate::sampling::standard_normal;

/// One l2-normalized embedding row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: Vec<Vec<f64>>,
    dim: usize,
}

impl EmbeddingMatrix {
    fn new(rows: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidEmbedding(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    row.len()
                )));
            }
        }
        let mut m = EmbeddingMatrix { rows, dim };
        m.normalize_rows()?;
        Ok(m)
    }

    fn normalize_rows(&mut self) -> Result<()> {
        for (i, row) in self.rows.iter_mut().enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::InvalidEmbedding(format!("row {i} has zero norm")));
            }
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.rows[token]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Deterministic synthetic embeddings: a Gaussian mixture around
/// `true_clusters` unit-norm centers with per-coordinate noise `spread`,
/// l2-normalized. Tokens join mixture components round-robin, so component
/// sizes differ by at most one.
///
/// Centers are the signed standard basis vectors while they last (perfectly
/// separated); beyond `2 * dim` components, additional centers are random
/// unit vectors and separation is no longer guaranteed.
pub fn synth_embeddings(
    vocab_size: usize,
    dim: usize,
    true_clusters: usize,
    spread: f64,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if dim < 2 {
        return Err(Error::InvalidConfig("embedding dim must be at least 2".into()));
    }
    if vocab_size == 0 || true_clusters == 0 || true_clusters > vocab_size {
        return Err(Error::InvalidConfig(format!(
            "need 0 < true_clusters ({true_clusters}) <= vocab_size ({vocab_size})"
        )));
    }
    if spread.is_nan() || spread < 0.0 {
        return Err(Error::InvalidConfig("spread must be non-negative".into()));
    }

    let mut stream = SplitMix64::new(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(true_clusters);
    for c in 0..true_clusters {
        if c < 2 * dim {
            let mut center = vec![0.0; dim];
            center[c % dim] = if c < dim { 1.0 } else { -1.0 };
            centers.push(center);
        } else {
            let mut center: Vec<f64> = (0..dim).map(|_| standard_normal(&mut stream)).collect();
            let norm = center.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                center[0] = 1.0;
            } else {
                for x in center.iter_mut() {
                    *x /= norm;
                }
            }
            centers.push(center);
        }
    }

    let mut rows = Vec::with_capacity(vocab_size);
    for token in 0..vocab_size {
        let center = &centers[token % true_clusters];
        let row: Vec<f64> = center
            .iter()
            .map(|&c| c + spread * standard_normal(&mut stream))
            .collect();
        rows.push(row);
    }
    EmbeddingMatrix::new(rows, dim)
}

/// Ground-truth component of a token under the round-robin assignment used
/// by [`synth_embeddings`]; handy for recovery tests.
pub fn synth_ground_truth(vocab_size: usize, true_clusters: usize) -> Vec<u32> {
    (0..vocab_size).map(|t| (t % true_clusters) as u32).collect()
}

/// The semantic mapping f: token -> cluster index in [0, K), plus the
/// centroids it came from and the per-cluster member lists.
///
/// Invariants: every cluster is non-empty (f is surjective), the member
/// lists partition the vocabulary, and each token sits with its nearest
/// centroid (ties to the smallest cluster index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMap {
    vocab_size: usize,
    k: usize,
    kmeans_seed: u64,
    assignment: Vec<u32>,
    centroids: Vec<Vec<f64>>,
    members: Vec<Vec<u32>>,
}

impl ClusterMap {
    fn from_parts(
        assignment: Vec<u32>,
        centroids: Vec<Vec<f64>>,
        k: usize,
        kmeans_seed: u64,
    ) -> Result<Self> {
        let vocab_size = assignment.len();
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); k];
        for (token, &c) in assignment.iter().enumerate() {
            if (c as usize) >= k {
                return Err(Error::InvalidInput(format!(
                    "assignment {c} out of range for K={k}"
                )));
            }
            members[c as usize].push(token as u32);
        }
        if members.iter().any(|m| m.is_empty()) {
            return Err(Error::InvalidInput(
                "cluster map must be surjective: every cluster non-empty".into(),
            ));
        }
        Ok(ClusterMap {
            vocab_size,
            k,
            kmeans_seed,
            assignment,
            centroids,
            members,
        })
    }

    /// Build directly from a known assignment, with one-hot centroids. Used
    /// by the oracle instances and tests, where no embedding exists.
    pub fn from_assignment(assignment: Vec<u32>, k: usize) -> Result<Self> {
        let centroids: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                let mut row = vec![0.0; k];
                row[c] = 1.0;
                row
            })
            .collect();
        Self::from_parts(assignment, centroids, k, 0)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kmeans_seed(&self) -> u64 {
        self.kmeans_seed
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Sorted member tokens of cluster `c`.
    pub fn members(&self, c: usize) -> &[u32] {
        &self.members[c]
    }

    /// Cluster of a token, validating the id against the vocabulary.
    pub fn cluster_of(&self, token: TokenId) -> Result<usize> {
        self.assignment
            .get(token.index())
            .map(|&c| c as usize)
            .ok_or(Error::InvalidToken {
                token: token.0,
                vocab_size: self.vocab_size,
            })
    }

    /// Cluster image of a whole token sequence.
    pub fn clusters_of(&self, tokens: &[TokenId]) -> Result<Vec<u32>> {
        tokens
            .iter()
            .map(|&t| self.cluster_of(t).map(|c| c as u32))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("serialize cluster map: {e}")))?;
        let mut file = std::fs::File::create(path)?;
        file.write_all(json.as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map: ClusterMap = serde_json::from_str(&text)
            .map_err(|e| Error::ParseError(format!("cluster map: {e}")))?;
        // re-derive members so hand-edited files cannot smuggle a broken partition
        Self::from_parts(map.assignment, map.centroids, map.k, map.kmeans_seed)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid of a point, ties broken by smallest cluster index.
fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// k-means++ seeding driven by a SplitMix64 stream: first center uniform,
/// later centers proportional to squared distance from the chosen set, each
/// drawn with a single uniform walked over token index order.
fn kmeans_plus_plus(rows: &[Vec<f64>], k: usize, stream: &mut SplitMix64) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    chosen.push(stream.next_below(n as u64) as usize);
    let mut d2: Vec<f64> = rows
        .iter()
        .map(|r| squared_distance(r, &rows[chosen[0]]))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = stream.next_f64() * total;
            let mut cum = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                cum += w;
                if target < cum && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining points coincide with chosen centers; take the
            // smallest unchosen index for determinism
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, row) in rows.iter().enumerate() {
            let d = squared_distance(row, &rows[next]);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen.iter().map(|&i| rows[i].clone()).collect()
}

/// Reassign the farthest point from its own centroid into each empty
/// cluster, keeping the mapping surjective. Only clusters with at least two
/// members donate. Ties go to the smallest token index.
fn repair_empty_clusters(
    assignment: &mut [u32],
    centroids: &mut [Vec<f64>],
    rows: &[Vec<f64>],
    k: usize,
) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c as usize] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut farthest: Option<(usize, f64)> = None;
        for (token, &c) in assignment.iter().enumerate() {
            if counts[c as usize] < 2 {
                continue;
            }
            let d = squared_distance(&rows[token], &centroids[c as usize]);
            if farthest.is_none_or(|(_, best)| d > best) {
                farthest = Some((token, d));
            }
        }
        let Some((token, _)) = farthest else {
            return;
        };
        assignment[token] = empty as u32;
        centroids[empty] = rows[token].clone();
    }
}

/// Lloyd's algorithm with k-means++ seeding, fully determined by
/// `(emb, k, kmeans_seed, max_iters, tol)`.
pub fn build_cluster_map(
    emb: &EmbeddingMatrix,
    k: usize,
    kmeans_seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterMap> {
    let n = emb.vocab_size();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!(
            "need 0 < K ({k}) <= vocab_size ({n})"
        )));
    }
    if max_iters == 0 || tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidConfig(
            "max_iters must be positive and tol must be > 0".into(),
        ));
    }

    // defensive copy + renormalization; EmbeddingMatrix already guarantees it
    let mut rows = emb.rows().to_vec();
    for row in rows.iter_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
    }

    let mut stream = SplitMix64::new(kmeans_seed);
    let mut centroids = kmeans_plus_plus(&rows, k, &mut stream);
    let mut assignment = vec![0u32; n];

    for _ in 0..max_iters {
        for (token, row) in rows.iter().enumerate() {
            assignment[token] = nearest_centroid(row, &centroids) as u32;
        }
        repair_empty_clusters(&mut assignment, &mut centroids, &rows, k);

        let mut sums = vec![vec![0.0; emb.dim()]; k];
        let mut counts = vec![0usize; k];
        for (token, &c) in assignment.iter().enumerate() {
            counts[c as usize] += 1;
            for (s, x) in sums[c as usize].iter_mut().zip(&rows[token]) {
                *s += x;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            movement = movement.max(squared_distance(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if movement < tol {
            break;
        }
    }

    // final assignment against the final centroids, so the nearest-centroid
    // invariant holds for the returned map
    for (token, row) in rows.iter().enumerate() {
        assignment[token] = nearest_centroid(row, &centroids) as u32;
    }
    repair_empty_clusters(&mut assignment, &mut centroids, &rows, k);

    ClusterMap::from_parts(assignment, centroids, k, kmeans_seed)
}

/// Read the embedding file format: a `vocab_size dim` header line, then one
/// line of `dim` decimal floats per token. Rows are l2-normalized on load.
pub fn load_external_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::ParseError("empty embedding file".into()))??;
    let mut parts = header.split_whitespace();
    let vocab_size: usize = parts
        .next()
        .ok_or_else(|| Error::ParseError("missing vocab_size in header".into()))?
        .parse()
        .map_err(|_| Error::ParseError(format!("bad vocab_size in header {header:?}")))?;
    let dim: usize = parts
        .next()
        .ok_or_else(|| Error::ParseError("missing dim in header".into()))?
        .parse()
        .map_err(|_| Error::ParseError(format!("bad dim in header {header:?}")))?;
    if parts.next().is_some() {
        return Err(Error::ParseError(format!(
            "header must be exactly \"vocab_size dim\", got {header:?}"
        )));
    }

    let mut rows = Vec::with_capacity(vocab_size);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::ParseError(format!("bad float {tok:?} on row {i}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(Error::ParseError(format!(
                "row {i} has {} values, header says {dim}",
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.len() != vocab_size {
        return Err(Error::ParseError(format!(
            "header claims {vocab_size} rows, file has {}",
            rows.len()
        )));
    }
    EmbeddingMatrix::new(rows, dim)
}
