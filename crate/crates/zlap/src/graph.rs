//! Bimodal kNN graph over class (text) and image nodes.
//!
//! Node layout is fixed: text nodes occupy indices `0..C`, image nodes
//! `C..C+M`. The directed adjacency `S` is built from two separate searches
//! per image, one over the other images and one over the class vectors.
//! Image-to-image edges keep the raw inner product; image-to-class edges go
//! through [`power_transform`], which clips negatives and sharpens the
//! surviving similarities. Text rows never get outgoing edges, and there is
//! no diagonal.
//!
//! Searching both modalities jointly instead is available as a diagnostic
//! ([`KnnMode::Joint`]): intra-modal similarities concentrate higher than
//! cross-modal ones, so a joint search at small k returns images only and
//! the graph ends up with no image-to-text edges at all. [`KnnMode::Separate`]
//! is the production path.
//!
//! Propagation runs on the symmetrically normalized form
//! `D^(-1/2) (S + S^T) D^(-1/2)`, produced by [`symmetrize`] and
//! [`normalize_symmetric`].
//!
//! Graph files are little-endian:
//!
//! ```text
//! magic       4 bytes  "ZLGR"
//! version     u32      currently 1
//! node_count  u64
//! text_count  u64
//! nnz         u64
//! offsets     (node_count + 1) * u64
//! columns     nnz * u64
//! values      nnz * f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::embeddings::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::knn::top_k;
use crate::scalar::Scalar;

const GRAPH_MAGIC: &[u8; 4] = b"ZLGR";
const GRAPH_VERSION: u32 = 1;

/// Which candidate pools the per-image neighbor searches run over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnMode {
    /// One search over images, one over class vectors. Production path.
    Separate,
    /// Single search over the union of both pools. Diagnostic only: the
    /// modality gap starves cross-modal edges.
    Joint,
}

/// Which entries [`crate::inference::sparsify_y`] keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparsifyMode {
    /// Largest `xi` entries of every row.
    Row,
    /// Largest `xi` entries of every column.
    Column,
    /// Largest `xi * rows` entries overall.
    Global,
    /// Keep the dense matrix.
    None,
}

/// Hyperparameters for graph construction and the indicator vectors built
/// for held-out queries.
#[derive(Debug, Clone)]
pub struct GraphConfig {
    /// Neighbors per image among the other images.
    pub k_image: usize,
    /// Neighbors per image among the class vectors.
    pub k_class: usize,
    /// Exponent of the cross-modal power transform.
    pub gamma: f64,
    /// Propagation strength, strictly between 0 and 1.
    pub alpha: f64,
    /// Min-max normalize stored values before the power transform. Meant for
    /// class proxies whose similarity scale is already calibrated to images.
    pub minmax_cross_modal: bool,
    pub knn_mode: KnnMode,
    pub sparsify_mode: SparsifyMode,
    /// Retention budget for sparsification (entries per row/column, or
    /// `xi * rows` overall in global mode).
    pub xi: usize,
}

impl Default for GraphConfig {
    /// Defaults for plain text-encoded class vectors.
    fn default() -> Self {
        Self {
            k_image: 5,
            k_class: 5,
            gamma: 5.0,
            alpha: 0.3,
            minmax_cross_modal: false,
            knn_mode: KnnMode::Separate,
            sparsify_mode: SparsifyMode::Row,
            xi: 1,
        }
    }
}

impl GraphConfig {
    /// Defaults for class proxies living in the image-embedding space: wider
    /// neighborhoods, softer transform, min-max rescaling on.
    pub fn proxy_defaults() -> Self {
        Self {
            k_image: 10,
            k_class: 10,
            gamma: 3.0,
            alpha: 0.3,
            minmax_cross_modal: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie strictly between 0 and 1, got {}",
                self.alpha
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.k_image == 0 || self.k_class == 0 {
            return Err(Error::Config("neighbor counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sparse matrix in compressed sparse row form, with the bimodal node split
/// carried along. Column indices are strictly increasing within each row and
/// the diagonal is structurally absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency<T = f32> {
    node_count: usize,
    text_count: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> SparseAdjacency<T> {
    /// Assembles from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        node_count: usize,
        text_count: usize,
        triplets: &[(usize, usize, T)],
    ) -> Result<Self> {
        if text_count > node_count {
            return Err(Error::Shape(format!(
                "text_count {text_count} exceeds node_count {node_count}"
            )));
        }
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); node_count];
        for &(r, c, v) in triplets {
            if r >= node_count || c >= node_count {
                return Err(Error::Data(format!(
                    "entry ({r}, {c}) outside {node_count} nodes"
                )));
            }
            if r == c {
                return Err(Error::Data(format!("self-loop at node {r}")));
            }
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite weight at ({r}, {c})")));
            }
            rows[r].push((c, v));
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            row.dedup_by(|next, prev| {
                if next.0 == prev.0 {
                    prev.1 += next.1;
                    true
                } else {
                    false
                }
            });
        }
        Ok(Self::from_rows(node_count, text_count, rows))
    }

    /// Assembles from per-row entry lists that are already sorted by column.
    fn from_rows(node_count: usize, text_count: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        let nnz = rows.iter().map(Vec::len).sum();
        let mut offsets = Vec::with_capacity(node_count + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        offsets.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        Self { node_count, text_count, offsets, cols, vals }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of text (class) nodes; they occupy indices `0..text_count`.
    pub fn text_count(&self) -> usize {
        self.text_count
    }

    pub fn image_count(&self) -> usize {
        self.node_count - self.text_count
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let span = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn values(&self) -> &[T] {
        &self.vals
    }

    fn values_mut(&mut self) -> &mut [T] {
        &mut self.vals
    }

    /// Stored image-row entries pointing at text nodes, the edges the
    /// modality gap starves in a joint search.
    pub fn cross_modal_edge_count(&self) -> usize {
        (self.text_count..self.node_count)
            .map(|i| self.row(i).0.iter().filter(|&&c| c < self.text_count).count())
            .sum()
    }

    /// Dense `f64` copy, row-major. Meant for oracles and diagnostics at
    /// small node counts; memory is quadratic.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.node_count;
        let mut dense = vec![0.0f64; n * n];
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[i * n + c] = v.acc();
            }
        }
        dense
    }
}

/// Cross-modal edge weight: negatives are clipped to zero, then the
/// similarity is raised to `gamma`. Computed in `f64` regardless of the
/// storage scalar.
pub fn power_transform<T: Scalar>(v: T, gamma: f64) -> T {
    T::from_acc(v.acc().max(0.0).powf(gamma))
}

/// Builds the directed bimodal adjacency `S` from unit-normalized image and
/// class embeddings. Image rows get `k_image` image edges (raw similarity)
/// and `k_class` class edges (power-transformed), text rows stay empty.
///
/// With `minmax_cross_modal` set, raw similarities are stored first, all
/// stored values are min-max normalized to `[0, 1]`, and only then does the
/// power transform hit the cross-modal entries.
///
/// Neighbor counts clamp to the available pool sizes, so a tiny candidate
/// set yields fewer edges than `k * M`.
pub fn build_bimodal_adjacency<T: Scalar>(
    images: &FeatureMatrix<T>,
    classes: &FeatureMatrix<T>,
    cfg: &GraphConfig,
) -> Result<SparseAdjacency<T>> {
    cfg.validate()?;
    if images.dim() != classes.dim() {
        return Err(Error::Shape(format!(
            "image dim {} != class dim {}",
            images.dim(),
            classes.dim()
        )));
    }
    let m = images.rows();
    let c = classes.rows();
    let n = c + m;

    let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    match cfg.knn_mode {
        KnnMode::Separate => {
            let knn_u = top_k(images, images, cfg.k_image, true)?;
            let knn_w = top_k(images, classes, cfg.k_class.min(c), false)?;
            for i in 0..m {
                let row = &mut rows[c + i];
                for &(cls, sim) in knn_w.list(i) {
                    let w = if cfg.minmax_cross_modal { sim } else { power_transform(sim, cfg.gamma) };
                    row.push((cls, w));
                }
                for &(j, sim) in knn_u.list(i) {
                    row.push((c + j, sim));
                }
                row.sort_unstable_by_key(|&(col, _)| col);
            }
        }
        KnnMode::Joint => {
            // One pool of class vectors then images, mirroring the node
            // layout. The query is part of the pool, so search one deeper
            // and drop the self match.
            let mut pool = Vec::with_capacity(n * images.dim());
            for i in 0..c {
                pool.extend_from_slice(classes.row(i));
            }
            pool.extend_from_slice(images.as_slice());
            let pool = FeatureMatrix::from_vec(n, images.dim(), pool)?;
            let joint = top_k(images, &pool, (cfg.k_image + 1).min(n), false)?;
            for i in 0..m {
                let row = &mut rows[c + i];
                for &(node, sim) in joint.list(i) {
                    if node == c + i {
                        continue;
                    }
                    if row.len() == cfg.k_image {
                        break;
                    }
                    let w = if node < c && !cfg.minmax_cross_modal {
                        power_transform(sim, cfg.gamma)
                    } else {
                        sim
                    };
                    row.push((node, w));
                }
                row.sort_unstable_by_key(|&(col, _)| col);
            }
        }
    }

    let mut s = SparseAdjacency::from_rows(n, c, rows);
    if cfg.minmax_cross_modal {
        minmax_normalize_values(&mut s)?;
        let text_count = s.text_count;
        let mut entry = 0;
        for i in 0..s.node_count {
            let end = s.offsets[i + 1];
            while entry < end {
                if i >= text_count && s.cols[entry] < text_count {
                    s.vals[entry] = power_transform(s.vals[entry], cfg.gamma);
                }
                entry += 1;
            }
        }
    }
    Ok(s)
}

/// Affinely rescales the stored values to span exactly `[0, 1]`.
pub fn minmax_normalize_values<T: Scalar>(s: &mut SparseAdjacency<T>) -> Result<()> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in s.values() {
        lo = lo.min(v.acc());
        hi = hi.max(v.acc());
    }
    if s.values().is_empty() || lo == hi {
        return Err(Error::Degenerate(
            "min-max rescale needs at least two distinct stored values".into(),
        ));
    }
    let range = hi - lo;
    for v in s.values_mut() {
        *v = T::from_acc((v.acc() - lo) / range);
    }
    Ok(())
}

/// `S + S^T`. Reciprocal neighbor pairs end up with twice their similarity,
/// which just emphasizes mutually consistent edges.
pub fn symmetrize<T: Scalar>(s: &SparseAdjacency<T>) -> SparseAdjacency<T> {
    let n = s.node_count;
    let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    for i in 0..n {
        let (cols, vals) = s.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            rows[i].push((c, v));
            rows[c].push((i, v));
        }
    }
    for row in &mut rows {
        row.sort_unstable_by_key(|&(c, _)| c);
        row.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
    }
    SparseAdjacency::from_rows(n, s.text_count, rows)
}

/// `D^(-1/2) S̄ D^(-1/2)` with `D` the diagonal of row sums. Input must be
/// symmetric (as produced by [`symmetrize`]); the result has spectral radius
/// at most 1, which is what keeps the propagation system positive definite.
///
/// Nodes without any edge mass get a degree of 1 so their rows pass through
/// as zeros instead of dividing by zero.
pub fn normalize_symmetric<T: Scalar>(s: &SparseAdjacency<T>) -> Result<SparseAdjacency<T>> {
    let n = s.node_count;
    let mut inv_sqrt_deg = vec![0.0f64; n];
    for i in 0..n {
        let degree: f64 = s.row(i).1.iter().map(|v| v.acc()).sum();
        if degree < 0.0 {
            return Err(Error::Data(format!("negative degree {degree} at node {i}")));
        }
        inv_sqrt_deg[i] = if degree == 0.0 { 1.0 } else { 1.0 / degree.sqrt() };
    }
    let mut out = s.clone();
    let mut entry = 0;
    for i in 0..n {
        let end = out.offsets[i + 1];
        while entry < end {
            let c = out.cols[entry];
            out.vals[entry] = T::from_acc(out.vals[entry].acc() * inv_sqrt_deg[i] * inv_sqrt_deg[c]);
            entry += 1;
        }
    }
    Ok(out)
}

/// For each `n` in `1..=n_max`, the percentage of image nodes whose shortest
/// path to their own class's text node uses at most `n` edges. Paths follow
/// positive-weight entries of the symmetrized graph.
///
/// `labels` must hold one class index per image node.
pub fn shortest_path_coverage<T: Scalar>(
    sbar: &SparseAdjacency<T>,
    labels: &LabelVector,
    n_max: usize,
) -> Vec<f64> {
    let c = sbar.text_count;
    let m = sbar.image_count();
    assert_eq!(labels.len(), m, "one label per image node");

    // BFS once per class; an image only cares about distance to its own class.
    let dist_per_class: Vec<Vec<u32>> = (0..c)
        .into_par_iter()
        .map(|class| bfs_distances(sbar, class))
        .collect();

    let mut counts = vec![0usize; n_max + 1];
    for (i, &label) in labels.as_slice().iter().enumerate() {
        let d = dist_per_class[label][c + i];
        if d as usize <= n_max {
            counts[d as usize] += 1;
        }
    }
    let mut covered = 0usize;
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        covered += counts[n];
        out.push(100.0 * covered as f64 / m as f64);
    }
    out
}

fn bfs_distances<T: Scalar>(s: &SparseAdjacency<T>, source: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; s.node_count];
    let mut queue = std::collections::VecDeque::new();
    dist[source] = 0;
    queue.push_back(source);
    while let Some(node) = queue.pop_front() {
        let (cols, vals) = s.row(node);
        for (&next, &v) in cols.iter().zip(vals) {
            if v > T::zero() && dist[next] == u32::MAX {
                dist[next] = dist[node] + 1;
                queue.push_back(next);
            }
        }
    }
    dist
}

/// Writes a graph in the binary format described in the module docs.
pub fn write_graph<T: Scalar>(path: impl AsRef<Path>, s: &SparseAdjacency<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GRAPH_MAGIC)?;
    w.write_all(&GRAPH_VERSION.to_le_bytes())?;
    w.write_all(&(s.node_count as u64).to_le_bytes())?;
    w.write_all(&(s.text_count as u64).to_le_bytes())?;
    w.write_all(&(s.nnz() as u64).to_le_bytes())?;
    for &o in &s.offsets {
        w.write_all(&(o as u64).to_le_bytes())?;
    }
    for &c in &s.cols {
        w.write_all(&(c as u64).to_le_bytes())?;
    }
    for v in &s.vals {
        w.write_all(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a graph back, checking structural invariants (monotone offsets,
/// sorted in-range columns, empty diagonal, finite values).
pub fn load_graph<T: Scalar>(path: impl AsRef<Path>) -> Result<SparseAdjacency<T>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: too short for a graph header", path.display())))?;
    if &magic != GRAPH_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"ZLGR\"",
            path.display(),
            magic
        )));
    }
    let version = read_u32(&mut r, path)?;
    if version != GRAPH_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported graph version {version}",
            path.display()
        )));
    }
    let node_count = read_u64(&mut r, path)? as usize;
    let text_count = read_u64(&mut r, path)? as usize;
    let nnz = read_u64(&mut r, path)? as usize;
    if text_count > node_count {
        return Err(Error::Data(format!(
            "{}: text_count {text_count} exceeds node_count {node_count}",
            path.display()
        )));
    }

    let expected = node_count
        .checked_add(1)
        .and_then(|o| o.checked_mul(8))
        .and_then(|o| o.checked_add(nnz.checked_mul(12)?))
        .ok_or_else(|| Error::Size(format!("{}: header sizes overflow", path.display())))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::Size(format!(
            "{}: payload holds {} bytes, header promises {expected}",
            path.display(),
            payload.len()
        )));
    }

    let mut at = 0usize;
    let next_u64 = |payload: &[u8], at: &mut usize| {
        let v = u64::from_le_bytes(payload[*at..*at + 8].try_into().unwrap());
        *at += 8;
        v
    };
    let offsets: Vec<usize> =
        (0..=node_count).map(|_| next_u64(&payload, &mut at) as usize).collect();
    let cols: Vec<usize> = (0..nnz).map(|_| next_u64(&payload, &mut at) as usize).collect();
    let mut vals = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let v = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap());
        at += 4;
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "{}: non-finite weight at entry {}",
                path.display(),
                vals.len()
            )));
        }
        vals.push(T::from_acc(v as f64));
    }

    if offsets[0] != 0 || offsets[node_count] != nnz {
        return Err(Error::Data(format!("{}: offset bounds corrupt", path.display())));
    }
    for i in 0..node_count {
        if offsets[i] > offsets[i + 1] {
            return Err(Error::Data(format!(
                "{}: offsets not monotone at row {i}",
                path.display()
            )));
        }
        let row = &cols[offsets[i]..offsets[i + 1]];
        for w in row.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Data(format!(
                    "{}: columns not strictly increasing in row {i}",
                    path.display()
                )));
            }
        }
        for &col in row {
            if col >= node_count {
                return Err(Error::Data(format!(
                    "{}: column {col} outside {node_count} nodes",
                    path.display()
                )));
            }
            if col == i {
                return Err(Error::Data(format!("{}: self-loop at node {i}", path.display())));
            }
        }
    }
    Ok(SparseAdjacency { node_count, text_count, offsets, cols, vals })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Size(format!("{}: header truncated", path.display())))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Size(format!("{}: header truncated", path.display())))?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::l2_normalize;
    use crate::harness::{generate_bimodal, SynthConfig};
    use tempfile::tempdir;

    fn unit_rows(rows: usize, dim: usize, phase: f32) -> FeatureMatrix<f32> {
        let data = (0..rows * dim)
            .map(|i| (i as f32 * 0.61 + phase).sin() + 0.05)
            .collect();
        let mut m = FeatureMatrix::from_vec(rows, dim, data).unwrap();
        l2_normalize(&mut m).unwrap();
        m
    }

    /// Direct dense construction: full similarity sort per image, no blocked
    /// kernel, no CSR assembly. Mirrors only the arithmetic definitions.
    fn dense_reference(
        images: &FeatureMatrix<f32>,
        classes: &FeatureMatrix<f32>,
        cfg: &GraphConfig,
    ) -> Vec<f32> {
        let m = images.rows();
        let c = classes.rows();
        let n = c + m;
        let dot = |a: &[f32], b: &[f32]| {
            let mut s = 0.0f32;
            for (x, y) in a.iter().zip(b) {
                s += x * y;
            }
            s
        };
        let pick = |sims: Vec<(usize, f32)>, k: usize| {
            let mut sims = sims;
            sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            sims.truncate(k);
            sims
        };
        let mut dense = vec![0.0f32; n * n];
        let mut is_cross = vec![false; n * n];
        for i in 0..m {
            let q = images.row(i);
            let image_sims = (0..m)
                .filter(|&j| j != i)
                .map(|j| (j, dot(q, images.row(j))))
                .collect();
            for (j, sim) in pick(image_sims, cfg.k_image) {
                dense[(c + i) * n + (c + j)] = sim;
            }
            let class_sims = (0..c).map(|j| (j, dot(q, classes.row(j)))).collect();
            for (j, sim) in pick(class_sims, cfg.k_class.min(c)) {
                dense[(c + i) * n + j] = if cfg.minmax_cross_modal {
                    sim
                } else {
                    power_transform(sim, cfg.gamma)
                };
                is_cross[(c + i) * n + j] = true;
            }
        }
        if cfg.minmax_cross_modal {
            let stored: Vec<f64> = dense
                .iter()
                .zip(&is_cross)
                .filter(|&(v, &cross)| *v != 0.0 || cross)
                .map(|(v, _)| *v as f64)
                .collect();
            let lo = stored.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = stored.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (v, &cross) in dense.iter_mut().zip(&is_cross) {
                if *v != 0.0 || cross {
                    let scaled = (*v as f64 - lo) / (hi - lo);
                    *v = if cross {
                        power_transform(scaled as f32, cfg.gamma)
                    } else {
                        scaled as f32
                    };
                }
            }
        }
        dense
    }

    fn assert_matches_reference(
        images: &FeatureMatrix<f32>,
        classes: &FeatureMatrix<f32>,
        cfg: &GraphConfig,
    ) {
        let s = build_bimodal_adjacency(images, classes, cfg).unwrap();
        let want = dense_reference(images, classes, cfg);
        let got = s.to_dense();
        let n = s.node_count();
        assert_eq!(got.len(), want.len());
        for i in 0..n {
            for j in 0..n {
                assert_eq!(
                    got[i * n + j],
                    want[i * n + j] as f64,
                    "entry ({i}, {j}) diverges from the dense construction"
                );
            }
        }
    }

    #[test]
    fn matches_dense_construction_identity_transform() {
        let images = unit_rows(20, 8, 0.0);
        let classes = unit_rows(3, 8, 1.9);
        let cfg = GraphConfig { k_image: 3, k_class: 1, gamma: 1.0, ..GraphConfig::default() };
        assert_matches_reference(&images, &classes, &cfg);
    }

    #[test]
    fn matches_dense_construction_sharp_transform() {
        let images = unit_rows(25, 10, 0.4);
        let classes = unit_rows(4, 10, 2.3);
        let cfg = GraphConfig { k_image: 4, k_class: 2, gamma: 5.0, ..GraphConfig::default() };
        assert_matches_reference(&images, &classes, &cfg);
    }

    #[test]
    fn matches_dense_construction_minmax_mode() {
        let images = unit_rows(18, 6, 0.8);
        let classes = unit_rows(3, 6, 2.8);
        let cfg = GraphConfig {
            k_image: 3,
            k_class: 2,
            gamma: 3.0,
            minmax_cross_modal: true,
            ..GraphConfig::default()
        };
        assert_matches_reference(&images, &classes, &cfg);
    }

    #[test]
    fn edge_counts_are_exact() {
        let images = unit_rows(40, 12, 0.1);
        let classes = unit_rows(5, 12, 1.4);
        let cfg = GraphConfig { k_image: 5, k_class: 3, ..GraphConfig::default() };
        let s = build_bimodal_adjacency(&images, &classes, &cfg).unwrap();
        assert_eq!(s.node_count(), 45);
        assert_eq!(s.text_count(), 5);
        assert_eq!(s.image_count(), 40);
        assert_eq!(s.nnz(), 40 * (5 + 3));
        assert_eq!(s.cross_modal_edge_count(), 40 * 3);
    }

    #[test]
    fn text_rows_stay_empty_and_structure_is_clean() {
        let images = unit_rows(15, 7, 0.6);
        let classes = unit_rows(4, 7, 1.1);
        let s = build_bimodal_adjacency(&images, &classes, &GraphConfig::default()).unwrap();
        for t in 0..4 {
            assert!(s.row(t).0.is_empty(), "text row {t} has outgoing edges");
        }
        for i in 4..s.node_count() {
            let (cols, _) = s.row(i);
            assert!(cols.windows(2).all(|w| w[0] < w[1]), "row {i} not sorted");
            assert!(cols.iter().all(|&c| c != i), "row {i} has a diagonal entry");
        }
    }

    #[test]
    fn neighbor_counts_clamp_to_tiny_pools() {
        let images = unit_rows(3, 5, 0.3);
        let classes = unit_rows(2, 5, 1.7);
        let cfg = GraphConfig { k_image: 10, k_class: 10, ..GraphConfig::default() };
        let s = build_bimodal_adjacency(&images, &classes, &cfg).unwrap();
        assert_eq!(s.nnz(), 3 * (2 + 2));
    }

    #[test]
    fn power_transform_examples() {
        assert_eq!(power_transform(0.5f32, 5.0), 0.03125);
        assert_eq!(power_transform(-0.3f32, 3.0), 0.0);
        assert_eq!(power_transform(0.0f32, 5.0), 0.0);
        assert!((power_transform(0.7f64, 1.0) - 0.7).abs() < 1e-15);
        let mut prev = -1.0f32;
        for i in 0..=10 {
            let v = power_transform(i as f32 / 10.0, 5.0);
            assert!(v >= prev, "transform must be monotone");
            prev = v;
        }
        assert!(power_transform(0.9f32, 5.0) < 0.9, "gamma > 1 shrinks sub-unit values");
    }

    #[test]
    fn minmax_spans_unit_interval() {
        // All three weights are exactly representable, so the rescale is too.
        let mut s =
            SparseAdjacency::from_triplets(3, 0, &[(0, 1, 0.25f32), (1, 2, 0.75), (2, 0, 1.25)])
                .unwrap();
        minmax_normalize_values(&mut s).unwrap();
        assert_eq!(s.values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn minmax_rejects_degenerate_value_sets() {
        let mut constant =
            SparseAdjacency::from_triplets(3, 0, &[(0, 1, 0.4f32), (1, 2, 0.4)]).unwrap();
        assert!(matches!(minmax_normalize_values(&mut constant), Err(Error::Degenerate(_))));
        let mut empty = SparseAdjacency::<f32>::from_triplets(3, 0, &[]).unwrap();
        assert!(matches!(minmax_normalize_values(&mut empty), Err(Error::Degenerate(_))));
    }

    #[test]
    fn from_triplets_sums_duplicates_and_validates() {
        let s =
            SparseAdjacency::from_triplets(3, 1, &[(1, 0, 0.25f32), (1, 0, 0.5)]).unwrap();
        assert_eq!(s.row(1), (&[0usize][..], &[0.75f32][..]));
        assert!(matches!(
            SparseAdjacency::from_triplets(3, 1, &[(1, 1, 0.5f32)]),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            SparseAdjacency::from_triplets(3, 1, &[(1, 3, 0.5f32)]),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            SparseAdjacency::from_triplets(3, 1, &[(1, 0, f32::NAN)]),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            SparseAdjacency::<f32>::from_triplets(2, 3, &[]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn symmetrize_matches_dense_transpose_sum() {
        let triplets: Vec<(usize, usize, f32)> = vec![
            (0, 3, 0.9),
            (3, 0, 0.4),
            (1, 2, 0.6),
            (2, 4, 0.8),
            (4, 1, 0.3),
            (3, 4, 0.2),
        ];
        let s = SparseAdjacency::from_triplets(5, 2, &triplets).unwrap();
        let sbar = symmetrize(&s);
        let n = 5;
        let mut want = vec![0.0f32; n * n];
        for &(i, j, v) in &triplets {
            want[i * n + j] += v;
            want[j * n + i] += v;
        }
        let got = sbar.to_dense();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(got[i * n + j], want[i * n + j] as f64, "entry ({i}, {j})");
            }
        }
        assert_eq!(sbar.row(0).1, &[1.3f32], "reciprocal pair sums both directions");
    }

    #[test]
    fn symmetrize_built_graph_has_symmetric_dense_form() {
        let images = unit_rows(12, 6, 0.9);
        let classes = unit_rows(3, 6, 2.0);
        let s = build_bimodal_adjacency(&images, &classes, &GraphConfig::default()).unwrap();
        let sbar = symmetrize(&s);
        let dense = sbar.to_dense();
        let n = sbar.node_count();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(dense[i * n + j], dense[j * n + i]);
            }
        }
    }

    #[test]
    fn normalize_matches_per_entry_formula() {
        let images = unit_rows(14, 8, 0.2);
        let classes = unit_rows(3, 8, 1.2);
        let s = build_bimodal_adjacency(&images, &classes, &GraphConfig::default()).unwrap();
        let sbar = symmetrize(&s);
        let shat = normalize_symmetric(&sbar).unwrap();
        let n = sbar.node_count();
        let mut inv = vec![0.0f64; n];
        for i in 0..n {
            let degree: f64 = sbar.row(i).1.iter().map(|&v| v as f64).sum();
            inv[i] = if degree == 0.0 { 1.0 } else { 1.0 / degree.sqrt() };
        }
        for i in 0..n {
            let (cols, vals) = sbar.row(i);
            let (ncols, nvals) = shat.row(i);
            assert_eq!(cols, ncols);
            for ((&c, &v), &nv) in cols.iter().zip(vals).zip(nvals) {
                assert_eq!(nv, (v as f64 * inv[i] * inv[c]) as f32, "entry ({i}, {c})");
            }
        }
    }

    #[test]
    fn normalize_single_edge_gives_unit_weight() {
        for w in [0.5f32, 0.7, 1.25] {
            let s = SparseAdjacency::from_triplets(2, 1, &[(1, 0, w)]).unwrap();
            let shat = normalize_symmetric(&symmetrize(&s)).unwrap();
            assert_eq!(shat.row(0).1, &[1.0f32], "weight {w}");
            assert_eq!(shat.row(1).1, &[1.0f32], "weight {w}");
        }
    }

    #[test]
    fn normalize_passes_isolated_nodes_through() {
        let s = SparseAdjacency::from_triplets(4, 1, &[(1, 2, 0.5f32), (2, 1, 0.5)]).unwrap();
        let shat = normalize_symmetric(&s).unwrap();
        assert!(shat.row(0).0.is_empty());
        assert!(shat.row(3).0.is_empty());
        assert!(shat.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn normalize_rejects_negative_degrees() {
        let s = SparseAdjacency::from_triplets(2, 0, &[(0, 1, -0.5f32), (1, 0, -0.5)]).unwrap();
        assert!(matches!(normalize_symmetric(&s), Err(Error::Data(_))));
    }

    #[test]
    fn normalized_entries_and_spectrum_stay_bounded() {
        // Row sums of the degree-normalized matrix can exceed one (a hub row
        // sums to roughly the square root of its neighbor count); the real
        // invariants are per-entry bounds and a spectrum inside [-1, 1].
        let images = unit_rows(30, 9, 0.5);
        let classes = unit_rows(4, 9, 1.6);
        let s = build_bimodal_adjacency(&images, &classes, &GraphConfig::default()).unwrap();
        let shat = normalize_symmetric(&symmetrize(&s)).unwrap();
        for (i, &v) in shat.values().iter().enumerate() {
            assert!(v as f64 <= 1.0 + 1e-6, "entry {i} value {v} above 1");
            assert!(v >= 0.0, "entry {i} value {v} negative");
        }
        let n = shat.node_count();
        let dense = nalgebra::DMatrix::from_row_slice(n, n, &shat.to_dense());
        for eig in dense.symmetric_eigen().eigenvalues.iter() {
            assert!(eig.abs() <= 1.0 + 1e-9, "eigenvalue {eig} outside [-1, 1]");
        }
    }

    #[test]
    fn coverage_counts_hops_to_own_class() {
        // img node 2 touches class 0 directly; img node 3 reaches it via 2.
        let s = SparseAdjacency::from_triplets(
            4,
            2,
            &[(2, 0, 0.5f32), (0, 2, 0.5), (3, 2, 0.4), (2, 3, 0.4)],
        )
        .unwrap();
        let labels = LabelVector::new(vec![0, 0]);
        let coverage = shortest_path_coverage(&s, &labels, 3);
        assert_eq!(coverage, vec![50.0, 100.0, 100.0]);
    }

    #[test]
    fn coverage_ignores_zero_weight_edges_and_unreachable_nodes() {
        let s = SparseAdjacency::from_triplets(
            4,
            2,
            &[(2, 0, 0.0f32), (0, 2, 0.0), (3, 1, 0.7), (1, 3, 0.7)],
        )
        .unwrap();
        // Image 2's only edge to class 0 has zero weight; image 3 is labeled
        // class 0 but only touches class 1.
        let labels = LabelVector::new(vec![0, 0]);
        let coverage = shortest_path_coverage(&s, &labels, 2);
        assert_eq!(coverage, vec![0.0, 0.0]);
    }

    #[test]
    fn gapped_data_starves_joint_search_of_cross_edges() {
        let synth = SynthConfig {
            classes: 5,
            images_per_class: 40,
            dim: 32,
            cluster_spread: 0.12,
            modality_gap: 2.0,
            seed: 11,
        };
        let (images, classes, _) = generate_bimodal::<f32>(&synth).unwrap();
        let joint_cfg = GraphConfig {
            knn_mode: KnnMode::Joint,
            k_image: 5,
            k_class: 1,
            ..GraphConfig::default()
        };
        let joint = build_bimodal_adjacency(&images, &classes, &joint_cfg).unwrap();
        assert_eq!(joint.cross_modal_edge_count(), 0);
        assert_eq!(joint.nnz(), 200 * 5);

        let sep_cfg = GraphConfig { k_image: 5, k_class: 1, ..GraphConfig::default() };
        let sep = build_bimodal_adjacency(&images, &classes, &sep_cfg).unwrap();
        assert_eq!(sep.cross_modal_edge_count(), 200);
    }

    #[test]
    fn graph_file_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("graph.bin");
        let images = unit_rows(22, 7, 0.35);
        let classes = unit_rows(3, 7, 1.85);
        let s = build_bimodal_adjacency(&images, &classes, &GraphConfig::default()).unwrap();
        let shat = normalize_symmetric(&symmetrize(&s)).unwrap();
        write_graph(&path, &shat).unwrap();
        let back: SparseAdjacency<f32> = load_graph(&path).unwrap();
        assert_eq!(shat, back);
        for (a, b) in shat.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn graph_loader_rejects_corrupt_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("graph.bin");
        let s = SparseAdjacency::from_triplets(
            3,
            1,
            &[(1, 0, 0.5f32), (1, 2, 0.75), (2, 1, 0.25)],
        )
        .unwrap();
        write_graph(&path, &s).unwrap();
        let good = std::fs::read(&path).unwrap();
        // Layout: header 32 bytes, offsets 4*8, cols 3*8, vals 3*4.
        let offsets_at = 32;
        let cols_at = offsets_at + 4 * 8;
        let vals_at = cols_at + 3 * 8;

        let check = |bytes: Vec<u8>, expect_data: bool, what: &str| {
            std::fs::write(&path, &bytes).unwrap();
            let got = load_graph::<f32>(&path);
            match got {
                Err(Error::Data(_)) if expect_data => {}
                Err(Error::Size(_)) if !expect_data => {}
                other => panic!("{what}: unexpected result {other:?}"),
            }
        };

        let mut bad_magic = good.clone();
        bad_magic[0] = b'Q';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_graph::<f32>(&path), Err(Error::Format(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 7;
        std::fs::write(&path, &bad_version).unwrap();
        assert!(matches!(load_graph::<f32>(&path), Err(Error::Format(_))));

        check(good[..good.len() - 2].to_vec(), false, "truncated");
        let mut trailing = good.clone();
        trailing.push(0);
        check(trailing, false, "trailing byte");

        let mut unsorted = good.clone();
        // Row 1 owns cols[0] and cols[1]; make them [2, 0].
        unsorted[cols_at..cols_at + 8].copy_from_slice(&2u64.to_le_bytes());
        unsorted[cols_at + 8..cols_at + 16].copy_from_slice(&0u64.to_le_bytes());
        check(unsorted, true, "unsorted columns");

        let mut self_loop = good.clone();
        // Row 2 owns cols[2]; point it at node 2.
        self_loop[cols_at + 16..cols_at + 24].copy_from_slice(&2u64.to_le_bytes());
        check(self_loop, true, "self loop");

        let mut out_of_range = good.clone();
        out_of_range[cols_at + 16..cols_at + 24].copy_from_slice(&9u64.to_le_bytes());
        check(out_of_range, true, "column out of range");

        let mut bad_bounds = good.clone();
        bad_bounds[offsets_at + 24..offsets_at + 32].copy_from_slice(&5u64.to_le_bytes());
        check(bad_bounds, true, "offset bounds");

        let mut non_monotone = good.clone();
        bad_offsets(&mut non_monotone, offsets_at);
        check(non_monotone, true, "non-monotone offsets");

        let mut nan_val = good.clone();
        nan_val[vals_at..vals_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        check(nan_val, true, "non-finite value");

        let mut bad_text = good.clone();
        bad_text[16..24].copy_from_slice(&9u64.to_le_bytes());
        check(bad_text, true, "text_count past node_count");
    }

    fn bad_offsets(bytes: &mut [u8], offsets_at: usize) {
        // offsets become [0, 3, 0, 3]: still hitting the right bounds but
        // dipping in the middle.
        bytes[offsets_at + 8..offsets_at + 16].copy_from_slice(&3u64.to_le_bytes());
        bytes[offsets_at + 16..offsets_at + 24].copy_from_slice(&0u64.to_le_bytes());
    }

    #[test]
    fn config_validation_rejects_bad_hyperparameters() {
        let bad_alpha = GraphConfig { alpha: 1.0, ..GraphConfig::default() };
        assert!(matches!(bad_alpha.validate(), Err(Error::Config(_))));
        let bad_gamma = GraphConfig { gamma: 0.0, ..GraphConfig::default() };
        assert!(matches!(bad_gamma.validate(), Err(Error::Config(_))));
        let bad_k = GraphConfig { k_image: 0, ..GraphConfig::default() };
        assert!(matches!(bad_k.validate(), Err(Error::Config(_))));
        assert!(GraphConfig::default().validate().is_ok());
        assert!(GraphConfig::proxy_defaults().validate().is_ok());
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let images = unit_rows(5, 6, 0.0);
        let classes = unit_rows(2, 7, 0.0);
        assert!(matches!(
            build_bimodal_adjacency(&images, &classes, &GraphConfig::default()),
            Err(Error::Shape(_))
        ));
    }
}
