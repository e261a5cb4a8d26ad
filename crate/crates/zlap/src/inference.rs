//! Transductive and inductive prediction on top of the propagation solver.
//!
//! Transductive: solve one system per class, right-hand side `e_c`, and read
//! each image node's scores across the class solutions.
//!
//! Inductive, exact: a held-out query never touches the graph. Its neighbor
//! similarities form a sparse indicator vector `y_x`, one solve gives
//! `z = L^(-1) y_x`, and the first `text_count` entries are the class
//! scores. This works because `L^(-1)` is symmetric: reading solution entry
//! `c` of the query's system equals reading the query's entry in class `c`'s
//! system.
//!
//! Inductive, fast: stack the per-class solutions into a score matrix `Y`
//! (rows are nodes, columns classes). Then `z = y_x^T Y`, a sparse
//! vector-matrix product against at most `k_image + k_class` rows. `Y` can
//! additionally be sparsified down to a few entries per row at nearly no
//! accuracy cost, which is what makes per-query inference cheap.
//!
//! Score matrices persist in a little-endian container:
//!
//! ```text
//! magic    4 bytes  "ZLPY"
//! version  u32      currently 1
//! layout   u8       0 = dense, 1 = CSR
//! rows     u64      node count
//! cols     u64      class count
//! dense:   rows * cols * f32, row-major
//! csr:     nnz u64, offsets (rows+1) * u64, columns nnz * u64, values nnz * f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::embeddings::FeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::{power_transform, GraphConfig, SparsifyMode};
use crate::knn::top_k;
use crate::scalar::Scalar;
use crate::solver::{cg_solve, LaplacianOperator, SolveConfig};

const SCORES_MAGIC: &[u8; 4] = b"ZLPY";
const SCORES_VERSION: u32 = 1;

/// Node-by-class matrix of propagated label mass, dense or row-sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedScores<T = f32> {
    nodes: usize,
    classes: usize,
    layout: ScoreLayout<T>,
}

#[derive(Debug, Clone, PartialEq)]
enum ScoreLayout<T> {
    Dense(Vec<T>),
    Csr { offsets: Vec<usize>, cols: Vec<usize>, vals: Vec<T> },
}

impl<T: Scalar> PropagatedScores<T> {
    pub fn dense(nodes: usize, classes: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nodes * classes {
            return Err(Error::Shape(format!(
                "dense scores {nodes}x{classes} need {} values, got {}",
                nodes * classes,
                data.len()
            )));
        }
        Ok(Self { nodes, classes, layout: ScoreLayout::Dense(data) })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.layout, ScoreLayout::Dense(_))
    }

    pub fn nnz(&self) -> usize {
        match &self.layout {
            ScoreLayout::Dense(d) => d.len(),
            ScoreLayout::Csr { cols, .. } => cols.len(),
        }
    }

    /// Dense row view; only valid on dense layout.
    fn dense_row(&self, i: usize) -> &[T] {
        match &self.layout {
            ScoreLayout::Dense(d) => &d[i * self.classes..(i + 1) * self.classes],
            ScoreLayout::Csr { .. } => unreachable!("dense_row on sparse layout"),
        }
    }
}

/// Sparse right-hand side describing a held-out query's attachment to the
/// graph: image-neighbor entries carry raw similarity, class-neighbor
/// entries carry transformed similarity. Entries are (node index, weight),
/// sorted by node index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorVector<T = f32> {
    len: usize,
    entries: Vec<(usize, T)>,
}

impl<T: Scalar> IndicatorVector<T> {
    pub fn new(len: usize, mut entries: Vec<(usize, T)>) -> Result<Self> {
        entries.sort_unstable_by_key(|&(i, _)| i);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Data(format!("duplicate indicator entry at node {}", pair[0].0)));
            }
        }
        if let Some(&(i, _)) = entries.iter().find(|&&(i, _)| i >= len) {
            return Err(Error::Data(format!("indicator entry {i} outside {len} nodes")));
        }
        Ok(Self { len, entries })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, T)] {
        &self.entries
    }

    /// True when no entry carries weight, in which case prediction falls
    /// back to class 0 and gets flagged.
    pub fn is_degenerate(&self) -> bool {
        self.entries.iter().all(|&(_, v)| v == T::zero())
    }

    /// Scatter into a dense `f64` right-hand side.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut b = vec![0.0f64; self.len];
        for &(i, v) in &self.entries {
            b[i] = v.acc();
        }
        b
    }
}

/// One classified query.
#[derive(Debug, Clone)]
pub struct Prediction<T = f32> {
    /// Winning class, lowest index on exact ties.
    pub class: usize,
    /// Score per class.
    pub scores: Vec<T>,
    /// False when the underlying solve hit its iteration budget.
    pub converged: bool,
    /// True when the query carried no usable signal and the class is the
    /// tie-break fallback.
    pub degenerate: bool,
}

fn argmax<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Solves the per-class systems `L y_c = e_c` and stacks the solutions into
/// a dense node-by-class score matrix. Returns one convergence flag per
/// class column.
pub fn precompute_y<T: Scalar>(
    op: &LaplacianOperator<'_, T>,
    cfg: &SolveConfig,
) -> Result<(PropagatedScores<T>, Vec<bool>)> {
    let n = op.node_count();
    let c = op.graph().text_count();
    if c == 0 {
        return Err(Error::Empty("graph has no text nodes to propagate from".into()));
    }

    let columns: Vec<(Vec<f64>, bool)> = (0..c)
        .into_par_iter()
        .map(|class| {
            let mut e = vec![0.0f64; n];
            e[class] = 1.0;
            cg_solve(op, &e, cfg).map(|out| (out.x, out.converged))
        })
        .collect::<Result<_>>()?;

    let mut data = vec![T::zero(); n * c];
    let mut flags = Vec::with_capacity(c);
    for (class, (col, converged)) in columns.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            data[i * c + class] = T::from_acc(v);
        }
        flags.push(converged);
    }
    Ok((PropagatedScores::dense(n, c, data)?, flags))
}

/// Classifies every image node of the graph from the per-class solutions.
/// Returns the predictions in image order plus the full score matrix.
pub fn transductive_predict<T: Scalar>(
    op: &LaplacianOperator<'_, T>,
    cfg: &SolveConfig,
) -> Result<(Vec<Prediction<T>>, PropagatedScores<T>)> {
    let (scores, flags) = precompute_y(op, cfg)?;
    let all_converged = flags.iter().all(|&f| f);
    let preds = (op.graph().text_count()..op.node_count())
        .map(|node| {
            let row = scores.dense_row(node);
            Prediction {
                class: argmax(row),
                scores: row.to_vec(),
                converged: all_converged,
                degenerate: false,
            }
        })
        .collect();
    Ok((preds, scores))
}

/// Builds the sparse right-hand side for a held-out query from the same two
/// neighbor searches used during graph construction. The query is *not*
/// inserted into the graph.
pub fn build_indicator<T: Scalar>(
    query: &[T],
    images: &FeatureMatrix<T>,
    classes: &FeatureMatrix<T>,
    cfg: &GraphConfig,
) -> Result<IndicatorVector<T>> {
    cfg.validate()?;
    if query.len() != images.dim() {
        return Err(Error::Shape(format!(
            "query dim {} != image dim {}",
            query.len(),
            images.dim()
        )));
    }
    let q = FeatureMatrix::from_vec(1, query.len(), query.to_vec())?;
    let knn_u = top_k(&q, images, cfg.k_image, false)?;
    let knn_w = top_k(&q, classes, cfg.k_class.min(classes.rows()), false)?;
    let c = classes.rows();
    let n = c + images.rows();

    let mut entries: Vec<(usize, T)> = Vec::with_capacity(knn_u.list(0).len() + knn_w.list(0).len());
    for &(cls, sim) in knn_w.list(0) {
        entries.push((cls, sim));
    }
    for &(img, sim) in knn_u.list(0) {
        entries.push((c + img, sim));
    }

    if cfg.minmax_cross_modal {
        // Mirror of the adjacency treatment: rescale the raw values to
        // [0, 1] across both modalities, then transform the class entries.
        let lo = entries.iter().map(|&(_, v)| v.acc()).fold(f64::INFINITY, f64::min);
        let hi = entries.iter().map(|&(_, v)| v.acc()).fold(f64::NEG_INFINITY, f64::max);
        if entries.is_empty() || lo == hi {
            return Err(Error::Degenerate(
                "min-max rescale needs at least two distinct neighbor similarities".into(),
            ));
        }
        for (_, v) in entries.iter_mut() {
            *v = T::from_acc((v.acc() - lo) / (hi - lo));
        }
    }
    for (node, v) in entries.iter_mut() {
        if *node < c {
            *v = power_transform(*v, cfg.gamma);
        }
    }
    IndicatorVector::new(n, entries)
}

/// Exact inductive prediction: one conjugate-gradient solve against the
/// query's indicator, scores read off the text-node entries.
pub fn dual_inductive_predict<T: Scalar>(
    op: &LaplacianOperator<'_, T>,
    indicator: &IndicatorVector<T>,
    cfg: &SolveConfig,
) -> Result<Prediction<T>> {
    if indicator.len() != op.node_count() {
        return Err(Error::Shape(format!(
            "indicator length {} does not match {} nodes",
            indicator.len(),
            op.node_count()
        )));
    }
    let c = op.graph().text_count();
    if indicator.is_degenerate() {
        return Ok(Prediction {
            class: 0,
            scores: vec![T::zero(); c],
            converged: true,
            degenerate: true,
        });
    }
    let out = cg_solve(op, &indicator.to_dense(), cfg)?;
    let scores: Vec<T> = out.x[..c].iter().map(|&v| T::from_acc(v)).collect();
    Ok(Prediction { class: argmax(&scores), scores, converged: out.converged, degenerate: false })
}

/// Thins a dense score matrix, keeping only the largest entries. Exact value
/// ties resolve toward the lexicographically smallest (row, column).
pub fn sparsify_y<T: Scalar>(
    scores: &PropagatedScores<T>,
    mode: SparsifyMode,
    xi: usize,
) -> Result<PropagatedScores<T>> {
    let ScoreLayout::Dense(data) = &scores.layout else {
        return Err(Error::Config("sparsify expects a dense score matrix".into()));
    };
    if xi == 0 {
        return Err(Error::Config("retention budget xi must be at least 1".into()));
    }
    let n = scores.nodes;
    let c = scores.classes;

    let mut keep: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    match mode {
        SparsifyMode::None => {
            return Err(Error::Config("sparsify mode none leaves nothing to do".into()));
        }
        SparsifyMode::Row => {
            let budget = xi.min(c);
            for (i, row_keep) in keep.iter_mut().enumerate() {
                let mut row: Vec<(usize, T)> =
                    data[i * c..(i + 1) * c].iter().copied().enumerate().collect();
                row.sort_unstable_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                row.truncate(budget);
                row.sort_unstable_by_key(|&(col, _)| col);
                *row_keep = row;
            }
        }
        SparsifyMode::Column => {
            let budget = xi.min(n);
            for col in 0..c {
                let mut column: Vec<(usize, T)> =
                    (0..n).map(|i| (i, data[i * c + col])).collect();
                column.sort_unstable_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                for &(i, v) in &column[..budget] {
                    keep[i].push((col, v));
                }
            }
            for row in &mut keep {
                row.sort_unstable_by_key(|&(col, _)| col);
            }
        }
        SparsifyMode::Global => {
            let budget = xi.checked_mul(n).map_or(n * c, |b| b.min(n * c));
            let mut all: Vec<(usize, usize, T)> = (0..n)
                .flat_map(|i| (0..c).map(move |col| (i, col, data[i * c + col])))
                .collect();
            all.sort_unstable_by(|a, b| {
                b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
            });
            all.truncate(budget);
            for (i, col, v) in all {
                keep[i].push((col, v));
            }
            for row in &mut keep {
                row.sort_unstable_by_key(|&(col, _)| col);
            }
        }
    }

    let nnz: usize = keep.iter().map(Vec::len).sum();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    offsets.push(0);
    for row in keep {
        for (col, v) in row {
            cols.push(col);
            vals.push(v);
        }
        offsets.push(cols.len());
    }
    Ok(PropagatedScores { nodes: n, classes: c, layout: ScoreLayout::Csr { offsets, cols, vals } })
}

/// Approximate inductive prediction without any solve: the indicator picks
/// out a handful of score-matrix rows and their weighted sum is the score
/// vector. With a dense, unsparsified matrix this reproduces the exact dual
/// scores up to solver tolerance.
pub fn fast_inductive_predict<T: Scalar>(
    indicator: &IndicatorVector<T>,
    scores: &PropagatedScores<T>,
) -> Result<Prediction<T>> {
    if indicator.len() != scores.nodes {
        return Err(Error::Shape(format!(
            "indicator length {} does not match score matrix with {} rows",
            indicator.len(),
            scores.nodes
        )));
    }
    let c = scores.classes;
    if indicator.is_degenerate() {
        return Ok(Prediction {
            class: 0,
            scores: vec![T::zero(); c],
            converged: true,
            degenerate: true,
        });
    }
    let mut acc = vec![0.0f64; c];
    match &scores.layout {
        ScoreLayout::Dense(data) => {
            for &(node, w) in indicator.entries() {
                let w = w.acc();
                let row = &data[node * c..(node + 1) * c];
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += w * v.acc();
                }
            }
        }
        ScoreLayout::Csr { offsets, cols, vals } => {
            for &(node, w) in indicator.entries() {
                let w = w.acc();
                for e in offsets[node]..offsets[node + 1] {
                    acc[cols[e]] += w * vals[e].acc();
                }
            }
        }
    }
    let scores_t: Vec<T> = acc.into_iter().map(T::from_acc).collect();
    Ok(Prediction { class: argmax(&scores_t), scores: scores_t, converged: true, degenerate: false })
}

/// Writes a score matrix in the binary format from the module docs.
pub fn write_scores<T: Scalar>(path: impl AsRef<Path>, s: &PropagatedScores<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SCORES_MAGIC)?;
    w.write_all(&SCORES_VERSION.to_le_bytes())?;
    match &s.layout {
        ScoreLayout::Dense(data) => {
            w.write_all(&[0u8])?;
            w.write_all(&(s.nodes as u64).to_le_bytes())?;
            w.write_all(&(s.classes as u64).to_le_bytes())?;
            for v in data {
                w.write_all(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes())?;
            }
        }
        ScoreLayout::Csr { offsets, cols, vals } => {
            w.write_all(&[1u8])?;
            w.write_all(&(s.nodes as u64).to_le_bytes())?;
            w.write_all(&(s.classes as u64).to_le_bytes())?;
            w.write_all(&(cols.len() as u64).to_le_bytes())?;
            for &o in offsets {
                w.write_all(&(o as u64).to_le_bytes())?;
            }
            for &c in cols {
                w.write_all(&(c as u64).to_le_bytes())?;
            }
            for v in vals {
                w.write_all(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a score matrix back, validating structure.
pub fn load_scores<T: Scalar>(path: impl AsRef<Path>) -> Result<PropagatedScores<T>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: too short for a score header", path.display())))?;
    if &magic != SCORES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"ZLPY\"",
            path.display(),
            magic
        )));
    }
    let mut small = [0u8; 4];
    r.read_exact(&mut small)
        .map_err(|_| Error::Size(format!("{}: header truncated", path.display())))?;
    let version = u32::from_le_bytes(small);
    if version != SCORES_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported score version {version}",
            path.display()
        )));
    }
    let mut layout = [0u8; 1];
    r.read_exact(&mut layout)
        .map_err(|_| Error::Size(format!("{}: header truncated", path.display())))?;
    let mut wide = [0u8; 8];
    let mut next_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut wide)
            .map_err(|_| Error::Size(format!("{}: header truncated", path.display())))?;
        Ok(u64::from_le_bytes(wide))
    };
    let nodes = next_u64(&mut r)? as usize;
    let classes = next_u64(&mut r)? as usize;

    match layout[0] {
        0 => {
            let count = nodes
                .checked_mul(classes)
                .ok_or_else(|| Error::Size(format!("{}: rows*cols overflows", path.display())))?;
            let mut payload = Vec::new();
            r.read_to_end(&mut payload)?;
            if payload.len() != count * 4 {
                return Err(Error::Size(format!(
                    "{}: payload holds {} bytes, header promises {}",
                    path.display(),
                    payload.len(),
                    count * 4
                )));
            }
            let mut data = Vec::with_capacity(count);
            for chunk in payload.chunks_exact(4) {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "{}: non-finite score at flat index {}",
                        path.display(),
                        data.len()
                    )));
                }
                data.push(T::from_acc(v as f64));
            }
            PropagatedScores::dense(nodes, classes, data)
        }
        1 => {
            let nnz = next_u64(&mut r)? as usize;
            let expected = nodes
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
            let take_u64 = |at: &mut usize| {
                let v = u64::from_le_bytes(payload[*at..*at + 8].try_into().unwrap());
                *at += 8;
                v as usize
            };
            let offsets: Vec<usize> = (0..=nodes).map(|_| take_u64(&mut at)).collect();
            let cols: Vec<usize> = (0..nnz).map(|_| take_u64(&mut at)).collect();
            let mut vals = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let v = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap());
                at += 4;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "{}: non-finite score at entry {}",
                        path.display(),
                        vals.len()
                    )));
                }
                vals.push(T::from_acc(v as f64));
            }
            if offsets[0] != 0 || offsets[nodes] != nnz {
                return Err(Error::Data(format!("{}: offset bounds corrupt", path.display())));
            }
            for i in 0..nodes {
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
                if row.iter().any(|&col| col >= classes) {
                    return Err(Error::Data(format!(
                        "{}: column outside {classes} classes in row {i}",
                        path.display()
                    )));
                }
            }
            Ok(PropagatedScores { nodes, classes, layout: ScoreLayout::Csr { offsets, cols, vals } })
        }
        other => Err(Error::Format(format!("{}: unknown layout byte {other}", path.display()))),
    }
}
