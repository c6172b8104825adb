//! Representational dissimilarity matrices and their comparison.
//!
//! An RDM holds `1 - pearson(p_i, p_j)` for every pair of activity
//! patterns. RDMs can be rank-transformed for display, correlated with each
//! other, and embedded with classical MDS.

mod compare;
mod mds;
mod subsets;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::patterns::ActivityPattern;
use crate::tensorio::{read_tensor, write_tensor, Tensor};

pub use compare::{correlation, rdm_correlation, rdm_distance_matrix, CorrelationMethod};
pub use mds::{classical_mds, jacobi_eigen, mds_fit_correlation, MdsEmbedding, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
pub use subsets::{build_subsets, read_confidences, SubsetSpec};

/// Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 entries".into()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RdmLabel {
    pub image_id: String,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdmMode {
    Raw,
    Rank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    labels: Vec<RdmLabel>,
    d: Matrix,
    mode: RdmMode,
    degenerate_pairs: Vec<(usize, usize)>,
}

impl Rdm {
    /// RDM over arbitrary equal-length vectors. Pairs where either vector
    /// is constant get dissimilarity 1 and are listed in
    /// [`Rdm::degenerate_pairs`].
    pub fn from_vectors(labels: Vec<RdmLabel>, vectors: &[Vec<f64>]) -> Result<Self> {
        let n = vectors.len();
        if n < 2 {
            return Err(Error::TooFewPatterns(n));
        }
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {n} vectors",
                labels.len()
            )));
        }
        let width = vectors[0].len();
        if vectors.iter().any(|v| v.len() != width) {
            return Err(Error::shape("rdm", "patterns of unequal length"));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("activity pattern".into()));
        }
        let rows: Vec<Vec<(f64, bool)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| match pearson(&vectors[i], &vectors[j]) {
                        Ok(r) => Ok((1.0 - r, false)),
                        Err(Error::ZeroVariance) => Ok((1.0, true)),
                        Err(e) => Err(e),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let mut d = Matrix::zeros(n, n);
        let mut degenerate_pairs = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            for (offset, (v, degenerate)) in row.into_iter().enumerate() {
                let j = i + 1 + offset;
                d[(i, j)] = v;
                d[(j, i)] = v;
                if degenerate {
                    degenerate_pairs.push((i, j));
                }
            }
        }
        Ok(Rdm {
            labels,
            d,
            mode: RdmMode::Raw,
            degenerate_pairs,
        })
    }

    /// Wraps an existing matrix, checking symmetry and the zero diagonal.
    pub fn from_matrix(labels: Vec<RdmLabel>, d: Matrix, mode: RdmMode) -> Result<Self> {
        let n = labels.len();
        if d.rows() != n || d.cols() != n {
            return Err(Error::InvalidArgument(format!(
                "{}x{} matrix for {n} labels",
                d.rows(),
                d.cols()
            )));
        }
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                if d[(i, j)] != d[(j, i)] {
                    return Err(Error::InvalidArgument(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Rdm {
            labels,
            d,
            mode,
            degenerate_pairs: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[RdmLabel] {
        &self.labels
    }

    pub fn matrix(&self) -> &Matrix {
        &self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    pub fn mode(&self) -> RdmMode {
        self.mode
    }

    /// Pairs `(i, j)`, `i < j`, where a constant pattern forced `d = 1`.
    pub fn degenerate_pairs(&self) -> &[(usize, usize)] {
        &self.degenerate_pairs
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        self.d.upper_triangle()
    }

    /// Off-diagonal dissimilarities split into same-class and
    /// different-class pairs.
    pub fn intra_inter(&self) -> (Vec<f64>, Vec<f64>) {
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.labels[i].class_id == self.labels[j].class_id {
                    intra.push(self.d[(i, j)]);
                } else {
                    inter.push(self.d[(i, j)]);
                }
            }
        }
        (intra, inter)
    }

    fn labels_path(path: &Path) -> PathBuf {
        let mut os = path.as_os_str().to_owned();
        os.push(".labels");
        PathBuf::from(os)
    }

    /// Writes the matrix as an `[n, n]` RSTF tensor and the labels to
    /// `<path>.labels`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let n = self.len();
        let data = self.d.data().iter().map(|&v| v as f32).collect();
        write_tensor(&Tensor::new(vec![n, n], data)?, path)?;
        let mut text = format!(
            "# mode={}\n",
            match self.mode {
                RdmMode::Raw => "raw",
                RdmMode::Rank => "rank",
            }
        );
        for l in &self.labels {
            text.push_str(&format!("{}\t{}\n", l.image_id, l.class_id));
        }
        let lp = Self::labels_path(path);
        fs::write(&lp, text).map_err(|e| Error::io(&lp, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let t = read_tensor(path)?;
        let lp = Self::labels_path(path);
        let text = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
        let mut mode = RdmMode::Raw;
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("# mode=") {
                mode = match rest {
                    "rank" => RdmMode::Rank,
                    _ => RdmMode::Raw,
                };
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = format!("{}:{}", lp.display(), i + 1);
            let (id, class) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&loc, "expected image_id<TAB>class_id"))?;
            labels.push(RdmLabel {
                image_id: id.to_string(),
                class_id: class.parse().map_err(|e| Error::parse(&loc, format!("{e}")))?,
            });
        }
        let n = labels.len();
        if t.dims() != [n, n] {
            return Err(Error::CorruptFile(format!("{n} labels but tensor dims {:?}", t.dims())));
        }
        let d = Matrix::from_vec(n, n, t.data().iter().map(|&v| v as f64).collect())?;
        Rdm::from_matrix(labels, d, mode)
    }
}

/// RDM over activity patterns of one layer, in the given order.
pub fn build_rdm(patterns: &[ActivityPattern]) -> Result<Rdm> {
    if patterns.len() < 2 {
        return Err(Error::TooFewPatterns(patterns.len()));
    }
    let layer = &patterns[0].layer_name;
    if let Some(p) = patterns.iter().find(|p| &p.layer_name != layer) {
        return Err(Error::LayerMismatch {
            expected: layer.clone(),
            found: p.layer_name.clone(),
        });
    }
    let labels = patterns
        .iter()
        .map(|p| RdmLabel {
            image_id: p.image_id.clone(),
            class_id: p.class_id,
        })
        .collect();
    let vectors: Vec<Vec<f64>> = patterns
        .iter()
        .map(|p| p.values.iter().map(|&v| v as f64).collect())
        .collect();
    let rdm = Rdm::from_vectors(labels, &vectors)?;
    if !rdm.degenerate_pairs.is_empty() {
        log::warn!(
            "layer {layer}: {} pattern pairs involve a constant pattern; assigned dissimilarity 1",
            rdm.degenerate_pairs.len()
        );
    }
    Ok(rdm)
}

/// Replaces the off-diagonal entries by their average ranks mapped onto
/// `[0, 1]` via `(rank - 1) / (m - 1)`. A single pair maps to 0.5.
pub fn rank_transform(r: &Rdm) -> Rdm {
    let n = r.len();
    let upper = r.upper_triangle();
    let m = upper.len();
    let ranks = average_ranks(&upper);
    let scaled: Vec<f64> = if m <= 1 {
        vec![0.5; m]
    } else {
        ranks.iter().map(|&rk| (rk - 1.0) / (m - 1) as f64).collect()
    };
    let mut d = Matrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            d[(i, j)] = scaled[k];
            d[(j, i)] = scaled[k];
            k += 1;
        }
    }
    Rdm {
        labels: r.labels.clone(),
        d,
        mode: RdmMode::Rank,
        degenerate_pairs: r.degenerate_pairs.clone(),
    }
}

/// Orders patterns to follow `image_ids`; unknown ids are an error.
pub fn select_patterns<'a>(patterns: &'a [ActivityPattern], image_ids: &[String]) -> Result<Vec<&'a ActivityPattern>> {
    let mut by_id: Vec<(&str, &ActivityPattern)> = patterns.iter().map(|p| (p.image_id.as_str(), p)).collect();
    by_id.sort_by(|a, b| a.0.cmp(b.0));
    image_ids
        .iter()
        .map(|id| {
            by_id
                .binary_search_by(|(k, _)| k.cmp(&id.as_str()))
                .map(|i| by_id[i].1)
                .map_err(|_| Error::UnknownImage(id.clone()))
        })
        .collect()
}
