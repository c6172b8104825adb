//! Selectivity and sparsity counts over activity patterns.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::patterns::{ActivityPattern, ResponseVector};
use crate::tensorio::DatasetManifest;

pub const DEFAULT_RESPONSE_BINS: usize = 50;

/// Which images a statistic covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Class(usize),
}

/// Bins are `[edges[b], edges[b+1])`, except the last which also includes
/// its upper edge. Count histograms use unit-width integer bins, so bin `b`
/// holds the items with count exactly `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    /// Integer histogram over `0..=max_value`.
    pub fn of_counts(values: impl IntoIterator<Item = usize>, max_value: usize) -> Self {
        let mut counts = vec![0u64; max_value + 1];
        let mut total = 0;
        for v in values {
            counts[v.min(max_value)] += 1;
            total += 1;
        }
        Histogram {
            edges: (0..=max_value + 1).map(|e| e as f64).collect(),
            counts,
            total,
        }
    }

    /// `n_bins` uniform bins on `[lo, hi]`; out-of-range values are clamped
    /// into the end bins.
    pub fn uniform(values: impl IntoIterator<Item = f64>, n_bins: usize, lo: f64, hi: f64) -> Self {
        let span = hi - lo;
        let mut counts = vec![0u64; n_bins];
        let mut total = 0;
        for v in values {
            let b = ((v - lo) * n_bins as f64 / span).floor();
            let b = if b.is_nan() || b < 0.0 {
                0
            } else {
                (b as usize).min(n_bins - 1)
            };
            counts[b] += 1;
            total += 1;
        }
        Histogram {
            edges: (0..=n_bins).map(|i| lo + span * i as f64 / n_bins as f64).collect(),
            counts,
            total,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// `counts[b] / total`; all zeros when empty.
    pub fn ratios(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }

    /// Mean of the binned quantity for integer count histograms.
    pub fn mean_label(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let sum: f64 = self.counts.iter().zip(&self.edges).map(|(&c, &lo)| c as f64 * lo).sum();
        sum / self.total as f64
    }

    /// `bin_lo, bin_hi, count, ratio` rows with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bin_lo\tbin_hi\tcount\tratio\n");
        for (b, ratio) in self.ratios().into_iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                self.edges[b],
                self.edges[b + 1],
                self.counts[b],
                ratio
            );
        }
        out
    }

    /// `[n_bins, 2]` matrix of `(count, ratio)` rows for rendering.
    pub fn to_matrix(&self) -> Vec<[f64; 2]> {
        self.counts
            .iter()
            .zip(self.ratios())
            .map(|(&c, r)| [c as f64, r])
            .collect()
    }
}

fn in_scope<'a>(patterns: &'a [ActivityPattern], layer: &'a str, scope: Scope) -> Result<Vec<&'a ActivityPattern>> {
    let selected: Vec<_> = patterns
        .iter()
        .filter(|p| p.layer_name == layer)
        .filter(|p| match scope {
            Scope::All => true,
            Scope::Class(c) => p.class_id == c,
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyScope(format!("layer {layer:?}, {scope:?}")));
    }
    let width = selected[0].values.len();
    if selected.iter().any(|p| p.values.len() != width) {
        return Err(Error::shape(layer, "patterns of unequal length"));
    }
    Ok(selected)
}

/// Histogram of the number of activated neurons per image.
pub fn activated_per_image(patterns: &[ActivityPattern], layer: &str, scope: Scope) -> Result<Histogram> {
    let selected = in_scope(patterns, layer, scope)?;
    let n = selected[0].values.len();
    Ok(Histogram::of_counts(selected.iter().map(|p| p.activated_count()), n))
}

/// Number of images in scope that activate each neuron.
pub fn neuron_activation_counts(patterns: &[ActivityPattern], layer: &str, scope: Scope) -> Result<Vec<usize>> {
    let selected = in_scope(patterns, layer, scope)?;
    let mut counts = vec![0usize; selected[0].values.len()];
    for p in &selected {
        for (c, &v) in counts.iter_mut().zip(&p.values) {
            if v != 0.0 {
                *c += 1;
            }
        }
    }
    Ok(counts)
}

/// Histogram over neurons of how many images activate them.
pub fn images_per_neuron(patterns: &[ActivityPattern], layer: &str, scope: Scope) -> Result<Histogram> {
    let n_images = in_scope(patterns, layer, scope)?.len();
    let counts = neuron_activation_counts(patterns, layer, scope)?;
    Ok(Histogram::of_counts(counts, n_images))
}

/// Distribution of one neuron's response over the images of one class.
pub fn neuron_response_histogram(
    vectors: &[ResponseVector],
    manifest: &DatasetManifest,
    neuron: usize,
    class_id: usize,
    layer: &str,
    n_bins: usize,
) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be positive".into()));
    }
    let mut values = Vec::new();
    for v in vectors.iter().filter(|v| v.layer_name == layer) {
        if manifest.class_of(&v.image_id)? != class_id {
            continue;
        }
        let x = v.values.get(neuron).ok_or(Error::BadNeuron {
            index: neuron,
            channels: v.values.len(),
        })?;
        values.push(*x as f64);
    }
    if values.is_empty() {
        return Err(Error::EmptyClass {
            class_id,
            layer: layer.to_string(),
        });
    }
    Ok(Histogram::uniform(values, n_bins, 0.0, 1.0))
}

/// Mean fraction of neurons activated per image at `layer`.
pub fn mean_activation_fraction(patterns: &[ActivityPattern], layer: &str, scope: Scope) -> Result<f64> {
    let selected = in_scope(patterns, layer, scope)?;
    let n = selected[0].values.len() as f64;
    let sum: f64 = selected.iter().map(|p| p.activated_count() as f64 / n).sum();
    Ok(sum / selected.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{ManifestRecord, Split};

    fn pat(id: &str, class_id: usize, mask: &[u8]) -> ActivityPattern {
        ActivityPattern {
            image_id: id.into(),
            layer_name: "conv1".into(),
            class_id,
            threshold: 0.0,
            values: mask.iter().map(|&m| m as f32 * 0.5).collect(),
        }
    }

    #[test]
    fn per_image_counts() {
        let h = activated_per_image(&[pat("a", 0, &[1, 0, 1]), pat("b", 0, &[0, 0, 0])], "conv1", Scope::All).unwrap();
        assert_eq!(h.counts, vec![1, 0, 1, 0]);
        assert_eq!(h.total, 2);
        assert_eq!(h.edges, vec![0.0, 1.0, 2.0, 3.0, 4.0]);

        let h = activated_per_image(&[pat("a", 0, &[1, 1, 1])], "conv1", Scope::All).unwrap();
        assert_eq!(h.counts[3], 1);
    }

    #[test]
    fn per_neuron_counts() {
        let ps = [pat("a", 0, &[1, 0]), pat("b", 0, &[1, 1])];
        assert_eq!(neuron_activation_counts(&ps, "conv1", Scope::All).unwrap(), vec![2, 1]);
        let h = images_per_neuron(&ps, "conv1", Scope::All).unwrap();
        assert_eq!(h.counts, vec![0, 1, 1]);

        let ps = [pat("a", 0, &[0, 1]), pat("b", 0, &[0, 1])];
        let h = images_per_neuron(&ps, "conv1", Scope::All).unwrap();
        assert_eq!(h.counts[0], 1);
    }

    #[test]
    fn class_scope_filters() {
        let ps = [pat("a", 0, &[1, 0]), pat("b", 1, &[1, 1])];
        let h = activated_per_image(&ps, "conv1", Scope::Class(1)).unwrap();
        assert_eq!(h.total, 1);
        assert_eq!(h.counts[2], 1);
        assert!(matches!(
            activated_per_image(&ps, "conv1", Scope::Class(7)),
            Err(Error::EmptyScope(_))
        ));
        assert!(matches!(
            activated_per_image(&ps, "conv9", Scope::All),
            Err(Error::EmptyScope(_))
        ));
    }

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest::new(
            (0..n)
                .map(|i| ManifestRecord {
                    image_id: format!("i{i}"),
                    class_id: 0,
                    class_name: "airplane".into(),
                    tensor_path: String::new(),
                    split: Split::Train,
                })
                .collect(),
        )
        .unwrap()
    }

    fn vec_of(id: &str, values: Vec<f32>) -> ResponseVector {
        ResponseVector {
            image_id: id.into(),
            layer_name: "conv1".into(),
            values,
        }
    }

    #[test]
    fn response_histogram_ratios() {
        let m = manifest(4);
        let vs: Vec<_> = [0.0, 0.0, 1.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| vec_of(&format!("i{i}"), vec![v]))
            .collect();
        let h = neuron_response_histogram(&vs, &m, 0, 0, "conv1", 2).unwrap();
        assert_eq!(h.ratios(), vec![0.5, 0.5]);

        let same: Vec<_> = (0..4).map(|i| vec_of(&format!("i{i}"), vec![0.3])).collect();
        let h = neuron_response_histogram(&same, &m, 0, 0, "conv1", 50).unwrap();
        assert_eq!(h.ratios().iter().filter(|&&r| r == 1.0).count(), 1);
    }

    #[test]
    fn one_lands_in_last_bin() {
        let m = manifest(1);
        let h = neuron_response_histogram(&[vec_of("i0", vec![1.0])], &m, 0, 0, "conv1", 50).unwrap();
        assert_eq!(h.counts[49], 1);
        assert_eq!(h.n_bins(), 50);
    }

    #[test]
    fn bad_neuron() {
        let m = manifest(1);
        assert!(matches!(
            neuron_response_histogram(&[vec_of("i0", vec![1.0])], &m, 3, 0, "conv1", 10),
            Err(Error::BadNeuron { index: 3, .. })
        ));
    }

    #[test]
    fn tsv_has_header_and_rows() {
        let h = Histogram::of_counts([0, 1, 1], 2);
        let tsv = h.to_tsv();
        let lines: Vec<_> = tsv.lines().collect();
        assert_eq!(lines[0], "bin_lo\tbin_hi\tcount\tratio");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1\t2\t2\t"));
    }
}
