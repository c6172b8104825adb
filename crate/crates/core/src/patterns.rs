//! Feature maps to thresholded activity patterns.
//!
//! Per image and tap layer: the `[C,H,W]` stack is divided by its joint
//! maximum, each channel is summarised into one response value, and the
//! resulting vector is sparsified against a per-class, per-layer threshold
//! (the mean of all response values of that class at that layer).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::ForwardTrace;
use crate::tensorio::{read_tensor, write_tensor, DatasetManifest, Tensor};

/// How a normalized map is reduced to a single response value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FractionMode {
    /// Mean of the `ceil(fraction * H * W)` largest values.
    #[default]
    TopFractionMean,
    /// `fraction * mean(map)`.
    ScaledMean,
}

impl FromStr for FractionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" | "top_fraction_mean" => Ok(FractionMode::TopFractionMean),
            "scaled" | "scaled_mean" => Ok(FractionMode::ScaledMean),
            other => Err(Error::InvalidArgument(format!("unknown fraction mode {other:?}"))),
        }
    }
}

impl fmt::Display for FractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FractionMode::TopFractionMean => "top_fraction_mean",
            FractionMode::ScaledMean => "scaled_mean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub fraction: f64,
    pub mode: FractionMode,
    pub strict_threshold: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            fraction: 0.8,
            mode: FractionMode::TopFractionMean,
            strict_threshold: true,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fraction {} outside (0, 1]",
                self.fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseVector {
    pub image_id: String,
    pub layer_name: String,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassThreshold {
    pub class_id: usize,
    pub layer_name: String,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityPattern {
    pub image_id: String,
    pub layer_name: String,
    pub class_id: usize,
    pub threshold: f64,
    pub values: Vec<f32>,
}

impl ActivityPattern {
    pub fn activated_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v != 0.0).collect()
    }

    pub fn activated_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Divides a feature map by its maximum. An all-nonpositive map becomes
/// all zeros.
pub fn normalize_fmap(m: &Tensor) -> Result<Tensor> {
    if !m.is_finite() {
        return Err(Error::NonFiniteInput("feature map".into()));
    }
    let max = m.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let data = if max > 0.0 {
        m.data().iter().map(|&v| v / max).collect()
    } else {
        vec![0.0; m.len()]
    };
    Tensor::new(m.dims().to_vec(), data)
}

/// Summarises one normalized channel into a response value.
pub fn response_value(g: &[f32], cfg: &AnalysisConfig) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::EmptyInput("feature map channel".into()));
    }
    match cfg.mode {
        FractionMode::ScaledMean => {
            let sum: f64 = g.iter().map(|&v| v as f64).sum();
            Ok(cfg.fraction * (sum / g.len() as f64))
        }
        FractionMode::TopFractionMean => {
            let count = top_count(g.len(), cfg.fraction);
            let mut sorted = g.to_vec();
            sorted.sort_unstable_by(|a, b| b.total_cmp(a));
            let sum: f64 = sorted[..count].iter().map(|&v| v as f64).sum();
            Ok(sum / count as f64)
        }
    }
}

/// `ceil(fraction * n)` clamped to `1..=n`, with a small guard so that
/// products like `0.8 * 5` that land a hair above an integer do not round up.
fn top_count(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    let nearest = exact.round();
    let k = if (exact - nearest).abs() < 1e-9 * n as f64 {
        nearest
    } else {
        exact.ceil()
    };
    (k as usize).clamp(1, n)
}

/// Response vector for one `[C,H,W]` feature-map stack.
pub fn response_vector(
    image_id: &str,
    layer_name: &str,
    fmap: &Tensor,
    cfg: &AnalysisConfig,
) -> Result<ResponseVector> {
    let (c, _, _) = fmap.chw().ok_or_else(|| {
        Error::shape(
            layer_name,
            format!("feature map dims {:?} are not [C,H,W]", fmap.dims()),
        )
    })?;
    let g = normalize_fmap(fmap)?;
    let values = (0..c)
        .map(|ch| {
            let channel: Vec<f32> = g.channel(ch).iter().map(|&v| v.max(0.0)).collect();
            response_value(&channel, cfg).map(|v| v as f32)
        })
        .collect::<Result<_>>()?;
    Ok(ResponseVector {
        image_id: image_id.to_string(),
        layer_name: layer_name.to_string(),
        values,
    })
}

/// One response vector per (image, tap layer), in trace order then tap order.
pub fn build_response_vectors(traces: &[ForwardTrace], cfg: &AnalysisConfig) -> Result<Vec<ResponseVector>> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::EmptyInput("no forward traces".into()));
    }
    let per_image: Vec<Vec<ResponseVector>> = traces
        .par_iter()
        .map(|trace| {
            trace
                .taps
                .iter()
                .map(|tap| response_vector(&trace.image_id, &tap.layer_name, &tap.fmap, cfg))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Mean of all response-vector entries per (class, layer). Entries are
/// summed in (image_id, channel) order so the result does not depend on
/// input order.
pub fn class_thresholds(vectors: &[ResponseVector], manifest: &DatasetManifest) -> Result<Vec<ClassThreshold>> {
    let mut groups: BTreeMap<(String, usize), Vec<&ResponseVector>> = BTreeMap::new();
    let mut layers: Vec<String> = Vec::new();
    for v in vectors {
        let class_id = manifest.class_of(&v.image_id)?;
        if !layers.contains(&v.layer_name) {
            layers.push(v.layer_name.clone());
        }
        groups.entry((v.layer_name.clone(), class_id)).or_default().push(v);
    }
    let mut out = Vec::new();
    for layer in &layers {
        for class_id in 0..manifest.n_classes() {
            let Some(group) = groups.get_mut(&(layer.clone(), class_id)) else {
                return Err(Error::EmptyClass {
                    class_id,
                    layer: layer.clone(),
                });
            };
            group.sort_by(|a, b| a.image_id.cmp(&b.image_id));
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for v in group.iter() {
                for &x in &v.values {
                    sum += x as f64;
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::EmptyClass {
                    class_id,
                    layer: layer.clone(),
                });
            }
            out.push(ClassThreshold {
                class_id,
                layer_name: layer.clone(),
                t: sum / n as f64,
            });
        }
    }
    Ok(out)
}

pub fn apply_threshold(
    v: &ResponseVector,
    class_id: usize,
    t: &ClassThreshold,
    cfg: &AnalysisConfig,
) -> Result<ActivityPattern> {
    if v.layer_name != t.layer_name {
        return Err(Error::LayerMismatch {
            expected: t.layer_name.clone(),
            found: v.layer_name.clone(),
        });
    }
    let keep = |x: f32| {
        let x = x as f64;
        if cfg.strict_threshold {
            x > t.t
        } else {
            x >= t.t
        }
    };
    let values = v.values.iter().map(|&x| if keep(x) { x } else { 0.0 }).collect();
    Ok(ActivityPattern {
        image_id: v.image_id.clone(),
        layer_name: v.layer_name.clone(),
        class_id,
        threshold: t.t,
        values,
    })
}

/// Thresholds every vector with its own class's threshold at its layer.
pub fn build_patterns(
    vectors: &[ResponseVector],
    thresholds: &[ClassThreshold],
    manifest: &DatasetManifest,
    cfg: &AnalysisConfig,
) -> Result<Vec<ActivityPattern>> {
    let lookup: BTreeMap<(&str, usize), &ClassThreshold> = thresholds
        .iter()
        .map(|t| ((t.layer_name.as_str(), t.class_id), t))
        .collect();
    vectors
        .iter()
        .map(|v| {
            let class_id = manifest.class_of(&v.image_id)?;
            let t = lookup
                .get(&(v.layer_name.as_str(), class_id))
                .ok_or_else(|| Error::EmptyClass {
                    class_id,
                    layer: v.layer_name.clone(),
                })?;
            apply_threshold(v, class_id, t, cfg)
        })
        .collect()
}

/// Rows of one layer stored as an `[n_images, n_channels]` tensor plus an
/// index of image ids, one per line.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternTable {
    pub layer_name: String,
    pub image_ids: Vec<String>,
    pub values: Tensor,
}

impl PatternTable {
    pub fn from_rows<'a>(layer_name: &str, rows: impl IntoIterator<Item = (&'a str, &'a [f32])>) -> Result<Self> {
        let mut image_ids = Vec::new();
        let mut data = Vec::new();
        let mut width = None;
        for (id, values) in rows {
            if *width.get_or_insert(values.len()) != values.len() {
                return Err(Error::shape(layer_name, "rows of unequal length"));
            }
            image_ids.push(id.to_string());
            data.extend_from_slice(values);
        }
        let width = width.ok_or_else(|| Error::EmptyInput(format!("no rows for layer {layer_name:?}")))?;
        Ok(PatternTable {
            layer_name: layer_name.to_string(),
            values: Tensor::new(vec![image_ids.len(), width], data)?,
            image_ids,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.n_channels();
        &self.values.data()[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.image_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.row(i)))
    }

    /// Writes `<dir>/<layer>.<kind>.rstf` and `<dir>/<layer>.<kind>.index`.
    pub fn save(&self, dir: &Path, kind: &str) -> Result<()> {
        write_tensor(&self.values, dir.join(format!("{}.{kind}.rstf", self.layer_name)))?;
        let index = dir.join(format!("{}.{kind}.index", self.layer_name));
        let mut text = String::new();
        for id in &self.image_ids {
            text.push_str(id);
            text.push('\n');
        }
        fs::write(&index, text).map_err(|e| Error::io(&index, e))
    }

    pub fn load(dir: &Path, layer_name: &str, kind: &str) -> Result<Self> {
        let values = read_tensor(dir.join(format!("{layer_name}.{kind}.rstf")))?;
        let index = dir.join(format!("{layer_name}.{kind}.index"));
        let text = fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
        let image_ids: Vec<String> = text.lines().map(str::to_string).collect();
        if values.ndim() != 2 || values.dims()[0] != image_ids.len() {
            return Err(Error::CorruptFile(format!(
                "{} rows in index, tensor dims {:?}",
                image_ids.len(),
                values.dims()
            )));
        }
        Ok(PatternTable {
            layer_name: layer_name.to_string(),
            image_ids,
            values,
        })
    }

    pub fn to_vectors(&self) -> Vec<ResponseVector> {
        self.rows()
            .map(|(id, row)| ResponseVector {
                image_id: id.to_string(),
                layer_name: self.layer_name.clone(),
                values: row.to_vec(),
            })
            .collect()
    }

    /// Rebuilds patterns using the stored thresholds for class lookup.
    pub fn to_patterns(
        &self,
        manifest: &DatasetManifest,
        thresholds: &[ClassThreshold],
    ) -> Result<Vec<ActivityPattern>> {
        self.rows()
            .map(|(id, row)| {
                let class_id = manifest.class_of(id)?;
                let threshold = thresholds
                    .iter()
                    .find(|t| t.class_id == class_id && t.layer_name == self.layer_name)
                    .map(|t| t.t)
                    .ok_or_else(|| Error::EmptyClass {
                        class_id,
                        layer: self.layer_name.clone(),
                    })?;
                Ok(ActivityPattern {
                    image_id: id.to_string(),
                    layer_name: self.layer_name.clone(),
                    class_id,
                    threshold,
                    values: row.to_vec(),
                })
            })
            .collect()
    }
}

/// Tab-separated `class_id, layer_name, t` with a header line.
pub fn write_thresholds(thresholds: &[ClassThreshold], path: &Path) -> Result<()> {
    let mut text = String::from("class_id\tlayer_name\tt\n");
    for t in thresholds {
        text.push_str(&format!("{}\t{}\t{}\n", t.class_id, t.layer_name, t.t));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_thresholds(path: &Path) -> Result<Vec<ClassThreshold>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let loc = format!("{}:{}", path.display(), i + 1);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(loc, "expected 3 fields"));
            }
            Ok(ClassThreshold {
                class_id: f[0].parse().map_err(|e| Error::parse(&loc, format!("{e}")))?,
                layer_name: f[1].to_string(),
                t: f[2].parse().map_err(|e| Error::parse(&loc, format!("{e}")))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{ManifestRecord, Split};

    fn t(dims: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::new(dims, data).unwrap()
    }

    fn manifest(classes: &[(&str, usize)]) -> DatasetManifest {
        DatasetManifest::new(
            classes
                .iter()
                .map(|&(id, c)| ManifestRecord {
                    image_id: id.into(),
                    class_id: c,
                    class_name: format!("class{c}"),
                    tensor_path: String::new(),
                    split: Split::Train,
                })
                .collect(),
        )
        .unwrap()
    }

    fn rv(id: &str, values: Vec<f32>) -> ResponseVector {
        ResponseVector {
            image_id: id.into(),
            layer_name: "conv1".into(),
            values,
        }
    }

    #[test]
    fn normalize_divides_by_max() {
        let g = normalize_fmap(&t(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(g.data(), &[0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn normalize_all_zero_map() {
        let g = normalize_fmap(&t(vec![1, 2, 2], vec![0.0; 4])).unwrap();
        assert_eq!(g.data(), &[0.0; 4]);
        let g = normalize_fmap(&t(vec![1, 1, 2], vec![-1.0, -2.0])).unwrap();
        assert_eq!(g.data(), &[0.0; 2]);
    }

    #[test]
    fn normalize_rejects_nan() {
        assert!(matches!(
            normalize_fmap(&t(vec![1], vec![f32::NAN])),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn response_value_examples() {
        let cfg = AnalysisConfig::default();
        assert_eq!(response_value(&[0.3; 7], &cfg).unwrap() as f32, 0.3);
        assert_eq!(response_value(&[1.0, 0.0, 0.0, 0.0, 0.0], &cfg).unwrap(), 0.25);
        let scaled = AnalysisConfig {
            mode: FractionMode::ScaledMean,
            ..cfg
        };
        let v = response_value(&[1.0, 0.0, 0.0, 0.0, 0.0], &scaled).unwrap();
        assert!((v - 0.16).abs() < 1e-12);
        assert!(matches!(response_value(&[], &cfg), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn top_count_rounds_up_only_when_needed() {
        assert_eq!(top_count(5, 0.8), 4);
        assert_eq!(top_count(10, 0.8), 8);
        assert_eq!(top_count(3025, 0.8), 2420);
        assert_eq!(top_count(3, 0.5), 2);
        assert_eq!(top_count(4, 0.01), 1);
        assert_eq!(top_count(4, 1.0), 4);
    }

    #[test]
    fn joint_normalization_across_channels() {
        let v = response_vector(
            "a",
            "conv1",
            &t(vec![2, 1, 1], vec![4.0, 2.0]),
            &AnalysisConfig::default(),
        )
        .unwrap();
        assert_eq!(v.values, vec![1.0, 0.5]);
    }

    #[test]
    fn threshold_means() {
        let m = manifest(&[("a", 0)]);
        let th = class_thresholds(&[rv("a", vec![0.4])], &m).unwrap();
        assert_eq!(th[0].t as f32, 0.4);

        let m = manifest(&[("a", 0), ("b", 0)]);
        let th = class_thresholds(&[rv("a", vec![0.2, 0.4]), rv("b", vec![0.6, 0.8])], &m).unwrap();
        assert!((th[0].t - 0.5).abs() < 1e-7);
    }

    #[test]
    fn thresholds_are_per_class_and_order_free() {
        let m = manifest(&[("a", 0), ("b", 0), ("c", 1)]);
        let vs = vec![
            rv("a", vec![0.1, 0.7]),
            rv("c", vec![0.9, 0.9]),
            rv("b", vec![0.3, 0.2]),
        ];
        let th1 = class_thresholds(&vs, &m).unwrap();
        let rev: Vec<_> = vs.iter().rev().cloned().collect();
        let th2 = class_thresholds(&rev, &m).unwrap();
        assert_eq!(th1, th2);
        assert_eq!(th1[1].t as f32, 0.9);
    }

    #[test]
    fn missing_class_is_error() {
        let m = manifest(&[("a", 0), ("b", 1)]);
        assert!(matches!(
            class_thresholds(&[rv("a", vec![0.5])], &m),
            Err(Error::EmptyClass { class_id: 1, .. })
        ));
    }

    #[test]
    fn threshold_application() {
        let cfg = AnalysisConfig::default();
        let th = ClassThreshold {
            class_id: 0,
            layer_name: "conv1".into(),
            t: 0.5,
        };
        let p = apply_threshold(&rv("a", vec![0.2, 0.6]), 0, &th, &cfg).unwrap();
        assert_eq!(p.values, vec![0.0, 0.6]);
        assert_eq!(p.activated_mask(), vec![false, true]);

        let p = apply_threshold(&rv("a", vec![0.1, 0.3]), 0, &th, &cfg).unwrap();
        assert_eq!(p.activated_count(), 0);

        let p = apply_threshold(&rv("a", vec![0.5]), 0, &th, &cfg).unwrap();
        assert_eq!(p.values, vec![0.0]);
        let lax = AnalysisConfig {
            strict_threshold: false,
            ..cfg
        };
        let p = apply_threshold(&rv("a", vec![0.5]), 0, &th, &lax).unwrap();
        assert_eq!(p.values, vec![0.5]);
    }

    #[test]
    fn layer_mismatch() {
        let th = ClassThreshold {
            class_id: 0,
            layer_name: "conv2".into(),
            t: 0.5,
        };
        assert!(matches!(
            apply_threshold(&rv("a", vec![0.2]), 0, &th, &AnalysisConfig::default()),
            Err(Error::LayerMismatch { .. })
        ));
    }

    #[test]
    fn pattern_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = [0.1f32, 0.2];
        let b = [0.3f32, 0.0];
        let table = PatternTable::from_rows("conv1", [("a", &a[..]), ("b", &b[..])]).unwrap();
        table.save(dir.path(), "patterns").unwrap();
        let back = PatternTable::load(dir.path(), "conv1", "patterns").unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn thresholds_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tsv");
        let th = vec![ClassThreshold {
            class_id: 3,
            layer_name: "conv5".into(),
            t: 0.123456789012345,
        }];
        write_thresholds(&th, &path).unwrap();
        assert_eq!(read_thresholds(&path).unwrap(), th);
    }

    #[test]
    fn bad_fraction_rejected() {
        let cfg = AnalysisConfig {
            fraction: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
