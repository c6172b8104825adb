//! Per-layer GAP classifier heads and class activation maps.
//!
//! A head is a multinomial logistic regression on the globally averaged
//! feature maps of one layer. Because averaging is linear, projecting a
//! class's head weights back onto the feature maps,
//! `M_c(y, x) = sum_k w[c][k] * f_k(y, x)`, yields a map whose spatial mean
//! plus the class bias is exactly that class's logit.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{gap, ForwardTrace};
use crate::tensorio::{read_tensor, write_tensor, DatasetManifest, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_iters: usize,
    /// Stop once the largest absolute gradient entry drops below this.
    pub grad_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            l2: 1e-4,
            max_iters: 5000,
            grad_tol: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0 && self.l2 >= 0.0 && self.grad_tol > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("bad training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainMeta {
    pub iterations: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapHead {
    pub layer_name: String,
    n_classes: usize,
    n_channels: usize,
    /// Row-major `[n_classes, n_channels]`.
    w: Vec<f32>,
    b: Vec<f32>,
    pub train_meta: TrainMeta,
}

impl GapHead {
    pub fn new(layer_name: &str, n_classes: usize, n_channels: usize, w: Vec<f32>, b: Vec<f32>) -> Result<Self> {
        if w.len() != n_classes * n_channels || b.len() != n_classes {
            return Err(Error::shape(
                layer_name,
                format!(
                    "head weights {} / bias {} for {n_classes} classes x {n_channels} channels",
                    w.len(),
                    b.len()
                ),
            ));
        }
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("head for {layer_name:?}")));
        }
        Ok(GapHead {
            layer_name: layer_name.to_string(),
            n_classes,
            n_channels,
            w,
            b,
            train_meta: TrainMeta::default(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn weights(&self, class_id: usize) -> &[f32] {
        &self.w[class_id * self.n_channels..(class_id + 1) * self.n_channels]
    }

    pub fn bias(&self) -> &[f32] {
        &self.b
    }

    pub fn logits(&self, features: &[f32]) -> Result<Vec<f64>> {
        if features.len() != self.n_channels {
            return Err(Error::shape(
                &self.layer_name,
                format!("{} features for a {}-channel head", features.len(), self.n_channels),
            ));
        }
        Ok((0..self.n_classes)
            .map(|c| {
                let dot: f64 = self
                    .weights(c)
                    .iter()
                    .zip(features)
                    .map(|(&w, &f)| w as f64 * f as f64)
                    .sum();
                dot + self.b[c] as f64
            })
            .collect())
    }

    /// Writes `<layer>.head.w.rstf`, `<layer>.head.b.rstf` and a
    /// `<layer>.head.meta` text sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let stem = &self.layer_name;
        write_tensor(
            &Tensor::new(vec![self.n_classes, self.n_channels], self.w.clone())?,
            dir.join(format!("{stem}.head.w.rstf")),
        )?;
        write_tensor(
            &Tensor::new(vec![self.n_classes], self.b.clone())?,
            dir.join(format!("{stem}.head.b.rstf")),
        )?;
        let meta = format!(
            "layer_name\t{}\niterations\t{}\nfinal_loss\t{}\nfinal_grad_norm\t{}\n",
            self.layer_name, self.train_meta.iterations, self.train_meta.final_loss, self.train_meta.final_grad_norm
        );
        let path = dir.join(format!("{stem}.head.meta"));
        fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, layer_name: &str) -> Result<Self> {
        let w = read_tensor(dir.join(format!("{layer_name}.head.w.rstf")))?;
        let b = read_tensor(dir.join(format!("{layer_name}.head.b.rstf")))?;
        let &[n_classes, n_channels] = w.dims() else {
            return Err(Error::CorruptFile(format!("head weight dims {:?}", w.dims())));
        };
        let mut head = GapHead::new(layer_name, n_classes, n_channels, w.into_data(), b.into_data())?;
        let path = dir.join(format!("{layer_name}.head.meta"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for line in text.lines() {
            let Some((key, value)) = line.split_once('\t') else {
                continue;
            };
            let bad = |e: &dyn std::fmt::Display| Error::parse(path.display().to_string(), format!("{key}: {e}"));
            match key {
                "iterations" => head.train_meta.iterations = value.parse().map_err(|e| bad(&e))?,
                "final_loss" => head.train_meta.final_loss = value.parse().map_err(|e| bad(&e))?,
                "final_grad_norm" => head.train_meta.final_grad_norm = value.parse().map_err(|e| bad(&e))?,
                _ => {}
            }
        }
        Ok(head)
    }
}

/// Loss and gradient of the regularized softmax cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub loss: f64,
    /// Row-major `[n_classes, n_features]`.
    pub grad_w: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// `mean_i CE(softmax(W x_i + b), y_i) + (l2 / 2) ||W||_F^2`; the bias is
/// not regularized.
pub fn softmax_objective(
    features: &Matrix,
    labels: &[usize],
    n_classes: usize,
    l2: f64,
    w: &[f64],
    b: &[f64],
) -> ObjectiveValue {
    let n = features.rows();
    let d = features.cols();
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; n_classes * d];
    let mut grad_b = vec![0.0; n_classes];
    let mut z = vec![0.0; n_classes];
    for (i, &y) in labels.iter().enumerate() {
        let x = features.row(i);
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = b[c] + w[c * d..(c + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        loss += log_norm - z[y];
        for c in 0..n_classes {
            let p = (z[c] - log_norm).exp();
            let err = p - if c == y { 1.0 } else { 0.0 };
            grad_b[c] += err;
            for (g, &xv) in grad_w[c * d..(c + 1) * d].iter_mut().zip(x) {
                *g += err * xv;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    loss *= inv_n;
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (g, &wv) in grad_w.iter_mut().zip(w) {
        *g = *g * inv_n + l2 * wv;
    }
    for g in &mut grad_b {
        *g *= inv_n;
    }
    ObjectiveValue { loss, grad_w, grad_b }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn train_gap_head(
    layer_name: &str,
    features: &Matrix,
    labels: &[usize],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<GapHead> {
    train_gap_head_observed(layer_name, features, labels, n_classes, cfg, |_, _| {})
}

/// Full-batch gradient descent from zero. `observer` sees the loss before
/// every update.
pub fn train_gap_head_observed(
    layer_name: &str,
    features: &Matrix,
    labels: &[usize],
    n_classes: usize,
    cfg: &TrainConfig,
    mut observer: impl FnMut(usize, f64),
) -> Result<GapHead> {
    cfg.validate()?;
    if features.rows() != labels.len() {
        return Err(Error::shape(
            layer_name,
            format!("{} feature rows for {} labels", features.rows(), labels.len()),
        ));
    }
    if features.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!("GAP features of {layer_name:?}")));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::BadClass {
            class_id: bad,
            n_classes,
        });
    }
    let first = labels.first().ok_or(Error::DegenerateLabels)?;
    if labels.iter().all(|y| y == first) {
        return Err(Error::DegenerateLabels);
    }

    let d = features.cols();
    let mut w = vec![0.0; n_classes * d];
    let mut b = vec![0.0; n_classes];
    let mut iterations = 0;
    let mut value = softmax_objective(features, labels, n_classes, cfg.l2, &w, &b);
    loop {
        if !value.loss.is_finite() {
            return Err(Error::Diverged(iterations));
        }
        observer(iterations, value.loss);
        let grad_norm = max_abs(&value.grad_w).max(max_abs(&value.grad_b));
        if grad_norm < cfg.grad_tol || iterations >= cfg.max_iters {
            let w32: Vec<f32> = w.iter().map(|&v| v as f32).collect();
            let b32: Vec<f32> = b.iter().map(|&v| v as f32).collect();
            let mut head = GapHead::new(layer_name, n_classes, d, w32, b32)?;
            head.train_meta = TrainMeta {
                iterations,
                final_loss: value.loss,
                final_grad_norm: grad_norm,
            };
            return Ok(head);
        }
        for (wv, g) in w.iter_mut().zip(&value.grad_w) {
            *wv -= cfg.learning_rate * g;
        }
        for (bv, g) in b.iter_mut().zip(&value.grad_b) {
            *bv -= cfg.learning_rate * g;
        }
        iterations += 1;
        value = softmax_objective(features, labels, n_classes, cfg.l2, &w, &b);
    }
}

/// Softmax probabilities, max-shifted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Top-`k` classes by probability, ties broken by class id.
pub fn predict(head: &GapHead, gap_features: &[f32], k: usize) -> Result<Vec<(usize, f64)>> {
    let probs = softmax(&head.logits(gap_features)?);
    let mut ranked: Vec<(usize, f64)> = probs.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k.min(head.n_classes));
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub image_id: String,
    pub layer_name: String,
    pub class_id: usize,
    /// `[H, W]`.
    pub grid: Tensor,
}

pub fn cam_map(image_id: &str, fmap: &Tensor, head: &GapHead, class_id: usize) -> Result<CamMap> {
    let (c, h, w) = fmap.chw().ok_or_else(|| {
        Error::shape(
            &head.layer_name,
            format!("feature map dims {:?} are not [C,H,W]", fmap.dims()),
        )
    })?;
    if c != head.n_channels {
        return Err(Error::shape(
            &head.layer_name,
            format!("{c} feature maps for a {}-channel head", head.n_channels),
        ));
    }
    if class_id >= head.n_classes {
        return Err(Error::BadClass {
            class_id,
            n_classes: head.n_classes,
        });
    }
    let weights = head.weights(class_id);
    let mut acc = vec![0.0f64; h * w];
    for (k, &wk) in weights.iter().enumerate() {
        for (a, &f) in acc.iter_mut().zip(fmap.channel(k)) {
            *a += wk as f64 * f as f64;
        }
    }
    Ok(CamMap {
        image_id: image_id.to_string(),
        layer_name: head.layer_name.clone(),
        class_id,
        grid: Tensor::new(vec![h, w], acc.into_iter().map(|v| v as f32).collect())?,
    })
}

/// Align-corners bilinear resampling of an `[H, W]` grid.
pub fn upsample_bilinear(grid: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[h, w] = grid.dims() else {
        return Err(Error::shape(
            "upsample",
            format!("grid dims {:?} are not [H,W]", grid.dims()),
        ));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("output dims must be positive".into()));
    }
    let src = |out: usize, n_out: usize, n_src: usize| -> f64 {
        if n_out == 1 || n_src == 1 {
            0.0
        } else {
            out as f64 * (n_src - 1) as f64 / (n_out - 1) as f64
        }
    };
    let g = grid.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = src(y, out_h, h);
        let y0 = (sy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = src(x, out_w, w);
            let x0 = (sx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let v = |yy: usize, xx: usize| g[yy * w + xx] as f64;
            let top = (1.0 - fx) * v(y0, x0) + fx * v(y0, x1);
            let bottom = (1.0 - fx) * v(y1, x0) + fx * v(y1, x1);
            out.push(((1.0 - fy) * top + fy * bottom) as f32);
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}

/// GAP feature vector of a tap output; 1-d taps are used as they are.
pub fn gap_features(fmap: &Tensor) -> Result<Vec<f32>> {
    match fmap.ndim() {
        1 => Ok(fmap.data().to_vec()),
        3 => Ok(gap(fmap)?.into_data()),
        _ => Err(Error::shape("gap", format!("cannot pool dims {:?}", fmap.dims()))),
    }
}

/// `[n_images, n_channels]` GAP features of one layer plus the labels, in
/// trace order.
pub fn layer_features(
    traces: &[ForwardTrace],
    layer: &str,
    manifest: &DatasetManifest,
) -> Result<(Matrix, Vec<usize>)> {
    let mut rows = Vec::with_capacity(traces.len());
    let mut labels = Vec::with_capacity(traces.len());
    for t in traces {
        let fmap = t.tap(layer).ok_or_else(|| Error::LayerMismatch {
            expected: layer.to_string(),
            found: format!("trace of {:?} without that tap", t.image_id),
        })?;
        rows.push(gap_features(fmap)?.into_iter().map(f64::from).collect::<Vec<_>>());
        labels.push(manifest.class_of(&t.image_id)?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("no traces for layer {layer:?}")));
    }
    Ok((Matrix::from_rows(&rows)?, labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub image_id: String,
    pub layer: String,
    /// 1-based.
    pub rank: usize,
    pub class_id: usize,
    pub probability: f64,
    /// Whether `class_id` is the image's true class.
    pub correct: bool,
}

/// Top-`k` predictions of every tap layer's head for every trace.
pub fn per_layer_predictions(
    traces: &[ForwardTrace],
    heads: &HashMap<String, GapHead>,
    manifest: &DatasetManifest,
    k: usize,
) -> Result<Vec<PredictionRow>> {
    let mut rows = Vec::new();
    for t in traces {
        let truth = manifest.class_of(&t.image_id)?;
        for tap in &t.taps {
            let head = heads
                .get(&tap.layer_name)
                .ok_or_else(|| Error::MissingHead(tap.layer_name.clone()))?;
            let ranked = predict(head, &gap_features(&tap.fmap)?, k)?;
            for (rank, (class_id, probability)) in ranked.into_iter().enumerate() {
                rows.push(PredictionRow {
                    image_id: t.image_id.clone(),
                    layer: tap.layer_name.clone(),
                    rank: rank + 1,
                    class_id,
                    probability,
                    correct: class_id == truth,
                });
            }
        }
    }
    Ok(rows)
}

/// Top-1 accuracy per layer, in first-seen layer order.
pub fn layer_accuracy(rows: &[PredictionRow]) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    let mut tallies: HashMap<&str, (usize, usize)> = HashMap::new();
    for r in rows.iter().filter(|r| r.rank == 1) {
        if !tallies.contains_key(r.layer.as_str()) {
            order.push(r.layer.clone());
        }
        let e = tallies.entry(&r.layer).or_default();
        e.0 += usize::from(r.correct);
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|l| {
            let (hit, n) = tallies[l.as_str()];
            let acc = hit as f64 / n as f64;
            (l, acc)
        })
        .collect()
}

/// Softmax probability each head assigns to the true class, per image.
pub fn true_class_confidences(
    traces: &[ForwardTrace],
    head: &GapHead,
    manifest: &DatasetManifest,
) -> Result<HashMap<String, f64>> {
    traces
        .iter()
        .map(|t| {
            let fmap = t
                .tap(&head.layer_name)
                .ok_or_else(|| Error::MissingHead(head.layer_name.clone()))?;
            let probs = softmax(&head.logits(&gap_features(fmap)?)?);
            Ok((t.image_id.clone(), probs[manifest.class_of(&t.image_id)?]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(w: Vec<f32>, b: Vec<f32>, n_classes: usize) -> GapHead {
        let n_channels = w.len() / n_classes;
        GapHead::new("conv5", n_classes, n_channels, w, b).unwrap()
    }

    #[test]
    fn identical_rows_tie_to_lowest_class() {
        let h = head(vec![0.3, 0.3], vec![0.0, 0.0], 2);
        let p = predict(&h, &[2.0], 5).unwrap();
        assert_eq!(p, vec![(0, 0.5), (1, 0.5)]);
    }

    #[test]
    fn softmax_of_two_logits() {
        let h = head(vec![0.0, 0.0], vec![2.0, 0.0], 2);
        let p = predict(&h, &[1.0], 2).unwrap();
        let e2 = 2f64.exp();
        assert!((p[0].1 - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p[0].1 - 0.8808).abs() < 1e-4);
        assert!((p[1].1 - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax(&[1.0, -2.0, 0.5]);
        let b = softmax(&[101.0, 98.0, 100.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn topk_truncates() {
        let h = head(vec![1.0, 2.0, 3.0], vec![0.0; 3], 3);
        let p = predict(&h, &[1.0], 2).unwrap();
        assert_eq!(p.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 1]);
        assert!(matches!(predict(&h, &[1.0, 2.0], 1), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn cam_is_weighted_sum() {
        let h = head(vec![1.0, -1.0], vec![0.0], 1);
        let f = Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let m = cam_map("x", &f, &h, 0).unwrap();
        assert_eq!(m.grid.data(), &[1.0, 0.0, 0.0, -1.0]);
        let mean: f32 = m.grid.data().iter().sum::<f32>() / 4.0;
        assert_eq!(mean, 0.0);
        assert!(matches!(cam_map("x", &f, &h, 1), Err(Error::BadClass { .. })));
    }

    #[test]
    fn upsample_examples() {
        let g = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(upsample_bilinear(&g, 1, 3).unwrap().data(), &[0.0, 0.5, 1.0]);
        let c = Tensor::new(vec![2, 2], vec![0.7; 4]).unwrap();
        let up = upsample_bilinear(&c, 5, 7).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
        let single = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        assert_eq!(upsample_bilinear(&single, 2, 2).unwrap().data(), &[3.0; 4]);
    }

    #[test]
    fn zero_features_keep_weights_zero() {
        let x = Matrix::zeros(6, 3);
        let y = vec![0, 1, 0, 1, 0, 1];
        let h = train_gap_head("l", &x, &y, 2, &TrainConfig::default()).unwrap();
        assert!(h.w.iter().all(|&v| v == 0.0));
        let p = predict(&h, &[0.0, 0.0, 0.0], 2).unwrap();
        assert!((p[0].1 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn degenerate_labels() {
        let x = Matrix::zeros(3, 2);
        assert!(matches!(
            train_gap_head("l", &x, &[1, 1, 1], 2, &TrainConfig::default()),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn non_finite_features() {
        let mut x = Matrix::zeros(2, 2);
        x[(0, 0)] = f64::NAN;
        assert!(matches!(
            train_gap_head("l", &x, &[0, 1], 2, &TrainConfig::default()),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn huge_step_diverges() {
        let x = Matrix::from_rows(&[vec![1e200], vec![-1e200]]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            ..Default::default()
        };
        assert!(matches!(
            train_gap_head("l", &x, &[0, 1], 2, &cfg),
            Err(Error::Diverged(_))
        ));
    }

    #[test]
    fn head_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = head(vec![0.5, -0.25, 1.0, 2.0], vec![0.1, -0.1], 2);
        h.train_meta = TrainMeta {
            iterations: 12,
            final_loss: 0.125,
            final_grad_norm: 1e-7,
        };
        h.save(dir.path()).unwrap();
        assert_eq!(GapHead::load(dir.path(), "conv5").unwrap(), h);
    }

    #[test]
    fn missing_head() {
        let trace = ForwardTrace {
            image_id: "a".into(),
            taps: vec![crate::net::Tap {
                layer_name: "conv1".into(),
                fmap: Tensor::new(vec![1], vec![1.0]).unwrap(),
            }],
        };
        let m = DatasetManifest::new(vec![crate::tensorio::ManifestRecord {
            image_id: "a".into(),
            class_id: 0,
            class_name: "x".into(),
            tensor_path: String::new(),
            split: crate::tensorio::Split::Test,
        }])
        .unwrap();
        assert!(matches!(
            per_layer_predictions(&[trace], &HashMap::new(), &m, 1),
            Err(Error::MissingHead(_))
        ));
    }
}
