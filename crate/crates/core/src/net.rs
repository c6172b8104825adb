//! Deterministic single-image forward pass that captures the feature maps
//! of named tap layers.
//!
//! Networks are described by a small line-oriented text file:
//!
//! ```text
//! # comments start with '#'
//! input 3 227 227
//! layer conv1 conv out=96 in=3 kh=11 kw=11 stride=4 pad=0 weight=w/conv1.w.rstf bias=w/conv1.b.rstf
//! layer relu1 relu
//! layer norm1 lrn n=5 k=2 alpha=0.0001 beta=0.75
//! layer pool1 maxpool k=3 stride=2
//! layer gap gap
//! layer fc linear out=10 in=96 weight=w/fc.w.rstf bias=w/fc.b.rstf
//! tap relu1 pool1
//! ```
//!
//! `weight=`/`bias=` paths are relative to the descriptor's directory.
//! Omitted `lrn` fields take the AlexNet values (n=5, k=2, alpha=1e-4,
//! beta=0.75).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensorio::{read_tensor, write_tensor, DatasetManifest, Tensor};

pub const LRN_DEFAULT_SIZE: usize = 5;
pub const LRN_DEFAULT_K: f32 = 2.0;
pub const LRN_DEFAULT_ALPHA: f32 = 1e-4;
pub const LRN_DEFAULT_BETA: f32 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight_ref: String,
    pub bias_ref: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight_ref: String,
    pub bias_ref: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv(Conv),
    Relu,
    MaxPool { k: usize, stride: usize },
    Lrn { n: usize, k: f32, alpha: f32, beta: f32 },
    Gap,
    Linear(Linear),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

impl Layer {
    /// Convolution layer whose geometry is read off `weight` (`[out, in, kh, kw]`).
    /// Weight files default to `weights/<name>.weight.rstf` and
    /// `weights/<name>.bias.rstf`.
    pub fn conv(name: &str, weight: Tensor, bias: Tensor, stride: usize, pad: usize) -> Result<Self> {
        let &[out_ch, in_ch, kh, kw] = weight.dims() else {
            return Err(Error::shape(
                name,
                format!("conv weight dims {:?} are not 4-d", weight.dims()),
            ));
        };
        Ok(Layer {
            name: name.to_string(),
            kind: LayerKind::Conv(Conv {
                out_ch,
                in_ch,
                kh,
                kw,
                stride,
                pad,
                weight_ref: format!("weights/{name}.weight.rstf"),
                bias_ref: format!("weights/{name}.bias.rstf"),
                weight,
                bias,
            }),
        })
    }

    pub fn linear(name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        let &[out_dim, in_dim] = weight.dims() else {
            return Err(Error::shape(
                name,
                format!("linear weight dims {:?} are not 2-d", weight.dims()),
            ));
        };
        Ok(Layer {
            name: name.to_string(),
            kind: LayerKind::Linear(Linear {
                out_dim,
                in_dim,
                weight_ref: format!("weights/{name}.weight.rstf"),
                bias_ref: format!("weights/{name}.bias.rstf"),
                weight,
                bias,
            }),
        })
    }

    pub fn relu(name: &str) -> Self {
        Layer {
            name: name.to_string(),
            kind: LayerKind::Relu,
        }
    }

    pub fn max_pool(name: &str, k: usize, stride: usize) -> Self {
        Layer {
            name: name.to_string(),
            kind: LayerKind::MaxPool { k, stride },
        }
    }

    pub fn lrn(name: &str) -> Self {
        Layer {
            name: name.to_string(),
            kind: LayerKind::Lrn {
                n: LRN_DEFAULT_SIZE,
                k: LRN_DEFAULT_K,
                alpha: LRN_DEFAULT_ALPHA,
                beta: LRN_DEFAULT_BETA,
            },
        }
    }

    pub fn gap(name: &str) -> Self {
        Layer {
            name: name.to_string(),
            kind: LayerKind::Gap,
        }
    }
}

/// Output extent of a window op: `floor((input + 2*pad - k) / stride) + 1`.
/// `None` when the window does not fit.
pub fn window_out(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if k == 0 || stride == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Validated network: the shape chain is computed once at construction
/// and every layer's output dims are stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input_dims: [usize; 3],
    layers: Vec<Layer>,
    tap_points: Vec<String>,
    output_dims: Vec<Vec<usize>>,
}

impl NetworkSpec {
    pub fn new(input_dims: [usize; 3], layers: Vec<Layer>, tap_points: Vec<String>) -> Result<Self> {
        if input_dims.contains(&0) {
            return Err(Error::shape("input", format!("zero extent in {input_dims:?}")));
        }
        let mut names = HashSet::new();
        for layer in &layers {
            if !names.insert(layer.name.as_str()) {
                return Err(Error::parse(
                    "network",
                    format!("duplicate layer name {:?}", layer.name),
                ));
            }
        }
        for tap in &tap_points {
            if !names.contains(tap.as_str()) {
                return Err(Error::parse("network", format!("tap point {tap:?} names no layer")));
            }
        }
        let mut dims = input_dims.to_vec();
        let mut output_dims = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            dims = layer_output_dims(i, layer, &dims)?;
            output_dims.push(dims.clone());
        }
        // Taps are reported in network order regardless of declaration order.
        let tap_set: HashSet<&str> = tap_points.iter().map(String::as_str).collect();
        let tap_points = layers
            .iter()
            .filter(|l| tap_set.contains(l.name.as_str()))
            .map(|l| l.name.clone())
            .collect();
        Ok(NetworkSpec {
            input_dims,
            layers,
            tap_points,
            output_dims,
        })
    }

    pub fn input_dims(&self) -> [usize; 3] {
        self.input_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn tap_points(&self) -> &[String] {
        &self.tap_points
    }

    /// Output dims of every layer, in order.
    pub fn output_dims(&self) -> &[Vec<usize>] {
        &self.output_dims
    }

    pub fn layer_dims(&self, name: &str) -> Option<&[usize]> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .map(|i| self.output_dims[i].as_slice())
    }

    /// Runs the network on one image and returns the tap outputs in
    /// network order.
    pub fn forward(&self, image_id: &str, image: &Tensor) -> Result<ForwardTrace> {
        if image.dims() != self.input_dims {
            return Err(Error::shape(
                "input",
                format!("image dims {:?}, network expects {:?}", image.dims(), self.input_dims),
            ));
        }
        if !image.is_finite() {
            return Err(Error::NonFiniteInput(format!("image {image_id:?}")));
        }
        let taps: HashSet<&str> = self.tap_points.iter().map(String::as_str).collect();
        let mut trace = ForwardTrace {
            image_id: image_id.to_string(),
            taps: Vec::with_capacity(taps.len()),
        };
        let mut current = image.clone();
        for layer in &self.layers {
            current = apply_layer(layer, current)?;
            if taps.contains(layer.name.as_str()) {
                trace.taps.push(Tap {
                    layer_name: layer.name.clone(),
                    fmap: current.clone(),
                });
            }
        }
        Ok(trace)
    }

    pub fn to_descriptor(&self) -> String {
        let [c, h, w] = self.input_dims;
        let mut out = String::from("# repscope network descriptor v1\n");
        let _ = writeln!(out, "input {c} {h} {w}");
        for layer in &self.layers {
            let _ = write!(out, "layer {} ", layer.name);
            let _ = match &layer.kind {
                LayerKind::Conv(cv) => writeln!(
                    out,
                    "conv out={} in={} kh={} kw={} stride={} pad={} weight={} bias={}",
                    cv.out_ch, cv.in_ch, cv.kh, cv.kw, cv.stride, cv.pad, cv.weight_ref, cv.bias_ref
                ),
                LayerKind::Relu => writeln!(out, "relu"),
                LayerKind::MaxPool { k, stride } => writeln!(out, "maxpool k={k} stride={stride}"),
                LayerKind::Lrn { n, k, alpha, beta } => {
                    writeln!(out, "lrn n={n} k={k} alpha={alpha} beta={beta}")
                }
                LayerKind::Gap => writeln!(out, "gap"),
                LayerKind::Linear(l) => writeln!(
                    out,
                    "linear out={} in={} weight={} bias={}",
                    l.out_dim, l.in_dim, l.weight_ref, l.bias_ref
                ),
            };
        }
        if !self.tap_points.is_empty() {
            let _ = writeln!(out, "tap {}", self.tap_points.join(" "));
        }
        out
    }

    /// Writes the descriptor to `path` and every weight tensor to its ref
    /// relative to the descriptor's directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        for layer in &self.layers {
            match &layer.kind {
                LayerKind::Conv(cv) => {
                    write_tensor(&cv.weight, base.join(&cv.weight_ref))?;
                    write_tensor(&cv.bias, base.join(&cv.bias_ref))?;
                }
                LayerKind::Linear(l) => {
                    write_tensor(&l.weight, base.join(&l.weight_ref))?;
                    write_tensor(&l.bias, base.join(&l.bias_ref))?;
                }
                _ => {}
            }
        }
        if !base.as_os_str().is_empty() {
            fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
        }
        fs::write(path, self.to_descriptor()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tap {
    pub layer_name: String,
    pub fmap: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub image_id: String,
    pub taps: Vec<Tap>,
}

impl ForwardTrace {
    pub fn tap(&self, layer_name: &str) -> Option<&Tensor> {
        self.taps.iter().find(|t| t.layer_name == layer_name).map(|t| &t.fmap)
    }

    /// Writes each tap to `dir/<layer>/<image_id>.rstf`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for t in &self.taps {
            write_tensor(&t.fmap, dir.join(&t.layer_name).join(format!("{}.rstf", self.image_id)))?;
        }
        Ok(())
    }
}

const TAPS_FILE: &str = "taps.txt";

/// Saves traces plus a `taps.txt` listing the tap layers in order.
pub fn save_traces(dir: &Path, traces: &[ForwardTrace]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let layers: Vec<&str> = traces
        .first()
        .map(|t| t.taps.iter().map(|tap| tap.layer_name.as_str()).collect())
        .unwrap_or_default();
    let path = dir.join(TAPS_FILE);
    fs::write(&path, layers.iter().map(|l| format!("{l}\n")).collect::<String>()).map_err(|e| Error::io(&path, e))?;
    traces.par_iter().try_for_each(|t| t.save(dir))
}

/// Tap layer names recorded by [`save_traces`].
pub fn trace_layers(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(TAPS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
}

/// Loads the saved traces of `image_ids`, restricted to `layers` when given.
pub fn load_traces(dir: &Path, image_ids: &[&str], layers: Option<&[String]>) -> Result<Vec<ForwardTrace>> {
    let all = trace_layers(dir)?;
    let wanted: Vec<String> = match layers {
        Some(ls) => {
            for l in ls {
                if !all.contains(l) {
                    return Err(Error::LayerMismatch {
                        expected: l.clone(),
                        found: all.join(","),
                    });
                }
            }
            ls.to_vec()
        }
        None => all,
    };
    image_ids
        .par_iter()
        .map(|id| {
            let taps = wanted
                .iter()
                .map(|l| {
                    Ok(Tap {
                        layer_name: l.clone(),
                        fmap: read_tensor(dir.join(l).join(format!("{id}.rstf")))?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(ForwardTrace {
                image_id: id.to_string(),
                taps,
            })
        })
        .collect()
}

/// Forwards every manifest image, in manifest order; tensor paths are
/// resolved against `base`.
pub fn forward_manifest(net: &NetworkSpec, manifest: &DatasetManifest, base: &Path) -> Result<Vec<ForwardTrace>> {
    manifest
        .records()
        .par_iter()
        .map(|r| net.forward(&r.image_id, &read_tensor(manifest.resolve(base, r))?))
        .collect()
}

fn layer_output_dims(index: usize, layer: &Layer, input: &[usize]) -> Result<Vec<usize>> {
    let ctx = || format!("layer {index} ({})", layer.name);
    let chw = |what: &str| -> Result<(usize, usize, usize)> {
        match *input {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(
                ctx(),
                format!("{what} needs a [C,H,W] input, got {input:?}"),
            )),
        }
    };
    match &layer.kind {
        LayerKind::Conv(cv) => {
            let (c, h, w) = chw("conv")?;
            if cv.weight.dims() != [cv.out_ch, cv.in_ch, cv.kh, cv.kw] {
                return Err(Error::shape(
                    ctx(),
                    format!(
                        "weight dims {:?} differ from declared [{}, {}, {}, {}]",
                        cv.weight.dims(),
                        cv.out_ch,
                        cv.in_ch,
                        cv.kh,
                        cv.kw
                    ),
                ));
            }
            if cv.bias.dims() != [cv.out_ch] {
                return Err(Error::shape(
                    ctx(),
                    format!("bias dims {:?}, expected [{}]", cv.bias.dims(), cv.out_ch),
                ));
            }
            if c != cv.in_ch {
                return Err(Error::shape(
                    ctx(),
                    format!("input has {c} channels, conv expects {}", cv.in_ch),
                ));
            }
            if cv.stride == 0 {
                return Err(Error::shape(ctx(), "stride must be positive"));
            }
            let oh = window_out(h, cv.kh, cv.stride, cv.pad);
            let ow = window_out(w, cv.kw, cv.stride, cv.pad);
            match (oh, ow) {
                (Some(oh), Some(ow)) => Ok(vec![cv.out_ch, oh, ow]),
                _ => Err(Error::shape(
                    ctx(),
                    format!(
                        "kernel {}x{} larger than padded input {h}x{w} (pad {})",
                        cv.kh, cv.kw, cv.pad
                    ),
                )),
            }
        }
        LayerKind::Relu => Ok(input.to_vec()),
        LayerKind::MaxPool { k, stride } => {
            let (c, h, w) = chw("maxpool")?;
            match (window_out(h, *k, *stride, 0), window_out(w, *k, *stride, 0)) {
                (Some(oh), Some(ow)) => Ok(vec![c, oh, ow]),
                _ => Err(Error::shape(
                    ctx(),
                    format!("pool window {k} stride {stride} does not fit {h}x{w}"),
                )),
            }
        }
        LayerKind::Lrn { n, .. } => {
            chw("lrn")?;
            if *n == 0 {
                return Err(Error::shape(ctx(), "lrn size must be positive"));
            }
            Ok(input.to_vec())
        }
        LayerKind::Gap => {
            let (c, _, _) = chw("gap")?;
            Ok(vec![c])
        }
        LayerKind::Linear(l) => {
            if l.weight.dims() != [l.out_dim, l.in_dim] || l.bias.dims() != [l.out_dim] {
                return Err(Error::shape(
                    ctx(),
                    format!(
                        "weight {:?} / bias {:?} differ from declared {}x{}",
                        l.weight.dims(),
                        l.bias.dims(),
                        l.out_dim,
                        l.in_dim
                    ),
                ));
            }
            let n: usize = input.iter().product();
            if n != l.in_dim {
                return Err(Error::shape(
                    ctx(),
                    format!("input has {n} values, linear expects {}", l.in_dim),
                ));
            }
            Ok(vec![l.out_dim])
        }
    }
}

fn apply_layer(layer: &Layer, input: Tensor) -> Result<Tensor> {
    match &layer.kind {
        LayerKind::Conv(cv) => conv2d(&input, &cv.weight, &cv.bias, cv.stride, cv.pad),
        LayerKind::Relu => Ok(relu(input)),
        LayerKind::MaxPool { k, stride } => max_pool(&input, *k, *stride),
        LayerKind::Lrn { n, k, alpha, beta } => lrn(&input, *n, *k, *alpha, *beta),
        LayerKind::Gap => gap(&input),
        LayerKind::Linear(l) => linear(&input, &l.weight, &l.bias),
    }
}

/// 2-d cross-correlation with zero padding.
///
/// `out[c,y,x] = bias[c] + sum_{i,j,k} weight[c,i,j,k] * in[i, y*stride+j-pad, x*stride+k-pad]`,
/// accumulated in `f64` in `(i, j, k)` order. Output channels are computed
/// in parallel; each channel's summation order is fixed, so results do not
/// depend on the thread count.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (cin, h, w) = input
        .chw()
        .ok_or_else(|| Error::shape("conv2d", format!("input dims {:?} are not [C,H,W]", input.dims())))?;
    let &[cout, wcin, kh, kw] = weight.dims() else {
        return Err(Error::shape(
            "conv2d",
            format!("weight dims {:?} are not 4-d", weight.dims()),
        ));
    };
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    if bias.dims() != [cout] {
        return Err(Error::shape(
            "conv2d",
            format!("bias dims {:?}, expected [{cout}]", bias.dims()),
        ));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive"));
    }
    let (oh, ow) = match (window_out(h, kh, stride, pad), window_out(w, kw, stride, pad)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            ))
        }
    };

    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let plane = oh * ow;
    let mut out = vec![0.0f32; cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(c, dst)| {
        let kernel = &wt[c * cin * kh * kw..(c + 1) * cin * kh * kw];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for i in 0..cin {
                    for j in 0..kh {
                        let iy = (oy * stride + j) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &x[(i * h + iy as usize) * w..(i * h + iy as usize + 1) * w];
                        let krow = &kernel[(i * kh + j) * kw..(i * kh + j + 1) * kw];
                        for (k, &kv) in krow.iter().enumerate() {
                            let ix = (ox * stride + k) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += kv as f64 * row[ix as usize] as f64;
                        }
                    }
                }
                dst[oy * ow + ox] = (acc + b[c] as f64) as f32;
            }
        }
    });
    Tensor::new(vec![cout, oh, ow], out)
}

pub fn relu(mut input: Tensor) -> Tensor {
    for v in input.data_mut() {
        if v.is_nan() || *v <= 0.0 {
            *v = 0.0;
        }
    }
    input
}

pub fn max_pool(input: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = input
        .chw()
        .ok_or_else(|| Error::shape("max_pool", format!("input dims {:?} are not [C,H,W]", input.dims())))?;
    let (oh, ow) = match (window_out(h, k, stride, 0), window_out(w, k, stride, 0)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::shape(
                "max_pool",
                format!("window {k} stride {stride} does not fit {h}x{w}"),
            ))
        }
    };
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for j in 0..k {
                    for i in 0..k {
                        m = m.max(x[(ch * h + oy * stride + j) * w + ox * stride + i]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Cross-channel local response normalization:
/// `b[c] = a[c] / (k + alpha * sum_{c' in [c - n/2, c + n/2]} a[c']^2)^beta`.
pub fn lrn(input: &Tensor, n: usize, k: f32, alpha: f32, beta: f32) -> Result<Tensor> {
    let (c, h, w) = input
        .chw()
        .ok_or_else(|| Error::shape("lrn", format!("input dims {:?} are not [C,H,W]", input.dims())))?;
    let plane = h * w;
    let x = input.data();
    let half = n / 2;
    let mut out = vec![0.0f32; x.len()];
    for ch in 0..c {
        let lo = ch.saturating_sub(half);
        let hi = (ch + half).min(c - 1);
        for p in 0..plane {
            let mut sq = 0.0f64;
            for cc in lo..=hi {
                let v = x[cc * plane + p] as f64;
                sq += v * v;
            }
            let denom = (k as f64 + alpha as f64 * sq).powf(beta as f64);
            out[ch * plane + p] = (x[ch * plane + p] as f64 / denom) as f32;
        }
    }
    Tensor::new(input.dims().to_vec(), out)
}

/// Global average pooling: `[C,H,W] -> [C]`.
pub fn gap(fmap: &Tensor) -> Result<Tensor> {
    let (c, h, w) = fmap
        .chw()
        .ok_or_else(|| Error::shape("gap", format!("input dims {:?} are not [C,H,W]", fmap.dims())))?;
    let n = (h * w) as f64;
    let out = (0..c)
        .map(|ch| (fmap.channel(ch).iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
        .collect();
    Tensor::new(vec![c], out)
}

pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let &[out_dim, in_dim] = weight.dims() else {
        return Err(Error::shape(
            "linear",
            format!("weight dims {:?} are not 2-d", weight.dims()),
        ));
    };
    if input.len() != in_dim || bias.dims() != [out_dim] {
        return Err(Error::shape(
            "linear",
            format!(
                "input {:?} / bias {:?} incompatible with weight {:?}",
                input.dims(),
                bias.dims(),
                weight.dims()
            ),
        ));
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(in_dim)
        .zip(bias.data())
        .map(|(row, &b)| {
            let dot: f64 = row.iter().zip(x).map(|(&a, &v)| a as f64 * v as f64).sum();
            (dot + b as f64) as f32
        })
        .collect();
    Tensor::new(vec![out_dim], out)
}

pub fn load_network_spec(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_network_spec(
        &text,
        path.parent().unwrap_or(Path::new(".")),
        &path.display().to_string(),
    )
}

/// Parses descriptor text; weight refs are resolved against `base`.
pub fn parse_network_spec(text: &str, base: &Path, origin: &str) -> Result<NetworkSpec> {
    let mut input = None;
    let mut layers = Vec::new();
    let mut taps = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = format!("{origin}:{}", lineno + 1);
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("input") => {
                let dims: Vec<usize> = tokens
                    .map(|t| {
                        t.parse()
                            .map_err(|e| Error::parse(&loc, format!("input extent {t:?}: {e}")))
                    })
                    .collect::<Result<_>>()?;
                let [c, h, w] = dims[..] else {
                    return Err(Error::parse(&loc, "input needs exactly 3 extents"));
                };
                input = Some([c, h, w]);
            }
            Some("layer") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| Error::parse(&loc, "layer without a name"))?;
                let kind = tokens
                    .next()
                    .ok_or_else(|| Error::parse(&loc, "layer without a kind"))?;
                let fields = Fields::parse(tokens, &loc)?;
                layers.push(parse_layer(name, kind, &fields, base, &loc)?);
            }
            Some("tap") => taps.extend(tokens.map(str::to_string)),
            Some(other) => return Err(Error::parse(&loc, format!("unknown directive {other:?}"))),
            None => {}
        }
    }
    let input = input.ok_or_else(|| Error::parse(origin, "missing input line"))?;
    NetworkSpec::new(input, layers, taps)
}

struct Fields<'a> {
    map: HashMap<&'a str, &'a str>,
    loc: &'a str,
}

impl<'a> Fields<'a> {
    fn parse(tokens: impl Iterator<Item = &'a str>, loc: &'a str) -> Result<Self> {
        let mut map = HashMap::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Error::parse(loc, format!("expected key=value, got {t:?}")))?;
            map.insert(k, v);
        }
        Ok(Fields { map, loc })
    }

    fn raw(&self, key: &str) -> Result<&'a str> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| Error::parse(self.loc, format!("missing field {key:?}")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|e| Error::parse(self.loc, format!("field {key}={raw:?}: {e}")))
    }

    fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if self.map.contains_key(key) {
            self.get(key)
        } else {
            Ok(default)
        }
    }
}

fn load_weight(base: &Path, rel: &str) -> Result<Tensor> {
    let p = base.join(rel);
    if !p.is_file() {
        return Err(Error::MissingWeights(p));
    }
    read_tensor(p)
}

fn parse_layer(name: &str, kind: &str, f: &Fields<'_>, base: &Path, loc: &str) -> Result<Layer> {
    let allowed: &[&str] = match kind {
        "conv" => &["out", "in", "kh", "kw", "stride", "pad", "weight", "bias"],
        "maxpool" => &["k", "stride"],
        "lrn" => &["n", "k", "alpha", "beta"],
        "linear" => &["out", "in", "weight", "bias"],
        _ => &[],
    };
    if let Some(key) = f.map.keys().find(|k| !allowed.contains(k)) {
        return Err(Error::parse(
            loc,
            format!("unknown field {key:?} for {kind} layer {name:?}"),
        ));
    }
    let kind = match kind {
        "conv" => {
            let weight_ref = f.raw("weight")?.to_string();
            let bias_ref = f.raw("bias")?.to_string();
            LayerKind::Conv(Conv {
                out_ch: f.get("out")?,
                in_ch: f.get("in")?,
                kh: f.get("kh")?,
                kw: f.get("kw")?,
                stride: f.get_or("stride", 1)?,
                pad: f.get_or("pad", 0)?,
                weight: load_weight(base, &weight_ref)?,
                bias: load_weight(base, &bias_ref)?,
                weight_ref,
                bias_ref,
            })
        }
        "relu" => LayerKind::Relu,
        "maxpool" => LayerKind::MaxPool {
            k: f.get("k")?,
            stride: f.get_or("stride", f.get("k")?)?,
        },
        "lrn" => LayerKind::Lrn {
            n: f.get_or("n", LRN_DEFAULT_SIZE)?,
            k: f.get_or("k", LRN_DEFAULT_K)?,
            alpha: f.get_or("alpha", LRN_DEFAULT_ALPHA)?,
            beta: f.get_or("beta", LRN_DEFAULT_BETA)?,
        },
        "gap" => LayerKind::Gap,
        "linear" => {
            let weight_ref = f.raw("weight")?.to_string();
            let bias_ref = f.raw("bias")?.to_string();
            LayerKind::Linear(Linear {
                out_dim: f.get("out")?,
                in_dim: f.get("in")?,
                weight: load_weight(base, &weight_ref)?,
                bias: load_weight(base, &bias_ref)?,
                weight_ref,
                bias_ref,
            })
        }
        other => return Err(Error::parse(loc, format!("unknown layer kind {other:?}"))),
    };
    Ok(Layer {
        name: name.to_string(),
        kind,
    })
}
