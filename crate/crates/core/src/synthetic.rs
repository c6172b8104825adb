//! A deterministic toy network and a three-class image set built so that
//! class identity is invisible to the first tap layer's channel means but
//! explicit from the second tap layer on.
//!
//! Every image has one bright square per input channel. In class `k` the
//! squares of one channel pair coincide and the third channel's square, of
//! independently drawn size, sits elsewhere:
//!
//! | class | overlapping pair | lone channel |
//! |-------|------------------|--------------|
//! | 0     | 0, 1             | 2            |
//! | 1     | 1, 2             | 0            |
//! | 2     | 0, 2             | 1            |
//!
//! `conv1` copies the input channels, so per-channel means only carry the
//! square sizes. `conv2` holds one overlap detector and one lone-square
//! detector per pair, and the later layers blur and combine those.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::net::{forward_manifest, ForwardTrace, Layer, NetworkSpec};
use crate::tensorio::{write_manifest, write_tensor, DatasetManifest, ManifestRecord, Split, Tensor};

pub const SIDE: usize = 16;
pub const CLASS_NAMES: [&str; 3] = ["pair01", "pair12", "pair02"];
pub const TAPS: [&str; 5] = ["relu1", "relu2", "relu3", "relu4", "relu5"];
/// Channel pairs that overlap in each class.
const PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub per_class: usize,
    /// Share of each class placed in the train split; the rest is test.
    pub train_fraction: f64,
    /// Upper end of the uniform background noise.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            per_class: 40,
            train_fraction: 0.5,
            noise: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    /// In manifest order, each `[3, 16, 16]`.
    pub images: Vec<Tensor>,
}

impl SyntheticDataset {
    /// Writes `manifest.tsv` and `images/<id>.rstf` under `dir` and returns
    /// the manifest path.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        for (r, img) in self.manifest.records().iter().zip(&self.images) {
            write_tensor(img, dir.join(&r.tensor_path))?;
        }
        let path = dir.join("manifest.tsv");
        write_manifest(&self.manifest, &path)?;
        Ok(path)
    }

    /// Forwards every image through `net`, in manifest order.
    pub fn traces(&self, net: &NetworkSpec) -> Result<Vec<ForwardTrace>> {
        self.manifest
            .records()
            .iter()
            .zip(&self.images)
            .map(|(r, img)| net.forward(&r.image_id, img))
            .collect()
    }
}

fn conv(
    name: &str,
    out_ch: usize,
    in_ch: usize,
    k: usize,
    pad: usize,
    taps: &[(usize, usize, f32)],
    bias: &[f32],
) -> Result<Layer> {
    let mut w = vec![0.0f32; out_ch * in_ch * k * k];
    for &(o, i, v) in taps {
        for t in 0..k * k {
            w[(o * in_ch + i) * k * k + t] = v / (k * k) as f32;
        }
    }
    Layer::conv(
        name,
        Tensor::new(vec![out_ch, in_ch, k, k], w)?,
        Tensor::new(vec![out_ch], bias.to_vec())?,
        1,
        pad,
    )
}

/// Five conv layers with 4, 6, 8, 8 and 6 channels, tapped after each ReLU.
/// `conv3` to `conv5` use box-filter kernels, so weights in the tables below
/// are spread evenly over the 3x3 window.
pub fn toy_network() -> Result<NetworkSpec> {
    // conv1: copy channels 0..3, plus a scaled channel sum
    let conv1 = conv(
        "conv1",
        4,
        3,
        1,
        0,
        &[
            (0, 0, 1.0),
            (1, 1, 1.0),
            (2, 2, 1.0),
            (3, 0, 0.2),
            (3, 1, 0.2),
            (3, 2, 0.2),
        ],
        &[0.0; 4],
    )?;
    // conv2: channels 0..3 detect the overlap of pair p, channels 3..6 a
    // square of the channel outside pair p with neither pair channel bright
    let mut t2 = Vec::new();
    let mut b2 = Vec::new();
    for &(a, b) in &PAIRS {
        t2.extend([(b2.len(), a, 1.0), (b2.len(), b, 1.0)]);
        b2.push(-1.5);
    }
    for &(a, b) in &PAIRS {
        let lone = 3 - a - b;
        t2.extend([(b2.len(), lone, 1.0), (b2.len(), a, -1.0), (b2.len(), b, -1.0)]);
        b2.push(-0.5);
    }
    let conv2 = conv("conv2", 6, 4, 1, 0, &t2, &b2)?;
    // conv3: blur all six, plus class-0 and class-1 evidence
    let mut t3: Vec<(usize, usize, f32)> = (0..6).map(|c| (c, c, 1.0)).collect();
    t3.extend([(6, 0, 1.0), (6, 3, 1.0), (7, 1, 1.0), (7, 4, 1.0)]);
    let conv3 = conv("conv3", 8, 6, 3, 1, &t3, &[0.0; 8])?;
    let t4: Vec<(usize, usize, f32)> = (0..8).map(|c| (c, c, 1.0)).collect();
    let conv4 = conv("conv4", 8, 8, 3, 1, &t4, &[0.0; 8])?;
    // conv5: per-class evidence from the overlap and lone detectors, then
    // the conv3 evidence channels and class-2 evidence
    let t5 = [
        (0, 0, 1.0),
        (0, 3, 1.0),
        (1, 1, 1.0),
        (1, 4, 1.0),
        (2, 2, 1.0),
        (2, 5, 1.0),
        (3, 6, 1.0),
        (4, 7, 1.0),
        (5, 2, 1.0),
        (5, 5, 1.0),
    ];
    let conv5 = conv("conv5", 6, 8, 3, 1, &t5, &[0.0; 6])?;
    NetworkSpec::new(
        [3, SIDE, SIDE],
        vec![
            conv1,
            Layer::relu("relu1"),
            conv2,
            Layer::relu("relu2"),
            conv3,
            Layer::relu("relu3"),
            Layer::max_pool("pool3", 2, 2),
            conv4,
            Layer::relu("relu4"),
            conv5,
            Layer::relu("relu5"),
        ],
        TAPS.iter().map(|s| s.to_string()).collect(),
    )
}

fn disjoint(a: (usize, usize, usize), b: (usize, usize, usize)) -> bool {
    let (ay, ax, asz) = a;
    let (by, bx, bsz) = b;
    ay + asz <= by || by + bsz <= ay || ax + asz <= bx || bx + bsz <= ax
}

fn square(rng: &mut ChaCha8Rng, size: usize) -> (usize, usize, usize) {
    (
        rng.random_range(0..=SIDE - size),
        rng.random_range(0..=SIDE - size),
        size,
    )
}

fn paint(img: &mut [f32], channel: usize, (y0, x0, size): (usize, usize, usize)) {
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            img[channel * SIDE * SIDE + y * SIDE + x] += 1.0;
        }
    }
}

pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_train = (cfg.per_class as f64 * cfg.train_fraction).round() as usize;
    let mut records = Vec::new();
    let mut images = Vec::new();
    for (class_id, &(a, b)) in PAIRS.iter().enumerate() {
        let lone = 3 - a - b;
        for i in 0..cfg.per_class {
            let mut img: Vec<f32> = (0..3 * SIDE * SIDE)
                .map(|_| rng.random_range(0.0..=cfg.noise))
                .collect();
            let size_shared = rng.random_range(3..=6);
            let shared = square(&mut rng, size_shared);
            let size_lone = rng.random_range(3..=6);
            let far = loop {
                let s = square(&mut rng, size_lone);
                if disjoint(s, shared) {
                    break s;
                }
            };
            paint(&mut img, a, shared);
            paint(&mut img, b, shared);
            paint(&mut img, lone, far);
            let image_id = format!("{}_{i:03}", CLASS_NAMES[class_id]);
            records.push(ManifestRecord {
                tensor_path: format!("images/{image_id}.rstf"),
                image_id,
                class_id,
                class_name: CLASS_NAMES[class_id].to_string(),
                split: if i < n_train { Split::Train } else { Split::Test },
            });
            images.push(Tensor::new(vec![3, SIDE, SIDE], img)?);
        }
    }
    Ok(SyntheticDataset {
        manifest: DatasetManifest::new(records)?,
        images,
    })
}

/// Writes the dataset and network under `dir`; returns the manifest and
/// network descriptor paths.
pub fn write_fixture(dir: &Path, cfg: &SyntheticConfig) -> Result<(PathBuf, PathBuf)> {
    let data = synthetic_dataset(cfg)?;
    let manifest = data.write_to(dir)?;
    let net = dir.join("toy_net.txt");
    toy_network()?.save(&net)?;
    Ok((manifest, net))
}

/// Traces of the written fixture, read back from disk.
pub fn forward_fixture(manifest: &DatasetManifest, dir: &Path) -> Result<Vec<ForwardTrace>> {
    forward_manifest(&toy_network()?, manifest, dir)
}
