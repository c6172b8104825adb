//! Batch pipeline steps behind the command-line subcommands. Each step reads
//! its inputs from disk, writes its outputs under a caller-chosen path and
//! returns a short summary.
//!
//! On-disk layout:
//!
//! | step        | writes                                                          |
//! |-------------|-----------------------------------------------------------------|
//! | forward     | `taps.txt`, `<layer>/<image_id>.rstf`                           |
//! | patterns    | `<layer>.response.*`, `<layer>.pattern.*`, `thresholds.tsv`, `layers.txt` |
//! | train-heads | `<layer>.head.*`, `predictions.tsv`, `confidences.<layer>.tsv`  |
//! | subsets     | `subset_NN.tsv` manifests                                       |
//! | cam         | `<image>.<layer>.c<class>.cam.rstf` and `.ppm`, optional `.overlay.ppm` |

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cam::{
    self, layer_accuracy, per_layer_predictions, train_gap_head, true_class_confidences, GapHead, TrainConfig,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{forward_manifest, load_network_spec, load_traces, save_traces, trace_layers};
use crate::patterns::{
    build_patterns, build_response_vectors, class_thresholds, read_thresholds, write_thresholds, AnalysisConfig,
    PatternTable,
};
use crate::rdm::{
    build_rdm, build_subsets, classical_mds, mds_fit_correlation, rank_transform, rdm_correlation, read_confidences,
    select_patterns, CorrelationMethod, Rdm,
};
use crate::stats::{activated_per_image, images_per_neuron, neuron_response_histogram, Histogram, Scope};
use crate::tensorio::{load_manifest, read_tensor, write_manifest, write_tensor, DatasetManifest, Split, Tensor};

use super::{heatmap_image, normalized_grid, overlay_image, write_table, ColorMap, Table};

pub const THREADS_ENV: &str = "REPSCOPE_THREADS";

/// Sizes the global rayon pool from `REPSCOPE_THREADS` when it is set.
pub fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn manifest_base(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn ids(manifest: &DatasetManifest) -> Vec<&str> {
    manifest.records().iter().map(|r| r.image_id.as_str()).collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every manifest image through the network and saves the taps.
/// Returns the number of traces written.
pub fn forward(net: &Path, manifest: &Path, out: &Path) -> Result<usize> {
    let spec = load_network_spec(net)?;
    let m = load_manifest(manifest, true)?;
    let traces = forward_manifest(&spec, &m, manifest_base(manifest))?;
    save_traces(out, &traces)?;
    log::info!(
        "forwarded {} images through {} taps",
        traces.len(),
        spec.tap_points().len()
    );
    Ok(traces.len())
}

pub const LAYERS_FILE: &str = "layers.txt";

/// Builds response vectors, thresholds and activity patterns for every tap
/// layer. Returns the layer names.
pub fn patterns(traces: &Path, manifest: &Path, cfg: &AnalysisConfig, out: &Path) -> Result<Vec<String>> {
    cfg.validate()?;
    let m = load_manifest(manifest, false)?;
    let layers = trace_layers(traces)?;
    let loaded = load_traces(traces, &ids(&m), None)?;
    let vectors = build_response_vectors(&loaded, cfg)?;
    let thresholds = class_thresholds(&vectors, &m)?;
    let pats = build_patterns(&vectors, &thresholds, &m, cfg)?;
    ensure_dir(out)?;
    for layer in &layers {
        let response = PatternTable::from_rows(
            layer,
            vectors
                .iter()
                .filter(|v| &v.layer_name == layer)
                .map(|v| (v.image_id.as_str(), v.values.as_slice())),
        )?;
        response.save(out, "response")?;
        let pattern = PatternTable::from_rows(
            layer,
            pats.iter()
                .filter(|p| &p.layer_name == layer)
                .map(|p| (p.image_id.as_str(), p.values.as_slice())),
        )?;
        pattern.save(out, "pattern")?;
    }
    write_thresholds(&thresholds, &out.join("thresholds.tsv"))?;
    write_text(
        &out.join(LAYERS_FILE),
        &layers.iter().map(|l| format!("{l}\n")).collect::<String>(),
    )?;
    Ok(layers)
}

/// Fails with `LayerMismatch` when `dir` was written without `layer`.
fn check_layer(dir: &Path, layer: &str) -> Result<()> {
    let path = dir.join(LAYERS_FILE);
    let listed = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    if listed.lines().any(|l| l == layer) {
        Ok(())
    } else {
        Err(Error::LayerMismatch {
            expected: layer.to_string(),
            found: listed.lines().collect::<Vec<_>>().join(","),
        })
    }
}

fn load_patterns(dir: &Path, manifest: &DatasetManifest, layer: &str) -> Result<Vec<crate::patterns::ActivityPattern>> {
    check_layer(dir, layer)?;
    let thresholds = read_thresholds(&dir.join("thresholds.tsv"))?;
    PatternTable::load(dir, layer, "pattern")?.to_patterns(manifest, &thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatsQuery {
    /// Activated neurons per image.
    PerImage,
    /// Activating images per neuron.
    PerNeuron,
    /// One neuron's response distribution over one class.
    Neuron {
        neuron: usize,
        class_id: usize,
        n_bins: usize,
    },
}

pub fn stats(dir: &Path, manifest: &Path, layer: &str, query: StatsQuery, scope: Scope) -> Result<Histogram> {
    let m = load_manifest(manifest, false)?;
    match query {
        StatsQuery::PerImage => activated_per_image(&load_patterns(dir, &m, layer)?, layer, scope),
        StatsQuery::PerNeuron => images_per_neuron(&load_patterns(dir, &m, layer)?, layer, scope),
        StatsQuery::Neuron {
            neuron,
            class_id,
            n_bins,
        } => {
            check_layer(dir, layer)?;
            let vectors = PatternTable::load(dir, layer, "response")?.to_vectors();
            neuron_response_histogram(&vectors, &m, neuron, class_id, layer, n_bins)
        }
    }
}

/// RDM over the patterns of `layer`, ordered as the images of `subset`
/// (a manifest) or of the full manifest.
pub fn rdm_build(
    dir: &Path,
    manifest: &Path,
    layer: &str,
    subset: Option<&Path>,
    rank: bool,
    out: &Path,
) -> Result<Rdm> {
    let m = load_manifest(manifest, false)?;
    let pats = load_patterns(dir, &m, layer)?;
    let order: Vec<String> = match subset {
        Some(p) => load_manifest(p, false)?
            .records()
            .iter()
            .map(|r| r.image_id.clone())
            .collect(),
        None => m.records().iter().map(|r| r.image_id.clone()).collect(),
    };
    let chosen: Vec<_> = select_patterns(&pats, &order)?.into_iter().cloned().collect();
    let mut rdm = build_rdm(&chosen)?;
    if rank {
        rdm = rank_transform(&rdm);
    }
    rdm.save(out)?;
    Ok(rdm)
}

pub fn rdm_rank(input: &Path, out: &Path) -> Result<Rdm> {
    let r = rank_transform(&Rdm::load(input)?);
    r.save(out)?;
    Ok(r)
}

fn rdm_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Pairwise correlations between RDMs, written as a labelled square table.
pub fn rdm_corr(inputs: &[PathBuf], method: CorrelationMethod, out: &Path) -> Result<Matrix> {
    if inputs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two RDMs".into()));
    }
    let rdms: Vec<Rdm> = inputs.iter().map(Rdm::load).collect::<Result<_>>()?;
    let n = rdms.len();
    let mut c = Matrix::identity(n);
    for p in 0..n {
        for q in p + 1..n {
            let v = rdm_correlation(&rdms[p], &rdms[q], method)?;
            c[(p, q)] = v;
            c[(q, p)] = v;
        }
    }
    let labels: Vec<String> = inputs.iter().map(|p| rdm_label(p)).collect();
    let mut header = vec!["rdm".to_string()];
    header.extend(labels.iter().cloned());
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for (i, l) in labels.iter().enumerate() {
        let mut row = vec![l.clone()];
        row.extend(c.row(i).iter().map(f64::to_string));
        t.push(row);
    }
    write_table(&t, out)?;
    Ok(c)
}

/// Embeds RDMs with classical MDS on `1 - correlation`. Returns the
/// correlation between those distances and the embedded ones.
pub fn rdm_mds(inputs: &[PathBuf], method: CorrelationMethod, dim: usize, out: &Path) -> Result<f64> {
    let rdms: Vec<Rdm> = inputs.iter().map(Rdm::load).collect::<Result<_>>()?;
    let d = crate::rdm::rdm_distance_matrix(&rdms, method)?;
    let e = classical_mds(&d, dim)?.with_labels(inputs.iter().map(|p| rdm_label(p)).collect())?;
    ensure_dir(manifest_base(out))?;
    write_text(out, &e.to_tsv())?;
    let fit = mds_fit_correlation(&d, &e, method)?;
    log::info!("MDS fit correlation {fit}");
    Ok(fit)
}

/// Writes one manifest per confidence-rank group. Returns their paths.
pub fn subsets(
    manifest: &Path,
    confidences: &Path,
    groups: usize,
    per_group: usize,
    allow_short: bool,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let m = load_manifest(manifest, false)?;
    let conf = read_confidences(confidences)?;
    ensure_dir(out)?;
    build_subsets(&m, &conf, groups, per_group, allow_short)?
        .iter()
        .map(|s| {
            let path = out.join(format!("subset_{:02}.tsv", s.subset_index));
            write_manifest(&s.to_manifest(&m)?, &path)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// `(layer, top-1 accuracy over all manifest images)` in tap order.
    pub accuracy: Vec<(String, f64)>,
    pub heads: Vec<GapHead>,
}

/// Trains one head per layer on the train split (the whole manifest when
/// it has no train records), then predicts every image.
pub fn train_heads(
    traces: &Path,
    manifest: &Path,
    layers: &[String],
    cfg: &TrainConfig,
    topk: usize,
    out: &Path,
) -> Result<TrainSummary> {
    let m = load_manifest(manifest, false)?;
    let layers: Vec<String> = if layers.is_empty() {
        trace_layers(traces)?
    } else {
        layers.to_vec()
    };
    let all = load_traces(traces, &ids(&m), Some(&layers))?;
    let train_ids: Vec<&str> = m.split(Split::Train).map(|r| r.image_id.as_str()).collect();
    let train: Vec<_> = if train_ids.is_empty() {
        all.clone()
    } else {
        all.iter()
            .filter(|t| train_ids.contains(&t.image_id.as_str()))
            .cloned()
            .collect()
    };

    let heads: Vec<GapHead> = layers
        .par_iter()
        .map(|layer| {
            let (x, y) = cam::layer_features(&train, layer, &m)?;
            let head = train_gap_head(layer, &x, &y, m.n_classes(), cfg)?;
            log::info!(
                "{layer}: {} iterations, loss {:.6}, grad {:.3e}",
                head.train_meta.iterations,
                head.train_meta.final_loss,
                head.train_meta.final_grad_norm
            );
            Ok(head)
        })
        .collect::<Result<_>>()?;

    ensure_dir(out)?;
    let mut by_layer = HashMap::new();
    for h in &heads {
        h.save(out)?;
        let conf = true_class_confidences(&all, h, &m)?;
        let mut t = Table::new(&["image_id", "confidence"]);
        for r in m.records() {
            t.push(vec![r.image_id.clone(), conf[&r.image_id].to_string()]);
        }
        write_table(&t, &out.join(format!("confidences.{}.tsv", h.layer_name)))?;
        by_layer.insert(h.layer_name.clone(), h.clone());
    }
    let rows = per_layer_predictions(&all, &by_layer, &m, topk)?;
    let mut t = Table::new(&["image_id", "layer", "rank", "class_id", "probability", "correct"]);
    for r in &rows {
        t.push(vec![
            r.image_id.clone(),
            r.layer.clone(),
            r.rank.to_string(),
            r.class_id.to_string(),
            r.probability.to_string(),
            u8::from(r.correct).to_string(),
        ]);
    }
    write_table(&t, &out.join("predictions.tsv"))?;
    Ok(TrainSummary {
        accuracy: layer_accuracy(&rows),
        heads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamRequest {
    pub image_id: String,
    pub layer: String,
    /// Explicit class; otherwise the `topk` predicted classes.
    pub class_id: Option<usize>,
    pub topk: usize,
    /// Blend over the input image at this alpha.
    pub overlay: Option<f64>,
}

/// Writes the raw CAM grid, its heatmap and optionally an overlay for each
/// requested class. Returns the written paths.
pub fn cam(traces: &Path, heads: &Path, manifest: &Path, req: &CamRequest, out: &Path) -> Result<Vec<PathBuf>> {
    let m = load_manifest(manifest, false)?;
    let record = m
        .get(&req.image_id)
        .ok_or_else(|| Error::UnknownImage(req.image_id.clone()))?;
    let head = GapHead::load(heads, &req.layer).map_err(|e| match e {
        Error::Io { .. } => Error::MissingHead(req.layer.clone()),
        other => other,
    })?;
    let trace = load_traces(traces, &[req.image_id.as_str()], Some(std::slice::from_ref(&req.layer)))?.remove(0);
    let fmap = trace.tap(&req.layer).expect("requested tap was loaded");
    let classes: Vec<usize> = match req.class_id {
        Some(c) => vec![c],
        None => cam::predict(&head, &cam::gap_features(fmap)?, req.topk)?
            .into_iter()
            .map(|(c, _)| c)
            .collect(),
    };
    let image = match req.overlay {
        Some(_) => Some(read_tensor(m.resolve(manifest_base(manifest), record))?),
        None => None,
    };
    let cmap = ColorMap::default();
    let mut written = Vec::new();
    for class_id in classes {
        let map = cam::cam_map(&req.image_id, fmap, &head, class_id)?;
        let stem = format!("{}.{}.c{class_id}", req.image_id, req.layer);
        let raw = out.join(format!("{stem}.cam.rstf"));
        write_tensor(&map.grid, &raw)?;
        let heat = out.join(format!("{stem}.cam.ppm"));
        heatmap_image(&normalized_grid(&map.grid)?, &cmap, 1)?.save(&heat)?;
        written.extend([raw, heat]);
        if let (Some(alpha), Some(img)) = (req.overlay, &image) {
            let path = out.join(format!("{stem}.overlay.ppm"));
            overlay_image(img, &map.grid, alpha, &cmap)?.save(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Renders a 2-d RSTF tensor (an RDM, a CAM grid) as a heatmap, optionally
/// min-max normalized first.
pub fn render(input: &Path, zoom: usize, normalize: bool, out: &Path) -> Result<()> {
    let t: Tensor = read_tensor(input)?;
    let m = if normalize {
        normalized_grid(&t)?
    } else {
        let &[h, w] = t.dims() else {
            return Err(Error::shape("render", format!("dims {:?} are not [H,W]", t.dims())));
        };
        Matrix::from_vec(h, w, t.data().iter().map(|&v| v as f64).collect())?
    };
    heatmap_image(&m, &ColorMap::default(), zoom)?.save(out)
}
