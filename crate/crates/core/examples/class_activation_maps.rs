// Project a trained head's weights onto one image's feature maps, check the
// map's mean against the logit, and write heatmap and overlay images.
//
//     cargo run --release --example class_activation_maps [OUT_DIR]

use std::path::{Path, PathBuf};

use repscope::cam::{cam_map, gap_features, layer_features, predict, train_gap_head, CamMap, TrainConfig};
use repscope::report::{normalized_grid, overlay_cam, render_heatmap, ColorMap};
use repscope::synthetic::{synthetic_dataset, toy_network, SyntheticConfig};

pub fn run_example(out: &Path) -> repscope::Result<Vec<CamMap>> {
    let data = synthetic_dataset(&SyntheticConfig {
        per_class: 20,
        ..Default::default()
    })?;
    let traces = data.traces(&toy_network()?)?;
    let layer = "relu2";
    let (x, y) = layer_features(&traces, layer, &data.manifest)?;
    let head = train_gap_head(layer, &x, &y, data.manifest.n_classes(), &TrainConfig::default())?;

    let (idx, trace) = traces
        .iter()
        .enumerate()
        .find(|(_, t)| t.image_id == "pair12_000")
        .expect("fixture image");
    let fmap = trace.tap(layer).expect("relu2 is tapped");
    let features = gap_features(fmap)?;
    let logits = head.logits(&features)?;
    let cmap = ColorMap::default();
    let mut maps = Vec::new();
    for (class_id, p) in predict(&head, &features, 3)? {
        let m = cam_map(&trace.image_id, fmap, &head, class_id)?;
        let mean = m.grid.data().iter().map(|&v| v as f64).sum::<f64>() / m.grid.len() as f64;
        println!(
            "class {class_id}: p = {p:.3}, mean(CAM) + b = {:.5}, logit = {:.5}",
            mean + head.bias()[class_id] as f64,
            logits[class_id]
        );
        let stem = format!("{}.{layer}.c{class_id}", trace.image_id);
        render_heatmap(
            &normalized_grid(&m.grid)?,
            &cmap,
            8,
            &out.join(format!("{stem}.cam.ppm")),
        )?;
        overlay_cam(
            &data.images[idx],
            &m.grid,
            0.5,
            &cmap,
            &out.join(format!("{stem}.overlay.ppm")),
        )?;
        maps.push(m);
    }
    println!("images in {}", out.display());
    Ok(maps)
}

fn main() -> repscope::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("repscope-cam"));
    run_example(&out)?;
    Ok(())
}
