// Each example is compiled in as a module and its result checked.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));
        }
    };
}

example!(tensor_roundtrip);
example!(forward_pass);
example!(activity_patterns);
example!(selectivity_stats);
example!(rdm_geometry);
example!(layer_mds);
example!(confidence_subsets);
example!(gap_heads);
example!(class_activation_maps);
example!(heatmap_render);
example!(synthetic_fixture);
example!(batch_pipeline);

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn tensor_roundtrip_example() {
    let dir = tmp();
    let (t, m) = tensor_roundtrip::run_example(dir.path()).unwrap();
    assert_eq!(t.dims(), &[3, 4, 5]);
    assert_eq!(m.n_classes(), 2);
}

#[test]
fn forward_pass_example() {
    let dir = tmp();
    let trace = forward_pass::run_example(dir.path()).unwrap();
    assert_eq!(trace.tap("relu1").unwrap().dims(), &[2, 8, 8]);
    let gap = trace.tap("gap").unwrap().data();
    // the vertical edge dominates; the horizontal filter only sees the padded border
    assert!(gap[0] > gap[1]);
}

#[test]
fn activity_patterns_example() {
    let patterns = activity_patterns::run_example().unwrap();
    assert!(!patterns.is_empty());
    assert!(patterns
        .iter()
        .all(|p| p.values.iter().all(|&v| v == 0.0 || v as f64 > p.threshold)));
}

#[test]
fn selectivity_stats_example() {
    let fractions = selectivity_stats::run_example().unwrap();
    assert_eq!(fractions.len(), 5);
    assert!(fractions.iter().all(|(_, f)| *f > 0.0 && *f < 0.5));
}

#[test]
fn rdm_geometry_example() {
    let dir = tmp();
    let summary = rdm_geometry::run_example(dir.path()).unwrap();
    let (layer, intra, inter) = summary.last().unwrap();
    assert_eq!(layer, "relu5");
    assert!(intra < inter);
    assert!(dir.path().join("relu5.rank.rstf").exists());
}

#[test]
fn layer_mds_example() {
    let (e, fit) = layer_mds::run_example().unwrap();
    assert_eq!(e.coords.rows(), 5);
    assert_eq!(e.labels[0], "relu1");
    assert!(fit > 0.5 && fit <= 1.0);
}

#[test]
fn confidence_subsets_example() {
    let subsets = confidence_subsets::run_example().unwrap();
    assert_eq!(subsets.len(), 12);
    assert!(subsets.iter().all(|s| s.members.len() == 420));
}

#[test]
fn gap_heads_example() {
    let acc: std::collections::HashMap<_, _> = gap_heads::run_example().unwrap().into_iter().collect();
    assert!(acc["relu1"] < acc["relu2"]);
    assert_eq!(acc["relu5"], 1.0);
}

#[test]
fn class_activation_maps_example() {
    let dir = tmp();
    let maps = class_activation_maps::run_example(dir.path()).unwrap();
    assert_eq!(maps.len(), 3);
    assert!(maps.iter().all(|m| m.grid.dims() == [16, 16]));
    assert!(dir.path().join("pair12_000.relu2.c1.overlay.ppm").exists());
}

#[test]
fn heatmap_render_example() {
    let dir = tmp();
    let ppm = heatmap_render::run_example(dir.path()).unwrap();
    assert!(ppm.starts_with(b"P6\n"));
}

#[test]
fn synthetic_fixture_example() {
    let dir = tmp();
    let (manifest, net) = synthetic_fixture::run_example(dir.path()).unwrap();
    assert!(manifest.exists() && net.exists());
}

#[test]
fn batch_pipeline_example() {
    let dir = tmp();
    let written = batch_pipeline::run_example(dir.path()).unwrap();
    assert_eq!(written.len(), 6);
    assert!(written.iter().all(|p| p.exists()));
    assert!(dir.path().join("rdm/relu5.top.rstf").exists());
}
