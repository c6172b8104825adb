// Turn forward traces into response vectors, per-class thresholds and
// sparse activity patterns.
//
//     cargo run --example activity_patterns

use repscope::patterns::{
    build_patterns, build_response_vectors, class_thresholds, ActivityPattern, AnalysisConfig, FractionMode,
};
use repscope::synthetic::{synthetic_dataset, toy_network, SyntheticConfig};

pub fn run_example() -> repscope::Result<Vec<ActivityPattern>> {
    let data = synthetic_dataset(&SyntheticConfig {
        per_class: 6,
        ..Default::default()
    })?;
    let traces = data.traces(&toy_network()?)?;

    for mode in [FractionMode::TopFractionMean, FractionMode::ScaledMean] {
        let cfg = AnalysisConfig {
            mode,
            ..Default::default()
        };
        let vectors = build_response_vectors(&traces, &cfg)?;
        let v = vectors
            .iter()
            .find(|v| v.layer_name == "relu2")
            .expect("relu2 is tapped");
        println!("{mode}: {} relu2 {:.3?}", v.image_id, v.values);
    }

    let cfg = AnalysisConfig::default();
    let vectors = build_response_vectors(&traces, &cfg)?;
    let thresholds = class_thresholds(&vectors, &data.manifest)?;
    for t in thresholds.iter().filter(|t| t.layer_name == "relu5") {
        println!("class {} relu5 T = {:.4}", t.class_id, t.t);
    }
    let patterns = build_patterns(&vectors, &thresholds, &data.manifest, &cfg)?;
    for p in patterns.iter().filter(|p| p.layer_name == "relu5").step_by(6) {
        println!("{} {:?}", p.image_id, p.activated_mask());
    }
    Ok(patterns)
}

fn main() -> repscope::Result<()> {
    run_example()?;
    Ok(())
}
