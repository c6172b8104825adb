// Place the per-layer RDMs in a plane with classical MDS on
// 1 - correlation, then check how well the plane preserves the distances.
//
//     cargo run --example layer_mds

use repscope::patterns::{build_patterns, build_response_vectors, class_thresholds, AnalysisConfig};
use repscope::rdm::{
    build_rdm, classical_mds, mds_fit_correlation, rdm_distance_matrix, CorrelationMethod, MdsEmbedding,
};
use repscope::synthetic::{synthetic_dataset, toy_network, SyntheticConfig, TAPS};

pub fn run_example() -> repscope::Result<(MdsEmbedding, f64)> {
    let data = synthetic_dataset(&SyntheticConfig {
        per_class: 10,
        ..Default::default()
    })?;
    let traces = data.traces(&toy_network()?)?;
    let cfg = AnalysisConfig::default();
    let vectors = build_response_vectors(&traces, &cfg)?;
    let thresholds = class_thresholds(&vectors, &data.manifest)?;
    let patterns = build_patterns(&vectors, &thresholds, &data.manifest, &cfg)?;
    let rdms = TAPS
        .iter()
        .map(|layer| {
            let p: Vec<_> = patterns.iter().filter(|p| &p.layer_name == layer).cloned().collect();
            build_rdm(&p)
        })
        .collect::<repscope::Result<Vec<_>>>()?;

    let d = rdm_distance_matrix(&rdms, CorrelationMethod::Spearman)?;
    let e = classical_mds(&d, 2)?.with_labels(TAPS.iter().map(|s| s.to_string()).collect())?;
    print!("{}", e.to_tsv());
    println!("eigenvalues {:.4?}", e.eigenvalues);
    let fit = mds_fit_correlation(&d, &e, CorrelationMethod::Pearson)?;
    println!("fit correlation {fit:.4}");
    Ok((e, fit))
}

fn main() -> repscope::Result<()> {
    run_example()?;
    Ok(())
}
