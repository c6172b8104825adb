// Representational dissimilarity matrices per layer: intra- versus
// inter-class dissimilarity, the rank transform, and Pearson/Spearman
// agreement between layers.
//
//     cargo run --example rdm_geometry [OUT_DIR]

use std::path::{Path, PathBuf};

use repscope::patterns::{build_patterns, build_response_vectors, class_thresholds, AnalysisConfig};
use repscope::rdm::{build_rdm, rank_transform, rdm_correlation, CorrelationMethod, Rdm};
use repscope::synthetic::{synthetic_dataset, toy_network, SyntheticConfig, TAPS};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Returns `(layer, mean intra, mean inter)` per tap layer.
pub fn run_example(out: &Path) -> repscope::Result<Vec<(String, f64, f64)>> {
    let data = synthetic_dataset(&SyntheticConfig {
        per_class: 12,
        ..Default::default()
    })?;
    let traces = data.traces(&toy_network()?)?;
    let cfg = AnalysisConfig::default();
    let vectors = build_response_vectors(&traces, &cfg)?;
    let thresholds = class_thresholds(&vectors, &data.manifest)?;
    let patterns = build_patterns(&vectors, &thresholds, &data.manifest, &cfg)?;

    let mut rdms: Vec<Rdm> = Vec::new();
    let mut summary = Vec::new();
    for layer in TAPS {
        let layer_patterns: Vec<_> = patterns.iter().filter(|p| p.layer_name == layer).cloned().collect();
        let rdm = build_rdm(&layer_patterns)?;
        let (intra, inter) = rdm.intra_inter();
        println!(
            "{layer}: intra {:.3} inter {:.3} ({} constant-pattern pairs)",
            mean(&intra),
            mean(&inter),
            rdm.degenerate_pairs().len()
        );
        summary.push((layer.to_string(), mean(&intra), mean(&inter)));
        rank_transform(&rdm).save(out.join(format!("{layer}.rank.rstf")))?;
        rdms.push(rdm);
    }

    for method in [CorrelationMethod::Pearson, CorrelationMethod::Spearman] {
        let r = rdm_correlation(&rdms[3], &rdms[4], method)?;
        println!("relu4 vs relu5 ({method}): {r:.4}");
    }
    Ok(summary)
}

fn main() -> repscope::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("repscope-rdm"));
    run_example(&out)?;
    Ok(())
}
