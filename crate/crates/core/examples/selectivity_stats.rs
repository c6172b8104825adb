// Sparsity and selectivity histograms: activated neurons per image,
// activating images per neuron, and one neuron's response distribution.
//
//     cargo run --example selectivity_stats

use repscope::patterns::{build_patterns, build_response_vectors, class_thresholds, AnalysisConfig};
use repscope::stats::{
    activated_per_image, images_per_neuron, mean_activation_fraction, neuron_response_histogram, Scope,
};
use repscope::synthetic::{synthetic_dataset, toy_network, SyntheticConfig, TAPS};

pub fn run_example() -> repscope::Result<Vec<(String, f64)>> {
    let data = synthetic_dataset(&SyntheticConfig::default())?;
    let traces = data.traces(&toy_network()?)?;
    let cfg = AnalysisConfig::default();
    let vectors = build_response_vectors(&traces, &cfg)?;
    let thresholds = class_thresholds(&vectors, &data.manifest)?;
    let patterns = build_patterns(&vectors, &thresholds, &data.manifest, &cfg)?;

    let mut fractions = Vec::new();
    for layer in TAPS {
        let per_image = activated_per_image(&patterns, layer, Scope::All)?;
        let per_neuron = images_per_neuron(&patterns, layer, Scope::Class(0))?;
        let frac = mean_activation_fraction(&patterns, layer, Scope::All)?;
        println!(
            "{layer}: {:.2} neurons active per image ({:.0}%), class-0 images per neuron {:?}",
            per_image.mean_label(),
            100.0 * frac,
            per_neuron.counts
        );
        fractions.push((layer.to_string(), frac));
    }

    let h = neuron_response_histogram(&vectors, &data.manifest, 0, 0, "relu5", 10)?;
    print!("relu5 neuron 0, class 0:\n{}", h.to_tsv());
    Ok(fractions)
}

fn main() -> repscope::Result<()> {
    run_example()?;
    Ok(())
}
