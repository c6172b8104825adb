// The whole batch pipeline on disk, step by step, through the same driver
// functions the command-line tool calls.
//
//     cargo run --release --example batch_pipeline [OUT_DIR]

use std::path::{Path, PathBuf};

use repscope::cam::TrainConfig;
use repscope::patterns::AnalysisConfig;
use repscope::rdm::CorrelationMethod;
use repscope::report::driver::{self, CamRequest, StatsQuery};
use repscope::stats::Scope;
use repscope::synthetic::{write_fixture, SyntheticConfig, TAPS};

pub fn run_example(out: &Path) -> repscope::Result<Vec<PathBuf>> {
    let (manifest, net) = write_fixture(&out.join("fixture"), &SyntheticConfig::default())?;
    let traces = out.join("traces");
    let patterns = out.join("patterns");
    let heads = out.join("heads");

    driver::forward(&net, &manifest, &traces)?;
    driver::patterns(&traces, &manifest, &AnalysisConfig::default(), &patterns)?;
    let h = driver::stats(&patterns, &manifest, "relu3", StatsQuery::PerImage, Scope::All)?;
    println!("relu3 activated neurons per image: mean {:.2}", h.mean_label());

    let mut rdms = Vec::new();
    for layer in TAPS {
        let path = out.join("rdm").join(format!("{layer}.rstf"));
        driver::rdm_build(&patterns, &manifest, layer, None, false, &path)?;
        driver::render(&path, 2, false, &path.with_extension("ppm"))?;
        rdms.push(path);
    }
    driver::rdm_corr(&rdms, CorrelationMethod::Spearman, &out.join("rdm/correlation.tsv"))?;
    let fit = driver::rdm_mds(&rdms, CorrelationMethod::Spearman, 2, &out.join("rdm/mds.tsv"))?;
    println!("MDS fit {fit:.3}");

    let summary = driver::train_heads(&traces, &manifest, &[], &TrainConfig::default(), 3, &heads)?;
    for (layer, acc) in &summary.accuracy {
        println!("{layer}: top-1 {acc:.3}");
    }
    let subsets = driver::subsets(
        &manifest,
        &heads.join("confidences.relu5.tsv"),
        4,
        10,
        false,
        &out.join("subsets"),
    )?;
    driver::rdm_build(
        &patterns,
        &manifest,
        "relu5",
        Some(&subsets[0]),
        true,
        &out.join("rdm/relu5.top.rstf"),
    )?;

    let req = CamRequest {
        image_id: "pair01_000".into(),
        layer: "relu2".into(),
        class_id: None,
        topk: 2,
        overlay: Some(0.5),
    };
    let written = driver::cam(&traces, &heads, &manifest, &req, &out.join("cam"))?;
    for p in &written {
        println!("{}", p.display());
    }
    Ok(written)
}

fn main() -> repscope::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("repscope-pipeline"));
    run_example(&out)?;
    Ok(())
}
