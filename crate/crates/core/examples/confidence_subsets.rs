// Rank every class by the model's confidence in the true class and cut it
// into equal groups; subset k gathers group k of every class.
//
//     cargo run --example confidence_subsets

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repscope::rdm::{build_subsets, SubsetSpec};
use repscope::tensorio::{DatasetManifest, ManifestRecord, Split};

pub fn run_example() -> repscope::Result<Vec<SubsetSpec>> {
    // 35 classes of 150 images with random confidences.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut records = Vec::new();
    let mut confidence = HashMap::new();
    for class_id in 0..35 {
        for i in 0..150 {
            let image_id = format!("c{class_id:02}_{i:03}");
            confidence.insert(image_id.clone(), rng.random::<f64>());
            records.push(ManifestRecord {
                image_id,
                class_id,
                class_name: format!("class{class_id:02}"),
                tensor_path: String::new(),
                split: Split::Test,
            });
        }
    }
    let manifest = DatasetManifest::new(records)?;
    let subsets = build_subsets(&manifest, &confidence, 12, 12, false)?;
    for s in subsets.iter().take(3) {
        let mean: f64 = s.members.iter().map(|id| confidence[id]).sum::<f64>() / s.members.len() as f64;
        println!(
            "subset {:2}: {} images, mean confidence {mean:.3}",
            s.subset_index,
            s.members.len()
        );
    }
    Ok(subsets)
}

fn main() -> repscope::Result<()> {
    run_example()?;
    Ok(())
}
