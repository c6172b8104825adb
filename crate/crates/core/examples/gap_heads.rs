// Train a GAP classifier head per tap layer on the train split and compare
// held-out top-1 accuracy across layers.
//
//     cargo run --release --example gap_heads

use std::collections::HashMap;

use repscope::cam::{layer_accuracy, layer_features, per_layer_predictions, train_gap_head, TrainConfig};
use repscope::synthetic::{synthetic_dataset, toy_network, SyntheticConfig, TAPS};
use repscope::tensorio::Split;

pub fn run_example() -> repscope::Result<Vec<(String, f64)>> {
    let data = synthetic_dataset(&SyntheticConfig::default())?;
    let traces = data.traces(&toy_network()?)?;
    let in_split = |s: Split| -> Vec<_> {
        traces
            .iter()
            .filter(|t| data.manifest.get(&t.image_id).map(|r| r.split) == Some(s))
            .cloned()
            .collect()
    };
    let (train, test) = (in_split(Split::Train), in_split(Split::Test));

    let mut heads = HashMap::new();
    for layer in TAPS {
        let (x, y) = layer_features(&train, layer, &data.manifest)?;
        let head = train_gap_head(layer, &x, &y, data.manifest.n_classes(), &TrainConfig::default())?;
        println!(
            "{layer}: {} iterations, final loss {:.4}",
            head.train_meta.iterations, head.train_meta.final_loss
        );
        heads.insert(layer.to_string(), head);
    }
    let rows = per_layer_predictions(&test, &heads, &data.manifest, 3)?;
    let accuracy = layer_accuracy(&rows);
    for (layer, acc) in &accuracy {
        println!("{layer}: held-out top-1 {acc:.3}");
    }
    Ok(accuracy)
}

fn main() -> repscope::Result<()> {
    run_example()?;
    Ok(())
}
