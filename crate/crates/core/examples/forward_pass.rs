// Build a small network in code, save its descriptor and weights, reload it
// and capture the tap outputs of one image.
//
//     cargo run --example forward_pass [OUT_DIR]

use std::path::{Path, PathBuf};

use repscope::net::{load_network_spec, ForwardTrace, Layer, NetworkSpec};
use repscope::tensorio::Tensor;

pub fn run_example(out: &Path) -> repscope::Result<ForwardTrace> {
    // Two 3x3 edge filters over a single-channel 8x8 input.
    let w = Tensor::new(
        vec![2, 1, 3, 3],
        vec![
            -1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0, //
            -1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0,
        ],
    )?;
    let net = NetworkSpec::new(
        [1, 8, 8],
        vec![
            Layer::conv("conv1", w, Tensor::zeros(vec![2])?, 1, 1)?,
            Layer::relu("relu1"),
            Layer::lrn("norm1"),
            Layer::max_pool("pool1", 2, 2),
            Layer::gap("gap"),
        ],
        vec!["relu1".into(), "pool1".into(), "gap".into()],
    )?;
    let path = out.join("edges.txt");
    net.save(&path)?;
    let net = load_network_spec(&path)?;

    // A bright right half: only the vertical-edge filter responds.
    let image = Tensor::from_fn(vec![1, 8, 8], |i| if i % 8 >= 4 { 1.0 } else { 0.0 })?;
    let trace = net.forward("half", &image)?;
    for tap in &trace.taps {
        println!("{:6} {:?}", tap.layer_name, tap.fmap.dims());
    }
    println!("gap {:?}", trace.tap("gap").expect("gap is tapped").data());
    Ok(trace)
}

fn main() -> repscope::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("repscope-forward"));
    run_example(&out)?;
    Ok(())
}
