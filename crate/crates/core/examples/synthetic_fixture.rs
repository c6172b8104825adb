// Write the three-class synthetic image set and the toy network to disk,
// ready for the command-line pipeline.
//
//     cargo run --example synthetic_fixture -- fixture/
//     cargo run --bin repscope -- forward --net fixture/toy_net.txt \
//         --manifest fixture/manifest.tsv --out fixture/traces

use std::path::{Path, PathBuf};

use repscope::synthetic::{write_fixture, SyntheticConfig};

pub fn run_example(out: &Path) -> repscope::Result<(PathBuf, PathBuf)> {
    let (manifest, net) = write_fixture(out, &SyntheticConfig::default())?;
    println!("manifest {}", manifest.display());
    println!("network  {}", net.display());
    Ok((manifest, net))
}

fn main() -> repscope::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("repscope-fixture"));
    run_example(&out)?;
    Ok(())
}
