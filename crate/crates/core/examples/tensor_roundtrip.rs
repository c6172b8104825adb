// Write tensors and a dataset manifest, then read them back bit-exact.
//
//     cargo run --example tensor_roundtrip [OUT_DIR]

use std::path::{Path, PathBuf};

use repscope::tensorio::{
    load_manifest, read_tensor, write_manifest, write_tensor, DatasetManifest, ManifestRecord, Split, Tensor,
};

pub fn run_example(out: &Path) -> repscope::Result<(Tensor, DatasetManifest)> {
    let t = Tensor::from_fn(vec![3, 4, 5], |i| i as f32 * 0.5 - 7.0)?;
    let path = out.join("sequential.rstf");
    write_tensor(&t, &path)?;
    let back = read_tensor(&path)?;
    assert_eq!(back, t);

    // The smallest valid file: dims [1, 1], data [1.0].
    let one = Tensor::new(vec![1, 1], vec![1.0])?;
    println!("{:02X?}", one.to_bytes());

    let records = ["harbor", "forest"]
        .iter()
        .enumerate()
        .map(|(class_id, name)| ManifestRecord {
            image_id: format!("{name}_0001"),
            class_id,
            class_name: name.to_string(),
            tensor_path: "sequential.rstf".into(),
            split: Split::Test,
        })
        .collect();
    let manifest = DatasetManifest::new(records)?;
    let mpath = out.join("manifest.tsv");
    write_manifest(&manifest, &mpath)?;
    let loaded = load_manifest(&mpath, true)?;
    println!("{} records, {} classes", loaded.len(), loaded.n_classes());
    Ok((back, loaded))
}

fn main() -> repscope::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("repscope-tensor"));
    run_example(&out)?;
    Ok(())
}
