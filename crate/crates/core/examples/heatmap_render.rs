// Color ramp, RDM heatmap and TSV table output.
//
//     cargo run --example heatmap_render [OUT_DIR]

use std::path::{Path, PathBuf};

use repscope::matrix::Matrix;
use repscope::report::{read_table, render_heatmap, write_table, ColorMap, Table};

pub fn run_example(out: &Path) -> repscope::Result<Vec<u8>> {
    let cmap = ColorMap::default();
    let mut table = Table::new(&["position", "r", "g", "b"]);
    for i in 0..=8 {
        let v = i as f64 / 8.0;
        let [r, g, b] = cmap.color(v);
        table.push(vec![v.to_string(), r.to_string(), g.to_string(), b.to_string()]);
    }
    let tpath = out.join("ramp.tsv");
    write_table(&table, &tpath)?;
    assert_eq!(read_table(&tpath)?, table);

    // A block-structured dissimilarity matrix: two groups of three.
    let d = Matrix::from_fn(6, 6, |i, j| match (i == j, i / 3 == j / 3) {
        (true, _) => 0.0,
        (false, true) => 0.2,
        (false, false) => 0.9,
    });
    let path = out.join("blocks.ppm");
    render_heatmap(&d, &cmap, 10, &path)?;
    let bytes = std::fs::read(&path).map_err(|e| repscope::Error::Io { path, source: e })?;
    println!(
        "{} bytes, header {:?}",
        bytes.len(),
        String::from_utf8_lossy(&bytes[..12])
    );
    Ok(bytes)
}

fn main() -> repscope::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("repscope-heatmap"));
    run_example(&out)?;
    Ok(())
}
