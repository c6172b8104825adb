// Files written by an outside tool, byte by byte and line by line, must load
// with their invariants intact.

use std::fs;
use std::path::Path;

use repscope::net::{load_network_spec, LayerKind};
use repscope::tensorio::{load_manifest, read_tensor, Split};
use repscope::Error;

/// RSTF encoding written independently of the library.
fn rstf(dims: &[u32], data: &[f32]) -> Vec<u8> {
    let mut out = b"RSTF".to_vec();
    out.extend([1u8, 1, dims.len() as u8]);
    for d in dims {
        out.extend(d.to_le_bytes());
    }
    for v in data {
        out.extend(v.to_le_bytes());
    }
    out
}

fn write(path: &Path, bytes: &[u8]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, bytes).unwrap();
}

#[test]
fn solid_red_image_loads_as_constant_planes() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (227usize, 227usize);
    let mut data = vec![1.0f32; h * w];
    data.extend(vec![0.0f32; 2 * h * w]);
    write(
        &dir.path().join("img/red_0001.rstf"),
        &rstf(&[3, h as u32, w as u32], &data),
    );
    write(
        &dir.path().join("manifest.tsv"),
        b"# resize_policy=center_crop target=3x227x227\nimage_id\tclass_id\tclass_name\ttensor_path\tsplit\nred_0001\t0\tred\timg/red_0001.rstf\ttest\n",
    );
    let m = load_manifest(dir.path().join("manifest.tsv"), true).unwrap();
    assert_eq!(m.records()[0].split, Split::Test);
    let t = read_tensor(dir.path().join(&m.records()[0].tensor_path)).unwrap();
    assert_eq!(t.dims(), &[3, 227, 227]);
    assert!(t.channel(0).iter().all(|&v| v == 1.0));
    assert!(t.channel(1).iter().chain(t.channel(2)).all(|&v| v == 0.0));
}

#[test]
fn alexnet_conv1_weights_keep_their_dims() {
    let dir = tempfile::tempdir().unwrap();
    let n = 96 * 3 * 11 * 11;
    let data: Vec<f32> = (0..n).map(|i| (i as f32).sin()).collect();
    let path = dir.path().join("conv1.w.rstf");
    write(&path, &rstf(&[96, 3, 11, 11], &data));
    let t = read_tensor(&path).unwrap();
    assert_eq!(t.dims(), &[96, 3, 11, 11]);
    assert_eq!(t.data(), &data[..]);
}

fn toy_descriptor(dir: &Path, conv2_in: usize) {
    let mut text = String::from("# written by an exporter\ninput 3 16 16\n");
    for (i, (out, inp)) in [(4, 3), (6, conv2_in)].iter().enumerate() {
        let name = format!("conv{}", i + 1);
        let w: Vec<f32> = (0..out * inp * 9).map(|k| ((k % 7) as f32 - 3.0) * 0.05).collect();
        write(
            &dir.join(format!("w/{name}.w.rstf")),
            &rstf(&[*out as u32, *inp as u32, 3, 3], &w),
        );
        write(
            &dir.join(format!("w/{name}.b.rstf")),
            &rstf(&[*out as u32], &vec![0.01; *out]),
        );
        text.push_str(&format!(
            "layer {name} conv out={out} in={inp} kh=3 kw=3 stride=1 pad=1 weight=w/{name}.w.rstf bias=w/{name}.b.rstf\nlayer relu{} relu\n",
            i + 1
        ));
    }
    text.push_str("layer pool maxpool k=2 stride=2\nlayer norm lrn\nlayer gap gap\ntap relu1 relu2 gap\n");
    fs::write(dir.join("net.txt"), text).unwrap();
}

#[test]
fn exported_network_loads_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    toy_descriptor(dir.path(), 4);
    let net = load_network_spec(dir.path().join("net.txt")).unwrap();
    assert_eq!(net.tap_points(), &["relu1", "relu2", "gap"]);
    assert_eq!(net.layer_dims("pool").unwrap(), &[6, 8, 8]);
    assert!(matches!(net.layers()[5].kind, LayerKind::Lrn { n: 5, .. }));
    let img = repscope::tensorio::Tensor::from_fn(vec![3, 16, 16], |i| (i % 5) as f32 / 4.0).unwrap();
    let trace = net.forward("x", &img).unwrap();
    assert_eq!(trace.tap("gap").unwrap().dims(), &[6]);
}

#[test]
fn inconsistent_export_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    toy_descriptor(dir.path(), 5);
    assert!(matches!(
        load_network_spec(dir.path().join("net.txt")),
        Err(Error::ShapeMismatch { .. })
    ));
}
