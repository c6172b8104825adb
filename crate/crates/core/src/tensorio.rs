//! RSTF tensor files and the tab-separated dataset manifest.
//!
//! RSTF version 1 layout, all integers little-endian:
//!
//! ```text
//! 0..4   magic "RSTF"
//! 4      version (0x01)
//! 5      dtype (0x01 = f32-LE)
//! 6      ndim (1..=8)
//! 7..    ndim x u32 extents
//! ...    product(extents) x f32-LE, row-major
//! ```
//!
//! Payloads are transported verbatim: NaN, infinities and signed zeros
//! survive a round trip bit for bit.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RSTF";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const MAX_NDIM: usize = 8;

const HEADER_LEN: usize = 7;

/// Dense row-major `f32` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidTensor("dims must be non-empty".into()));
        }
        if dims.len() > MAX_NDIM {
            return Err(Error::InvalidTensor(format!(
                "{} dims exceeds the maximum of {MAX_NDIM}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidTensor(format!("zero extent in {dims:?}")));
        }
        let n =
            element_count(&dims).ok_or_else(|| Error::InvalidTensor(format!("extent product overflows: {dims:?}")))?;
        if n != data.len() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims:?} hold {n} values but data has {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = element_count(&dims).unwrap_or(0);
        Tensor::new(dims, vec![0.0; n])
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let n = element_count(&dims).unwrap_or(0);
        Tensor::new(dims, (0..n).map(&mut f).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data under new dims with an equal element count.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    /// Splits a `[C, H, W]` tensor into `(C, H, W)`.
    pub fn chw(&self) -> Option<(usize, usize, usize)> {
        match self.dims.as_slice() {
            &[c, h, w] => Some((c, h, w)),
            _ => None,
        }
    }

    /// Contiguous slice for channel `c` of a `[C, H, W]` tensor.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane: usize = self.dims[1..].iter().product();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::CorruptFile("truncated header".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(bytes[5]));
        }
        let ndim = bytes[6] as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::CorruptFile(format!("ndim {ndim} outside 1..={MAX_NDIM}")));
        }
        let dims_end = HEADER_LEN + 4 * ndim;
        if bytes.len() < dims_end {
            return Err(Error::CorruptFile("truncated extents".into()));
        }
        let dims: Vec<usize> = bytes[HEADER_LEN..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        if dims.contains(&0) {
            return Err(Error::CorruptFile(format!("zero extent in {dims:?}")));
        }
        // Check the declared size against what is actually there before
        // allocating anything for the payload.
        let remaining = bytes.len() - dims_end;
        let declared = element_count(&dims)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CorruptFile(format!("extent product overflows: {dims:?}")))?;
        if declared != remaining {
            return Err(Error::CorruptFile(format!(
                "dims {dims:?} declare {declared} payload bytes, found {remaining}"
            )));
        }
        let data = bytes[dims_end..]
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Ok(Tensor { dims, data })
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

pub const MANIFEST_HEADER: &str = "image_id\tclass_id\tclass_name\ttensor_path\tsplit";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub image_id: String,
    pub class_id: usize,
    pub class_name: String,
    pub tensor_path: String,
    pub split: Split,
}

/// Ordered list of dataset images. Construction validates that image ids
/// are unique, class ids are contiguous from zero and class names map to a
/// single id.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<ManifestRecord>,
    index: HashMap<String, usize>,
    class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.image_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.image_id.clone()));
            }
        }

        let mut names: BTreeMap<usize, &str> = BTreeMap::new();
        let mut ids_by_name: HashMap<&str, usize> = HashMap::new();
        for r in &records {
            if let Some(&prev) = ids_by_name.get(r.class_name.as_str()) {
                if prev != r.class_id {
                    return Err(Error::InconsistentClassName {
                        name: r.class_name.clone(),
                        first: prev,
                        second: r.class_id,
                    });
                }
            }
            ids_by_name.insert(&r.class_name, r.class_id);
            if let Some(&prev) = names.get(&r.class_id) {
                if prev != r.class_name {
                    return Err(Error::parse(
                        format!("image {:?}", r.image_id),
                        format!("class id {} named both {prev:?} and {:?}", r.class_id, r.class_name),
                    ));
                }
            }
            names.insert(r.class_id, &r.class_name);
        }
        for (expected, &id) in names.keys().enumerate() {
            if id != expected {
                let present: Vec<usize> = names.keys().copied().collect();
                return Err(Error::NonContiguousClasses(format!("ids {present:?} skip {expected}")));
            }
        }
        let class_names = names.values().map(|s| s.to_string()).collect();

        Ok(DatasetManifest {
            records,
            index,
            class_names,
        })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestRecord> {
        self.index.get(image_id).map(|&i| &self.records[i])
    }

    pub fn class_of(&self, image_id: &str) -> Result<usize> {
        self.get(image_id)
            .map(|r| r.class_id)
            .ok_or_else(|| Error::UnknownImage(image_id.to_string()))
    }

    /// Records belonging to `split`, in manifest order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Resolves a record's tensor path against `base` (normally the
    /// manifest's directory). Absolute paths are returned unchanged.
    pub fn resolve(&self, base: &Path, record: &ManifestRecord) -> PathBuf {
        base.join(&record.tensor_path)
    }

    /// Manifest text: one tab-separated record per line. A bare
    /// [`MANIFEST_HEADER`] line before the first record is also accepted on
    /// parse.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {MANIFEST_HEADER}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.image_id, r.class_id, r.class_name, r.tensor_path, r.split
            ));
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() || line.starts_with('#') || (records.is_empty() && line == MANIFEST_HEADER) {
                continue;
            }
            let loc = || format!("{origin}:{}", lineno + 1);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::parse(
                    loc(),
                    format!("expected 5 tab-separated fields, found {}", fields.len()),
                ));
            }
            let class_id = fields[1]
                .parse::<usize>()
                .map_err(|e| Error::parse(loc(), format!("class_id {:?}: {e}", fields[1])))?;
            let split = fields[4].parse::<Split>().map_err(|e| Error::parse(loc(), e))?;
            records.push(ManifestRecord {
                image_id: fields[0].to_string(),
                class_id,
                class_name: fields[2].to_string(),
                tensor_path: fields[3].to_string(),
                split,
            });
        }
        DatasetManifest::new(records)
    }
}

/// Loads a manifest. With `validate_tensors`, every referenced tensor file
/// must exist (paths resolve relative to the manifest's directory).
pub fn load_manifest(path: impl AsRef<Path>, validate_tensors: bool) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = DatasetManifest::parse(&text, &path.display().to_string())?;
    if validate_tensors {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut seen = HashSet::new();
        for r in manifest.records() {
            let p = manifest.resolve(base, r);
            if seen.insert(p.clone()) && !p.is_file() {
                return Err(Error::MissingTensor {
                    image_id: r.image_id.clone(),
                    path: p,
                });
            }
        }
    }
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, manifest.to_text()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: [u8; 19] = [
        0x52, 0x53, 0x54, 0x46, 0x01, 0x01, 0x02, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80,
        0x3F,
    ];

    fn record(id: &str, class_id: usize, name: &str) -> ManifestRecord {
        ManifestRecord {
            image_id: id.into(),
            class_id,
            class_name: name.into(),
            tensor_path: format!("{id}.rstf"),
            split: Split::Train,
        }
    }

    #[test]
    fn hand_encoded_bytes_decode() {
        let t = Tensor::from_bytes(&ONE).unwrap();
        assert_eq!(t.dims(), &[1, 1]);
        assert_eq!(t.data(), &[1.0]);
    }

    #[test]
    fn encoder_emits_hand_encoded_bytes() {
        let t = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert_eq!(t.to_bytes(), ONE.to_vec());
    }

    #[test]
    fn signed_zero_is_preserved() {
        let t = Tensor::new(vec![2], vec![0.0, -0.0]).unwrap();
        let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.data()[0].to_bits(), 0x0000_0000);
        assert_eq!(back.data()[1].to_bits(), 0x8000_0000);
    }

    #[test]
    fn nan_payload_survives() {
        let weird = f32::from_bits(0x7fc0_1234);
        let t = Tensor::new(vec![3], vec![weird, f32::INFINITY, f32::NEG_INFINITY]).unwrap();
        let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
        let bits: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits[0], 0x7fc0_1234);
        assert!(back.data()[1].is_infinite());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = ONE;
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_dtype_rejected() {
        let mut bytes = ONE;
        bytes[5] = 0x02;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::UnsupportedDtype(2))));
    }

    #[test]
    fn length_mismatch_is_corrupt() {
        assert!(matches!(Tensor::from_bytes(&ONE[..18]), Err(Error::CorruptFile(_))));
        let mut long = ONE.to_vec();
        long.push(0);
        assert!(matches!(Tensor::from_bytes(&long), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn huge_declared_extent_fails_before_allocation() {
        let mut bytes = vec![0x52, 0x53, 0x54, 0x46, 1, 1, 2];
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn tensor_invariants_enforced() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn file_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_fn(vec![3, 4, 5], |i| i as f32).unwrap();
        let a = dir.path().join("a.rstf");
        let b = dir.path().join("b.rstf");
        write_tensor(&t, &a).unwrap();
        let back = read_tensor(&a).unwrap();
        assert_eq!(back, t);
        write_tensor(&back, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn manifest_two_records() {
        let m = DatasetManifest::new(vec![record("a", 0, "x"), record("b", 1, "y")]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.n_classes(), 2);
        assert_eq!(m.class_of("b").unwrap(), 1);
    }

    #[test]
    fn manifest_class_gap_rejected() {
        let err = DatasetManifest::new(vec![record("a", 0, "x"), record("b", 2, "y")]).unwrap_err();
        assert!(matches!(err, Error::NonContiguousClasses(_)));
    }

    #[test]
    fn manifest_duplicate_rejected() {
        let err = DatasetManifest::new(vec![record("a", 0, "x"), record("a", 0, "x")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(_)));
    }

    #[test]
    fn manifest_class_name_must_be_unique_per_id() {
        let err = DatasetManifest::new(vec![record("a", 0, "x"), record("b", 1, "x")]).unwrap_err();
        assert!(matches!(err, Error::InconsistentClassName { .. }));
    }

    #[test]
    fn manifest_text_parses_with_comments_and_order() {
        let text = "# header\nb\t1\tforest\tb.rstf\tval\na\t0\tairplane\ta.rstf\ttrain\n";
        let m = DatasetManifest::parse(text, "mem").unwrap();
        assert_eq!(m.records()[0].image_id, "b");
        assert_eq!(m.records()[1].split, Split::Train);
        let again = DatasetManifest::parse(&m.to_text(), "mem").unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn manifest_missing_tensor_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, "a\t0\tx\ta.rstf\ttrain\n").unwrap();
        assert!(load_manifest(&path, false).is_ok());
        assert!(matches!(load_manifest(&path, true), Err(Error::MissingTensor { .. })));
    }

    #[test]
    fn thirty_five_class_manifest() {
        let mut records = Vec::new();
        for c in 0..35 {
            for i in 0..690 {
                records.push(record(&format!("c{c}_{i}"), c, &format!("class{c}")));
            }
        }
        let m = DatasetManifest::new(records).unwrap();
        assert_eq!(m.n_classes(), 35);
        assert_eq!(m.len(), 35 * 690);
    }
}
