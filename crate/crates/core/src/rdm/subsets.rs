use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensorio::{DatasetManifest, ManifestRecord};

/// Images drawn from the same confidence-rank group of every class.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSpec {
    /// 1-based.
    pub subset_index: usize,
    /// Class-major order; within a class, descending confidence.
    pub members: Vec<String>,
}

impl SubsetSpec {
    /// The members as a manifest, in subset order.
    pub fn to_manifest(&self, manifest: &DatasetManifest) -> Result<DatasetManifest> {
        let records: Vec<ManifestRecord> = self
            .members
            .iter()
            .map(|id| manifest.get(id).cloned().ok_or_else(|| Error::UnknownImage(id.clone())))
            .collect::<Result<_>>()?;
        DatasetManifest::new(records)
    }
}

/// Builds the confidence-sorted subsets.
///
/// Per class, images are sorted by confidence descending (ties by image id)
/// and cut into `n_groups` contiguous groups whose sizes differ by at most
/// one, the larger groups first. Subset `s` takes the first `per_group`
/// images of group `s` from every class. Without `allow_short`, every class
/// needs at least `n_groups * per_group` images.
pub fn build_subsets(
    manifest: &DatasetManifest,
    confidences: &HashMap<String, f64>,
    n_groups: usize,
    per_group: usize,
    allow_short: bool,
) -> Result<Vec<SubsetSpec>> {
    if n_groups == 0 || per_group == 0 {
        return Err(Error::InvalidArgument("n_groups and per_group must be positive".into()));
    }
    let mut by_class: Vec<Vec<(&str, f64)>> = vec![Vec::new(); manifest.n_classes()];
    for r in manifest.records() {
        let c = *confidences
            .get(&r.image_id)
            .ok_or_else(|| Error::MissingConfidence(r.image_id.clone()))?;
        if !c.is_finite() {
            return Err(Error::NonFiniteInput(format!("confidence of {:?}", r.image_id)));
        }
        by_class[r.class_id].push((&r.image_id, c));
    }

    let required = n_groups * per_group;
    let mut subsets: Vec<SubsetSpec> = (1..=n_groups)
        .map(|subset_index| SubsetSpec {
            subset_index,
            members: Vec::new(),
        })
        .collect();
    for (class_id, images) in by_class.iter_mut().enumerate() {
        if images.len() < required && !allow_short {
            return Err(Error::ClassTooSmall {
                class_id,
                available: images.len(),
                required,
            });
        }
        images.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let base = images.len() / n_groups;
        let extra = images.len() % n_groups;
        let mut start = 0;
        for (g, subset) in subsets.iter_mut().enumerate() {
            let size = base + usize::from(g < extra);
            let take = size.min(per_group);
            subset
                .members
                .extend(images[start..start + take].iter().map(|(id, _)| id.to_string()));
            start += size;
        }
    }
    Ok(subsets)
}

/// Reads `image_id<TAB>confidence` lines; `#` lines are comments and an
/// `image_id<TAB>confidence` header line is skipped.
pub fn read_confidences(path: &Path) -> Result<HashMap<String, f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') || (i == 0 && line == "image_id\tconfidence") {
            continue;
        }
        let loc = format!("{}:{}", path.display(), i + 1);
        let (id, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&loc, "expected image_id<TAB>confidence"))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| Error::parse(&loc, format!("confidence {value:?}: {e}")))?;
        if out.insert(id.to_string(), value).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}
