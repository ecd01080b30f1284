//! Synthetic grouped image-classification data, plus external ingest.
//!
//! Each sample is a small grayscale image with a binary label (a bright
//! "figure" blob is present or not), a tone group 1..=10, and a lighting
//! factor in (0, 1]. The figure's contrast against the background falls
//! monotonically with the group index, so darker groups are genuinely harder
//! — the dataset can expose unfair models. Group 10 also receives half the
//! sample share of the other groups by default, making it the minority
//! group. The test split carries stronger pixel noise and a contrast jitter
//! than train/val, which creates a real validation/test gap.
//!
//! Group and lighting are recorded metadata for evaluation only; they are
//! never model inputs.

pub mod ingest;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::model::archive;
use crate::rng::Rng;

pub const N_GROUPS: usize = 10;

/// Which split a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

/// Generation parameters; fully determines the dataset together with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    /// Relative share of each of the 10 groups.
    pub group_weights: Vec<f64>,
    pub lighting_min: f64,
    pub lighting_max: f64,
    /// Additive pixel noise on train/val.
    pub sigma_train: f64,
    /// Additive pixel noise on test (the distribution shift).
    pub sigma_test: f64,
    /// Multiplicative contrast jitter half-range on test.
    pub contrast_jitter: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        let mut group_weights = vec![2.0; N_GROUPS];
        group_weights[N_GROUPS - 1] = 1.0; // group 10 is the minority
        DatasetSpec {
            train_count: 4000,
            val_count: 1000,
            test_count: 2000,
            image_h: 16,
            image_w: 16,
            image_c: 1,
            group_weights,
            lighting_min: 0.2,
            lighting_max: 1.0,
            sigma_train: 0.05,
            sigma_test: 0.10,
            contrast_jitter: 0.1,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    /// Smaller counts for fast tests.
    pub fn small(seed: u64) -> Self {
        DatasetSpec { train_count: 400, val_count: 200, test_count: 400, seed, ..Default::default() }
    }

    pub fn image_len(&self) -> usize {
        self.image_h * self.image_w * self.image_c
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_weights.len() != N_GROUPS {
            return Err(DataError::BadSpec(format!(
                "{} group weights; the fairness metric is defined over exactly {N_GROUPS} groups",
                self.group_weights.len()
            ))
            .into());
        }
        if self.train_count == 0 || self.val_count == 0 || self.test_count == 0 {
            return Err(DataError::BadSpec("all split counts must be positive".into()).into());
        }
        if self.group_weights.iter().any(|&w| w < 0.0) || self.group_weights.iter().sum::<f64>() <= 0.0 {
            return Err(DataError::BadSpec("group weights must be non-negative and not all zero".into()).into());
        }
        if !(self.lighting_min > 0.0 && self.lighting_min <= self.lighting_max && self.lighting_max <= 1.0) {
            return Err(DataError::BadSpec("lighting range must satisfy 0 < min <= max <= 1".into()).into());
        }
        if self.sigma_train < 0.0 || self.sigma_test < 0.0 || self.contrast_jitter < 0.0 {
            return Err(DataError::BadSpec("noise parameters must be non-negative".into()).into());
        }
        Ok(())
    }

    /// The group the weights designate as minority (ties to the higher index).
    pub fn declared_minority(&self) -> u8 {
        let mut best = 0usize;
        for (i, &w) in self.group_weights.iter().enumerate() {
            if w <= self.group_weights[best] {
                best = i;
            }
        }
        (best + 1) as u8
    }
}

/// One split: images are flat `[n, h, w, c]` row-major in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub groups: Vec<u8>,
    pub lighting: Vec<f64>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize, image_len: usize) -> &[f64] {
        &self.images[i * image_len..(i + 1) * image_len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    pub fn split(&self, kind: SplitKind) -> &Split {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }
}

/// Largest-remainder apportionment of `total` across `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Highest fractional part first; ties to the lower group index.
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % weights.len()]] += 1;
    }
    counts
}

/// Figure contrast for a group: monotone falling from group 1 to group 10.
fn group_contrast(group: u8) -> f64 {
    0.55 - 0.045 * (group as f64 - 1.0)
}

/// Render the noiseless scene for a sample, pixels in [0,1].
///
/// Label 1 places a bright elliptical figure in the central region; label 0
/// places a dim bar distractor near the border. Both sit on a textured
/// background, and both scale their contrast with the group so that darker
/// groups are harder at every lighting level.
pub fn render_scene(spec: &DatasetSpec, label: u8, group: u8, rng: &mut Rng) -> Vec<f64> {
    let (h, w, c) = (spec.image_h, spec.image_w, spec.image_c);
    let mut scene = vec![0.0; h * w * c];
    for v in scene.iter_mut() {
        *v = rng.uniform(0.30, 0.50);
    }
    let contrast = group_contrast(group);
    if label == 1 {
        // Elliptical figure inside the central half of the frame.
        let cy = rng.uniform(h as f64 * 0.3, h as f64 * 0.7);
        let cx = rng.uniform(w as f64 * 0.3, w as f64 * 0.7);
        let ry = rng.uniform(h as f64 * 0.15, h as f64 * 0.26);
        let rx = rng.uniform(w as f64 * 0.15, w as f64 * 0.26);
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    for ch in 0..c {
                        let i = (y * w + x) * c + ch;
                        scene[i] = (scene[i] + contrast).min(1.0);
                    }
                }
            }
        }
    } else {
        // Thin bar hugging one border, at half the figure contrast.
        let horizontal = rng.below(2) == 0;
        let near_start = rng.below(2) == 0;
        let thickness = 1 + rng.below(2);
        let bar_contrast = contrast * 0.5;
        for t in 0..thickness {
            let line = if near_start { t } else { (if horizontal { h } else { w }) - 1 - t };
            if horizontal {
                for x in 0..w {
                    for ch in 0..c {
                        let i = (line * w + x) * c + ch;
                        scene[i] = (scene[i] + bar_contrast).min(1.0);
                    }
                }
            } else {
                for y in 0..h {
                    for ch in 0..c {
                        let i = (y * w + line) * c + ch;
                        scene[i] = (scene[i] + bar_contrast).min(1.0);
                    }
                }
            }
        }
    }
    scene
}

/// Multiply a scene by the lighting factor (the definition of attenuation).
pub fn attenuate(scene: &[f64], lighting: f64) -> Vec<f64> {
    scene.iter().map(|v| v * lighting).collect()
}

fn generate_split(spec: &DatasetSpec, kind: SplitKind) -> Split {
    let count = match kind {
        SplitKind::Train => spec.train_count,
        SplitKind::Val => spec.val_count,
        SplitKind::Test => spec.test_count,
    };
    let mut rng = Rng::derived(spec.seed, &format!("split-{}", kind.name()));
    let (sigma, jitter) = match kind {
        SplitKind::Test => (spec.sigma_test, spec.contrast_jitter),
        _ => (spec.sigma_train, 0.0),
    };
    let per_group = apportion(count, &spec.group_weights);
    let image_len = spec.image_len();

    let mut images = Vec::with_capacity(count * image_len);
    let mut labels = Vec::with_capacity(count);
    let mut groups = Vec::with_capacity(count);
    let mut lighting = Vec::with_capacity(count);

    for (gi, &n) in per_group.iter().enumerate() {
        let group = (gi + 1) as u8;
        for i in 0..n {
            let label = (i % 2) as u8;
            let light = rng.uniform(spec.lighting_min, spec.lighting_max);
            let scene = render_scene(spec, label, group, &mut rng);
            let mut img = attenuate(&scene, light);
            let contrast_scale = if jitter > 0.0 { rng.uniform(1.0 - jitter, 1.0 + jitter) } else { 1.0 };
            for v in img.iter_mut() {
                let noisy = *v * contrast_scale + rng.normal() * sigma;
                *v = noisy.clamp(0.0, 1.0);
            }
            images.extend_from_slice(&img);
            labels.push(label);
            groups.push(group);
            lighting.push(light);
        }
    }

    // Interleave groups so minibatches are mixed.
    let mut order: Vec<usize> = (0..count).collect();
    rng.shuffle(&mut order);
    let mut split = Split {
        images: vec![0.0; count * image_len],
        labels: vec![0; count],
        groups: vec![0; count],
        lighting: vec![0.0; count],
    };
    for (to, &from) in order.iter().enumerate() {
        split.images[to * image_len..(to + 1) * image_len]
            .copy_from_slice(&images[from * image_len..(from + 1) * image_len]);
        split.labels[to] = labels[from];
        split.groups[to] = groups[from];
        split.lighting[to] = lighting[from];
    }
    split
}

/// Generate the full dataset; deterministic for a given spec.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(Dataset {
        train: generate_split(spec, SplitKind::Train),
        val: generate_split(spec, SplitKind::Val),
        test: generate_split(spec, SplitKind::Test),
        spec: spec.clone(),
    })
}

/// Indices of samples with lighting strictly below `threshold`.
///
/// The subset being empty is a reportable condition (robustness would be
/// undefined), never a silent zero.
pub fn poorly_lit_subset(split: &Split, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("light threshold {threshold} outside (0, 1]")));
    }
    let idx: Vec<usize> =
        (0..split.len()).filter(|&i| split.lighting[i] < threshold).collect();
    if idx.is_empty() {
        return Err(DataError::EmptySubset {
            context: format!("no sample has lighting < {threshold}"),
        }
        .into());
    }
    Ok(idx)
}

// ---------------------------------------------------------------------------
// dataset archive (directory form)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SplitMeta {
    split: String,
    count: usize,
}

fn split_file(dir: &std::path::Path, kind: SplitKind) -> std::path::PathBuf {
    dir.join(format!("{}.bin", kind.name()))
}

/// Write `spec.json`, one tensor file per split, and `metadata.csv`.
pub fn save_dataset(ds: &Dataset, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(e, dir))?;
    let spec_json = serde_json::to_vec_pretty(&ds.spec).expect("spec serialization");
    std::fs::write(dir.join("spec.json"), spec_json).map_err(|e| Error::io(e, dir))?;

    let mut metadata = String::from("label,group,lighting\n");
    for kind in [SplitKind::Train, SplitKind::Val, SplitKind::Test] {
        let split = ds.split(kind);
        let meta = SplitMeta { split: kind.name().to_string(), count: split.len() };
        let shape = vec![split.len(), ds.spec.image_h, ds.spec.image_w, ds.spec.image_c];
        let bytes = archive::write_archive(&meta, &[("images".into(), shape, split.images.clone())]);
        let path = split_file(dir, kind);
        std::fs::write(&path, bytes).map_err(|e| Error::io(e, &path))?;
        for i in 0..split.len() {
            metadata.push_str(&format!("{},{},{}\n", split.labels[i], split.groups[i], split.lighting[i]));
        }
    }
    std::fs::write(dir.join("metadata.csv"), metadata).map_err(|e| Error::io(e, dir))
}

/// Load a dataset archive written by [`save_dataset`].
pub fn load_dataset(dir: &std::path::Path) -> Result<Dataset> {
    let spec_path = dir.join("spec.json");
    let spec_bytes = std::fs::read(&spec_path).map_err(|e| Error::io(e, &spec_path))?;
    let spec: DatasetSpec = serde_json::from_slice(&spec_bytes)
        .map_err(|e| Error::Io(format!("{}: {e}", spec_path.display())))?;
    spec.validate()?;

    let md_path = dir.join("metadata.csv");
    let metadata = std::fs::read_to_string(&md_path).map_err(|e| Error::io(e, &md_path))?;
    let mut rows = metadata.lines();
    let header = rows.next().unwrap_or_default();
    if header != "label,group,lighting" {
        return Err(Error::Io(format!("{}: unexpected header {header:?}", md_path.display())));
    }
    let mut parsed: Vec<(u8, u8, f64)> = Vec::new();
    for (lineno, row) in rows.enumerate() {
        let mut parts = row.split(',');
        let bad = || Error::Io(format!("{}: bad row {}", md_path.display(), lineno + 2));
        let label: u8 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let group: u8 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let lighting: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        parsed.push((label, group, lighting));
    }
    let expected = spec.train_count + spec.val_count + spec.test_count;
    if parsed.len() != expected {
        return Err(Error::Io(format!(
            "{}: {} metadata rows, spec says {expected}",
            md_path.display(),
            parsed.len()
        )));
    }

    let mut offset = 0;
    let mut load_split = |kind: SplitKind, count: usize| -> Result<Split> {
        let path = split_file(dir, kind);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(e, &path))?;
        let (meta, tensors): (SplitMeta, _) = archive::read_archive(&bytes)?;
        if meta.split != kind.name() || meta.count != count || tensors.len() != 1 {
            return Err(Error::Io(format!("{}: split file disagrees with spec.json", path.display())));
        }
        let (entry, images) = tensors.into_iter().next().unwrap();
        if entry.shape != [count, spec.image_h, spec.image_w, spec.image_c] {
            return Err(Error::Io(format!("{}: image tensor shape {:?}", path.display(), entry.shape)));
        }
        let rowspan = &parsed[offset..offset + count];
        offset += count;
        Ok(Split {
            images,
            labels: rowspan.iter().map(|r| r.0).collect(),
            groups: rowspan.iter().map(|r| r.1).collect(),
            lighting: rowspan.iter().map(|r| r.2).collect(),
        })
    };

    let train = load_split(SplitKind::Train, spec.train_count)?;
    let val = load_split(SplitKind::Val, spec.val_count)?;
    let test = load_split(SplitKind::Test, spec.test_count)?;
    Ok(Dataset { spec, train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec::small(77)
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a, b);
        assert!(a.train.images.iter().zip(&b.train.images).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn attenuation_scales_pre_noise_pixels_exactly() {
        let s = spec();
        let mut rng = Rng::new(5);
        let scene = render_scene(&s, 1, 4, &mut rng);
        let bright = attenuate(&scene, 1.0);
        let dim = attenuate(&scene, 0.3);
        for (d, b) in dim.iter().zip(&bright) {
            assert_eq!(*d, 0.3 * b);
        }
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let ds = generate(&spec()).unwrap();
        for split in [&ds.train, &ds.val, &ds.test] {
            assert!(split.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn empirical_minority_matches_declared() {
        let ds = generate(&spec()).unwrap();
        let mut counts = [0usize; N_GROUPS];
        for &g in &ds.test.groups {
            counts[g as usize - 1] += 1;
        }
        // argmin with ties to the higher index
        let mut minority = 0usize;
        for (i, &c) in counts.iter().enumerate() {
            if c <= counts[minority] {
                minority = i;
            }
        }
        assert_eq!((minority + 1) as u8, ds.spec.declared_minority());
        assert_eq!(ds.spec.declared_minority(), 10);
        // ...and it is a strict minority under default weights.
        for g in 0..N_GROUPS - 1 {
            assert!(counts[g] > counts[N_GROUPS - 1]);
        }
    }

    #[test]
    fn splits_have_exact_sizes_and_all_groups() {
        let s = spec();
        let ds = generate(&s).unwrap();
        assert_eq!(ds.train.len(), s.train_count);
        assert_eq!(ds.val.len(), s.val_count);
        assert_eq!(ds.test.len(), s.test_count);
        for split in [&ds.train, &ds.val, &ds.test] {
            let mut seen = [false; N_GROUPS];
            for &g in &split.groups {
                seen[g as usize - 1] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn wrong_group_count_is_a_spec_error() {
        let mut s = spec();
        s.group_weights = vec![1.0; 7];
        let err = generate(&s).unwrap_err().to_string();
        assert!(err.contains("10 groups"), "{err}");
    }

    #[test]
    fn poorly_lit_boundaries() {
        let ds = generate(&spec()).unwrap();
        // Threshold below every lighting value: empty subset is flagged.
        let err = poorly_lit_subset(&ds.test, 0.01).unwrap_err().to_string();
        assert!(err.contains("empty subset"), "{err}");
        // Threshold 1.0: everything qualifies (lighting is sampled in [0.2, 1.0)).
        let all = poorly_lit_subset(&ds.test, 1.0).unwrap();
        assert_eq!(all.len(), ds.test.len());
        // Out-of-range thresholds are contract errors.
        assert!(poorly_lit_subset(&ds.test, 0.0).is_err());
        assert!(poorly_lit_subset(&ds.test, 1.5).is_err());
    }

    #[test]
    fn poorly_lit_matches_filter_oracle() {
        let ds = generate(&spec()).unwrap();
        let got = poorly_lit_subset(&ds.test, 0.5).unwrap();
        let want: Vec<usize> =
            (0..ds.test.len()).filter(|&i| ds.test.lighting[i] < 0.5).collect();
        assert_eq!(got, want);
        assert!(!got.is_empty() && got.len() < ds.test.len());
    }

    #[test]
    fn apportion_is_exact_and_deterministic() {
        let counts = apportion(103, &[2.0, 2.0, 1.0]);
        assert_eq!(counts.iter().sum::<usize>(), 103);
        assert_eq!(counts, apportion(103, &[2.0, 2.0, 1.0]));
        assert!(counts[2] < counts[0] && counts[2] < counts[1]);
    }

    #[test]
    fn labels_are_roughly_balanced_per_group() {
        let ds = generate(&spec()).unwrap();
        let mut pos = [0i64; N_GROUPS];
        let mut tot = [0i64; N_GROUPS];
        for (&g, &l) in ds.train.groups.iter().zip(&ds.train.labels) {
            tot[g as usize - 1] += 1;
            pos[g as usize - 1] += l as i64;
        }
        for g in 0..N_GROUPS {
            assert!((pos[g] * 2 - tot[g]).abs() <= 1, "group {} unbalanced", g + 1);
        }
    }

    #[test]
    fn linear_probe_is_worse_on_group_10_than_group_1() {
        // A logistic probe on raw pixels must reveal the designed group
        // difficulty gradient, or the dataset cannot expose unfairness.
        let ds = generate(&DatasetSpec::small(3)).unwrap();
        let d = ds.spec.image_len();
        let n = ds.train.len();
        let mut wvec = vec![0.0f64; d + 1];
        let lr = 0.5;
        for _epoch in 0..60 {
            let mut grad = vec![0.0f64; d + 1];
            for i in 0..n {
                let x = ds.train.image(i, d);
                let z: f64 = wvec[d] + x.iter().zip(&wvec[..d]).map(|(a, b)| a * b).sum::<f64>();
                let p = 1.0 / (1.0 + (-z).exp());
                let err = p - ds.train.labels[i] as f64;
                for (gv, &xv) in grad[..d].iter_mut().zip(x) {
                    *gv += err * xv;
                }
                grad[d] += err;
            }
            for (w, g) in wvec.iter_mut().zip(&grad) {
                *w -= lr * g / n as f64;
            }
        }
        let mut correct = [0usize; N_GROUPS];
        let mut total = [0usize; N_GROUPS];
        for i in 0..ds.test.len() {
            let x = ds.test.image(i, d);
            let z: f64 = wvec[d] + x.iter().zip(&wvec[..d]).map(|(a, b)| a * b).sum::<f64>();
            let pred = u8::from(z > 0.0);
            let g = ds.test.groups[i] as usize - 1;
            total[g] += 1;
            if pred == ds.test.labels[i] {
                correct[g] += 1;
            }
        }
        let acc = |g: usize| correct[g] as f64 / total[g] as f64;
        assert!(
            acc(0) > acc(9),
            "probe accuracy group1={:.3} group10={:.3}",
            acc(0),
            acc(9)
        );
    }

    #[test]
    fn splits_are_disjoint() {
        let ds = generate(&spec()).unwrap();
        let dim = ds.spec.image_len();
        let mut seen = std::collections::HashSet::new();
        for split in [&ds.train, &ds.val, &ds.test] {
            for i in 0..split.len() {
                let key: Vec<u64> = split.image(i, dim).iter().map(|v| v.to_bits()).collect();
                assert!(seen.insert(key), "identical image found in two splits");
            }
        }
    }

    #[test]
    fn archive_roundtrip_preserves_everything() {
        let ds = generate(&spec()).unwrap();
        let dir = std::env::temp_dir().join(format!("switchnas-data-test-{}", std::process::id()));
        save_dataset(&ds, &dir).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(ds, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }
}
