//! Paired training data: directory scanning, patch sampling, and the eight
//! axis-aligned flip/rotation augmentations.
//!
//! A dataset directory holds `<id>_snow.png` / `<id>_gt.png` pairs as written
//! by the synthesizer. Pairs load eagerly; datasets here are small enough
//! that keeping them resident beats re-decoding PNGs every step.

use std::fs;
use std::path::Path;

use ndarray::{s, Array3, Array4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::image_io::load_png;
use crate::tensor::{apply_dihedral, Dihedral, Real};

#[derive(Debug, Clone)]
pub struct PairSample<T> {
    pub id: String,
    pub snow: Array3<T>,
    pub gt: Array3<T>,
}

/// What a directory scan found, for surfacing in logs.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub loaded: usize,
    /// Entries skipped, as "id: reason" strings.
    pub skipped: Vec<String>,
}

/// Loads every complete pair in `dir`, sorted by id. Incomplete or
/// inconsistent entries are skipped and noted in the report rather than
/// failing the whole scan.
pub fn load_pairs<T: Real>(dir: &Path) -> Result<(Vec<PairSample<T>>, LoadReport)> {
    let mut ids: Vec<String> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name.strip_suffix("_snow.png") {
            ids.push(id.to_string());
        }
    }
    ids.sort();

    let mut pairs = Vec::new();
    let mut report = LoadReport::default();
    for id in ids {
        let snow_path = dir.join(format!("{id}_snow.png"));
        let gt_path = dir.join(format!("{id}_gt.png"));
        if !gt_path.exists() {
            report.skipped.push(format!("{id}: missing ground truth"));
            continue;
        }
        let snow: Array3<T> = load_png(&snow_path)?;
        let gt: Array3<T> = load_png(&gt_path)?;
        if snow.dim() != gt.dim() {
            report.skipped.push(format!(
                "{id}: sizes differ ({:?} vs {:?})",
                snow.dim(),
                gt.dim()
            ));
            continue;
        }
        pairs.push(PairSample { id, snow, gt });
        report.loaded += 1;
    }
    Ok((pairs, report))
}

/// Cuts the same random square from both images of a pair.
pub fn random_patch<T: Real>(
    snow: &Array3<T>,
    gt: &Array3<T>,
    patch: usize,
    rng: &mut impl Rng,
) -> Result<(Array3<T>, Array3<T>)> {
    if snow.dim() != gt.dim() {
        return Err(Error::Dimension(format!(
            "pair images differ: {:?} vs {:?}",
            snow.dim(),
            gt.dim()
        )));
    }
    let (h, w, _) = snow.dim();
    if patch == 0 || h < patch || w < patch {
        return Err(Error::Dimension(format!(
            "cannot cut a {patch}x{patch} patch from a {h}x{w} image"
        )));
    }
    let y0 = rng.random_range(0..=h - patch);
    let x0 = rng.random_range(0..=w - patch);
    let cut = |img: &Array3<T>| img.slice(s![y0..y0 + patch, x0..x0 + patch, ..]).to_owned();
    Ok((cut(snow), cut(gt)))
}

/// One of the eight flip/rotation symmetries, uniformly.
pub fn random_dihedral(rng: &mut impl Rng) -> Dihedral {
    Dihedral::ALL[rng.random_range(0..Dihedral::ALL.len())]
}

/// Assembles a training batch: random pair, random patch, and (optionally) a
/// random symmetry, identical for both sides of each pair. Returns NHWC
/// (input, target) tensors.
pub fn sample_batch<T: Real>(
    pairs: &[PairSample<T>],
    batch: usize,
    patch: usize,
    augment: bool,
    rng: &mut impl Rng,
) -> Result<(Array4<T>, Array4<T>)> {
    if pairs.is_empty() {
        return Err(Error::Config("dataset has no pairs".into()));
    }
    if batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut input = Array4::zeros((batch, patch, patch, 3));
    let mut target = Array4::zeros((batch, patch, patch, 3));
    for b in 0..batch {
        let pair = &pairs[rng.random_range(0..pairs.len())];
        let (mut ps, mut pg) = random_patch(&pair.snow, &pair.gt, patch, rng)?;
        if augment {
            let d = random_dihedral(rng);
            ps = apply_dihedral(&ps, d);
            pg = apply_dihedral(&pg, d);
        }
        input.slice_mut(s![b, .., .., ..]).assign(&ps);
        target.slice_mut(s![b, .., .., ..]).assign(&pg);
    }
    Ok((input, target))
}
