#![allow(dead_code)]

use std::path::Path;

use ultrabm::imagedata::{make_synthetic_pair, save_image, ManifestEntry, PairManifest, SyntheticSpec};
use ultrabm::tensor::Tensor;

/// `n` synthetic pairs of LR size `size × size` as tensors.
pub fn pairs(n: u64, scale: usize, size: usize) -> Vec<(Tensor<f32>, Tensor<f32>)> {
    (0..n)
        .map(|i| {
            let (l, r) = make_synthetic_pair(&SyntheticSpec::new(i, -2.5, scale, (size, size))).unwrap();
            (l.into_tensor(), r.into_tensor())
        })
        .collect()
}

/// Writes `n` pairs as 16-bit PNGs plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, n: u64, scale: usize, size: usize) -> PairManifest {
    let mut m = PairManifest::default();
    for (i, (l, r)) in pairs(n, scale, size).into_iter().enumerate() {
        let (lp, rp) = (dir.join(format!("low_{i}.png")), dir.join(format!("ref_{i}.png")));
        save_image(&lp, &l, 16).unwrap();
        save_image(&rp, &r, 16).unwrap();
        m.entries.push(ManifestEntry { low: lp, reference: rp, scale, ev: -2.5 });
    }
    m.save(&dir.join("manifest.json")).unwrap();
    ultrabm::imagedata::load_manifest(&dir.join("manifest.json")).unwrap()
}
