#![allow(dead_code)]

use fssl_core::data::{generate_synthetic_sites, PixelImage, SiteLayout, SplitRatios, SyntheticConfig};
use fssl_core::model::BackboneConfig;
use fssl_core::Execution;

/// `n` unlabeled synthetic images of side `size` from site A.
pub fn images(n: usize, size: usize, seed: u64) -> Vec<PixelImage> {
    let mut cfg = SyntheticConfig::benchmark();
    cfg.image_size = size;
    cfg.seed = seed;
    for site in &mut cfg.sites {
        site.layout = SiteLayout::Ratio {
            women: n.div_ceil(2).max(3),
            labeled_fraction: 0.0,
            ratios: SplitRatios {
                train: 0.6,
                valid: 0.2,
                test: 0.2,
            },
        };
    }
    let ds = generate_synthetic_sites(&cfg, Execution::Sequential).unwrap();
    ds.images.into_iter().take(n).collect()
}

pub fn backbone(size: usize, seed: u64) -> BackboneConfig {
    BackboneConfig {
        image_size: size,
        channels: vec![4, 8],
        seed,
        ..BackboneConfig::default()
    }
}
