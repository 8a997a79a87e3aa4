use fssl_core::data::{
    generate_synthetic_sites, read_manifest, Label, PixelImage, Site, SiteLayout, Split, SplitRatios, SyntheticConfig,
};
use fssl_core::Execution;

fn images_in(cfg: &SyntheticConfig, site: Site, split: Split) -> usize {
    match &cfg.sites[site.index()].layout {
        SiteLayout::Table { train, valid, test } => match split {
            Split::Train => train.total_images,
            Split::Valid => valid.total_images,
            _ => test.total_images,
        },
        SiteLayout::Ratio { .. } => unreachable!(),
    }
}

#[test]
fn table_layout_reproduces_every_count() {
    let cfg = SyntheticConfig {
        image_size: 16,
        ..SyntheticConfig::cohort()
    };
    let ds = generate_synthetic_sites(&cfg, Execution::Parallel).unwrap();
    for site in Site::ALL {
        for split in [Split::Train, Split::Valid, Split::Test] {
            assert_eq!(ds.pool(site, split).len(), images_in(&cfg, site, split), "{site} {split:?}");
        }
    }
    let pooled_train = ds.pool(Site::A, Split::Train).len() + ds.pool(Site::B, Split::Train).len();
    assert_eq!(pooled_train, 5174);
    let labeled_test_a = ds.labeled(Site::A, Split::Test);
    let cases = labeled_test_a.iter().filter(|(_, _, t)| *t == 1.0).count();
    assert_eq!((cases, labeled_test_a.len() - cases), (49, 99));
    let women_a = ds.women.iter().filter(|w| w.site == Site::A && w.labeled && w.split == Split::Train).count();
    assert_eq!(women_a, 91 + 181);
}

#[test]
fn written_tree_reads_back() {
    let mut cfg = SyntheticConfig::benchmark();
    cfg.image_size = 16;
    for site in &mut cfg.sites {
        site.layout = SiteLayout::Ratio {
            women: 12,
            labeled_fraction: 0.5,
            ratios: SplitRatios {
                train: 0.5,
                valid: 0.25,
                test: 0.25,
            },
        };
    }
    let ds = generate_synthetic_sites(&cfg, Execution::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let mut back = read_manifest(&dir.path().join("manifest_A.csv")).unwrap();
    back.extend(read_manifest(&dir.path().join("manifest_B.csv")).unwrap());
    assert_eq!(back, ds.samples);
    for (s, im) in back.iter().zip(&ds.images) {
        assert_eq!(&PixelImage::load_png(&dir.path().join(&s.path)).unwrap(), im);
        assert_ne!(s.split, Split::Unassigned);
    }
    let labeled = back.iter().filter(|s| s.label != Label::Unlabeled).count();
    assert_eq!(labeled, 2 * 2 * 6);
}

#[test]
fn seed_changes_images_but_not_counts() {
    let mut cfg = SyntheticConfig::benchmark();
    cfg.image_size = 16;
    let a = generate_synthetic_sites(&cfg, Execution::Parallel).unwrap();
    cfg.seed = 1;
    let b = generate_synthetic_sites(&cfg, Execution::Parallel).unwrap();
    assert_eq!(a.samples.len(), b.samples.len());
    assert_ne!(a.images, b.images);
    let site_b = a.site_samples(Site::B).count();
    assert_eq!(site_b, 620 + 160 + 120);
}
