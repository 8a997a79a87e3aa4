//! Procedural two-site cervigram stand-ins.
//!
//! Every woman gets a latent severity `s ~ Beta(α, β)` (site specific). Her
//! images show a pink disk with a dark central os, low-frequency texture and
//! one or two whitish blobs whose opacity grows with `s`. A woman is a case
//! at her site iff `s > threshold`; sites use different thresholds, severity
//! distributions and device tints.
//!
//! Two layouts are supported: `table` fixes per-split woman and image counts
//! exactly, `ratio` draws a woman pool and splits it with [`group_split`].

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::split::{group_split, SplitRatios};
use super::{write_manifest, Label, PixelImage, Sample, Site, Split};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{self, derive_seed};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketCounts {
    pub case_women: usize,
    pub control_women: usize,
    pub case_images: usize,
    pub control_images: usize,
    /// Labeled plus unlabeled images.
    pub total_images: usize,
}

impl BucketCounts {
    fn validate(&self, field: &str) -> Result<()> {
        let ok = |women: usize, images: usize| images >= women && images <= 2 * women;
        if !ok(self.case_women, self.case_images) || !ok(self.control_women, self.control_images) {
            return Err(Error::config(field, "labeled images must lie in [women, 2·women]"));
        }
        if self.total_images < self.case_images + self.control_images {
            return Err(Error::config(field, "total_images smaller than labeled images"));
        }
        Ok(())
    }

    fn labeled_images(&self) -> usize {
        self.case_images + self.control_images
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SiteLayout {
    Table {
        train: BucketCounts,
        valid: BucketCounts,
        test: BucketCounts,
    },
    Ratio {
        women: usize,
        labeled_fraction: f64,
        ratios: SplitRatios,
    },
}

/// Device rendition: per-channel gain offsets and an additive brightness shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Appearance {
    pub tint: [f64; 3],
    pub brightness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub site: Site,
    /// Case iff severity exceeds this.
    pub threshold: f64,
    pub severity_alpha: f64,
    pub severity_beta: f64,
    pub appearance: Appearance,
    pub layout: SiteLayout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub image_size: usize,
    /// Blob opacity at severity 1.
    pub lesion_strength: f64,
    pub pixel_noise: f64,
    /// Per-image illumination gain is drawn from `[1 - x, 1 + x]`.
    pub illumination_jitter: f64,
    pub sites: Vec<SiteConfig>,
    pub seed: u64,
}

fn bucket(case_women: usize, control_women: usize, case_images: usize, control_images: usize, total: usize) -> BucketCounts {
    BucketCounts {
        case_women,
        control_women,
        case_images,
        control_images,
        total_images: total,
    }
}

impl SyntheticConfig {
    fn with_layouts(a: SiteLayout, b: SiteLayout) -> Self {
        Self {
            image_size: 64,
            lesion_strength: 1.0,
            pixel_noise: 0.03,
            illumination_jitter: 0.2,
            sites: vec![
                SiteConfig {
                    site: Site::A,
                    threshold: 0.5,
                    severity_alpha: 2.0,
                    severity_beta: 3.0,
                    appearance: Appearance {
                        tint: [0.0, 0.0, 0.0],
                        brightness: 0.0,
                    },
                    layout: a,
                },
                SiteConfig {
                    site: Site::B,
                    threshold: 0.6,
                    severity_alpha: 2.5,
                    severity_beta: 2.5,
                    appearance: Appearance {
                        tint: [0.06, -0.02, -0.05],
                        brightness: -0.04,
                    },
                    layout: b,
                },
            ],
            seed: 0,
        }
    }

    /// Split sizes of the two-cohort study: per site, labeled women and
    /// images by class for train/valid/test and total train/valid images.
    pub fn cohort() -> Self {
        Self::with_layouts(
            SiteLayout::Table {
                train: bucket(91, 181, 182, 361, 2029),
                valid: bucket(22, 45, 44, 90, 520),
                test: bucket(25, 50, 49, 99, 148),
            },
            SiteLayout::Table {
                train: bucket(124, 242, 248, 481, 3145),
                valid: bucket(31, 60, 62, 120, 791),
                test: bucket(34, 65, 68, 130, 198),
            },
        )
    }

    /// Desk-scale benchmark: about 600 images at site A and 900 at site B.
    pub fn benchmark() -> Self {
        Self::with_layouts(
            SiteLayout::Table {
                train: bucket(20, 40, 40, 80, 380),
                valid: bucket(8, 16, 16, 32, 100),
                test: bucket(20, 40, 40, 80, 120),
            },
            SiteLayout::Table {
                train: bucket(30, 60, 60, 120, 620),
                valid: bucket(10, 20, 20, 40, 160),
                test: bucket(20, 40, 40, 80, 120),
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::config("image_size", "must be at least 8"));
        }
        if self.sites.len() != 2 || self.sites[0].site != Site::A || self.sites[1].site != Site::B {
            return Err(Error::config("sites", "expected exactly sites A then B"));
        }
        for s in &self.sites {
            let field = |f: &str| format!("sites.{}.{f}", s.site);
            if !(s.severity_alpha > 0.0 && s.severity_beta > 0.0) {
                return Err(Error::config(field("severity"), "Beta parameters must be positive"));
            }
            if !(0.0..1.0).contains(&s.threshold) {
                return Err(Error::config(field("threshold"), "must lie in [0, 1)"));
            }
            match &s.layout {
                SiteLayout::Table { train, valid, test } => {
                    train.validate(&field("train"))?;
                    valid.validate(&field("valid"))?;
                    test.validate(&field("test"))?;
                }
                SiteLayout::Ratio {
                    women,
                    labeled_fraction,
                    ratios,
                } => {
                    if !(0.0..=1.0).contains(labeled_fraction) {
                        return Err(Error::config(field("labeled_fraction"), "must lie in [0, 1]"));
                    }
                    ratios.validate()?;
                    if *women < 3 {
                        return Err(Error::config(field("women"), "need at least three women"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Latent record behind one woman's images.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Woman {
    pub group_id: String,
    pub site: Site,
    pub severity: f64,
    pub labeled: bool,
    pub split: Split,
    pub images: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub samples: Vec<Sample>,
    /// Aligned with `samples`.
    pub images: Vec<PixelImage>,
    pub women: Vec<Woman>,
}

impl SyntheticDataset {
    pub fn site_samples(&self, site: Site) -> impl Iterator<Item = (&Sample, &PixelImage)> {
        self.samples
            .iter()
            .zip(&self.images)
            .filter(move |(s, _)| s.site == site)
    }

    /// Images of `site` in `split` (labeled or not), manifest order.
    pub fn pool(&self, site: Site, split: Split) -> Vec<PixelImage> {
        self.site_samples(site)
            .filter(|(s, _)| s.split == split)
            .map(|(_, im)| im.clone())
            .collect()
    }

    /// Labeled images of `site` in `split` with their sample ids and targets.
    pub fn labeled(&self, site: Site, split: Split) -> Vec<(String, PixelImage, f64)> {
        self.site_samples(site)
            .filter(|(s, _)| s.split == split)
            .filter_map(|(s, im)| s.label.target().map(|t| (s.sample_id.clone(), im.clone(), t)))
            .collect()
    }

    /// Writes `manifest_A.csv`, `manifest_B.csv` and the PNG tree under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        for site in Site::ALL {
            fs::create_dir_all(root.join("images").join(site.to_string())).map_err(|e| Error::io(root, e))?;
        }
        for (s, im) in self.samples.iter().zip(&self.images) {
            im.save_png(&root.join(&s.path))?;
        }
        for site in Site::ALL {
            let rows: Vec<Sample> = self.samples.iter().filter(|s| s.site == site).cloned().collect();
            write_manifest(&rows, &root.join(format!("manifest_{site}.csv")))?;
        }
        Ok(())
    }
}

struct Blob {
    y: f64,
    x: f64,
    sigma: f64,
    opacity: f64,
}

struct Wave {
    ky: f64,
    kx: f64,
    phase: f64,
    amplitude: f64,
}

/// Everything shared by the images of one woman.
struct Scene {
    cy: f64,
    cx: f64,
    radius: f64,
    base: [f64; 3],
    os_sigma: f64,
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
}

impl Scene {
    fn sample(size: f64, severity: f64, strength: f64, rng: &mut ChaCha8Rng) -> Self {
        let center = (size - 1.0) / 2.0;
        let cy = center + rng.random_range(-0.05..0.05) * size;
        let cx = center + rng.random_range(-0.05..0.05) * size;
        let radius = rng.random_range(0.36..0.44) * size;
        let base = [
            rng.random_range(0.74..0.80),
            rng.random_range(0.40..0.46),
            rng.random_range(0.42..0.48),
        ];
        let os_sigma = rng.random_range(0.04..0.07) * size;
        let waves = (0..3)
            .map(|_| {
                let freq = rng.random_range(2.0..6.0) * 2.0 * PI / size;
                let theta = rng.random_range(0.0..PI);
                Wave {
                    ky: freq * theta.sin(),
                    kx: freq * theta.cos(),
                    phase: rng.random_range(0.0..2.0 * PI),
                    amplitude: rng.random_range(0.01..0.03),
                }
            })
            .collect();
        let count = 1 + rng.random_range(0..2);
        let blobs = (0..count)
            .map(|_| {
                let angle = rng.random_range(0.0..2.0 * PI);
                let dist = rng.random_range(0.10..0.28) * size;
                Blob {
                    y: cy + dist * angle.sin(),
                    x: cx + dist * angle.cos(),
                    sigma: rng.random_range(0.07..0.11) * size,
                    opacity: (strength * severity * rng.random_range(0.85..1.15)).min(1.0),
                }
            })
            .collect();
        Self {
            cy,
            cx,
            radius,
            base,
            os_sigma,
            waves,
            blobs,
        }
    }
}

const LESION_WHITE: [f64; 3] = [0.96, 0.93, 0.92];
const BACKGROUND: [f64; 3] = [0.08, 0.05, 0.05];

fn render(
    scene: &Scene,
    appearance: &Appearance,
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> PixelImage {
    let n = config.image_size;
    let gain = 1.0 + rng.random_range(-1.0..=1.0) * config.illumination_jitter;
    let (jy, jx) = (rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0));
    let noise = Normal::new(0.0, config.pixel_noise.max(0.0)).expect("finite std");
    let mut rgb = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let (py, px) = (y as f64 - jy, x as f64 - jx);
            let (dy, dx) = (py - scene.cy, px - scene.cx);
            let d2 = dy * dy + dx * dx;
            let inside = ((scene.radius - d2.sqrt()) / 2.0 + 0.5).clamp(0.0, 1.0);
            let shade = 1.0 - 0.35 * d2 / (scene.radius * scene.radius);
            let texture: f64 = scene
                .waves
                .iter()
                .map(|w| w.amplitude * (w.ky * py + w.kx * px + w.phase).sin())
                .sum();
            let os = 1.0 - 0.6 * (-d2 / (2.0 * scene.os_sigma * scene.os_sigma)).exp();
            let lesion: f64 = scene
                .blobs
                .iter()
                .map(|b| {
                    let (by, bx) = (py - b.y, px - b.x);
                    b.opacity * (-(by * by + bx * bx) / (2.0 * b.sigma * b.sigma)).exp()
                })
                .sum::<f64>()
                .min(1.0);
            for c in 0..3 {
                let tissue = (scene.base[c] * shade + texture) * os;
                let tissue = tissue * (1.0 - lesion) + LESION_WHITE[c] * lesion;
                let v = inside * tissue + (1.0 - inside) * BACKGROUND[c];
                let v = v * gain * (1.0 + appearance.tint[c]) + appearance.brightness + noise.sample(rng);
                rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    PixelImage::new(n, n, rgb).expect("square image")
}

struct Plan {
    woman: Woman,
    label: Label,
    /// Images of this woman that carry the label.
    labeled_images: usize,
}

fn draw_severity(dist: &Beta<f64>, rng: &mut ChaCha8Rng, accept: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..100_000 {
        let s = dist.sample(rng);
        if accept(s) {
            return s;
        }
    }
    unreachable!("severity rejection sampling exhausted")
}

fn plan_table(cfg: &SiteConfig, buckets: [(Split, &BucketCounts); 3], rng: &mut ChaCha8Rng) -> Vec<Plan> {
    let dist = Beta::new(cfg.severity_alpha, cfg.severity_beta).expect("validated");
    let theta = cfg.threshold;
    let mut plans = Vec::new();
    let mut push = |split, label, severity, images, labeled_images, labeled| {
        plans.push(Plan {
            woman: Woman {
                group_id: String::new(),
                site: cfg.site,
                severity,
                labeled,
                split,
                images,
            },
            label,
            labeled_images,
        });
    };
    for (split, b) in buckets {
        for (label, women, images) in [
            (Label::Case, b.case_women, b.case_images),
            (Label::Control, b.control_women, b.control_images),
        ] {
            // the last 2W - I women contribute a single image
            let singles = 2 * women - images;
            for w in 0..women {
                let s = match label {
                    Label::Case => draw_severity(&dist, rng, |s| s > theta),
                    _ => draw_severity(&dist, rng, |s| s <= theta),
                };
                let k = if w >= women - singles { 1 } else { 2 };
                push(split, label, s, k, k, true);
            }
        }
        let unlabeled = b.total_images - b.labeled_images();
        for w in 0..unlabeled.div_ceil(2) {
            let k = if 2 * w + 1 == unlabeled { 1 } else { 2 };
            let s = draw_severity(&dist, rng, |_| true);
            push(split, Label::Unlabeled, s, k, 0, false);
        }
    }
    plans
}

fn plan_ratio(cfg: &SiteConfig, women: usize, labeled_fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Plan> {
    let dist = Beta::new(cfg.severity_alpha, cfg.severity_beta).expect("validated");
    let labeled_count = (labeled_fraction * women as f64).round() as usize;
    let mut order: Vec<usize> = (0..women).collect();
    order.shuffle(rng);
    let mut is_labeled = vec![false; women];
    for &i in &order[..labeled_count] {
        is_labeled[i] = true;
    }
    (0..women)
        .map(|i| {
            let s = dist.sample(rng);
            let label = match (is_labeled[i], s > cfg.threshold) {
                (false, _) => Label::Unlabeled,
                (true, true) => Label::Case,
                (true, false) => Label::Control,
            };
            Plan {
                woman: Woman {
                    group_id: String::new(),
                    site: cfg.site,
                    severity: s,
                    labeled: is_labeled[i],
                    split: Split::Unassigned,
                    images: 2,
                },
                label,
                labeled_images: if is_labeled[i] { 2 } else { 0 },
            }
        })
        .collect()
}

/// Renders both sites. Output is a pure function of `config` (including its seed).
pub fn generate_synthetic_sites(config: &SyntheticConfig, execution: Execution) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut samples = Vec::new();
    let mut women = Vec::new();
    let mut jobs: Vec<(u64, u64, usize, usize)> = Vec::new(); // (scene seed, image seed, site, woman)

    for (site_idx, site_cfg) in config.sites.iter().enumerate() {
        let mut rng = rng::stream(config.seed, 0x5349_5445 + site_idx as u64, 0);
        let mut plans = match &site_cfg.layout {
            SiteLayout::Table { train, valid, test } => plan_table(
                site_cfg,
                [(Split::Train, train), (Split::Valid, valid), (Split::Test, test)],
                &mut rng,
            ),
            SiteLayout::Ratio {
                women,
                labeled_fraction,
                ..
            } => plan_ratio(site_cfg, *women, *labeled_fraction, &mut rng),
        };
        let mut site_samples = Vec::new();
        for (w_idx, plan) in plans.iter_mut().enumerate() {
            let group = format!("{}-{:05}", site_cfg.site, w_idx);
            plan.woman.group_id = group.clone();
            for k in 0..plan.woman.images {
                let sample_id = format!("{group}-0-{k}");
                site_samples.push(Sample {
                    path: format!("images/{}/{sample_id}.png", site_cfg.site),
                    sample_id,
                    site: site_cfg.site,
                    group_id: group.clone(),
                    visit: 0,
                    label: if k < plan.labeled_images {
                        plan.label
                    } else {
                        Label::Unlabeled
                    },
                    split: plan.woman.split,
                });
                let scene_seed = derive_seed(config.seed, site_idx as u64, w_idx as u64);
                jobs.push((scene_seed, derive_seed(scene_seed, 0x494D_4147, k as u64), site_idx, women.len() + w_idx));
            }
        }
        if let SiteLayout::Ratio { ratios, .. } = &site_cfg.layout {
            let split_seed = derive_seed(config.seed, 0x5350_4C54, site_idx as u64);
            site_samples = group_split(&site_samples, ratios, split_seed)?;
            for plan in &mut plans {
                plan.woman.split = site_samples
                    .iter()
                    .find(|s| s.group_id == plan.woman.group_id)
                    .map(|s| s.split)
                    .expect("every woman has an image");
            }
        }
        samples.extend(site_samples);
        women.extend(plans.into_iter().map(|p| p.woman));
    }

    let size = config.image_size as f64;
    let images = execution.map(&jobs, |_, &(scene_seed, image_seed, site_idx, woman)| {
        let mut scene_rng = rand::SeedableRng::seed_from_u64(scene_seed);
        let scene = Scene::sample(size, women[woman].severity, config.lesion_strength, &mut scene_rng);
        let mut image_rng = rand::SeedableRng::seed_from_u64(image_seed);
        render(&scene, &config.sites[site_idx].appearance, config, &mut image_rng)
    });
    Ok(SyntheticDataset {
        samples,
        images,
        women,
    })
}
