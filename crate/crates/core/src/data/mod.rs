//! Samples, manifests, splitting, class weighting and the synthetic
//! two-site image generator.

mod image_io;
mod split;
mod synth;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use image_io::{load_image, save_image, PixelImage};
pub use split::{group_split, split_counts, SplitRatios};
pub use synth::{
    generate_synthetic_sites, Appearance, BucketCounts, SiteConfig, SiteLayout, SyntheticConfig,
    SyntheticDataset, Woman,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Site {
    A,
    B,
}

impl Site {
    pub const ALL: [Site; 2] = [Site::A, Site::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Site::A => "A",
            Site::B => "B",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Case,
    Control,
    Unlabeled,
}

impl Label {
    /// 1 for case, 0 for control, `None` when unlabeled.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Case => Some(1.0),
            Label::Control => Some(0.0),
            Label::Unlabeled => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
    Unassigned,
}

/// One manifest row. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub site: Site,
    pub group_id: String,
    pub visit: u32,
    pub label: Label,
    pub split: Split,
    /// Image location relative to the dataset root.
    pub path: String,
}

pub const MANIFEST_HEADER: &str = "sample_id,site,group_id,visit,label,split,path";

pub fn write_manifest(samples: &[Sample], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in samples {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<Sample>> {
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != MANIFEST_HEADER {
        return Err(Error::config(
            path.display().to_string(),
            format!("manifest header `{header}` != `{MANIFEST_HEADER}`"),
        ));
    }
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

/// Per-class loss weights, inverse to class frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub case: f64,
    pub control: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights {
        case: 1.0,
        control: 1.0,
    };

    pub fn for_target(&self, target: f64) -> f64 {
        if target >= 0.5 {
            self.case
        } else {
            self.control
        }
    }
}

/// `w_c = total / (2 · count_c)`; targets are 1 (case) or 0 (control).
pub fn class_weights(targets: &[f64]) -> Result<ClassWeights> {
    let cases = targets.iter().filter(|&&t| t >= 0.5).count();
    let controls = targets.len() - cases;
    if cases == 0 || controls == 0 {
        return Err(Error::config(
            "labels",
            format!("class weighting needs both classes, got {cases} case / {controls} control"),
        ));
    }
    let total = targets.len() as f64;
    Ok(ClassWeights {
        case: total / (2.0 * cases as f64),
        control: total / (2.0 * controls as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_weight_cases() {
        assert_eq!(class_weights(&[1.0, 0.0, 1.0, 0.0]).unwrap(), ClassWeights::UNIT);

        let mut site_a = vec![1.0; 182];
        site_a.extend(vec![0.0; 361]);
        let w = class_weights(&site_a).unwrap();
        assert!((w.case - 543.0 / 364.0).abs() < 1e-15);
        assert!((w.control - 543.0 / 722.0).abs() < 1e-15);
        assert!((w.case - 1.4918).abs() < 5e-5 && (w.control - 0.7521).abs() < 5e-5);
        let mean = (182.0 * w.case + 361.0 * w.control) / 543.0;
        assert!((mean - 1.0).abs() < 1e-12);

        let w = class_weights(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(w.case, 2.0);
        assert!((w.control - 2.0 / 3.0).abs() < 1e-15);

        assert!(matches!(class_weights(&[1.0, 1.0]), Err(Error::Config { .. })));
    }

    #[test]
    fn manifest_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![Sample {
            sample_id: "A-0001-0-0".into(),
            site: Site::A,
            group_id: "A-0001".into(),
            visit: 0,
            label: Label::Unlabeled,
            split: Split::Valid,
            path: "images/A/A-0001-0-0.png".into(),
        }];
        write_manifest(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "sample_id,site,group_id,visit,label,split,path\nA-0001-0-0,A,A-0001,0,unlabeled,valid,images/A/A-0001-0-0.png\n"
        );
        assert_eq!(read_manifest(&path).unwrap(), rows);

        std::fs::write(&path, "id,site\n1,A\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
