#![allow(dead_code)]

use std::path::Path;

/// Two 40-woman sites of 16×16 images and a few epochs everywhere; the
/// whole matrix runs in seconds.
pub const SMALL_CONFIG: &str = r#"
seed = 5

[data]
image_size = 16

[[data.sites]]
site = "A"
threshold = 0.5
severity_alpha = 2.0
severity_beta = 3.0
appearance = { tint = [0.0, 0.0, 0.0], brightness = 0.0 }
layout = { kind = "ratio", women = 40, labeled_fraction = 0.8, ratios = { train = 0.6, valid = 0.2, test = 0.2 } }

[[data.sites]]
site = "B"
threshold = 0.6
severity_alpha = 2.5
severity_beta = 2.5
appearance = { tint = [0.06, -0.02, -0.05], brightness = -0.04 }
layout = { kind = "ratio", women = 40, labeled_fraction = 0.8, ratios = { train = 0.6, valid = 0.2, test = 0.2 } }

[backbone]
channels = [4, 8]

[ssl]
batch_half = 4
max_epochs = 2

[federation]
rounds = 2

[finetune]
max_epochs = 3
"#;

pub fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, SMALL_CONFIG).unwrap();
    path
}

/// Every file under `root` with its bytes, sorted by relative path.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
