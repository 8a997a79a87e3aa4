//! The subcommands. Every artifact lives under one results root:
//!
//! ```text
//! <out>/data/                          manifests + images/<site>/*.png
//! <out>/pretrain/<mode>/model.fssl     plus history.csv or rounds.csv
//! <out>/finetune/<method>_<site>/      report.json roc.csv predictions.csv history.csv
//! <out>/report.csv, <out>/report.txt
//! ```
//!
//! Each directory also receives the resolved config that produced it.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use fssl_core::data::{generate_synthetic_sites, read_manifest, Label, PixelImage, Sample, Site, Split};
use fssl_core::eval::{evaluate, write_roc_csv};
use fssl_core::federation::{csfssl_run, cssl_run, ppfssl_run, write_round_log, Client, FederationConfig, Topology};
use fssl_core::finetune::{finetune, predict, write_predictions_csv, FinetuneRecord, Init, LabeledImage};
use fssl_core::model::build_encoder;
use fssl_core::ssl::{ssl_train, write_history_csv};
use fssl_core::ModelSnapshot;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::report::{write_report, FinetuneReport};

pub const MODEL_FILE: &str = "model.fssl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, ValueEnum)]
pub enum PretrainMode {
    #[value(name = "ssl_A")]
    SslA,
    #[value(name = "ssl_B")]
    SslB,
    #[value(name = "cssl")]
    Cssl,
    #[value(name = "csfssl")]
    Csfssl,
    /// Ring starting at site A.
    #[value(name = "ppfssl_A")]
    PpfsslA,
    #[value(name = "ppfssl_B")]
    PpfsslB,
}

impl PretrainMode {
    pub const ALL: [PretrainMode; 6] = [
        PretrainMode::SslA,
        PretrainMode::SslB,
        PretrainMode::Cssl,
        PretrainMode::Csfssl,
        PretrainMode::PpfsslA,
        PretrainMode::PpfsslB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PretrainMode::SslA => "ssl_A",
            PretrainMode::SslB => "ssl_B",
            PretrainMode::Cssl => "cssl",
            PretrainMode::Csfssl => "csfssl",
            PretrainMode::PpfsslA => "ppfssl_A",
            PretrainMode::PpfsslB => "ppfssl_B",
        }
    }

    pub fn single_site(site: Site) -> Self {
        match site {
            Site::A => PretrainMode::SslA,
            Site::B => PretrainMode::SslB,
        }
    }

    /// Method label in reports: single-site SSL evaluated on its own site is "ssl".
    pub fn method_for(self, site: Site) -> String {
        if self == Self::single_site(site) {
            "ssl".into()
        } else {
            self.name().into()
        }
    }
}

impl fmt::Display for PretrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Random,
    Snapshot,
}

/// Resolved config plus the results root.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub config: ExperimentConfig,
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(config: &ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let config = config.resolved(seed, out);
        config.validate()?;
        let root = config.out_dir();
        Ok(Self { config, root })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn pretrain_dir(&self, mode: PretrainMode) -> PathBuf {
        self.root.join("pretrain").join(mode.name())
    }

    pub fn snapshot_path(&self, mode: PretrainMode) -> PathBuf {
        self.pretrain_dir(mode).join(MODEL_FILE)
    }

    pub fn finetune_root(&self) -> PathBuf {
        self.root.join("finetune")
    }

    pub fn finetune_dir(&self, method: &str, site: Site) -> PathBuf {
        self.finetune_root().join(format!("{method}_{site}"))
    }

    /// Written copies leave out the results root so that the same
    /// experiment in two directories produces identical files.
    fn write_config(&self, dir: &Path) -> Result<()> {
        let portable = ExperimentConfig {
            out: None,
            ..self.config.clone()
        };
        portable.write_resolved(dir)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GenerateSummary {
    pub images: [usize; 2],
    pub labeled: [usize; 2],
}

pub fn cmd_generate(ws: &Workspace) -> Result<GenerateSummary> {
    let dir = ws.data_dir();
    let images = dir.join("images");
    if images.exists() {
        fs::remove_dir_all(&images).map_err(|e| CliError::io(&images, e))?;
    }
    create_dir(&dir)?;
    let exec = ws.config.ssl.execution;
    let dataset = generate_synthetic_sites(&ws.config.synthetic(), exec)?;
    dataset.write(&dir)?;
    ws.write_config(&dir)?;
    let mut summary = GenerateSummary {
        images: [0; 2],
        labeled: [0; 2],
    };
    for s in &dataset.samples {
        summary.images[s.site.index()] += 1;
        if s.label != Label::Unlabeled {
            summary.labeled[s.site.index()] += 1;
        }
    }
    log::info!(
        "generated {} + {} images ({} + {} labeled) under {}",
        summary.images[0],
        summary.images[1],
        summary.labeled[0],
        summary.labeled[1],
        dir.display()
    );
    Ok(summary)
}

/// Samples and decoded images read back from a generated data directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub images: Vec<PixelImage>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut samples = Vec::new();
        for site in Site::ALL {
            let manifest = dir.join(format!("manifest_{site}.csv"));
            if !manifest.is_file() {
                return Err(CliError::MissingData(format!(
                    "no dataset at {} (missing {}); run `fssl generate` with the same --out first",
                    dir.display(),
                    manifest.display()
                )));
            }
            samples.extend(read_manifest(&manifest)?);
        }
        let images = samples
            .iter()
            .map(|s| PixelImage::load_png(&dir.join(&s.path)))
            .collect::<fssl_core::Result<Vec<_>>>()?;
        Ok(Self { samples, images })
    }

    fn rows(&self, site: Site, split: Split) -> impl Iterator<Item = (&Sample, &PixelImage)> {
        self.samples
            .iter()
            .zip(&self.images)
            .filter(move |(s, _)| s.site == site && s.split == split)
    }

    /// All images of a site's split, labeled or not.
    pub fn pool(&self, site: Site, split: Split) -> Vec<PixelImage> {
        self.rows(site, split).map(|(_, im)| im.clone()).collect()
    }

    pub fn labeled(&self, site: Site, split: Split) -> Vec<LabeledImage> {
        self.rows(site, split)
            .filter(|(s, _)| s.label != Label::Unlabeled)
            .map(|(s, im)| LabeledImage {
                sample_id: s.sample_id.clone(),
                image: im.clone(),
                label: s.label,
            })
            .collect()
    }
}

fn write_csv_with<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(fs::File) -> csv::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write(file).map_err(|source| {
        CliError::Core(fssl_core::Error::Csv {
            path: path.to_owned(),
            source,
        })
    })
}

fn site_clients(data: &Dataset) -> Result<Vec<Client>> {
    Site::ALL
        .iter()
        .map(|&site| {
            Client::new(site.index(), data.pool(site, Split::Train), data.pool(site, Split::Valid)).map_err(Into::into)
        })
        .collect()
}

/// Pretrains one encoder and returns the snapshot path.
pub fn cmd_pretrain(ws: &Workspace, mode: PretrainMode) -> Result<PathBuf> {
    let data = Dataset::load(&ws.data_dir())?;
    pretrain_with(ws, &data, mode)
}

fn pretrain_with(ws: &Workspace, data: &Dataset, mode: PretrainMode) -> Result<PathBuf> {
    let cfg = &ws.config;
    let dir = ws.pretrain_dir(mode);
    create_dir(&dir)?;
    let initial = build_encoder(&cfg.backbone)?;
    let model: ModelSnapshot = match mode {
        PretrainMode::SslA | PretrainMode::SslB => {
            let site = if mode == PretrainMode::SslA { Site::A } else { Site::B };
            let train = data.pool(site, Split::Train);
            let valid = data.pool(site, Split::Valid);
            log::info!("{mode}: {} training and {} validation images from site {site}", train.len(), valid.len());
            let outcome = ssl_train(initial, &train, &valid, &cfg.ssl, &cfg.augment)?;
            write_csv_with(&dir.join("history.csv"), |f| write_history_csv(&outcome.history, f))?;
            outcome.best
        }
        PretrainMode::Cssl => {
            let pools: Vec<(Vec<PixelImage>, Vec<PixelImage>)> = Site::ALL
                .iter()
                .map(|&s| (data.pool(s, Split::Train), data.pool(s, Split::Valid)))
                .collect();
            let sites: Vec<(&[PixelImage], &[PixelImage])> =
                pools.iter().map(|(t, v)| (t.as_slice(), v.as_slice())).collect();
            let outcome = cssl_run(initial, &sites, &cfg.ssl, &cfg.augment)?;
            write_csv_with(&dir.join("history.csv"), |f| write_history_csv(&outcome.history, f))?;
            outcome.best
        }
        PretrainMode::Csfssl | PretrainMode::PpfsslA | PretrainMode::PpfsslB => {
            let mut clients = site_clients(data)?;
            for c in &clients {
                log::info!("{mode}: client {} holds {} training images", c.id(), c.train_len());
            }
            let fed = FederationConfig {
                topology: if mode == PretrainMode::Csfssl {
                    Topology::ClientServer
                } else {
                    Topology::PeerToPeer
                },
                start_client: if mode == PretrainMode::PpfsslB { 1 } else { 0 },
                ..cfg.federation.clone()
            };
            let outcome = if mode == PretrainMode::Csfssl {
                csfssl_run(initial, &mut clients, &fed, &cfg.ssl, &cfg.augment)?
            } else {
                ppfssl_run(initial, &mut clients, &fed, &cfg.ssl, &cfg.augment)?
            };
            write_round_log(&outcome.log, &dir.join("rounds.csv"))?;
            outcome.model
        }
    };
    let path = dir.join(MODEL_FILE);
    model.save(&path)?;
    ws.write_config(&dir)?;
    log::info!("{mode}: wrote {}", path.display());
    Ok(path)
}

/// Where the classifier's encoder comes from in a fine-tune run.
#[derive(Clone, Debug)]
pub enum InitSource {
    Random,
    Pretrained { method: String, snapshot: PathBuf },
}

impl InitSource {
    /// Snapshot of `mode` inside the workspace.
    pub fn from_mode(ws: &Workspace, mode: PretrainMode, site: Site) -> Self {
        InitSource::Pretrained {
            method: mode.method_for(site),
            snapshot: ws.snapshot_path(mode),
        }
    }

    pub fn method(&self) -> &str {
        match self {
            InitSource::Random => "random",
            InitSource::Pretrained { method, .. } => method,
        }
    }
}

/// Fine-tunes on one site's labeled splits and evaluates on its test split.
pub fn cmd_finetune(ws: &Workspace, init: &InitSource, site: Site) -> Result<FinetuneReport> {
    let data = Dataset::load(&ws.data_dir())?;
    finetune_with(ws, &data, init, site)
}

fn finetune_with(ws: &Workspace, data: &Dataset, init: &InitSource, site: Site) -> Result<FinetuneReport> {
    let cfg = &ws.config;
    let init_model = match init {
        InitSource::Random => Init::Random(cfg.backbone.clone()),
        InitSource::Pretrained { snapshot, .. } => {
            if !snapshot.is_file() {
                return Err(CliError::MissingData(format!(
                    "snapshot {} not found; run `fssl pretrain` first",
                    snapshot.display()
                )));
            }
            Init::Pretrained(ModelSnapshot::load(snapshot)?)
        }
    };
    let train = data.labeled(site, Split::Train);
    let valid = data.labeled(site, Split::Valid);
    let test = data.labeled(site, Split::Test);
    if test.is_empty() {
        return Err(CliError::MissingData(format!("site {site} has no labeled test images")));
    }
    let method = init.method();
    log::info!(
        "finetune {method} on site {site}: {} train, {} valid, {} test",
        train.len(),
        valid.len(),
        test.len()
    );
    let outcome = finetune(init_model.classifier(cfg.seed)?, &train, &valid, &cfg.finetune)?;
    let predictions = predict(&outcome.model, &test, cfg.finetune.execution)?;
    let probs: Vec<f64> = predictions.iter().map(|p| p.probability).collect();
    let labels: Vec<bool> = predictions.iter().map(|p| p.label == Label::Case).collect();
    let metrics = evaluate(&probs, &labels, cfg.evaluation.threshold)?;

    let dir = ws.finetune_dir(method, site);
    create_dir(&dir)?;
    write_roc_csv(&metrics.roc, &dir.join("roc.csv"))?;
    write_predictions_csv(&predictions, &dir.join("predictions.csv"))?;
    write_csv_with(&dir.join("history.csv"), |f| write_finetune_history(&outcome.history, f))?;
    let report = FinetuneReport::new(method, site, cfg.seed, &metrics, outcome.history.len());
    write_report(&report, &dir.join(REPORT_FILE))?;
    ws.write_config(&dir)?;
    log::info!("finetune {method} on site {site}: auc {:.4} acc {:.4}", report.auc, report.acc);
    Ok(report)
}

fn write_finetune_history(records: &[FinetuneRecord], out: fs::File) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The full 12-cell matrix: data, six pretrainings, six initializations per
/// site, then the comparison table. Returns the report table text.
pub fn cmd_matrix(ws: &Workspace) -> Result<String> {
    cmd_generate(ws)?;
    let data = Dataset::load(&ws.data_dir())?;
    for mode in PretrainMode::ALL {
        pretrain_with(ws, &data, mode)?;
    }
    for site in Site::ALL {
        let mut inits = vec![InitSource::Random];
        inits.extend(
            [
                PretrainMode::single_site(site),
                PretrainMode::Cssl,
                PretrainMode::Csfssl,
                PretrainMode::PpfsslA,
                PretrainMode::PpfsslB,
            ]
            .into_iter()
            .map(|m| InitSource::from_mode(ws, m, site)),
        );
        for init in &inits {
            finetune_with(ws, &data, init, site)?;
        }
    }
    let table = crate::report::cmd_report(&ws.root)?;
    Ok(table.text)
}
