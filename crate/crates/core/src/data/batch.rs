//! Deterministic batch generation over a corpus directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::Result;
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;

use super::{augment, load_image, AugmentConfig, IndexRow};

/// A materialized (inputs, targets) pair plus the corpus row ids it came from.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, 3, H, W]` pixel values in [0, 1].
    pub inputs: Tensor<f32>,
    /// `[N, 1]` class indices as reals (Female = 0, Male = 1).
    pub targets: Tensor<f32>,
    pub rows: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub epoch: u64,
    /// Augmentation applies only when set (training batches).
    pub augment: Option<AugmentConfig>,
}

impl BatchConfig {
    pub fn evaluation(batch_size: usize) -> Self {
        BatchConfig {
            batch_size,
            shuffle: false,
            seed: 0,
            epoch: 0,
            augment: None,
        }
    }
}

/// Image directory plus the parsed label index.
#[derive(Debug, Clone)]
pub struct DataSource {
    root: PathBuf,
    rows: Vec<IndexRow>,
    image_size: (usize, usize),
}

impl DataSource {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<IndexRow>, image_size: (usize, usize)) -> Self {
        DataSource {
            root: root.into(),
            rows,
            image_size,
        }
    }

    pub fn rows(&self) -> &[IndexRow] {
        &self.rows
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn image_path(&self, row: usize) -> PathBuf {
        self.root.join(&self.rows[row].image_id)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Iterate `ceil(n / batch_size)` batches over the given row indices.
    /// With `shuffle`, the order derives from `(seed, epoch)` so every epoch
    /// is distinct but reproducible; without it rows arrive in index order.
    pub fn batches<'a>(&'a self, indices: &[usize], cfg: &BatchConfig) -> Result<BatchIter<'a>> {
        if cfg.batch_size == 0 {
            return Err(crate::error::Error::Parameter(
                "batch_size must be at least 1".into(),
            ));
        }
        if let Some(aug) = &cfg.augment {
            aug.validate()?;
        }
        let mut order = indices.to_vec();
        if cfg.shuffle {
            let mut rng = Rng::new(cfg.seed, streams::compose(streams::SHUFFLE, cfg.epoch));
            rng.shuffle(&mut order);
        }
        Ok(BatchIter {
            source: self,
            order,
            cfg: cfg.clone(),
            cursor: 0,
        })
    }

    /// Load one corpus row, augmenting when a config is given. The
    /// augmentation stream is keyed on (seed, epoch, row), so batch content
    /// does not depend on assembly order or parallelism.
    fn load_row(
        &self,
        row: usize,
        cfg: &BatchConfig,
    ) -> Result<(Tensor<f32>, f32)> {
        let record = &self.rows[row];
        let mut img = load_image(&self.image_path(row), self.image_size)?;
        if let Some(aug) = &cfg.augment {
            let salt = (cfg.epoch << 32) | row as u64;
            let mut rng = Rng::new(cfg.seed, streams::compose(streams::AUGMENT, salt));
            img = augment(&img, aug, &mut rng)?;
        }
        Ok((img, record.gender.index() as f32))
    }
}

pub struct BatchIter<'a> {
    source: &'a DataSource,
    order: Vec<usize>,
    cfg: BatchConfig,
    cursor: usize,
}

impl BatchIter<'_> {
    pub fn steps(&self) -> usize {
        self.order.len().div_ceil(self.cfg.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.cfg.batch_size).min(self.order.len());
        let rows = self.order[self.cursor..end].to_vec();
        self.cursor = end;

        let loaded: Result<Vec<(Tensor<f32>, f32)>> = rows
            .par_iter()
            .map(|&row| self.source.load_row(row, &self.cfg))
            .collect();
        let loaded = match loaded {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };

        let (h, w) = self.source.image_size;
        let per = 3 * h * w;
        let mut inputs = vec![0f32; rows.len() * per];
        let mut targets = Vec::with_capacity(rows.len());
        for (i, (img, label)) in loaded.into_iter().enumerate() {
            inputs[i * per..(i + 1) * per].copy_from_slice(img.data());
            targets.push(label);
        }
        let n = rows.len();
        let batch = (|| {
            Ok(Batch {
                inputs: Tensor::new(vec![n, 3, h, w], inputs)?,
                targets: Tensor::new(vec![n, 1], targets)?,
                rows,
            })
        })();
        Some(batch)
    }
}
