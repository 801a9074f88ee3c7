//! History pool of generated images fed to the discriminators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::seed::{Purpose, SeedStreams};
use crate::tensor::Tensor;
use crate::types::{AttentionMask, ImageBatch};

/// Bounded store of single generated items.
///
/// Each query draws from a fresh stream keyed by the query counter, so a
/// pool restored from its contents and counter continues identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePool<T = f32> {
    pub(crate) capacity: usize,
    pub(crate) swap_prob: f64,
    pub(crate) seed: u64,
    pub(crate) purpose: Purpose,
    pub(crate) queries: u64,
    /// Per-item `(channels, height, width)` of stored entries.
    pub(crate) item_shape: Option<[usize; 3]>,
    pub(crate) stored: Vec<Vec<T>>,
    pub(crate) swaps: u64,
    pub(crate) returned: u64,
}

impl<T: Real> ImagePool<T> {
    pub fn new(capacity: usize, swap_prob: f64, streams: SeedStreams, purpose: Purpose) -> Self {
        ImagePool {
            capacity,
            swap_prob,
            seed: streams.seed(),
            purpose,
            queries: 0,
            item_shape: None,
            stored: Vec::new(),
            swaps: 0,
            returned: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    /// Fraction of returned items that came from the history so far.
    pub fn swap_fraction(&self) -> f64 {
        if self.returned == 0 {
            0.0
        } else {
            self.swaps as f64 / self.returned as f64
        }
    }

    fn rng(&self) -> rand_chacha::ChaCha8Rng {
        crate::seed::seed_all(self.seed).stream(self.purpose, self.queries)
    }

    /// Returns a batch of the same shape, mixing in stored history.
    pub fn query(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        if batch.is_empty() {
            return Err(Error::contract("pool query with an empty batch"));
        }
        if self.capacity == 0 {
            return Ok(batch.clone());
        }
        let [n, c, h, w] = batch.shape();
        match self.item_shape {
            Some(s) if s != [c, h, w] => {
                return Err(Error::dim(
                    "channels",
                    format!("pool holds {s:?} items, query has {:?}", [c, h, w]),
                ));
            }
            _ => self.item_shape = Some([c, h, w]),
        }
        let mut rng = self.rng();
        self.queries += 1;
        let mut out = Vec::with_capacity(batch.len());
        for i in 0..n {
            let item = batch.item(i);
            self.returned += 1;
            if self.stored.len() < self.capacity {
                self.stored.push(item.to_vec());
                out.extend_from_slice(item);
            } else if rng.random::<f64>() < self.swap_prob {
                let j = rng.random_range(0..self.stored.len());
                let old = std::mem::replace(&mut self.stored[j], item.to_vec());
                out.extend_from_slice(&old);
                self.swaps += 1;
            } else {
                out.extend_from_slice(item);
            }
        }
        Tensor::from_vec(batch.shape(), out)
    }

    /// Image-only query.
    pub fn pool_query(&mut self, batch: &ImageBatch<T>) -> Result<ImageBatch<T>> {
        let out = self.query(batch.tensor())?;
        Ok(ImageBatch::trusted(out, batch.domain()))
    }

    /// Queries `(image, mask)` pairs jointly so returned masks stay paired
    /// with the images they were generated with.
    pub fn query_pairs(
        &mut self,
        images: &ImageBatch<T>,
        masks: &AttentionMask<T>,
    ) -> Result<(ImageBatch<T>, AttentionMask<T>)> {
        let joint = crate::discriminator::attended_input(masks.tensor(), images.tensor())?;
        let (m, img) = self.query(&joint)?.split_channels(1);
        Ok((ImageBatch::trusted(img, images.domain()), AttentionMask::trusted(m)))
    }
}
