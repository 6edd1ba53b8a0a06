//! Dataset abstraction, seeded mini-batch iteration, and augmentation.

use crate::error::TrainError;
use ferrograd_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// In-memory dataset: inputs (n, …) and targets (n, …), row-aligned.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self, TrainError> {
        if inputs.shape()[0] != targets.shape()[0] {
            return Err(TrainError::Config(format!(
                "{} inputs vs {} targets",
                inputs.shape()[0],
                targets.shape()[0]
            )));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather_rows(x: &Tensor, rows: &[usize]) -> Tensor {
        let mut shape = x.shape().to_vec();
        shape[0] = rows.len();
        let span: usize = x.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * span);
        for &r in rows {
            data.extend_from_slice(&x.data()[r * span..(r + 1) * span]);
        }
        Tensor::new(shape, data).expect("gather rows")
    }
}

/// One mini-batch: inputs, an all-valid mask by default, and targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub mask: Tensor,
    pub y: Tensor,
    pub indices: Vec<usize>,
}

/// Seeded epoch shuffling: each epoch draws a fresh permutation from a
/// ChaCha stream keyed by (seed, epoch), visits every element exactly
/// once, and yields ⌈n/r⌉ batches.
#[derive(Debug, Clone)]
pub struct Minibatcher {
    pub batch_size: usize,
    pub seed: u64,
}

impl Minibatcher {
    pub fn new(batch_size: usize, seed: u64) -> Result<Self, TrainError> {
        if batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        Ok(Minibatcher { batch_size, seed })
    }

    /// Index batches for one epoch.
    pub fn epoch_indices(&self, n: usize, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch.wrapping_add(1));
        // Fisher-Yates.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        order
            .chunks(self.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn epoch<'d>(
        &self,
        dataset: &'d Dataset,
        epoch: u64,
    ) -> impl Iterator<Item = Batch> + 'd {
        let batches = self.epoch_indices(dataset.len(), epoch);
        let dataset = dataset.clone();
        batches.into_iter().map(move |indices| {
            let x = Dataset::gather_rows(&dataset.inputs, &indices);
            let y = Dataset::gather_rows(&dataset.targets, &indices);
            let mask = Tensor::ones(&[indices.len()]);
            Batch { x, mask, y, indices }
        })
    }
}

// ── Augmentation ────────────────────────────────────────────────────

pub fn gaussian_noise(x: &Tensor, sigma: f64, rng: &mut impl Rng) -> Tensor {
    let noise = Tensor::rand_normal(x.shape(), 0.0, sigma, rng);
    x.add(&noise).expect("same shape")
}

/// Convex combination of a batch with a row-permuted partner:
/// x ← λx + (1−λ)x[perm], y likewise. Targets must be one-hot (or soft)
/// class rows, not integer indices.
pub fn mixup(
    x: &Tensor,
    y_onehot: &Tensor,
    partner: &[usize],
    lambda: f64,
) -> Result<(Tensor, Tensor), TrainError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TrainError::Config(format!("λ must lie in [0, 1], got {lambda}")));
    }
    let xp = Dataset::gather_rows(x, partner);
    let yp = Dataset::gather_rows(y_onehot, partner);
    let xm = x.scale(lambda).add(&xp.scale(1.0 - lambda))?;
    let ym = y_onehot.scale(lambda).add(&yp.scale(1.0 - lambda))?;
    Ok((xm, ym))
}

/// Draws λ ~ U[0, 1] from the stream and applies mixup with the reversed
/// batch as partner.
pub fn mixup_random(
    x: &Tensor,
    y_onehot: &Tensor,
    rng: &mut impl Rng,
) -> Result<(Tensor, Tensor, f64), TrainError> {
    let n = x.shape()[0];
    let partner: Vec<usize> = (0..n).rev().collect();
    let lambda: f64 = rng.gen_range(0.0..=1.0);
    let (xm, ym) = mixup(x, y_onehot, &partner, lambda)?;
    Ok((xm, ym, lambda))
}

/// Rectangle descriptor for cutmix, in (row, col, height, width) pixels.
#[derive(Debug, Clone, Copy)]
pub struct CutmixRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Pastes the partner's rectangle into each image of an (n, h, w, c)
/// batch and interpolates one-hot labels by the kept-area fraction
/// λ = 1 − patch_area / image_area. Returns the mixed batch and λ.
pub fn cutmix(
    x: &Tensor,
    y_onehot: &Tensor,
    partner: &[usize],
    rect: CutmixRect,
) -> Result<(Tensor, Tensor, f64), TrainError> {
    let shape = x.shape().to_vec();
    if shape.len() != 4 {
        return Err(TrainError::Config(format!(
            "cutmix expects (n, h, w, c) images, got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    if rect.top + rect.height > h || rect.left + rect.width > w {
        return Err(TrainError::Config("cutmix rectangle escapes the image".into()));
    }
    let xp = Dataset::gather_rows(x, partner);
    let mut out = x.clone();
    for b in 0..shape[0] {
        for i in rect.top..rect.top + rect.height {
            for j in rect.left..rect.left + rect.width {
                for ch in 0..shape[3] {
                    out.set(&[b, i, j, ch], xp.at(&[b, i, j, ch]));
                }
            }
        }
    }
    let patch_fraction = (rect.height * rect.width) as f64 / (h * w) as f64;
    let lambda = 1.0 - patch_fraction;
    let yp = Dataset::gather_rows(y_onehot, partner);
    let ym = y_onehot.scale(lambda).add(&yp.scale(1.0 - lambda))?;
    Ok((out, ym, lambda))
}

/// Binary paste mask for a rectangle; ones mark partner pixels.
pub fn cutmix_mask(h: usize, w: usize, rect: CutmixRect) -> Tensor {
    Tensor::from_fn(&[h, w], |ix| {
        let inside = ix[0] >= rect.top
            && ix[0] < rect.top + rect.height
            && ix[1] >= rect.left
            && ix[1] < rect.left + rect.width;
        if inside {
            1.0
        } else {
            0.0
        }
    })
}

// ── Prefetching ─────────────────────────────────────────────────────

/// Computes the next batch on a helper thread while the training loop
/// consumes the current one. Batches are immutable values, so the handoff
/// is a plain channel send, and the order (hence determinism) is exactly
/// that of the underlying iterator.
pub struct Prefetcher {
    receiver: Option<std::sync::mpsc::Receiver<Batch>>,
    worker: Option<std::thread::JoinHandle<()>>,
}

impl Prefetcher {
    pub fn spawn(batches: Vec<Batch>) -> Self {
        let (sender, receiver) = std::sync::mpsc::sync_channel(1);
        let worker = std::thread::spawn(move || {
            for batch in batches {
                if sender.send(batch).is_err() {
                    break; // consumer dropped early
                }
            }
        });
        Prefetcher {
            receiver: Some(receiver),
            worker: Some(worker),
        }
    }
}

impl Iterator for Prefetcher {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        self.receiver.as_ref()?.recv().ok()
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        // Dropping the receiver makes any blocked send fail, so the
        // worker always exits before the join.
        drop(self.receiver.take());
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}
