use super::ImageDataset;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// One epoch of fixed-size minibatches; the short remainder is dropped.
pub struct Batches<'a> {
    ds: &'a ImageDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    flip: Option<Rng>,
}

/// Epoch iterator over `ds`. `shuffle` permutes with `rng`; `flip` mirrors
/// each item horizontally with probability ½ from a stream forked off `rng`.
pub fn batches<'a>(
    ds: &'a ImageDataset,
    batch_size: usize,
    rng: &mut Rng,
    shuffle: bool,
    flip: bool,
) -> Result<Batches<'a>> {
    if batch_size == 0 || batch_size > ds.len() {
        return Err(Error::Config(format!(
            "batch size {batch_size} does not fit a dataset of {} items",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    let flip = flip.then(|| rng.fork());
    Ok(Batches { ds, order, batch_size, pos: 0, flip })
}

impl Batches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len() / self.batch_size
    }

    fn next_batch(&mut self) -> Result<Tensor> {
        let idx = &self.order[self.pos..self.pos + self.batch_size];
        self.pos += self.batch_size;
        let mut x = self.ds.images().gather_outer(idx)?;
        if let Some(rng) = &mut self.flip {
            let [c, h, w] = self.ds.item_shape();
            for item in x.data_mut().chunks_exact_mut(c * h * w) {
                if rng.uniform() < 0.5 {
                    item.chunks_exact_mut(w).for_each(<[f32]>::reverse);
                }
            }
        }
        Ok(x)
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Tensor>;

    fn next(&mut self) -> Option<Self::Item> {
        (self.pos + self.batch_size <= self.order.len()).then(|| self.next_batch())
    }
}
