use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tiles `[N,C,H,W]` row-major into a `[C, rows·H, cols·W]` canvas;
/// unused cells stay black.
pub fn tile_grid(images: &Tensor, cols: usize) -> Result<Tensor> {
    let [n, c, h, w]: [usize; 4] = images
        .shape()
        .try_into()
        .map_err(|_| Error::shape("tile_grid", format!("expected [N,C,H,W], got {:?}", images.shape())))?;
    if cols == 0 {
        return Err(Error::InvalidArgument("grid needs at least one column".into()));
    }
    let rows = n.div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut canvas = Tensor::zeros(&[c, gh, gw]);
    let src = images.data();
    let dst = canvas.data_mut();
    for i in 0..n {
        let (r0, c0) = ((i / cols) * h, (i % cols) * w);
        for ch in 0..c {
            for y in 0..h {
                let from = ((i * c + ch) * h + y) * w;
                let to = (ch * gh + r0 + y) * gw + c0;
                dst[to..to + w].copy_from_slice(&src[from..from + w]);
            }
        }
    }
    Ok(canvas)
}

/// Columns of a near-square grid for `n` tiles.
pub fn grid_cols(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}
