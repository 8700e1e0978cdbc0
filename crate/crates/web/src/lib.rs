//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Images cross the boundary as row-major grayscale `f32` buffers of side
//! `extent`, values in `[0, 1]`.

use wasm_bindgen::prelude::*;
use wavelet_vae::data::{synth, Recipe, SynthSpec};
use wavelet_vae::metrics::{iqm, DEFAULT_IQM_DIVISOR};
use wavelet_vae::tensor::Tensor;
use wavelet_vae::wavelet::{decompose, reconstruct, tile_layout};
use wavelet_vae::Result;

fn as_batch(pixels: &[f32], extent: usize) -> Result<Tensor> {
    Tensor::from_vec(vec![1, 1, extent, extent], pixels.to_vec())
}

/// One grayscale synthetic image.
pub fn synth_pixels(recipe: &str, extent: usize, seed: u64) -> Result<Vec<f32>> {
    let recipe: Recipe = recipe.parse()?;
    let ds = synth(&SynthSpec::new(recipe, 1, extent, seed))?;
    Ok(ds.into_images().into_data())
}

/// Tiled Haar pyramid of depth `depth`, display-normalised.
pub fn layout_pixels(pixels: &[f32], extent: usize, depth: usize) -> Result<Vec<f32>> {
    let p = decompose(&as_batch(pixels, extent)?, depth)?;
    Ok(tile_layout(&p)?.0.into_data())
}

/// Reconstruction after zeroing the detail bands of the `drop` finest levels.
pub fn prune_pixels(pixels: &[f32], extent: usize, depth: usize, drop: usize) -> Result<Vec<f32>> {
    let mut p = decompose(&as_batch(pixels, extent)?, depth)?;
    for level in p.levels_mut().iter_mut().take(drop) {
        *level = level.approximation_only();
    }
    Ok(reconstruct(&p)?.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

pub fn iqm_pixels(pixels: &[f32], extent: usize) -> Result<f64> {
    iqm(&as_batch(pixels, extent)?, DEFAULT_IQM_DIVISOR)
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn synth_image(recipe: &str, extent: usize, seed: u32) -> std::result::Result<Vec<f32>, JsError> {
    js(synth_pixels(recipe, extent, seed as u64))
}

#[wasm_bindgen]
pub fn wavelet_layout(pixels: &[f32], extent: usize, depth: usize) -> std::result::Result<Vec<f32>, JsError> {
    js(layout_pixels(pixels, extent, depth))
}

#[wasm_bindgen]
pub fn prune_details(pixels: &[f32], extent: usize, depth: usize, drop: usize) -> std::result::Result<Vec<f32>, JsError> {
    js(prune_pixels(pixels, extent, depth, drop))
}

#[wasm_bindgen]
pub fn image_iqm(pixels: &[f32], extent: usize) -> std::result::Result<f64, JsError> {
    js(iqm_pixels(pixels, extent))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prune_nothing_is_identity() {
        let x = synth_pixels("texture", 32, 3).unwrap();
        let y = prune_pixels(&x, 32, 3, 0).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-5);
        assert_eq!(layout_pixels(&x, 32, 2).unwrap().len(), 32 * 32);
    }

    #[test]
    fn pruning_lowers_iqm() {
        let x = synth_pixels("grating:0.5", 32, 1).unwrap();
        let full = iqm_pixels(&x, 32).unwrap();
        let pruned = iqm_pixels(&prune_pixels(&x, 32, 3, 2).unwrap(), 32).unwrap();
        assert!(pruned < full, "{pruned} vs {full}");
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(synth_pixels("wobble", 32, 0).is_err());
        assert!(layout_pixels(&[0.0; 10], 4, 1).is_err());
    }
}
