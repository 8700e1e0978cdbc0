//! Orthonormal 2D Haar transform and multi-level pyramids.
//!
//! For every 2×2 block `[[a, b], [c, d]]` of the last two axes:
//!
//! ```text
//! ll = (a + b + c + d) / 2    approximation
//! lh = (a + b - c - d) / 2    top rows minus bottom rows (vertical frequency)
//! hl = (a - b + c - d) / 2    left columns minus right columns (horizontal frequency)
//! hh = (a - b - c + d) / 2    diagonal
//! ```
//!
//! The filters are orthonormal, so analysis preserves the squared norm and
//! synthesis is both the inverse and the adjoint of analysis. Extents must be
//! even at every level; nothing is padded.

use std::fs;
use std::path::Path;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor_file, write_tensor_file, CustomOp, Tensor, Var};

/// Channel order used by [`stack_channels`].
pub const SUBBAND_ORDER: [&str; 4] = ["ll", "lh", "hl", "hh"];

#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl SubbandSet {
    pub fn shape(&self) -> &[usize] {
        self.ll.shape()
    }

    fn check(&self) -> Result<()> {
        let s = self.ll.shape();
        if self.lh.shape() != s || self.hl.shape() != s || self.hh.shape() != s {
            return Err(Error::shape(
                "idwt2",
                format!(
                    "subbands disagree: {:?} {:?} {:?} {:?}",
                    s,
                    self.lh.shape(),
                    self.hl.shape(),
                    self.hh.shape()
                ),
            ));
        }
        if s.len() < 2 {
            return Err(Error::shape("idwt2", "subbands need at least two axes"));
        }
        Ok(())
    }

    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .map(|t| t.sq_norm_f64())
            .sum()
    }

    pub fn details(&self) -> [&Tensor; 3] {
        [&self.lh, &self.hl, &self.hh]
    }

    /// Same set with every detail band zeroed.
    pub fn approximation_only(&self) -> SubbandSet {
        SubbandSet {
            ll: self.ll.clone(),
            lh: Tensor::zeros(self.lh.shape()),
            hl: Tensor::zeros(self.hl.shape()),
            hh: Tensor::zeros(self.hh.shape()),
        }
    }
}

fn plane_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(op, format!("need at least two axes, got {shape:?}")));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    let planes = shape[..shape.len() - 2].iter().product();
    Ok((planes, h, w))
}

/// Haar analysis of one `h×w` plane into four `h/2×w/2` planes.
fn analyze_plane(src: &[f32], w: usize, ll: &mut [f32], lh: &mut [f32], hl: &mut [f32], hh: &mut [f32]) {
    let hw = w / 2;
    for (i, ((ll, lh), (hl, hh))) in ll
        .chunks_exact_mut(hw)
        .zip(lh.chunks_exact_mut(hw))
        .zip(hl.chunks_exact_mut(hw).zip(hh.chunks_exact_mut(hw)))
        .enumerate()
    {
        let top = &src[2 * i * w..][..w];
        let bottom = &src[(2 * i + 1) * w..][..w];
        for j in 0..hw {
            let (a, b) = (top[2 * j], top[2 * j + 1]);
            let (c, d) = (bottom[2 * j], bottom[2 * j + 1]);
            ll[j] = 0.5 * ((a + b) + (c + d));
            lh[j] = 0.5 * ((a + b) - (c + d));
            hl[j] = 0.5 * ((a - b) + (c - d));
            hh[j] = 0.5 * ((a - b) - (c - d));
        }
    }
}

fn synthesize_plane(ll: &[f32], lh: &[f32], hl: &[f32], hh: &[f32], w: usize, dst: &mut [f32]) {
    let hw = w / 2;
    for i in 0..ll.len() / hw {
        let row = i * hw;
        let (top, bottom) = dst[2 * i * w..][..2 * w].split_at_mut(w);
        for j in 0..hw {
            let (s, v, h, d) = (ll[row + j], lh[row + j], hl[row + j], hh[row + j]);
            top[2 * j] = 0.5 * ((s + v) + (h + d));
            top[2 * j + 1] = 0.5 * ((s + v) - (h + d));
            bottom[2 * j] = 0.5 * ((s - v) + (h - d));
            bottom[2 * j + 1] = 0.5 * ((s - v) - (h - d));
        }
    }
}

/// One level of Haar analysis over the last two axes.
pub fn dwt2(x: &Tensor) -> Result<SubbandSet> {
    let (planes, h, w) = plane_dims("dwt2", x.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("dwt2", format!("odd extent {h}×{w}")));
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = h / 2;
    shape[r - 1] = w / 2;
    let q = (h / 2) * (w / 2);
    let n = planes * q;
    let (mut ll, mut lh, mut hl, mut hh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for p in 0..planes {
        analyze_plane(
            &x.data()[p * h * w..][..h * w],
            w,
            &mut ll[p * q..][..q],
            &mut lh[p * q..][..q],
            &mut hl[p * q..][..q],
            &mut hh[p * q..][..q],
        );
    }
    Ok(SubbandSet {
        ll: Tensor::from_vec(shape.clone(), ll)?,
        lh: Tensor::from_vec(shape.clone(), lh)?,
        hl: Tensor::from_vec(shape.clone(), hl)?,
        hh: Tensor::from_vec(shape, hh)?,
    })
}

/// Exact inverse of [`dwt2`].
pub fn idwt2(s: &SubbandSet) -> Result<Tensor> {
    s.check()?;
    let (planes, h, w) = plane_dims("idwt2", s.shape())?;
    let q = h * w;
    let mut shape = s.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = 2 * h;
    shape[r - 1] = 2 * w;
    let mut out = vec![0.0; planes * 4 * q];
    for p in 0..planes {
        synthesize_plane(
            &s.ll.data()[p * q..][..q],
            &s.lh.data()[p * q..][..q],
            &s.hl.data()[p * q..][..q],
            &s.hh.data()[p * q..][..q],
            2 * w,
            &mut out[p * 4 * q..][..4 * q],
        );
    }
    Tensor::from_vec(shape, out)
}

/// `[B,C,h,w]` subbands → `[B,4C,h,w]` in `[ll | lh | hl | hh]` order.
pub fn stack_channels(s: &SubbandSet) -> Result<Tensor> {
    s.check()?;
    let shape = s.shape();
    if shape.len() != 4 {
        return Err(Error::shape("stack_channels", format!("need [B,C,h,w], got {shape:?}")));
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let block = c * h * w;
    let mut data = Vec::with_capacity(4 * b * block);
    for i in 0..b {
        for band in [&s.ll, &s.lh, &s.hl, &s.hh] {
            data.extend_from_slice(&band.data()[i * block..][..block]);
        }
    }
    Tensor::from_vec(vec![b, 4 * c, h, w], data)
}

/// Inverse of [`stack_channels`].
pub fn unstack_channels(t: &Tensor) -> Result<SubbandSet> {
    let shape = t.shape();
    if shape.len() != 4 || !shape[1].is_multiple_of(4) {
        return Err(Error::shape(
            "unstack_channels",
            format!("need [B,4C,h,w], got {shape:?}"),
        ));
    }
    let (b, c, h, w) = (shape[0], shape[1] / 4, shape[2], shape[3]);
    let block = c * h * w;
    let mut bands: [Vec<f32>; 4] = Default::default();
    for i in 0..b {
        for (k, band) in bands.iter_mut().enumerate() {
            band.extend_from_slice(&t.data()[(4 * i + k) * block..][..block]);
        }
    }
    let [ll, lh, hl, hh] = bands;
    let sub = vec![b, c, h, w];
    Ok(SubbandSet {
        ll: Tensor::from_vec(sub.clone(), ll)?,
        lh: Tensor::from_vec(sub.clone(), lh)?,
        hl: Tensor::from_vec(sub.clone(), hl)?,
        hh: Tensor::from_vec(sub, hh)?,
    })
}

/// Analysis on a stacked `[B,4C,h,w]` layout; used by the tape ops.
fn analyze_stacked(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::shape("dwt2", format!("need [B,C,H,W], got {:?}", x.shape())));
    }
    stack_channels(&dwt2(x)?)
}

fn synthesize_stacked(y: &Tensor) -> Result<Tensor> {
    idwt2(&unstack_channels(y)?)
}

struct HaarAnalysis;
struct HaarSynthesis;

impl CustomOp for HaarAnalysis {
    fn name(&self) -> &'static str {
        "dwt2"
    }

    fn backward(&self, grad_out: &Tensor, _inputs: &[Rc<Tensor>]) -> Result<Vec<Tensor>> {
        // Orthonormal: the adjoint of analysis is synthesis.
        Ok(vec![synthesize_stacked(grad_out)?])
    }
}

impl CustomOp for HaarSynthesis {
    fn name(&self) -> &'static str {
        "idwt2"
    }

    fn backward(&self, grad_out: &Tensor, _inputs: &[Rc<Tensor>]) -> Result<Vec<Tensor>> {
        Ok(vec![analyze_stacked(grad_out)?])
    }
}

/// Differentiable [`dwt2`] returning the channel-stacked `[B,4C,H/2,W/2]` layout.
pub fn dwt2_var<'t>(x: &Var<'t>) -> Result<Var<'t>> {
    let out = analyze_stacked(&x.value())?;
    x.tape().custom(&[*x], out, Box::new(HaarAnalysis))
}

/// Differentiable [`idwt2`] from the channel-stacked layout.
pub fn idwt2_var<'t>(y: &Var<'t>) -> Result<Var<'t>> {
    let out = synthesize_stacked(&y.value())?;
    y.tape().custom(&[*y], out, Box::new(HaarSynthesis))
}

/// Multi-level decomposition: level `j + 1` transforms level `j`'s `ll`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    levels: Vec<SubbandSet>,
    /// The untransformed input of a depth-0 pyramid.
    passthrough: Option<Tensor>,
}

impl WaveletPyramid {
    pub fn from_levels(levels: Vec<SubbandSet>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument(
                "a pyramid built from levels needs at least one level".into(),
            ));
        }
        let p = Self {
            levels,
            passthrough: None,
        };
        p.check()?;
        Ok(p)
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Level `j` (1-based) subbands.
    pub fn level(&self, j: usize) -> Option<&SubbandSet> {
        j.checked_sub(1).and_then(|i| self.levels.get(i))
    }

    pub fn levels(&self) -> &[SubbandSet] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [SubbandSet] {
        &mut self.levels
    }

    /// Channel-stacked view of level `j` (1-based).
    pub fn stacked(&self, j: usize) -> Result<Tensor> {
        let set = self
            .level(j)
            .ok_or_else(|| Error::InvalidArgument(format!("pyramid has no level {j}")))?;
        stack_channels(set)
    }

    fn check(&self) -> Result<()> {
        for pair in self.levels.windows(2) {
            let (fine, coarse) = (pair[0].shape(), pair[1].shape());
            let r = fine.len();
            let consistent = fine.len() == coarse.len()
                && fine[..r - 2] == coarse[..r - 2]
                && fine[r - 2] == 2 * coarse[r - 2]
                && fine[r - 1] == 2 * coarse[r - 1];
            if !consistent {
                return Err(Error::shape(
                    "reconstruct",
                    format!("level shapes {fine:?} and {coarse:?} are inconsistent"),
                ));
            }
        }
        Ok(())
    }
}

pub fn decompose(x: &Tensor, depth: usize) -> Result<WaveletPyramid> {
    let (_, h, w) = plane_dims("decompose", x.shape())?;
    let factor = 1usize
        .checked_shl(depth as u32)
        .ok_or_else(|| Error::InvalidArgument(format!("depth {depth} too large")))?;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "decompose",
            format!("{h}×{w} is not divisible by 2^{depth}"),
        ));
    }
    if depth == 0 {
        return Ok(WaveletPyramid {
            levels: Vec::new(),
            passthrough: Some(x.clone()),
        });
    }
    let mut levels: Vec<SubbandSet> = Vec::with_capacity(depth);
    let mut current = dwt2(x)?;
    for _ in 1..depth {
        let next = dwt2(&current.ll)?;
        levels.push(current);
        current = next;
    }
    levels.push(current);
    Ok(WaveletPyramid {
        levels,
        passthrough: None,
    })
}

/// Folds the pyramid from its deepest `ll` upward through [`idwt2`].
pub fn reconstruct(p: &WaveletPyramid) -> Result<Tensor> {
    if let Some(x) = &p.passthrough {
        return Ok(x.clone());
    }
    p.check()?;
    let mut levels = p.levels.iter().rev();
    let deepest = levels
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty pyramid".into()))?;
    let mut approx = idwt2(deepest)?;
    for set in levels {
        approx = idwt2(&SubbandSet {
            ll: approx,
            lh: set.lh.clone(),
            hl: set.hl.clone(),
            hh: set.hh.clone(),
        })?;
    }
    Ok(approx)
}

/// Placement of one subband in a [`tile_layout`] canvas.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tile {
    pub level: usize,
    pub band: &'static str,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Classic dyadic mosaic of a pyramid: deepest `ll` in the top-left corner,
/// and at every level `lh` top-right, `hl` bottom-left, `hh` bottom-right.
///
/// The approximation tile is min–max stretched to `[0, 1]`; detail tiles are
/// stretched symmetrically about zero so that 0 maps to mid-grey.
pub fn tile_layout(p: &WaveletPyramid) -> Result<(Tensor, Vec<Tile>)> {
    let first = p
        .level(1)
        .ok_or_else(|| Error::InvalidArgument("tile layout needs depth ≥ 1".into()))?;
    let shape = first.shape();
    if shape.len() != 4 {
        return Err(Error::shape("tile_layout", format!("need [B,C,h,w], got {shape:?}")));
    }
    let (b, c) = (shape[0], shape[1]);
    let (hh, ww) = (2 * shape[2], 2 * shape[3]);
    let mut canvas = Tensor::zeros(&[b, c, hh, ww]);
    let mut tiles = Vec::new();

    let paste = |canvas: &mut Tensor, t: &Tensor, row: usize, col: usize, detail: bool| {
        let (th, tw) = (t.shape()[2], t.shape()[3]);
        for plane in 0..b * c {
            let src = &t.data()[plane * th * tw..][..th * tw];
            let (lo, hi) = src.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
            let map = |v: f32| -> f32 {
                if detail {
                    let m = lo.abs().max(hi.abs());
                    if m > 0.0 {
                        0.5 + 0.5 * v / m
                    } else {
                        0.5
                    }
                } else if hi > lo {
                    (v - lo) / (hi - lo)
                } else {
                    0.5
                }
            };
            let dst = &mut canvas.data_mut()[plane * hh * ww..][..hh * ww];
            for y in 0..th {
                for x in 0..tw {
                    dst[(row + y) * ww + col + x] = map(src[y * tw + x]);
                }
            }
        }
    };

    let depth = p.depth();
    for j in 1..=depth {
        let set = p.level(j).expect("level within depth");
        let (th, tw) = (set.shape()[2], set.shape()[3]);
        for (band, t, row, col) in [
            ("lh", &set.lh, 0, tw),
            ("hl", &set.hl, th, 0),
            ("hh", &set.hh, th, tw),
        ] {
            paste(&mut canvas, t, row, col, true);
            tiles.push(Tile {
                level: j,
                band,
                row,
                col,
                height: th,
                width: tw,
            });
        }
        if j == depth {
            paste(&mut canvas, &set.ll, 0, 0, false);
            tiles.push(Tile {
                level: j,
                band: "ll",
                row: 0,
                col: 0,
                height: th,
                width: tw,
            });
        }
    }
    Ok((canvas, tiles))
}

const PYRAMID_MANIFEST: &str = "pyramid.txt";

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Writes `pyramid.txt` (one line: depth, per-level shapes, channel order)
/// plus one channel-stacked `WGT1` file per level into `dir`.
pub fn write_pyramid(dir: impl AsRef<Path>, p: &WaveletPyramid) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut shapes = Vec::new();
    if let Some(x) = &p.passthrough {
        write_tensor_file(dir.join("level0.wgt"), x)?;
        shapes.push(shape_str(x.shape()));
    }
    for j in 1..=p.depth() {
        let t = p.stacked(j)?;
        write_tensor_file(dir.join(format!("level{j}.wgt")), &t)?;
        shapes.push(shape_str(t.shape()));
    }
    let line = format!(
        "depth={} order={} shapes={}\n",
        p.depth(),
        SUBBAND_ORDER.join("|"),
        shapes.join(";")
    );
    fs::write(dir.join(PYRAMID_MANIFEST), line)?;
    Ok(())
}

pub fn read_pyramid(dir: impl AsRef<Path>) -> Result<WaveletPyramid> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join(PYRAMID_MANIFEST))?;
    let depth = manifest
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("depth="))
        .ok_or_else(|| Error::Format("pyramid manifest lacks depth".into()))?
        .parse::<usize>()
        .map_err(|e| Error::Format(format!("pyramid depth: {e}")))?;
    let order = manifest
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("order="));
    if order != Some(&SUBBAND_ORDER.join("|")) {
        return Err(Error::Format(format!("unsupported subband order {order:?}")));
    }
    if depth == 0 {
        return Ok(WaveletPyramid {
            levels: Vec::new(),
            passthrough: Some(read_tensor_file(dir.join("level0.wgt"))?),
        });
    }
    let levels = (1..=depth)
        .map(|j| unstack_channels(&read_tensor_file(dir.join(format!("level{j}.wgt")))?))
        .collect::<Result<Vec<_>>>()?;
    WaveletPyramid::from_levels(levels)
}
