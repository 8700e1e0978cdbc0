//! Image datasets: PGM/PPM folders, packed tensor files, procedural
//! corpora and minibatch iteration.

mod batch;
mod pnm;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use batch::{batches, Batches};
pub use pnm::{encode_pnm, pnm_extension, read_pnm, write_pnm};
pub use synth::{synth, Recipe, SynthSpec};

use crate::error::{Error, Result};
use crate::tensor::{read_tensor_file, write_tensor_file, Tensor};

/// `N` images of shape `[C,H,W]` with square power-of-two extent and
/// values in `[0,1]`.
#[derive(Clone, Debug)]
pub struct ImageDataset {
    images: Tensor,
    source: String,
}

impl ImageDataset {
    pub fn new(images: Tensor, source: impl Into<String>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::shape("dataset", format!("expected [N,C,H,W], got {shape:?}")));
        }
        let (h, w) = (shape[2], shape[3]);
        if h != w || !h.is_power_of_two() || h < 2 {
            return Err(Error::shape("dataset", format!("{h}×{w} is not a power-of-two square")));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain("dataset", format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self { images, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn extent(&self) -> usize {
        self.images.shape()[2]
    }

    /// `[C,H,W]` of one item.
    pub fn item_shape(&self) -> [usize; 3] {
        [self.channels(), self.extent(), self.extent()]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn into_images(self) -> Tensor {
        self.images
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// `[C,H,W]` image `i`.
    pub fn item(&self, i: usize) -> Result<Tensor> {
        self.images.slice_outer(i, 1)?.into_reshaped(&self.item_shape())
    }

    /// The first `n` items.
    pub fn take(&self, n: usize) -> Result<Self> {
        Ok(Self {
            images: self.images.slice_outer(0, n.min(self.len()))?,
            source: self.source.clone(),
        })
    }

    /// Hex SHA-256 over the shape and little-endian pixel bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for &d in self.images.shape() {
            h.update((d as u32).to_le_bytes());
        }
        for &v in self.images.data() {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// Loads every `.pgm`/`.ppm`/`.pnm` file of a folder in lexicographic
/// filename order.
pub fn load_folder(dir: impl AsRef<Path>) -> Result<ImageDataset> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_pnm(p))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    let Some(first) = files.first() else {
        return Err(Error::InvalidArgument(format!("{}: no PGM/PPM images", dir.display())));
    };
    let first_img = read_pnm(first)?;
    let shape = first_img.shape().to_vec();
    let mut parts = vec![first_img.into_reshaped(&[1, shape[0], shape[1], shape[2]])?];
    for f in &files[1..] {
        let img = read_pnm(f)?;
        if img.shape() != shape.as_slice() {
            return Err(Error::shape(
                "load_folder",
                format!("{} has shape {:?}, expected {shape:?}", f.display(), img.shape()),
            ));
        }
        parts.push(img.into_reshaped(&[1, shape[0], shape[1], shape[2]])?);
    }
    ImageDataset::new(Tensor::cat_outer(&parts)?, format!("folder {}", dir.display()))
}

/// Writes items as `{prefix}{index:05}.pgm|ppm`; returns the paths.
pub fn save_folder(ds: &ImageDataset, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let ext = pnm_extension(ds.channels());
    (0..ds.len())
        .map(|i| {
            let path = dir.join(format!("{prefix}{i:05}.{ext}"));
            write_pnm(&path, &ds.item(i)?)?;
            Ok(path)
        })
        .collect()
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes the `[N,C,H,W]` tensor file and its `.manifest` sidecar.
pub fn save_packed(ds: &ImageDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_tensor_file(path, ds.images())?;
    let [c, h, w] = ds.item_shape();
    let manifest = format!(
        "count={}\nchannels={c}\nheight={h}\nwidth={w}\nsource_hash={}\nsource={}\n",
        ds.len(),
        ds.fingerprint(),
        ds.source().replace('\n', " ")
    );
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

/// Reads a packed dataset, verifying the manifest when present.
pub fn load_packed(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let path = path.as_ref();
    let images = read_tensor_file(path)?;
    let mpath = manifest_path(path);
    let mut source = format!("packed {}", path.display());
    let mut expected_hash = None;
    if mpath.exists() {
        for line in fs::read_to_string(&mpath)?.lines() {
            match line.split_once('=') {
                Some(("source_hash", v)) => expected_hash = Some(v.trim().to_string()),
                Some(("source", v)) => source = v.to_string(),
                _ => {}
            }
        }
    }
    let ds = ImageDataset::new(images, source)?;
    if let Some(want) = expected_hash {
        let got = ds.fingerprint();
        if got != want {
            return Err(Error::Format(format!(
                "{}: content hash {got} does not match manifest {want}",
                path.display()
            )));
        }
    }
    Ok(ds)
}

/// Folder of PGM/PPM files, or a packed tensor file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let path = path.as_ref();
    if path.is_dir() {
        load_folder(path)
    } else {
        load_packed(path)
    }
}
