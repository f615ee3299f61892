//! MNIST IDX loading, plain or gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use fefet_core::network::{Dataset, Split};

use crate::error::{io_err, SimError, SimResult};

/// Environment variable that overrides the dataset directory.
pub const MNIST_DIR_ENV: &str = "FEFET_MNIST_DIR";

pub fn default_mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// Environment override, then the configured directory, then the bundled copy.
pub fn resolve_mnist_dir(configured: Option<&Path>) -> PathBuf {
    if let Some(v) = std::env::var_os(MNIST_DIR_ENV) {
        return PathBuf::from(v);
    }
    configured.map(Path::to_path_buf).unwrap_or_else(default_mnist_dir)
}

fn stems(split: Split) -> (&'static str, &'static str) {
    match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }
}

/// Reads `dir/stem`, falling back to `dir/stem.gz`.
pub fn read_idx(dir: &Path, stem: &str) -> SimResult<Vec<u8>> {
    let plain = dir.join(stem);
    if plain.is_file() {
        return fs::read(&plain).map_err(io_err(plain));
    }
    let gz = dir.join(format!("{stem}.gz"));
    let f = fs::File::open(&gz).map_err(io_err(&gz))?;
    let mut out = Vec::new();
    GzDecoder::new(f).read_to_end(&mut out).map_err(io_err(&gz))?;
    Ok(out)
}

pub fn load_mnist(dir: &Path, split: Split) -> SimResult<Dataset> {
    let (img, lab) = stems(split);
    let images = read_idx(dir, img)?;
    let labels = read_idx(dir, lab)?;
    let ds = Dataset::from_idx(&images, &labels, split)?;
    if ds.rows != 28 || ds.cols != 28 {
        return Err(SimError::Core(fefet_core::Error::Format(format!(
            "expected 28x28 images, found {}x{}",
            ds.rows, ds.cols
        ))));
    }
    Ok(ds)
}
