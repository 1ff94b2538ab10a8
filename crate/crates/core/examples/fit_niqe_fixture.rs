//! Regenerates `assets/niqe_synthetic.safetensors`, the bundled NIQE model
//! fitted on procedural reference images.
//!
//!     cargo run -p ultrabm --release --example fit_niqe_fixture

use std::path::PathBuf;

use ultrabm::imagedata::procedural_reference;
use ultrabm::metrics::NiqeModel;

const IMAGES: u64 = 24;
const SIZE: usize = 192;
const PATCH: usize = 32;
const FIRST_SEED: u64 = 1000;

fn main() -> ultrabm::Result<()> {
    let images: Vec<_> = (FIRST_SEED..FIRST_SEED + IMAGES).map(|s| procedural_reference(s, SIZE, SIZE)).collect();
    let model = NiqeModel::fit(&images, PATCH)?;
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/niqe_synthetic.safetensors");
    model.save(&out)?;
    println!("wrote {} ({IMAGES} images {SIZE}x{SIZE}, patch {PATCH})", out.display());
    Ok(())
}
