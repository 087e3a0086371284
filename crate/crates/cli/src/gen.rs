use std::path::Path;

use panolayout::error::Result;
use panolayout::layout::ShapeKind;

use crate::dataset;

pub fn run(out: &Path, count: usize, seed: u64, shapes: &[ShapeKind], noise: f64) -> Result<()> {
    let (manifest, rooms) = dataset::generate(count, seed, shapes, noise)?;
    dataset::write(out, &manifest, &rooms)?;
    println!(
        "wrote {count} rooms to {} (train {}, val {}, test {})",
        out.display(),
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );
    Ok(())
}
