//! Writes a synthetic two-modality pair as PGM, fuses it with a freshly
//! initialized model and scores the result.
//!
//! Usage: `cargo run --release --example fuse_pair [out_dir]`

use std::path::PathBuf;

use fmamba::image_io::{read_image, write_image};
use fmamba::metrics::{evaluate_pair, FusionReport};
use fmamba::synthetic::scene_pair;
use fmamba::{Model, ModelConfig};

fn main() -> fmamba::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/demo".into()));
    std::fs::create_dir_all(&dir).map_err(|source| fmamba::Error::Io { path: dir.clone(), source })?;
    let (a, b) = scene_pair(64, 64, 0);
    write_image(&a, &dir.join("a.pgm"))?;
    write_image(&b, &dir.join("b.pgm"))?;

    let model = Model::init(ModelConfig { seed: 1, ..ModelConfig::micro() })?;
    let fused = model.fuse(&read_image(&dir.join("a.pgm"))?, &read_image(&dir.join("b.pgm"))?)?;
    write_image(&fused, &dir.join("fused.pgm"))?;
    println!("wrote {}/{{a,b,fused}}.pgm", dir.display());

    let report = FusionReport { rows: vec![evaluate_pair("demo", &a, &b, &fused)?] };
    print!("{report}");
    Ok(())
}
