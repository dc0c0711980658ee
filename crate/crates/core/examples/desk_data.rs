//! Writes a set of synthetic clear fundus images.
//!
//! Usage: `desk_data OUT_DIR [COUNT] [SIZE] [SEED]` (defaults 20, 64, 0).

use std::path::PathBuf;

use scrnet_core::degrade::derive_seed;
use scrnet_core::imaging::save_image;
use scrnet_core::phantom::fundus_phantom;

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> scrnet_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("data/clear"));
    let count: usize = arg(&args, 1, 20);
    let size: usize = arg(&args, 2, 64);
    let seed: u64 = arg(&args, 3, 0);
    std::fs::create_dir_all(&out).map_err(|e| scrnet_core::Error::Io {
        path: out.clone(),
        cause: e,
    })?;
    for i in 0..count {
        let img = fundus_phantom(size, derive_seed(seed, i as u64))?;
        save_image(&img, out.join(format!("fundus_{i:02}.png")))?;
    }
    println!("wrote {count} images to {}", out.display());
    Ok(())
}
