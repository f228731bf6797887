//! Turn a semantic dataset (one class id per pixel) into one binary
//! dataset per class, write both layouts to disk and print the census.
//!
//!     cargo run --example build_binary_datasets -- [out_dir]

use icl_seg::dataset::{census, construct_binary_datasets, write_binary_datasets, DEFAULT_MIN_PIXELS};
use icl_seg::synthbench::{generate_semantic, write_semantic_layout};

fn main() -> icl_seg::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "binary_datasets_out".into());
    let out = std::path::Path::new(&out);

    let samples = generate_semantic(10, 4, 48, 3)?;
    write_semantic_layout(&out.join("semantic"), &samples)?;

    let datasets = construct_binary_datasets(&samples, DEFAULT_MIN_PIXELS)?;
    write_binary_datasets(&out.join("binary"), &datasets)?;
    let c = census(&datasets, samples.len(), DEFAULT_MIN_PIXELS);
    for class in &c.classes {
        println!("class {:>2} ({}): {} pairs", class.class_id, class.class_name, class.pairs);
    }
    println!("{} images → {} pairs under {}", c.samples, c.total_pairs, out.display());
    Ok(())
}
