//! Regenerates the bundled synthetic hierarchies in `data/`.
//!
//! Each file copies the shape of a natural hierarchy (leaf count, depth,
//! 2 to 10 children per node) with made-up raw qualities in the units of the
//! original measure. None of the values come from real data.

use std::path::Path;

use hierprice::simlab::{gen_heterogeneous_tree, QualitySampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Twin {
    file: &'static str,
    root: &'static str,
    depth: usize,
    leaves: usize,
    seed: u64,
    /// raw = offset + scale * u, u uniform in [0, 1)
    offset: f64,
    scale: f64,
    digits: usize,
}

const TWINS: [Twin; 3] = [
    // income-to-poverty ratio
    Twin { file: "census_shape.csv", root: "census", depth: 4, leaves: 475, seed: 475, offset: 1.2, scale: 4.3, digits: 3 },
    // mean math score
    Twin { file: "pisa_shape.csv", root: "pisa", depth: 4, leaves: 1567, seed: 1567, offset: 330.0, scale: 280.0, digits: 1 },
    // mean daily return, spread 3.8e-3
    Twin { file: "sp500_shape.csv", root: "sp500", depth: 3, leaves: 397, seed: 397, offset: -0.0012, scale: 0.0038, digits: 6 },
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    std::fs::create_dir_all(&dir)?;
    let unit = QualitySampler::Uniform { low: 0.0, high: 1.0 };
    for twin in &TWINS {
        let mut rng = ChaCha8Rng::seed_from_u64(twin.seed);
        let spec = gen_heterogeneous_tree((2, 10), twin.depth, twin.leaves, &unit, &mut rng)?;
        let rename = |id: &str| format!("{}{}", twin.root, &id[1..]);
        let mut out = csv::Writer::from_path(dir.join(twin.file))?;
        out.write_record(["node_id", "parent_id", "quality"])?;
        for node in &spec.nodes {
            let parent = node.parent.as_deref().map(rename).unwrap_or_default();
            let quality = node
                .quality
                .map(|u| format!("{:.*}", twin.digits, twin.offset + twin.scale * u))
                .unwrap_or_default();
            out.write_record([rename(&node.id), parent, quality])?;
        }
        out.flush()?;
        println!("{}: {} nodes", twin.file, spec.nodes.len());
    }
    Ok(())
}
