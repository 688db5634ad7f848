// Regenerates the committed scenario and map files from `layouts`.
//
// cargo run --example write_scenarios [-- DIR]

use std::path::{Path, PathBuf};

use safeloco::layouts::{coupled_config, coupled_map, duel_config, duel_map, COUPLED_MAP_FILE, DUEL_MAP_FILE};

pub fn write_all(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        ("coupled.toml", coupled_config().to_toml_string()),
        (COUPLED_MAP_FILE, coupled_map().to_toml_string()),
        ("duel.toml", duel_config().to_toml_string()),
        (DUEL_MAP_FILE, duel_map().to_toml_string()),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    write_all(dir.path())?;
    let coupled = safeloco::sim::scenario::Scenario::load(dir.path().join("coupled.toml"))?;
    println!("coupled map {}x{} cells", coupled.map.width, coupled.map.height);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios"));
    for p in write_all(&dir)? {
        println!("{}", p.display());
    }
    Ok(())
}
