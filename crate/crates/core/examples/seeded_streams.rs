// Derives independent named random streams from one master seed; the same
// labels always give the same draws regardless of call order elsewhere.

use safeloco::seeding::{derive_seed, SeededStream, RNG_ALGORITHM};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    println!("generator {RNG_ALGORITHM}");
    let master = 42;
    let mut a = SeededStream::derive(master, &[1, 0]);
    let mut b = SeededStream::derive(master, &[1, 1]);
    let draws_a: Vec<f64> = (0..3).map(|_| a.unit()).collect();
    let draws_b: Vec<f64> = (0..3).map(|_| b.unit()).collect();
    println!("stream [1,0] {draws_a:.4?}");
    println!("stream [1,1] {draws_b:.4?}");
    let mut again = SeededStream::derive(master, &[1, 0]);
    assert_eq!(draws_a, (0..3).map(|_| again.unit()).collect::<Vec<_>>());
    let child = a.split(&[9]);
    println!("child seed {:016x} labels {:?}", child.seed(), child.labels());
    println!("derive_seed(42, [1, 0]) = {:016x}", derive_seed(master, &[1, 0]));
    println!("uniform(-1, 1) {:.4}", a.uniform(-1.0, 1.0)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
