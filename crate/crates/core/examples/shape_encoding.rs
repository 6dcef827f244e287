//! Express a few genomes as bitmaps and print them as ASCII art.

use fda::encoding::{area, express, ShapeGenome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut genomes = vec![ShapeGenome::splat(0.5)];
    for _ in 0..2 {
        genomes.push(ShapeGenome::new(std::array::from_fn(|_| rng.random())));
    }
    for g in &genomes {
        let b = express(g, 32).expect("genome expresses");
        println!("area {:.3}", area(&b));
        for row in b.cells().chunks(b.resolution()) {
            let line: String = row.iter().map(|&c| if c { '#' } else { '.' }).collect();
            println!("{line}");
        }
        println!("rle {}", b.to_rle());
        println!();
    }
}
