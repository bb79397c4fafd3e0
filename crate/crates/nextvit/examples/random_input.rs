//! Materialize a seeded random input tensor container:
//!
//!     cargo run --release -p nextvit --example random_input -- <n> <c> <h> <w> <out> [seed]

use nextvit::{save_input_tensor, Shape, SplitMix64, Tensor32};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 5 || args.len() > 6 {
        eprintln!("usage: random_input <n> <c> <h> <w> <out> [seed]");
        std::process::exit(2);
    }
    let dim = |i: usize| -> usize {
        args[i].parse().unwrap_or_else(|_| {
            eprintln!("`{}` is not a positive integer", args[i]);
            std::process::exit(2);
        })
    };
    let (n, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
    let seed: u64 = args.get(5).map_or(0, |s| {
        s.parse().unwrap_or_else(|_| {
            eprintln!("seed must be an unsigned integer");
            std::process::exit(2);
        })
    });
    let mut rng = SplitMix64::new(seed);
    let x = Tensor32::random_normal(Shape::new(n, c, h, w), &mut rng, 1.0);
    if let Err(e) = save_input_tensor(&x, &args[4]) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
    println!("wrote ({n}, {c}, {h}, {w}) tensor to {}", args[4]);
}
