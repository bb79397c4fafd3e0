//! Materialize a freshly initialized weight container for a configuration:
//!
//!     cargo run --release -p nextvit --example init_weights -- <config> <out> [seed]

use nextvit::{init_params, parse_config, save_weights};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 || args.len() > 3 {
        eprintln!("usage: init_weights <config> <out> [seed]");
        std::process::exit(2);
    }
    let seed: u64 = match args.get(2).map(|s| s.parse()) {
        None => 0,
        Some(Ok(s)) => s,
        Some(Err(_)) => {
            eprintln!("seed must be an unsigned integer");
            std::process::exit(2);
        }
    };
    let run = || -> nextvit::Result<usize> {
        let spec = parse_config(&std::fs::read_to_string(&args[0])?)?;
        let params = init_params::<f32>(&spec, seed);
        save_weights(&params, &args[1])?;
        Ok(params.len())
    };
    match run() {
        Ok(n) => println!("wrote {n} arrays to {}", args[1]),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
