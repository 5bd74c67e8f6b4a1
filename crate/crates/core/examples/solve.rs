//! Solves the boundary value problem for the given pairs and nodal numbers 0..=3.
//!
//! ```text
//! cargo run --release --example solve -- 2,2 3,5
//! ```

use selfmap_core::{solve_bvp, MultPair, ShootingControls};

fn main() {
    let c = ShootingControls::default();
    for arg in std::env::args().skip(1) {
        let Some((a, b)) = arg.split_once(',') else {
            eprintln!("expected m0,m1, got {arg}");
            std::process::exit(2);
        };
        let pair = match (a.parse(), b.parse()) {
            (Ok(m0), Ok(m1)) => MultPair::new(m0, m1),
            _ => {
                eprintln!("expected m0,m1, got {arg}");
                std::process::exit(2);
            }
        };
        let pair = pair.unwrap_or_else(|e| {
            eprintln!("{e}");
            std::process::exit(2);
        });
        for k in 0..=3 {
            match solve_bvp(pair, k, &c) {
                Ok(s) => println!("{pair} k={k} v={:.12e} ell={} degree={}", s.v(), s.ell, s.degree),
                Err(e) => println!("{pair} k={k} failed: {e}"),
            }
        }
    }
}
