//! Full-batch gradient descent on the weakly-convex logistic benchmark:
//! the reference loss that private runs are compared against.
//!
//! `cargo run --release -p dpzo --example logistic_oracle -- [d n rho seed steps]`

use dpzo::bench::{gradient_descent_oracle, make_weakly_convex_logistic};
use dpzo::ParameterVector;

fn main() -> dpzo::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let get = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let d: usize = get(0, "20").parse().expect("d");
    let n: usize = get(1, "512").parse().expect("n");
    let rho: f64 = get(2, "0.1").parse().expect("rho");
    let seed: u64 = get(3, "0").parse().expect("seed");
    let steps: u64 = get(4, "2000").parse().expect("steps");

    let (objective, data) = make_weakly_convex_logistic(d, n, rho, seed)?;
    let start = ParameterVector::zeros(d);
    let theta = gradient_descent_oracle(&objective, &data, &start, steps)?;
    println!(
        "initial_loss={} oracle_loss={} smoothness={}",
        objective.dataset_loss(start.as_slice(), &data),
        objective.dataset_loss(theta.as_slice(), &data),
        objective.smoothness().unwrap_or(f64::NAN)
    );
    Ok(())
}
