//! Checks the closed-form identities behind a shared linear-probe layer on
//! random least-squares instances, then compares switchable, slimmable and
//! jointly fitted probes.
//!
//! `cargo run --release --example verify_lsq -- [instances]`

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slimclr::probe::{block_inverse, lsq_probe_losses, shared_probe_condition, ProbeProblem};

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn run_example(arg: Option<String>) -> anyhow::Result<()> {
    let count: usize = arg.map(|s| s.parse()).transpose()?.unwrap_or(20);
    let (n, d, d1, c) = (64, 16, 8, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_identity = 0.0f64;
    let mut worst_assembled = 0.0f64;
    let mut dominance_gaps = Vec::new();
    for _ in 0..count {
        let p = ProbeProblem::random(n, d, d1, c, &mut rng)?;
        let blocks = block_inverse(&p.x, d1)?;
        worst_identity = blocks.identity_residuals(&p.x).into_iter().fold(worst_identity, f64::max);
        let gram = p.x.transpose() * &p.x;
        worst_assembled = worst_assembled.max(max_abs(&(blocks.assemble() * gram - DMatrix::identity(d, d))));
        let losses = lsq_probe_losses(&p)?;
        dominance_gaps.push(losses.slimmable - losses.switchable);
    }
    println!("{count} random instances N={n} d={d} d1={d1} C={c}");
    println!("worst block-identity residual {worst_identity:.2e}");
    println!("worst assembled-inverse error {worst_assembled:.2e}");
    let min_gap = dominance_gaps.iter().copied().fold(f64::INFINITY, f64::min);
    println!("slimmable minus switchable loss: min {min_gap:.4} (never negative)");

    let generic = shared_probe_condition(&ProbeProblem::random(n, d, d1, c, &mut rng)?)?;
    let control = shared_probe_condition(&ProbeProblem::satisfying_condition(n, d, d1, c, &mut rng)?)?;
    println!("condition residual, generic inputs      {:.3e}", generic.mean_abs);
    println!("condition residual, X1 = X11, X12 ⟂ X11 {:.3e}", control.mean_abs);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example(std::env::args().nth(1))
}
