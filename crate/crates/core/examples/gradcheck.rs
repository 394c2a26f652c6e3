//! Finite-difference gradient checks of every learnable module.
//!
//! cargo run --release --example gradcheck -- [seed]

fn main() -> fdikp::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let reports = fdikp::pipeline::gradcheck_suite(seed)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", reports.len());
    Ok(())
}
