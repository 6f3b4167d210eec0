// Rank-2 CP decomposition of a noisy complex third-order tensor.

use std::error::Error;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use risloc::linalg::CMatrix;
use risloc::tensor::{cp_decompose, reconstruct, ComplexTensor3, CpOptions};

fn random_factor(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let dims = [12, 5, 5];
    let (a, b, c) = (random_factor(dims[0], 2, &mut rng), random_factor(dims[1], 2, &mut rng), random_factor(dims[2], 2, &mut rng));
    let clean = ComplexTensor3::from_fn(dims, |i, j, k| (0..2).map(|r| a[(i, r)] * b[(j, r)] * c[(k, r)]).sum());
    let noisy = ComplexTensor3::from_fn(dims, |i, j, k| {
        clean.get(i, j, k) + Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 1e-3
    });

    let f = cp_decompose(&noisy, 2, &CpOptions::default())?;
    println!("iterations          {}", f.iterations);
    println!("converged           {}", f.converged);
    println!("fit residual        {:.3e}", f.residual);
    println!("error to clean      {:.3e}", reconstruct(&f).distance(&clean) / clean.norm());
    println!("max collinearity    {:.3}", f.max_collinearity());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
