//! The executable theory layer: low-rank constants, learning-rate ceilings,
//! convergence-rate predictors, effective rank, and communication arithmetic.
//!
//! ```bash
//! cargo run -p fedmezo --example theory_calculators
//! ```

use fedmezo::federation::{comm_cost, format_bytes};
use fedmezo::linalg::DenseMatrix;
use fedmezo::theory::{
    effective_rank, gamma_zeta, iid_rate_bound, lr_bound, lr_bound_branches, noniid_rate_bound,
    rate_scaling, TheoryConstants, TheoryInputs,
};

fn main() -> fedmezo::Result<()> {
    let (gamma, zeta) = gamma_zeta(10, 2, 1)?;
    println!("gamma(d=10, r=2, n=1) = {gamma:.6}, zeta = {zeta:.6}");
    println!("product gamma*zeta = {:.6} = n/(d+n-1) = {:.6}\n", gamma * zeta, 1.0 / 10.0);

    let branches = lr_bound_branches(30, 1.0, 1.0, 100, 4);
    println!("ceiling branches (H=30, L=1, c_g=1, d=100, N=4):");
    println!("  1/(3HL sqrt(c_g d)) = {:.6e}", branches[0]);
    println!("  N/(3HL c_g)         = {:.6e}", branches[1]);
    println!("  1/H^2               = {:.6e}", branches[2]);
    println!("  eta_max = {:.6e}\n", lr_bound(30, 1.0, 1.0, 100, 4));

    let inputs = TheoryInputs {
        d: 100,
        r: 4,
        n: 1,
        clients: 4,
        local_steps: 30,
        rounds: 500,
        smoothness: 1.0,
        c_g: 1.0,
        sigma_g: 0.1,
        c_h: 0.5,
        sigma_h: 0.2,
        mu: 1e-3,
        f0: 1.0,
        f_star: 0.0,
    };
    let constants = TheoryConstants::derive(&inputs)?;
    println!("derived constants: {constants:#?}\n");
    let mut iid_inputs = inputs;
    iid_inputs.c_h = 0.0;
    iid_inputs.sigma_h = 0.0;
    println!("iid bound at eta = 1e-3:     {:.6}", iid_rate_bound(&iid_inputs, 1e-3)?);
    println!("non-iid bound at eta = 1e-3: {:.6}", noniid_rate_bound(&inputs, 1e-3)?);
    println!(
        "rate scaling r^1.5 (NHT)^-0.5 = {:.6e}, heterogeneity-adjusted = {:.6e}\n",
        rate_scaling(4, 4, 30, 500, None),
        rate_scaling(4, 4, 30, 500, Some(constants.c_h_tilde)),
    );

    let near_low_rank = DenseMatrix::from_diag(&[4.0, 3.5, 0.2, 0.1, 0.05, 0.05])?;
    println!(
        "effective rank of diag(4, 3.5, 0.2, 0.1, 0.05, 0.05) = {:.4} (nominal rank 6)\n",
        effective_rank(&near_low_rank)?
    );

    let adapter = comm_cost(42_598_400, 2);
    let full = comm_cost(3_426_473_000, 2);
    println!("adapter-only payload, 3B-class model at fp16:");
    println!("  42,598,400 params x 2 B = {adapter} B = {}", format_bytes(adapter));
    println!("  full model  = {full} B = {}", format_bytes(full));
    println!("  (exact adapter arithmetic is 81.25 MiB; a sometimes-quoted 80.45 MB does not match it)");
    Ok(())
}
