//! The mean-error bound as two class means move apart, and what a biased
//! mean estimate costs through the ℓ1 term.

use noisecal::numkit::Matrix;
use noisecal::verify::{generalization_bound, phi};

fn main() -> noisecal::Result<()> {
    let sigma = Matrix::from_diag(&[2.0, 1.0]);
    println!("phi(diag(2, 1)) = {:.4}", phi(&sigma)?);

    let truth = |gap: f64| vec![vec![0.0, 0.0], vec![gap, 0.0]];
    for gap in [0.0, 1.0, 2.0, 4.0, 8.0] {
        let exact = generalization_bound(&truth(gap), &truth(gap), &sigma, 1.0)?;
        let mut biased = truth(gap);
        biased[1][0] -= 0.5;
        let off = generalization_bound(&biased, &truth(gap), &sigma, 1.0)?;
        println!("gap {gap:>4}: exact means {exact:.4}   one mean off by 0.5 {off:.4}");
    }
    Ok(())
}
