//! Finite-difference check of the tape gradients: first a small composite
//! function of one tensor, then the combined training loss of the full
//! model at random parameter coordinates.

use itgpt::autodiff::{grad_check, Tensor};
use itgpt::checks::{grad_suite, GradSuite};

fn main() -> itgpt::Result<()> {
    let x = Tensor::matrix(2, 3, vec![0.3, -1.2, 0.8, 2.0, -0.4, 0.1])?;
    let report = grad_check(
        |t, x| {
            let sq = t.matmul_nt(x, x)?;
            let p = t.softmax_rows(sq)?;
            t.sum_all(p)
                .and_then(|s| t.scale(s, 0.5))
                .and_then(|s| {
                    let xs = t.mul(x, x)?;
                    let xs = t.sum_all(xs)?;
                    t.add(s, xs)
                })
        },
        &x,
        1e-6,
    )?;
    println!("composite: max relative error {:.2e} over {} coordinates", report.max_rel_err, report.checked);

    let suite = GradSuite::default();
    let full = grad_suite(&suite, 0)?;
    println!("{full}");
    Ok(())
}
