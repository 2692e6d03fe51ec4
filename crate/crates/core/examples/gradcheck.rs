//! Central finite differences against every reverse-mode rule, including
//! the adjoint of the stationary solve, and the full network loss.

use pcmc::autodiff::gradcheck::primitive_suite;
use pcmc::net::gradcheck::end_to_end_suite;
use pcmc::Result;

fn main() -> Result<()> {
    let mut rows = primitive_suite(20, 0)?;
    rows.push(end_to_end_suite(20, 0)?);
    for r in &rows {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!("{:<26} max rel err {:.2e} (tol {:.0e})  {status}", r.name, r.max_rel_err, r.tolerance);
    }
    Ok(())
}
