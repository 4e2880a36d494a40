//! Phase-aligned NRMSE and the CSV report format.

use std::f64::consts::PI;

use ptychodv::metrics::{align_phase, nrmse, report_csv, MetricReport};
use ptychodv::train::gen_sample;
use ptychodv::Complex64;

fn main() -> ptychodv::Result<()> {
    let x = gen_sample(32, 0, 0)?.image;
    let shifted = x.scale_complex(Complex64::from_polar(1.0, 0.7 * PI));
    println!("global phase 0.7 pi: recovered {:.4} pi, nrmse {:.1e}", align_phase(&shifted, &x)? / PI, nrmse(&shifted, &x)?);

    let mut rows = Vec::new();
    for (name, amount) in [("small", 0.01), ("large", 0.1)] {
        let scores = (1..=4)
            .map(|k| {
                let y = gen_sample(32, 1, k)?.image;
                nrmse(&x.add(&y.sub(&x)?.scale(amount))?, &x)
            })
            .collect::<ptychodv::Result<Vec<_>>>()?;
        rows.push(MetricReport::new(name, "all", scores, &[])?);
    }
    for r in &rows {
        println!("{:<6} {}", r.method, r.formatted());
    }
    print!("{}", report_csv(&rows, "example")?);
    Ok(())
}
