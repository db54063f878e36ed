//! Calibrated attention on three tokens: as `eta` grows, the token with the
//! largest uncertainty loses attention mass to the others.

use ufnet::fusion::attend;
use ufnet::numerics::Matrix;

fn main() -> ufnet::Result<()> {
    let q = Matrix::from_rows(&[[0.2, 0.1], [0.0, 0.4], [0.3, 0.3]]);
    let k = Matrix::from_rows(&[[0.5, 0.0], [0.1, 0.2], [0.4, 0.6]]);
    let v = Matrix::identity(3);
    let sigma = [0.02, 0.05, 0.30];

    println!("sigma = {sigma:?}");
    println!("{:>6}  {:>24}", "eta", "mean attention per token");
    for eta in [0.0, 1.0, 5.0, 20.0] {
        let tr = attend(&q, &k, &v, &sigma, eta)?;
        let cols: Vec<String> = (0..3)
            .map(|j| format!("{:.3}", tr.weights.column(j).iter().sum::<f64>() / 3.0))
            .collect();
        println!("{eta:>6.1}  {:>24}", cols.join("  "));
    }
    Ok(())
}
