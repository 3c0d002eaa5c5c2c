//! Twin GP on a 1-D toy problem with a two-branch output: the input is
//! x^2 plus noise, so each input has two plausible outputs. Prints the
//! prediction, the objective at the optimum and the input-side variance.

use poselift::tgp::{fit, HyperparamSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
    let rs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| vec![x[0] * x[0] + 0.02 * rng.gen_range(-1.0..1.0)])
        .collect();

    let hyper = HyperparamSpec::default().resolve(&rs, &xs)?;
    println!("gamma_r {:.3}, gamma_x {:.3}", hyper.gamma_r, hyper.gamma_x);
    let model = fit(&rs, &xs, &hyper)?;

    println!(
        "{:>6} {:>10} {:>10} {:>9} {:>6}",
        "r", "x", "objective", "variance", "iters"
    );
    for r in [0.0, 0.05, 0.2, 0.5, 0.8] {
        let p = model.predict(&[r])?;
        println!(
            "{r:>6.2} {:>10.4} {:>10.4} {:>9.2e} {:>6}",
            p.x[0],
            p.objective,
            model.input_variance(&[r])?,
            p.iterations
        );
    }
    Ok(())
}
