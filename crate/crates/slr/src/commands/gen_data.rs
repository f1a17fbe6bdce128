use slr_core::data::{generate_dataset, HiddenDirections};
use slr_core::rng;

use crate::dataset;
use crate::error::{config_err, Result};
use crate::{Context, Report};

pub(crate) fn run(ctx: &Context) -> Result<Report> {
    let c = &ctx.cfg;
    let task = c.single_task("spiked")?;
    let nu = match c.nus(&[1.0])?.as_slice() {
        [nu] => *nu,
        _ => return Err(config_err!("`nu` must be a single value for gen-data")),
    };
    let law = match c.laws(&["3"])?.as_slice() {
        [l] => l.clone(),
        _ => return Err(config_err!("`length_law` must be a single value for gen-data")),
    };
    let model = c.model(task, nu, &law)?;
    let d = c.count("dim", c.dim, 100)?;
    let n = c.count("n_samples", c.n_samples, 1000)?;
    super::prepare(ctx)?;

    let dirs = HiddenDirections::draw(d, rng::derive(ctx.seed, 1))?;
    let ds = generate_dataset(&model, &dirs, n, rng::derive(ctx.seed, 2))?;
    let path = ctx.out.join("dataset.csv");
    dataset::export(&ds, &path)?;

    let (var_y, hist) = dataset::summary(&ds);
    println!("D = {d}, N = {n}, Var(y) = {var_y:.4}");
    for (l, count) in hist {
        println!("  L = {l}: {count}");
    }
    Ok(Report { files: vec![path], unconverged: 0 })
}
