//! CSV layout for datasets.
//!
//! ```text
//! # slr-dataset v1
//! D,N,task,nu,delta,length_law,seed
//! <values>
//! k_star,<D values>
//! v_star,<D values>
//! L,eps_star,y,x_1_1,...,x_L_D      (one row per sample, eps_star 1-based)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use slr_core::data::{Dataset, HiddenDirections, Sample};
use slr_core::{LengthLaw, ModelConfig, Task};

use crate::error::{config_err, CliError, Result};
use crate::output::num;

const MAGIC: &str = "# slr-dataset v1";
const META: [&str; 7] = ["D", "N", "task", "nu", "delta", "length_law", "seed"];

pub fn export(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut buf = BufWriter::new(file);
    writeln!(buf, "{MAGIC}").map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(buf);
    w.write_record(META)?;
    let cfg = &ds.cfg;
    w.write_record([
        ds.dim().to_string(),
        ds.len().to_string(),
        cfg.task.name().to_string(),
        num(cfg.nu),
        num(cfg.delta),
        cfg.length_law.id(),
        ds.seed.to_string(),
    ])?;
    for (name, v) in [("k_star", &ds.dirs.k_star), ("v_star", &ds.dirs.v_star)] {
        w.write_record(std::iter::once(name.to_string()).chain(v.iter().map(|&x| num(x))))?;
    }
    for s in &ds.samples {
        let head = [s.len.to_string(), (s.eps_star + 1).to_string(), num(s.y)];
        w.write_record(head.into_iter().chain(s.x.iter().map(|&x| num(x))))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| config_err!("dataset: bad or missing {what}"))
}

pub fn import(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let mut records = r.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        records.next().ok_or_else(|| config_err!("dataset: missing {what}"))?.map_err(CliError::from)
    };
    let header = next("header")?;
    if header.iter().collect::<Vec<_>>() != META {
        return Err(config_err!("dataset: unexpected header {:?}", header));
    }
    let meta = next("metadata")?;
    let d: usize = field(&meta, 0, "D")?;
    let n: usize = field(&meta, 1, "N")?;
    let task = Task::parse(meta.get(2).unwrap_or(""))?;
    let nu: f64 = field(&meta, 3, "nu")?;
    let delta: f64 = field(&meta, 4, "delta")?;
    let law = LengthLaw::from_id(meta.get(5).unwrap_or(""))?;
    let seed: u64 = field(&meta, 6, "seed")?;
    let cfg = ModelConfig::new(task, nu, delta, law)?;
    let mut dir = |name: &str| -> Result<Vec<f64>> {
        let rec = next(name)?;
        if rec.get(0) != Some(name) || rec.len() != d + 1 {
            return Err(config_err!("dataset: malformed {name} row"));
        }
        (1..=d).map(|i| field(&rec, i, name)).collect()
    };
    let k_star = dir("k_star")?;
    let v_star = dir("v_star")?;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let rec = next("sample")?;
        let len: usize = field(&rec, 0, "L")?;
        let eps: usize = field(&rec, 1, "eps_star")?;
        if len == 0 || eps == 0 || eps > len || rec.len() != 3 + len * d {
            return Err(config_err!("dataset: malformed sample {i}"));
        }
        let y: f64 = field(&rec, 2, "y")?;
        let x = (3..rec.len()).map(|j| field(&rec, j, "token entry")).collect::<Result<Vec<f64>>>()?;
        samples.push(Sample { x, y, len, eps_star: eps - 1 });
    }
    if next("end of file").is_ok() {
        return Err(config_err!("dataset: more than N = {n} samples"));
    }
    Ok(Dataset { samples, dirs: HiddenDirections { k_star, v_star }, cfg, seed })
}

/// Sample variance of the targets and the histogram of lengths.
pub fn summary(ds: &Dataset) -> (f64, Vec<(usize, usize)>) {
    let n = ds.len() as f64;
    let mean = ds.samples.iter().map(|s| s.y).sum::<f64>() / n;
    let var = ds.samples.iter().map(|s| (s.y - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut hist: Vec<(usize, usize)> = ds.cfg.length_law.support().iter().map(|&(l, _)| (l, 0)).collect();
    for s in &ds.samples {
        if let Some(h) = hist.iter_mut().find(|h| h.0 == s.len) {
            h.1 += 1;
        }
    }
    (var, hist)
}
