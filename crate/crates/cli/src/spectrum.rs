//! Eigenvalue, density-of-states and flux-sweep spectrum datasets.

use std::path::{Path, PathBuf};

use linresp::ensemble::sample_disorder;
use linresp::lattice::{bloch_reduce, build_model_with_disorder, ModelSpec};
use linresp::ncalg::spectral_decompose;

use crate::config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Model(#[from] linresp::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Normalized histogram `(bin_center, density)` with `sum density * width = 1`.
pub fn density_of_states(energies: &[f64], bins: usize) -> Vec<(f64, f64)> {
    if energies.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &e in energies {
        let b = (((e - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = energies.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| (lo + (b as f64 + 0.5) * width, c as f64 / (total * width)))
        .collect()
}

/// Writes `spectrum.csv` and `dos.csv` for realization 0 of the configured model.
pub fn spectrum(config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let r = sample_disorder(&config.model, 0)?;
    let set = build_model_with_disorder(&config.model, r.values)?;
    let energies = spectral_decompose(&set.h)?.eigenvalues.to_vec();
    std::fs::create_dir_all(dir)?;
    let spec_path = dir.join("spectrum.csv");
    let mut w = csv::Writer::from_path(&spec_path)?;
    w.write_record(["index", "energy"])?;
    for (i, e) in energies.iter().enumerate() {
        w.write_record([i.to_string(), format!("{e:?}")])?;
    }
    w.flush()?;
    let dos_path = dir.join("dos.csv");
    let mut w = csv::Writer::from_path(&dos_path)?;
    w.write_record(["energy", "density"])?;
    for (e, d) in density_of_states(&energies, config.spectrum.bins) {
        w.write_record([format!("{e:?}"), format!("{d:?}")])?;
    }
    w.flush()?;
    Ok(vec![spec_path, dos_path])
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `(p, q, energies)` for every reduced flux `p/q` in `[0, 1)` with `q <= q_max`,
/// from the Bloch reduction on a `2 q k_points` square torus.
pub fn butterfly_data(q_max: i64, k_points: usize) -> Result<Vec<(i64, i64, Vec<f64>)>, linresp::Error> {
    let mut out = Vec::new();
    for q in 1..=q_max {
        for p in 0..q {
            if gcd(p, q) != 1 {
                continue;
            }
            let l = 2 * q as usize * k_points;
            let family = bloch_reduce(&ModelSpec::clean(l, l, p, q))?;
            out.push((p, q, family.eigenvalues()?));
        }
    }
    Ok(out)
}

pub fn butterfly(config: &ExperimentConfig, dir: &Path) -> Result<PathBuf, DatasetError> {
    let data = butterfly_data(config.butterfly.q_max, config.butterfly.k_points)?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join("butterfly.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["p", "q", "flux", "energy"])?;
    for (p, q, energies) in data {
        let flux = p as f64 / q as f64;
        for e in energies {
            w.write_record([p.to_string(), q.to_string(), format!("{flux:?}"), format!("{e:?}")])?;
        }
    }
    w.flush()?;
    Ok(path)
}
