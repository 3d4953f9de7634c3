use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{psd_factor, ArimaModel, MrwdModel, RwdModel};
use crate::error::{Error, Result};

/// Any fitted index model that can be simulated forward.
#[derive(Debug, Clone)]
pub enum IndexModel {
    Rwd(RwdModel),
    Mrwd(MrwdModel),
    Arima(ArimaModel),
}

impl IndexModel {
    pub fn dim(&self) -> usize {
        match self {
            IndexModel::Mrwd(m) => m.drift.len(),
            _ => 1,
        }
    }
}

/// Simulated paths laid out as `[path][horizon][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexPaths {
    pub n_paths: usize,
    pub horizon: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl IndexPaths {
    pub fn get(&self, path: usize, step: usize, k: usize) -> f64 {
        self.data[(path * self.horizon + step) * self.dim + k]
    }
}

/// Independent generator for one path: stream `path` of the seeded ChaCha
/// generator, so results do not depend on scheduling.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a labelled sub-task, e.g. `(model, origin)`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn simulate_index(model: &IndexModel, h: usize, n_paths: usize, seed: u64) -> Result<IndexPaths> {
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be at least 1"));
    }
    let dim = model.dim();
    let chunk = h * dim;
    let mut data = vec![0.0; n_paths * chunk];
    let factor = match model {
        IndexModel::Mrwd(m) => Some(psd_factor(&m.innovation_cov)),
        _ => None,
    };
    data.par_chunks_mut(chunk.max(1))
        .enumerate()
        .for_each(|(path, out)| {
            let mut rng = path_rng(seed, path as u64);
            match model {
                IndexModel::Rwd(m) => {
                    let sd = m.innovation_var.sqrt();
                    let mut level = m.last_value;
                    for slot in out.iter_mut() {
                        level += m.drift + sd * normal(&mut rng);
                        *slot = level;
                    }
                }
                IndexModel::Mrwd(m) => {
                    let l = factor.as_ref().unwrap();
                    let mut level: Vec<f64> = m.last_value.iter().copied().collect();
                    let mut z = vec![0.0; dim];
                    for step in 0..h {
                        for zk in z.iter_mut() {
                            *zk = normal(&mut rng);
                        }
                        for k in 0..dim {
                            let shock: f64 = (0..dim).map(|r| l[(k, r)] * z[r]).sum();
                            level[k] += m.drift[k] + shock;
                            out[step * dim + k] = level[k];
                        }
                    }
                }
                IndexModel::Arima(m) => {
                    let sd = m.innovation_var.sqrt();
                    let c = m.drift.unwrap_or(0.0);
                    let mut hist = m.recent_diffs.clone();
                    let mut prev_e = m.last_residual;
                    let mut level = m.last_value;
                    for slot in out.iter_mut() {
                        let e = sd * normal(&mut rng);
                        let mut w = c + e;
                        for (i, ph) in m.ar_coeffs.iter().enumerate() {
                            w += ph * (hist[hist.len() - 1 - i] - c);
                        }
                        if let Some(th) = m.ma_coeffs.first() {
                            w += th * prev_e;
                        }
                        prev_e = e;
                        hist.push(w);
                        level += w;
                        *slot = level;
                    }
                }
            }
        });
    Ok(IndexPaths {
        n_paths,
        horizon: h,
        dim,
        data,
    })
}
