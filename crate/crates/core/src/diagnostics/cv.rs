use crate::error::{BsviError, Result};
use crate::forward::LatticeModel;

/// Increments below this multiple of the process scale (per conditioning
/// step) are averaging round-off and count as zero.
const ROUND_OFF: f64 = 8.0 * f64::EPSILON;

/// `Σ_k E|E_k[Ψ_{k+1}] − Ψ_k|` over the finest grid partition. Every coarser
/// partition gives a smaller value (triangle inequality through iterated
/// conditional expectations), so this is the supremum over grid partitions.
/// `values[k]` holds `dim` components per node of step `k`.
pub fn conditional_variation(values: &[Vec<f64>], dim: usize, lattice: &LatticeModel) -> Result<f64> {
    let steps: Vec<usize> = (0..=lattice.n_steps()).collect();
    conditional_variation_on_partition(values, dim, lattice, &steps)
}

/// Conditional variation over the partition given by increasing grid step
/// indices.
pub fn conditional_variation_on_partition(
    values: &[Vec<f64>],
    dim: usize,
    lattice: &LatticeModel,
    partition: &[usize],
) -> Result<f64> {
    if values.len() != lattice.n_steps() + 1 {
        return Err(BsviError::dim_mismatch("process steps", lattice.n_steps() + 1, values.len()));
    }
    if partition.windows(2).any(|w| w[1] <= w[0]) || partition.iter().any(|k| *k > lattice.n_steps()) {
        return Err(BsviError::invalid("partition must be increasing grid step indices"));
    }
    let mut total = 0.0;
    for w in partition.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mean = lattice.cond_expect_from(&values[b], dim, b, a)?;
        let scale = values[b].iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let floor = ROUND_OFF * scale * (b - a) as f64;
        let dev: Vec<f64> = mean
            .chunks(dim)
            .zip(values[a].chunks(dim))
            .map(|(m, v)| {
                let r = m.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                if r <= floor {
                    0.0
                } else {
                    r
                }
            })
            .collect();
        total += lattice.expectation(&dev, 1, a)?[0];
    }
    Ok(total)
}
