//! Integer cumulative-frequency tables.
//!
//! Table construction is part of the bitstream contract: the decoder has to
//! rebuild exactly the tables the encoder used. For one element with location
//! `mu`, scale `b` and plane bounds `[v_min, v_max]` (alphabet size `n`):
//!
//! 1. Bin `i` covers `[v_min + i - 0.5 - mu, v_min + i + 0.5 - mu]`, except
//!    that the first bin extends to `-inf` and the last to `+inf`, so the
//!    bins partition the real line. `p_i` is the Laplace mass of the bin
//!    ([`laplace_mass`]) and `t_i = p_i * 2^16`.
//! 2. `c_i = max(1, floor(t_i))`.
//! 3. `r = 2^16 - sum(c_i)`.
//!    * `r > 0`: add `r / n` to every bin, then one more count to the
//!      `r % n` bins with the largest `t_i - floor(t_i)`; ties go to the
//!      lower index.
//!    * `r < 0`: repeatedly take `min(c_j - 1, -r)` from the bin `j` with the
//!      largest count (lowest index on ties) until `r == 0`.
//! 4. The cumulative table has `n + 1` entries, starts at 0 and ends at 2^16.

use std::cmp::Ordering;

use crate::entropy::laplace::laplace_mass;
use crate::entropy::{EntropyParams, SymbolBounds};
use crate::error::{FcnrError, Result};

pub const TABLE_PRECISION: u32 = 16;
pub const TABLE_TOTAL: u32 = 1 << TABLE_PRECISION;

/// Something that can hand out one cumulative table per coded element.
pub trait CdfProvider {
    fn bounds(&self) -> SymbolBounds;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Cumulative table (`alphabet + 1` entries) for element `index`.
    fn table(&mut self, index: usize) -> &[u32];
}

/// Reusable buffers for [`build_element_cdf`].
#[derive(Debug, Default, Clone)]
pub struct CdfScratch {
    targets: Vec<f64>,
    order: Vec<u32>,
}

/// Build the cumulative table of one element into `out`.
pub fn build_element_cdf(
    mu: f64,
    b: f64,
    bounds: SymbolBounds,
    scratch: &mut CdfScratch,
    out: &mut Vec<u32>,
) {
    let n = bounds.alphabet_size();
    let total = TABLE_TOTAL as f64;
    scratch.targets.clear();
    out.clear();
    out.push(0);

    // Edge tails e^{-|x|/b}, evaluated once per bin boundary.
    let mut prev_edge = f64::NEG_INFINITY;
    for i in 0..n {
        let edge = if i + 1 == n {
            f64::INFINITY
        } else {
            bounds.min as f64 + i as f64 + 0.5 - mu
        };
        scratch.targets.push(laplace_mass(prev_edge, edge, b) * total);
        prev_edge = edge;
    }

    let mut assigned: i64 = 0;
    for &t in &scratch.targets {
        let c = (t.floor() as i64).max(1);
        assigned += c;
        out.push(c as u32);
    }
    // `out[1..]` holds counts for now.
    let counts = &mut out[1..];
    let mut residual = TABLE_TOTAL as i64 - assigned;

    if residual > 0 {
        let per_bin = residual / n as i64;
        if per_bin > 0 {
            for c in counts.iter_mut() {
                *c += per_bin as u32;
            }
        }
        let extra = (residual % n as i64) as usize;
        if extra > 0 {
            let targets = &scratch.targets;
            let frac = |i: u32| {
                let t = targets[i as usize];
                t - t.floor()
            };
            scratch.order.clear();
            scratch.order.extend(0..n as u32);
            let by_priority = |a: &u32, b: &u32| -> Ordering {
                frac(*b)
                    .partial_cmp(&frac(*a))
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(b))
            };
            if extra < n {
                scratch.order.select_nth_unstable_by(extra - 1, by_priority);
            }
            for &i in &scratch.order[..extra] {
                counts[i as usize] += 1;
            }
        }
    } else {
        while residual < 0 {
            let (j, &c) = counts
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
                .expect("alphabet is never empty");
            let take = ((c - 1) as i64).min(-residual);
            assert!(take > 0, "alphabet too large for table precision");
            counts[j] -= take as u32;
            residual += take;
        }
    }

    let mut acc = 0u32;
    for slot in out.iter_mut().skip(1) {
        acc += *slot;
        *slot = acc;
    }
    debug_assert_eq!(acc, TABLE_TOTAL);
}

/// Materialized per-element tables for one plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    bounds: SymbolBounds,
    cumulative: Vec<u32>,
}

impl CdfTable {
    /// Wrap already-built cumulative tables, checking every invariant.
    pub fn from_cumulative(bounds: SymbolBounds, cumulative: Vec<u32>) -> Result<Self> {
        let width = bounds.alphabet_size() + 1;
        if cumulative.len() % width != 0 {
            return Err(FcnrError::InvalidArgument(format!(
                "{} table entries is not a multiple of width {width}",
                cumulative.len()
            )));
        }
        for (k, table) in cumulative.chunks(width).enumerate() {
            validate_cumulative(table).map_err(|reason| {
                FcnrError::InvalidArgument(format!("table {k}: {reason}"))
            })?;
        }
        Ok(CdfTable { bounds, cumulative })
    }

    /// Tables from raw frequency counts, one row per element.
    pub fn from_counts(bounds: SymbolBounds, rows: &[Vec<u32>]) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(rows.len() * (bounds.alphabet_size() + 1));
        for row in rows {
            if row.len() != bounds.alphabet_size() {
                return Err(FcnrError::InvalidArgument(format!(
                    "row has {} counts, alphabet has {}",
                    row.len(),
                    bounds.alphabet_size()
                )));
            }
            let mut acc = 0u32;
            cumulative.push(0);
            for &c in row {
                acc = acc.saturating_add(c);
                cumulative.push(acc);
            }
        }
        Self::from_cumulative(bounds, cumulative)
    }

    pub fn width(&self) -> usize {
        self.bounds.alphabet_size() + 1
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn row(&self, index: usize) -> &[u32] {
        let w = self.width();
        &self.cumulative[index * w..(index + 1) * w]
    }

    /// Frequency counts of row `index`.
    pub fn counts(&self, index: usize) -> Vec<u32> {
        self.row(index).windows(2).map(|w| w[1] - w[0]).collect()
    }
}

impl CdfProvider for CdfTable {
    fn bounds(&self) -> SymbolBounds {
        self.bounds
    }

    fn len(&self) -> usize {
        self.cumulative.len() / self.width()
    }

    fn table(&mut self, index: usize) -> &[u32] {
        self.row(index)
    }
}

pub(crate) fn validate_cumulative(table: &[u32]) -> std::result::Result<(), String> {
    if table.len() < 2 {
        return Err("table needs at least two entries".into());
    }
    if table[0] != 0 {
        return Err(format!("first entry is {}, expected 0", table[0]));
    }
    if *table.last().unwrap() != TABLE_TOTAL {
        return Err(format!(
            "last entry is {}, expected {TABLE_TOTAL}",
            table.last().unwrap()
        ));
    }
    if let Some(k) = table.windows(2).position(|w| w[1] <= w[0]) {
        return Err(format!("not strictly increasing at entry {}", k + 1));
    }
    Ok(())
}

/// Tables built on demand from Laplace parameters, never materialized.
#[derive(Debug, Clone)]
pub struct LaplaceCdf<'a> {
    params: &'a EntropyParams,
    bounds: SymbolBounds,
    scratch: CdfScratch,
    buffer: Vec<u32>,
}

impl<'a> LaplaceCdf<'a> {
    pub fn new(params: &'a EntropyParams, bounds: SymbolBounds) -> Self {
        LaplaceCdf {
            params,
            bounds,
            scratch: CdfScratch::default(),
            buffer: Vec::with_capacity(bounds.alphabet_size() + 1),
        }
    }
}

impl CdfProvider for LaplaceCdf<'_> {
    fn bounds(&self) -> SymbolBounds {
        self.bounds
    }

    fn len(&self) -> usize {
        self.params.len()
    }

    fn table(&mut self, index: usize) -> &[u32] {
        build_element_cdf(
            self.params.mu[index],
            self.params.scale[index],
            self.bounds,
            &mut self.scratch,
            &mut self.buffer,
        );
        &self.buffer
    }
}

/// Materialize the tables for every element of `params`.
pub fn build_cdf(params: &EntropyParams, bounds: SymbolBounds) -> CdfTable {
    let mut scratch = CdfScratch::default();
    let mut row = Vec::new();
    let mut cumulative = Vec::with_capacity(params.len() * (bounds.alphabet_size() + 1));
    for (&mu, &b) in params.mu.iter().zip(&params.scale) {
        build_element_cdf(mu, b, bounds, &mut scratch, &mut row);
        cumulative.extend_from_slice(&row);
    }
    CdfTable { bounds, cumulative }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::laplace::laplace_bin_mass;

    fn one(mu: f64, b: f64, lo: i32, hi: i32) -> Vec<u32> {
        let params = EntropyParams::new(vec![mu], vec![b]).unwrap();
        build_cdf(&params, SymbolBounds::new(lo, hi).unwrap()).counts(0)
    }

    #[test]
    fn uniform_four_symbols() {
        let t = CdfTable::from_counts(SymbolBounds::new(0, 3).unwrap(), &[vec![16384; 4]]).unwrap();
        assert_eq!(t.row(0), &[0, 16384, 32768, 49152, 65536]);
    }

    #[test]
    fn reproduces_laplace_bins() {
        let counts = one(0.0, 1.0, -8, 8);
        assert_eq!(counts.iter().sum::<u32>(), TABLE_TOTAL);
        for (i, &c) in counts.iter().enumerate() {
            let v = -8.0 + i as f64;
            let expected = match i {
                0 => laplace_mass(f64::NEG_INFINITY, v + 0.5, 1.0),
                16 => laplace_mass(v - 0.5, f64::INFINITY, 1.0),
                _ => laplace_bin_mass(v, 0.0, 1.0),
            };
            let err = (c as f64 / TABLE_TOTAL as f64 - expected).abs();
            assert!(err <= 1.0 / TABLE_TOTAL as f64, "bin {i}: {c} vs {expected}");
        }
    }

    #[test]
    fn every_symbol_codable_for_extreme_params() {
        for &(mu, b) in &[(0.0, 1e-6), (0.49, 1e-6), (3.0, 500.0), (-40.0, 0.01)] {
            let counts = one(mu, b, -300, 300);
            assert!(counts.iter().all(|&c| c >= 1));
            assert_eq!(counts.iter().sum::<u32>(), TABLE_TOTAL);
        }
    }

    #[test]
    fn single_symbol_alphabet_takes_everything() {
        assert_eq!(one(0.3, 2.0, 5, 5), vec![TABLE_TOTAL]);
    }

    #[test]
    fn rejects_non_increasing_tables() {
        let b = SymbolBounds::new(0, 1).unwrap();
        assert!(CdfTable::from_cumulative(b, vec![0, 0, 65536]).is_err());
        assert!(CdfTable::from_cumulative(b, vec![0, 10, 65535]).is_err());
        assert!(CdfTable::from_cumulative(b, vec![1, 10, 65536]).is_err());
    }

    #[test]
    fn deterministic() {
        let params = EntropyParams::new(vec![0.1, -2.3, 7.7], vec![0.4, 3.0, 11.0]).unwrap();
        let bounds = SymbolBounds::new(-30, 40).unwrap();
        assert_eq!(build_cdf(&params, bounds), build_cdf(&params, bounds));
    }
}
