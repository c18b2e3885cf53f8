//! Estimators: momentum autocorrelation, Richardson error, acceptance
//! statistics, quadrature oracles for the one-dimensional Gibbs measure.

use std::fmt::Write as _;

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::integrate::StepRecord;
use crate::model::{Partition, PartitionKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserveError {
    #[error("estimates are incompatible: {0}")]
    Incompatible(String),
    #[error("no common lags between the two grids")]
    EmptyGrid,
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("log-log fit needs positive values, got ({0}, {1})")]
    NonPositive(f64, f64),
    #[error("reference curve is identically zero")]
    ZeroReference,
    #[error("chi-square test needs matching, non-empty bins")]
    BadBins,
}

/// Number of lags after the origin for a window `T_corr` at stepsize `h`:
/// `⌊T_corr/h⌋`, robust to `T_corr/h` landing a rounding error below an
/// integer.
pub fn lag_count(t_corr: f64, h: f64) -> usize {
    let ratio = t_corr / h;
    let near = ratio.round();
    if (ratio - near).abs() <= 1e-9 * near.max(1.0) {
        near as usize
    } else {
        ratio.floor() as usize
    }
}

/// On-the-fly estimate of `A^h(τ_k) = ⟨P_{t+k}ᵀ P_t⟩` for `k = 0..=L`.
///
/// Momenta go into a ring buffer of `L + 1` entries. Once the buffer is full,
/// every push contributes the products of the oldest entry with each entry of
/// the window, so all lags share one sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrEstimate {
    h: f64,
    dof: usize,
    window: usize,
    ring: Vec<f64>,
    head: usize,
    filled: usize,
    sums: Vec<f64>,
    count: u64,
}

impl AutocorrEstimate {
    pub fn new(h: f64, t_corr: f64, dof: usize) -> Self {
        let window = lag_count(t_corr, h) + 1;
        Self {
            h,
            dof,
            window,
            ring: vec![0.0; window * dof],
            head: 0,
            filled: 0,
            sums: vec![0.0; window],
            count: 0,
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_lags(&self) -> usize {
        self.window
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, p: &[f64]) {
        let d = self.dof;
        self.ring[self.head * d..(self.head + 1) * d].copy_from_slice(p);
        self.head = (self.head + 1) % self.window;
        if self.filled < self.window {
            self.filled += 1;
        }
        if self.filled < self.window {
            return;
        }
        // after the push, `head` points at the oldest entry
        let origin = self.head;
        let base = &self.ring[origin * d..(origin + 1) * d];
        for (k, sum) in self.sums.iter_mut().enumerate() {
            let slot = (origin + k) % self.window;
            let other = &self.ring[slot * d..(slot + 1) * d];
            *sum += base.iter().zip(other).map(|(a, b)| a * b).sum::<f64>();
        }
        self.count += 1;
    }

    /// Forgets the buffered momenta but keeps the accumulated sums, so the
    /// next pushes start a fresh, independent stream.
    pub fn clear_window(&mut self) {
        self.head = 0;
        self.filled = 0;
    }

    /// Adds the sums and counts of an estimate from an independent chain.
    pub fn merge(&mut self, other: &AutocorrEstimate) -> Result<(), ObserveError> {
        if self.dof != other.dof || self.window != other.window || self.h != other.h {
            return Err(ObserveError::Incompatible(format!(
                "h {} vs {}, {} vs {} lags, {} vs {} dof",
                self.h, other.h, self.window, other.window, self.dof, other.dof
            )));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sums.iter().map(|s| s / n).collect()
    }

    pub fn curve(&self) -> CorrelationCurve {
        CorrelationCurve {
            h: self.h,
            values: self.values(),
        }
    }
}

/// Finalized `A^h` on the grid `τ_k = k h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCurve {
    pub h: f64,
    pub values: Vec<f64>,
}

impl CorrelationCurve {
    pub fn lags(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|k| k as f64 * self.h)
    }

    pub const CSV_HEADER: &'static str = "tau,A_h";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (tau, a) in self.lags().zip(&self.values) {
            let _ = writeln!(s, "{tau},{a:e}");
        }
        s
    }
}

/// `max_k |A^h(2k h) − A^{2h}(2k h)| / max |A_ref|`, the maximum taken over the
/// lags shared by the two grids.
pub fn richardson_error(
    fine: &CorrelationCurve,
    coarse: &CorrelationCurve,
    reference: &CorrelationCurve,
) -> Result<f64, ObserveError> {
    if ((coarse.h - 2.0 * fine.h) / coarse.h).abs() > 1e-9 {
        return Err(ObserveError::Incompatible(format!(
            "coarse stepsize {} is not twice {}",
            coarse.h, fine.h
        )));
    }
    let shared = coarse.values.len().min(fine.values.len().div_ceil(2));
    if shared == 0 {
        return Err(ObserveError::EmptyGrid);
    }
    let num = (0..shared)
        .map(|k| (fine.values[2 * k] - coarse.values[k]).abs())
        .fold(0.0, f64::max);
    let den = reference.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        return Err(ObserveError::ZeroReference);
    }
    Ok(num / den)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64, ObserveError> {
    if points.len() < 2 {
        return Err(ObserveError::TooFewPoints(points.len()));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(ObserveError::NonPositive(x, y));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ObserveError::Incompatible("all x values coincide".into()));
    }
    Ok(sxy / sxx)
}

/// Running acceptance counts and acceptance-probability sums per set.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceStats {
    kind: PartitionKind,
    set_sizes: Vec<usize>,
    visits: Vec<u64>,
    accepted: Vec<u64>,
    probability_sum: Vec<f64>,
    steps: u64,
}

impl AcceptanceStats {
    pub fn new(partition: &Partition) -> Self {
        let m = partition.len();
        Self {
            kind: partition.kind(),
            set_sizes: partition.sets().iter().map(Vec::len).collect(),
            visits: vec![0; m],
            accepted: vec![0; m],
            probability_sum: vec![0.0; m],
            steps: 0,
        }
    }

    pub fn record(&mut self, record: &StepRecord) {
        for ((&j, &a), &p) in record.set.iter().zip(&record.accepted).zip(&record.probability) {
            self.visits[j] += 1;
            self.accepted[j] += a as u64;
            self.probability_sum[j] += p;
        }
        self.steps += 1;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn total_substeps(&self) -> u64 {
        self.visits.iter().sum()
    }

    pub fn total_accepted(&self) -> u64 {
        self.accepted.iter().sum()
    }

    /// Accepted substeps over total substeps.
    pub fn acceptance_rate(&self) -> f64 {
        self.total_accepted() as f64 / self.total_substeps().max(1) as f64
    }

    pub fn set_mean_probability(&self, j: usize) -> f64 {
        self.probability_sum[j] / self.visits[j].max(1) as f64
    }

    /// Mean of `min(1, e^{−βΔH})` seen by a particle: each set's mean
    /// acceptance probability weighted by the particles it moves.
    pub fn mean_accept_per_particle(&self) -> f64 {
        let n: usize = self.set_sizes.iter().sum();
        let weighted: f64 = (0..self.set_sizes.len())
            .map(|j| self.set_sizes[j] as f64 * self.set_mean_probability(j))
            .sum();
        weighted / n.max(1) as f64
    }

    pub const CSV_HEADER: &'static str = "n_particles,partition_kind,mean_accept_per_particle";

    pub fn csv_row(&self) -> String {
        let n: usize = self.set_sizes.iter().sum();
        format!("{n},{},{}", self.kind, self.mean_accept_per_particle())
    }
}

/// Composite Simpson rule on `[a, b]` with `intervals` (rounded up to even).
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = (intervals.max(2) + 1) & !1;
    let dx = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * dx);
    }
    acc * dx / 3.0
}

/// Default quadrature resolution for the Gibbs oracles.
pub const GIBBS_NODES: usize = 10_000;

/// `∫ g e^{−βU} / ∫ e^{−βU}` over the one-dimensional torus `[0, ℓ)`.
pub fn gibbs_expectation(
    potential: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
    beta: f64,
    box_length: f64,
    nodes: usize,
) -> f64 {
    let w = |x: f64| (-beta * potential(x)).exp();
    let z = simpson(&w, 0.0, box_length, nodes);
    simpson(|x| g(x) * w(x), 0.0, box_length, nodes) / z
}

/// Gibbs probability of each of `bins` equal bins of `[0, ℓ)`.
pub fn gibbs_bin_probabilities(
    potential: impl Fn(f64) -> f64,
    beta: f64,
    box_length: f64,
    bins: usize,
    nodes_per_bin: usize,
) -> Vec<f64> {
    let w = |x: f64| (-beta * potential(x)).exp();
    let width = box_length / bins as f64;
    let mass: Vec<f64> = (0..bins)
        .map(|b| simpson(&w, b as f64 * width, (b + 1) as f64 * width, nodes_per_bin))
        .collect();
    let z: f64 = mass.iter().sum();
    mass.into_iter().map(|m| m / z).collect()
}

/// `E[p^k]` for one component of a Maxwell momentum with variance `m/β`.
pub fn maxwell_moment(order: u32, mass: f64, beta: f64) -> f64 {
    if order % 2 == 1 {
        return 0.0;
    }
    let var = mass / beta;
    let double_factorial: f64 = (1..order).step_by(2).map(f64::from).product();
    var.powi(order as i32 / 2) * double_factorial
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit test of bin counts against bin probabilities.
pub fn chi_square_test(observed: &[u64], probabilities: &[f64]) -> Result<ChiSquareResult, ObserveError> {
    if observed.len() != probabilities.len() || observed.len() < 2 {
        return Err(ObserveError::BadBins);
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(ObserveError::BadBins);
    }
    let statistic: f64 = observed
        .iter()
        .zip(probabilities)
        .map(|(&o, &pr)| {
            let e = pr * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = observed.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|_| ObserveError::BadBins)?;
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}

/// Mean and batch-means standard error of a correlated scalar series.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeans {
    batch_size: u64,
    current: f64,
    in_batch: u64,
    batch_sum: f64,
    batch_sq: f64,
    batches: u64,
}

impl BatchMeans {
    pub fn new(batch_size: u64) -> Self {
        Self {
            batch_size: batch_size.max(1),
            current: 0.0,
            in_batch: 0,
            batch_sum: 0.0,
            batch_sq: 0.0,
            batches: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        self.current += x;
        self.in_batch += 1;
        if self.in_batch == self.batch_size {
            let m = self.current / self.batch_size as f64;
            self.batch_sum += m;
            self.batch_sq += m * m;
            self.batches += 1;
            self.current = 0.0;
            self.in_batch = 0;
        }
    }

    pub fn batches(&self) -> u64 {
        self.batches
    }

    pub fn mean(&self) -> f64 {
        self.batch_sum / self.batches.max(1) as f64
    }

    pub fn standard_error(&self) -> f64 {
        let b = self.batches as f64;
        if b < 2.0 {
            return f64::INFINITY;
        }
        let m = self.mean();
        let var = (self.batch_sq / b - m * m) * b / (b - 1.0);
        (var.max(0.0) / b).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_count_is_robust() {
        assert_eq!(lag_count(1.0, 0.000625), 1600);
        assert_eq!(lag_count(1.0, 0.005), 200);
        assert_eq!(lag_count(1.0, 0.3), 3);
        assert_eq!(lag_count(0.3, 0.1), 3);
    }

    #[test]
    fn constant_stream_gives_constant_curve() {
        let mut est = AutocorrEstimate::new(0.1, 0.5, 2);
        for _ in 0..20 {
            est.push(&[3.0, -4.0]);
        }
        assert_eq!(est.count(), 15);
        assert!(est.values().iter().all(|&v| v == 25.0));
    }

    #[test]
    fn repeated_stream_keeps_mean() {
        let stream: Vec<[f64; 2]> = (0..500)
            .map(|i| {
                let t = i as f64 * 0.37;
                [t.sin(), (1.3 * t).cos()]
            })
            .collect();
        let mut est = AutocorrEstimate::new(0.1, 1.0, 2);
        for p in &stream {
            est.push(p);
        }
        let once = est.values();
        let n = est.count();
        est.clear_window();
        for p in &stream {
            est.push(p);
        }
        assert_eq!(est.count(), 2 * n);
        for (a, b) in once.iter().zip(est.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_matches_sequential() {
        let mut a = AutocorrEstimate::new(0.5, 1.0, 1);
        let mut b = a.clone();
        for x in [1.0, 2.0, 3.0, 4.0] {
            a.push(&[x]);
        }
        for x in [5.0, 6.0, 7.0] {
            b.push(&[x]);
        }
        let mut m = a.clone();
        m.merge(&b).unwrap();
        assert_eq!(m.count(), 3);
        let v = m.values();
        let expect0 = (1.0 + 4.0 + 25.0) / 3.0;
        assert!((v[0] - expect0).abs() < 1e-14);
        let other = AutocorrEstimate::new(0.25, 1.0, 1);
        assert!(m.merge(&other).is_err());
    }

    #[test]
    fn richardson_examples() {
        let c = |h: f64, f: &dyn Fn(f64) -> f64| CorrelationCurve {
            h,
            values: (0..=(1.0 / h).round() as usize).map(|k| f(k as f64 * h)).collect(),
        };
        let same = c(0.1, &|t| (-t).exp());
        let coarse = c(0.2, &|t| (-t).exp());
        assert_eq!(richardson_error(&same, &coarse, &same).unwrap(), 0.0);
        assert!(richardson_error(&same, &same, &same).is_err());
    }

    #[test]
    fn slope_examples() {
        let pts: Vec<_> = [1.0, 2.0, 5.0, 9.0].iter().map(|&x| (x, x * x)).collect();
        assert!((fit_loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        let pts: Vec<_> = [27.0, 64.0, 125.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(-1.0 / 6.0))).collect();
        assert!((fit_loglog_slope(&pts).unwrap() + 1.0 / 6.0).abs() < 1e-12);
        let two = [(2.0, 3.0), (4.0, 12.0)];
        assert!((fit_loglog_slope(&two).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_loglog_slope(&[(1.0, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0)]).is_err());
    }

    #[test]
    fn gibbs_trivial_cases() {
        let mean = gibbs_expectation(|_| 0.0, |x| x, 1.0, 3.0, GIBBS_NODES);
        assert!((mean - 1.5).abs() < 1e-12);
        assert_eq!(maxwell_moment(2, 2.0, 4.0), 0.5);
        assert_eq!(maxwell_moment(4, 1.0, 1.0), 3.0);
        assert_eq!(maxwell_moment(3, 1.0, 1.0), 0.0);
        let probs = gibbs_bin_probabilities(|_| 0.0, 1.0, 2.0, 4, 100);
        assert!(probs.iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn chi_square_accepts_exact_counts() {
        let r = chi_square_test(&[25, 25, 25, 25], &[0.25; 4]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = chi_square_test(&[100, 0, 0, 0], &[0.25; 4]).unwrap();
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn batch_means_of_iid_constant() {
        let mut bm = BatchMeans::new(10);
        for _ in 0..100 {
            bm.push(2.0);
        }
        assert_eq!(bm.batches(), 10);
        assert_eq!(bm.mean(), 2.0);
        assert!(bm.standard_error().abs() < 1e-12);
    }
}
