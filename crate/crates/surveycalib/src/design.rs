//! Simple random sampling without replacement and Horvitz-Thompson
//! estimation.
//!
//! Randomness comes from a counter-based SplitMix64 stream keyed by
//! `(seed, stream id)`: replicate `i` of a Monte Carlo run owns stream `i`
//! and can be drawn on any thread, in any order, with identical results.
//! Small populations can be enumerated exhaustively, which turns design
//! expectations (unbiasedness, true design variance) into exact finite sums
//! that tests compare against.

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::model::{PopulationFrame, SampleData};

/// Largest number of samples `enumerate_all_samples` will materialize.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("sample size {n} is invalid for a population of {population} units")]
    InvalidSize { n: usize, population: usize },
    #[error("enumeration would produce {count} samples, over the limit of {ENUMERATION_LIMIT}")]
    TooManySamples { count: u64 },
    #[error("second-order inclusion probability is zero for sampled pair ({k}, {l})")]
    VarianceUndefined { k: usize, l: usize },
}

/// Deterministic counter-based random stream.
///
/// The generator is SplitMix64: the state advances by the golden-ratio
/// increment and each output is the standard 64-bit finalizer of the state.
/// The initial state is derived by finalizing `seed` and the stream id, so
/// `(seed, stream)` fully determines the sequence. This algorithm is part of
/// the crate's reproducibility contract; golden tests pin its output.
#[derive(Debug, Clone)]
pub struct ReplicateRng {
    state: u64,
    cached_normal: Option<f64>,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_SALT: u64 = 0x5851_F42D_4C95_7F2D;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ReplicateRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let state = mix(seed.wrapping_add(GOLDEN)) ^ mix(stream.wrapping_mul(GOLDEN) ^ STREAM_SALT);
        Self { state, cached_normal: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Unbiased uniform draw from `0..bound` (Lemire multiply-shift with
    /// rejection).
    pub fn uniform_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let mut x = self.next_u64();
        let mut m = (x as u128) * (bound as u128);
        let mut lo = m as u64;
        if lo < bound {
            let threshold = bound.wrapping_neg() % bound;
            while lo < threshold {
                x = self.next_u64();
                m = (x as u128) * (bound as u128);
                lo = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform draw from the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the Box-Muller transform; the second value
    /// of each pair is cached so consumption stays deterministic.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.cached_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// Sampling scheme. Only simple random sampling without replacement is
/// implemented; the enum leaves room for further fixed-size designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[non_exhaustive]
pub enum Scheme {
    Srswor,
}

/// A fixed-size sampling design on a population of known size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignSpec {
    pub scheme: Scheme,
    pub sample_size: usize,
    pub population_size: usize,
    pub seed: u64,
}

impl DesignSpec {
    pub fn srswor(sample_size: usize, population_size: usize, seed: u64) -> Result<Self, DesignError> {
        if sample_size == 0 || sample_size > population_size {
            return Err(DesignError::InvalidSize { n: sample_size, population: population_size });
        }
        Ok(Self { scheme: Scheme::Srswor, sample_size, population_size, seed })
    }

    /// Sampling fraction `n / N`.
    pub fn fraction(&self) -> f64 {
        self.sample_size as f64 / self.population_size as f64
    }
}

/// First- and second-order inclusion probabilities of a design.
///
/// Plain data: estimators read probabilities without knowing the scheme, so
/// additional fixed-size designs only need to fill in these arrays.
#[derive(Debug, Clone)]
pub struct InclusionProbs {
    first_order: Array1<f64>,
    second_order: Array2<f64>,
}

impl InclusionProbs {
    pub fn first(&self, k: usize) -> f64 {
        self.first_order[k]
    }

    pub fn pair(&self, k: usize, l: usize) -> f64 {
        self.second_order[[k, l]]
    }

    pub fn first_order(&self) -> &Array1<f64> {
        &self.first_order
    }

    pub fn second_order(&self) -> &Array2<f64> {
        &self.second_order
    }
}

/// Closed-form inclusion probabilities for SRSWOR: `pi_k = n/N` and
/// `pi_kl = n(n-1) / (N(N-1))` for `k != l`.
pub fn inclusion_probs(spec: &DesignSpec) -> InclusionProbs {
    let n = spec.sample_size as f64;
    let population = spec.population_size as f64;
    let first = n / population;
    let pair = if spec.population_size > 1 {
        n * (n - 1.0) / (population * (population - 1.0))
    } else {
        first
    };
    let first_order = Array1::from_elem(spec.population_size, first);
    let mut second_order = Array2::from_elem((spec.population_size, spec.population_size), pair);
    for k in 0..spec.population_size {
        second_order[[k, k]] = first;
    }
    InclusionProbs { first_order, second_order }
}

/// Draws one SRSWOR sample for the given replicate, with design weights
/// `N/n`, via a partial Fisher-Yates shuffle on the stream
/// `(spec.seed, replicate_id)`.
pub fn draw_sample(
    frame: &PopulationFrame,
    spec: &DesignSpec,
    replicate_id: u64,
) -> Result<SampleData, DesignError> {
    assert_eq!(
        spec.population_size,
        frame.unit_count(),
        "design population size must match the frame"
    );
    let mut rng = ReplicateRng::new(spec.seed, replicate_id);
    let mut units: Vec<usize> = (0..spec.population_size).collect();
    for i in 0..spec.sample_size {
        let j = i + rng.uniform_below((spec.population_size - i) as u64) as usize;
        units.swap(i, j);
    }
    let mut indices = units[..spec.sample_size].to_vec();
    indices.sort_unstable();
    let weight = spec.population_size as f64 / spec.sample_size as f64;
    let weights = Array1::from_elem(spec.sample_size, weight);
    Ok(SampleData::from_frame(frame, indices, weights).expect("drawn indices are valid"))
}

/// Horvitz-Thompson total `sum_s d_k v_k` of one sampled variable.
///
/// Panics if `variable` does not have one value per sampled unit.
pub fn ht_total(sample: &SampleData, variable: ArrayView1<'_, f64>) -> f64 {
    assert_eq!(variable.len(), sample.len(), "one value per sampled unit");
    sample.design_weights().dot(&variable)
}

/// Horvitz-Thompson totals of every outcome column.
pub fn ht_outcome_totals(sample: &SampleData) -> Array1<f64> {
    sample.outcome_rows().t().dot(sample.design_weights())
}

/// Number of samples `C(N, n)`, or `None` on overflow past the guard.
fn sample_count(population: usize, n: usize) -> Option<u64> {
    let mut count: u128 = 1;
    let k = n.min(population - n);
    for i in 0..k {
        count = count.checked_mul((population - i) as u128)?;
        count /= (i + 1) as u128;
        if count > u64::MAX as u128 {
            return None;
        }
    }
    Some(count as u64)
}

/// Materializes every SRSWOR sample of the design in lexicographic index
/// order, paired with its probability `1 / C(N, n)`.
///
/// Guarded by [`ENUMERATION_LIMIT`]; intended for exact design expectations
/// on small populations.
pub fn enumerate_all_samples(
    frame: &PopulationFrame,
    spec: &DesignSpec,
) -> Result<Vec<(SampleData, f64)>, DesignError> {
    assert_eq!(
        spec.population_size,
        frame.unit_count(),
        "design population size must match the frame"
    );
    let population = spec.population_size;
    let n = spec.sample_size;
    let count = match sample_count(population, n) {
        Some(c) if c <= ENUMERATION_LIMIT => c,
        Some(c) => return Err(DesignError::TooManySamples { count: c }),
        None => return Err(DesignError::TooManySamples { count: u64::MAX }),
    };
    let probability = 1.0 / count as f64;
    let weight = population as f64 / n as f64;
    let mut out = Vec::with_capacity(count as usize);
    let mut combo: Vec<usize> = (0..n).collect();
    loop {
        let weights = Array1::from_elem(n, weight);
        let sample = SampleData::from_frame(frame, combo.clone(), weights)
            .expect("combination indices are valid");
        out.push((sample, probability));
        // Advance to the next combination in lexicographic order.
        let mut pos = n;
        while pos > 0 {
            pos -= 1;
            if combo[pos] != pos + population - n {
                combo[pos] += 1;
                for later in (pos + 1)..n {
                    combo[later] = combo[later - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                return Ok(out);
            }
        }
    }
}

/// Horvitz-Thompson variance estimator on sampled residuals:
/// `sum_s sum_s ((pi_kl - pi_k pi_l) / pi_kl) d_k d_l e_k e_l`.
///
/// Requires `pi_kl > 0` for every sampled pair; for SRSWOR with `n >= 2`
/// this always holds and the double sum equals `N^2 (1 - n/N) s_e^2 / n`.
pub fn ht_variance_estimator(
    sample: &SampleData,
    probs: &InclusionProbs,
    residuals: ArrayView1<'_, f64>,
) -> Result<f64, DesignError> {
    assert_eq!(residuals.len(), sample.len(), "one residual per sampled unit");
    let indices = sample.indices();
    let weights = sample.design_weights();
    let mut total = 0.0f64;
    for (a, &k) in indices.iter().enumerate() {
        for (b, &l) in indices.iter().enumerate() {
            let joint = probs.pair(k, l);
            if joint <= 0.0 {
                return Err(DesignError::VarianceUndefined { k, l });
            }
            let coefficient = (joint - probs.first(k) * probs.first(l)) / joint;
            total += coefficient * weights[a] * weights[b] * residuals[a] * residuals[b];
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PopulationFrame;
    use ndarray::{array, Array2};

    fn frame_n5() -> PopulationFrame {
        let aux = array![[1.0], [2.0], [3.0], [4.0], [5.0]];
        let y = array![[2.0], [4.0], [6.0], [8.0], [10.0]];
        PopulationFrame::new(aux, y).unwrap()
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a: Vec<u64> = {
            let mut rng = ReplicateRng::new(7, 3);
            (0..8).map(|_| rng.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut rng = ReplicateRng::new(7, 3);
            (0..8).map(|_| rng.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut rng = ReplicateRng::new(7, 4);
            (0..8).map(|_| rng.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_below_is_in_range_and_covers_values() {
        let mut rng = ReplicateRng::new(1, 0);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            let v = rng.uniform_below(7) as usize;
            assert!(v < 7);
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn normal_draws_have_plausible_moments() {
        let mut rng = ReplicateRng::new(11, 0);
        let draws: Vec<f64> = (0..20_000).map(|_| rng.standard_normal()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn draws_are_sorted_distinct_in_range_and_reproducible() {
        let frame = frame_n5();
        let spec = DesignSpec::srswor(3, 5, 42).unwrap();
        let first = draw_sample(&frame, &spec, 9).unwrap();
        let again = draw_sample(&frame, &spec, 9).unwrap();
        assert_eq!(first.indices(), again.indices());
        for w in first.design_weights() {
            assert_eq!(*w, 5.0 / 3.0);
        }
        for pair in first.indices().windows(2) {
            assert!(pair[0] < pair[1]);
        }
        assert!(*first.indices().last().unwrap() < 5);
    }

    #[test]
    fn inclusion_frequencies_match_design_probabilities() {
        let frame = frame_n5();
        let spec = DesignSpec::srswor(2, 5, 7).unwrap();
        let replicates = 10_000usize;
        let mut hits = [0usize; 5];
        for replicate in 0..replicates {
            let sample = draw_sample(&frame, &spec, replicate as u64).unwrap();
            for &k in sample.indices() {
                hits[k] += 1;
            }
        }
        // Each unit is included with probability 0.4; allow 4 standard
        // deviations of the binomial frequency.
        let sd = (0.4 * 0.6 / replicates as f64).sqrt();
        for (k, &count) in hits.iter().enumerate() {
            let freq = count as f64 / replicates as f64;
            assert!((freq - 0.4).abs() < 4.0 * sd, "unit {k} frequency {freq}");
        }
    }

    #[test]
    fn closed_form_inclusion_probabilities() {
        let spec = DesignSpec::srswor(2, 5, 0).unwrap();
        let probs = inclusion_probs(&spec);
        assert_eq!(probs.first(3), 0.4);
        assert_eq!(probs.pair(0, 1), 0.1);
        assert_eq!(probs.pair(2, 2), 0.4);
    }

    #[test]
    fn enumeration_counts_probabilities_and_order() {
        let frame = frame_n5();
        let spec = DesignSpec::srswor(2, 5, 0).unwrap();
        let all = enumerate_all_samples(&frame, &spec).unwrap();
        assert_eq!(all.len(), 10);
        assert_eq!(all[0].0.indices(), &[0, 1]);
        assert_eq!(all[9].0.indices(), &[3, 4]);
        let total_probability: f64 = all.iter().map(|(_, probability)| probability).sum();
        assert!((total_probability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_guard_rejects_large_spaces() {
        let aux = Array2::<f64>::ones((50, 1));
        let y = Array2::<f64>::ones((50, 1));
        let frame = PopulationFrame::new(aux, y).unwrap();
        let spec = DesignSpec::srswor(10, 50, 0).unwrap();
        assert!(matches!(
            enumerate_all_samples(&frame, &spec),
            Err(DesignError::TooManySamples { .. })
        ));
    }

    #[test]
    fn ht_total_is_exactly_unbiased_over_enumeration() {
        let frame = frame_n5();
        let spec = DesignSpec::srswor(2, 5, 0).unwrap();
        let true_total = frame.outcome_totals()[0];
        let mut expectation = 0.0f64;
        for (sample, probability) in enumerate_all_samples(&frame, &spec).unwrap() {
            expectation += probability * ht_total(&sample, sample.outcome_rows().column(0));
        }
        assert!((expectation - true_total).abs() <= 1e-10 * true_total.abs());
    }

    #[test]
    fn variance_double_sum_matches_classical_srswor_form() {
        let frame = frame_n5();
        let spec = DesignSpec::srswor(3, 5, 5).unwrap();
        let probs = inclusion_probs(&spec);
        let sample = draw_sample(&frame, &spec, 2).unwrap();
        let residuals = sample.outcome_rows().column(0).to_owned() * 0.5;
        let double_sum = ht_variance_estimator(&sample, &probs, residuals.view()).unwrap();

        let n = 3.0;
        let population = 5.0;
        let mean = residuals.sum() / n;
        let s2 = residuals.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
        let classical = population * population * (1.0 - n / population) * s2 / n;
        assert!(
            (double_sum - classical).abs() <= 1e-9 * classical.abs().max(1.0),
            "double sum {double_sum}, classical {classical}"
        );
    }

    #[test]
    fn census_variance_estimate_is_zero() {
        let frame = frame_n5();
        let spec = DesignSpec::srswor(5, 5, 0).unwrap();
        let probs = inclusion_probs(&spec);
        let sample = draw_sample(&frame, &spec, 0).unwrap();
        let residuals = sample.outcome_rows().column(0);
        let variance = ht_variance_estimator(&sample, &probs, residuals).unwrap();
        assert_eq!(variance, 0.0);
    }
}
