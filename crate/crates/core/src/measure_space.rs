//! Finite probability spaces, seeded sampling and empirical measures.
//!
//! A finite space stands in for the non-atomic measure of the continuous
//! theory. Every formula used downstream is well defined on atoms; only the
//! sharpness of constants depends on non-atomicity, which is why
//! [`ProbabilitySpace::min_atom`] is exposed.
//!
//! Randomness comes from one generator family, ChaCha8, addressed by a
//! `(seed, stream_id)` pair: the seed keys the generator and the stream id
//! selects one of its 2^64 independent streams. Draws are a pure function of
//! that pair, so replications can run on any number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_TOLERANCE: f64 = 1e-12;

/// Returns the generator for one `(seed, stream_id)` address.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// A probability measure on the points `0..m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct ProbabilitySpace {
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl From<ProbabilitySpace> for Vec<f64> {
    fn from(space: ProbabilitySpace) -> Self {
        space.weights
    }
}

impl TryFrom<Vec<f64>> for ProbabilitySpace {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::finite(&weights)
    }
}

impl ProbabilitySpace {
    /// Normalizes nonnegative weights into a probability space.
    pub fn finite(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no points".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!("weight {w} is negative or not finite")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidWeights("all weights are zero".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Self::from_normalized(weights))
    }

    pub fn uniform(points: usize) -> Result<Self> {
        Self::finite(&vec![1.0; points])
    }

    fn from_normalized(weights: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        // Pin the top of the CDF so a uniform draw in [0, 1) always lands.
        let last_positive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
        for c in &mut cumulative[last_positive..] {
            *c = 1.0;
        }
        Self { weights, cumulative }
    }

    pub fn points(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, point: usize) -> f64 {
        self.weights[point]
    }

    /// Smallest positive atom.
    pub fn min_atom(&self) -> f64 {
        self.weights
            .iter()
            .copied()
            .filter(|w| *w > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Number of points carrying positive mass.
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    /// At least two atoms carry mass; the finite surrogate for non-atomicity.
    pub fn is_nondegenerate(&self) -> bool {
        self.support_size() >= 2
    }

    /// Inverse-CDF lookup; ties go to the lower index.
    pub fn quantile(&self, u: f64) -> usize {
        let idx = self.cumulative.partition_point(|c| *c <= u);
        idx.min(self.weights.len() - 1)
    }

    /// Draws `n` i.i.d. points from the stream `(seed, stream_id)`.
    pub fn draw_sample(&self, n: usize, seed: u64, stream_id: u64) -> Result<Sample> {
        if n == 0 {
            return Err(crate::error::invalid("n", "sample size must be at least 1"));
        }
        let mut rng = stream_rng(seed, stream_id);
        let values = (0..n).map(|_| self.quantile(rng.random::<f64>())).collect();
        Ok(Sample {
            values,
            provenance: Some(StreamAddress { seed, stream_id }),
        })
    }

    pub(crate) fn ensure_points(&self, values: &[usize]) -> Result<()> {
        match values.iter().find(|v| **v >= self.points()) {
            Some(&value) => Err(Error::PointOutOfRange {
                value,
                points: self.points(),
            }),
            None => Ok(()),
        }
    }

    /// Empirical measure of a sample drawn from this space.
    pub fn empirical_measure(&self, sample: &Sample) -> Result<DiscreteMeasure> {
        self.ensure_points(&sample.values)?;
        let mut weights = vec![0.0; self.points()];
        for &v in &sample.values {
            weights[v] += 1.0;
        }
        let n = sample.len() as f64;
        weights.iter_mut().for_each(|w| *w /= n);
        Ok(DiscreteMeasure { weights })
    }

    /// The unnormalized signed increment `mu_n - mu`.
    pub fn signed_increment(&self, sample: &Sample) -> Result<DiscreteMeasure> {
        let mut measure = self.empirical_measure(sample)?;
        for (w, m) in measure.weights.iter_mut().zip(&self.weights) {
            *w -= m;
        }
        Ok(measure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamAddress {
    pub seed: u64,
    pub stream_id: u64,
}

/// Point indices `xi_1, ..., xi_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    values: Vec<usize>,
    /// `None` for hand-built samples.
    provenance: Option<StreamAddress>,
}

impl Sample {
    pub fn from_values(values: Vec<usize>) -> Self {
        Self {
            values,
            provenance: None,
        }
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn provenance(&self) -> Option<StreamAddress> {
        self.provenance
    }

    /// Occupation counts over a space with `points` points.
    pub fn counts(&self, points: usize) -> Vec<f64> {
        let mut counts = vec![0.0; points];
        for &v in &self.values {
            counts[v] += 1.0;
        }
        counts
    }
}

/// A possibly signed measure on the points of a finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_balanced(&self) -> bool {
        self.total_mass().abs() <= WEIGHT_TOLERANCE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        let s = ProbabilitySpace::finite(&[1.0, 1.0]).unwrap();
        assert_eq!(s.weights(), &[0.5, 0.5]);
        let s = ProbabilitySpace::finite(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(s.weights(), &[0.2, 0.3, 0.5]);
        let s = ProbabilitySpace::finite(&[2.0, 3.0, 5.0]).unwrap();
        for (a, b) in s.weights().iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(ProbabilitySpace::finite(&[]).is_err());
        assert!(ProbabilitySpace::finite(&[0.5, -0.1]).is_err());
        assert!(ProbabilitySpace::finite(&[0.0, 0.0]).is_err());
        assert!(ProbabilitySpace::finite(&[f64::NAN]).is_err());
    }

    #[test]
    fn single_point_space_is_constant() {
        let s = ProbabilitySpace::finite(&[3.0]).unwrap();
        let sample = s.draw_sample(50, 7, 0).unwrap();
        assert!(sample.values().iter().all(|v| *v == 0));
        assert!(!s.is_nondegenerate());
    }

    #[test]
    fn zero_weight_points_never_drawn() {
        let s = ProbabilitySpace::finite(&[0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let sample = s.draw_sample(2000, 3, 1).unwrap();
        assert!(sample.values().iter().all(|v| *v == 1 || *v == 3));
        assert_eq!(s.quantile(0.0), 1);
        assert_eq!(s.quantile(0.5), 3);
        assert_eq!(s.quantile(0.999_999), 3);
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let s = ProbabilitySpace::uniform(32).unwrap();
        let a = s.draw_sample(1000, 11, 4).unwrap();
        let b = s.draw_sample(1000, 11, 4).unwrap();
        assert_eq!(a, b);
        let c = s.draw_sample(1000, 11, 5).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn uniform_frequency_is_close_to_half() {
        let s = ProbabilitySpace::uniform(2).unwrap();
        let sample = s.draw_sample(100_000, 2024, 0).unwrap();
        let freq = sample.values().iter().filter(|v| **v == 0).count() as f64 / 1e5;
        // Binomial tail: P(|freq - 0.5| > 0.01) < 1e-9 at n = 1e5.
        assert!((freq - 0.5).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn empirical_measure_examples() {
        let two = ProbabilitySpace::uniform(2).unwrap();
        let three = ProbabilitySpace::uniform(3).unwrap();
        let m = two
            .empirical_measure(&Sample::from_values(vec![0, 0, 1, 1]))
            .unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        let m = three
            .empirical_measure(&Sample::from_values(vec![2, 2, 2]))
            .unwrap();
        assert_eq!(m.weights(), &[0.0, 0.0, 1.0]);
        let m = two.empirical_measure(&Sample::from_values(vec![1])).unwrap();
        assert_eq!(m.weights(), &[0.0, 1.0]);
        let err = two.empirical_measure(&Sample::from_values(vec![0, 2]));
        assert_eq!(err, Err(Error::PointOutOfRange { value: 2, points: 2 }));
    }

    #[test]
    fn signed_increment_examples() {
        let two = ProbabilitySpace::uniform(2).unwrap();
        let inc = two
            .signed_increment(&Sample::from_values(vec![0, 1]))
            .unwrap();
        assert_eq!(inc.weights(), &[0.0, 0.0]);
        let inc = two
            .signed_increment(&Sample::from_values(vec![0, 0]))
            .unwrap();
        assert_eq!(inc.weights(), &[0.5, -0.5]);
        assert!(inc.is_balanced());
    }

    proptest::proptest! {
        #[test]
        fn measures_conserve_mass(
            raw in proptest::collection::vec(0.01f64..5.0, 2..40),
            n in 1usize..300,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let space = ProbabilitySpace::finite(&raw).unwrap();
            proptest::prop_assert!((space.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let sample = space.draw_sample(n, seed, 0).unwrap();
            let emp = space.empirical_measure(&sample).unwrap();
            proptest::prop_assert!((emp.total_mass() - 1.0).abs() < 1e-12);
            let inc = space.signed_increment(&sample).unwrap();
            proptest::prop_assert!(inc.is_balanced());
        }
    }
}
