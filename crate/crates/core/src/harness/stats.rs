use serde::Serialize;

use crate::monarch::MonarchAdapter;

pub const HISTOGRAM_BINS: usize = 64;

/// Equal-width bins over `[min, max]`; a single bin when all values agree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorStats {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// Zero when the variance is zero.
    pub excess_kurtosis: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightStats {
    pub factors: Vec<FactorStats>,
}

impl WeightStats {
    pub fn total_count(&self) -> usize {
        self.factors
            .iter()
            .map(|f| f.histogram.counts.iter().sum::<usize>())
            .sum()
    }
}

pub fn weight_stats(adapter: &MonarchAdapter) -> WeightStats {
    WeightStats {
        factors: vec![
            factor_stats("factor_in", adapter.factor_in()),
            factor_stats("factor_out", adapter.factor_out()),
        ],
    }
}

pub fn factor_stats(name: &str, values: &[f64]) -> FactorStats {
    let count = values.len();
    let len = count.max(1) as f64;
    let mean = values.iter().sum::<f64>() / len;
    let central = |p: i32| values.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / len;
    let var = central(2);
    let excess_kurtosis = if var > 0.0 { central(4) / (var * var) - 3.0 } else { 0.0 };

    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let histogram = if count == 0 {
        Histogram {
            min: 0.0,
            max: 0.0,
            counts: vec![],
        }
    } else if max == min {
        Histogram {
            min,
            max,
            counts: vec![count],
        }
    } else {
        let mut counts = vec![0; HISTOGRAM_BINS];
        let width = (max - min) / HISTOGRAM_BINS as f64;
        for v in values {
            let bin = (((v - min) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Histogram { min, max, counts }
    };
    FactorStats {
        name: name.to_string(),
        count,
        mean,
        std: var.sqrt(),
        excess_kurtosis,
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monarch::{InitMode, MonarchConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_factor_is_degenerate() {
        let a = MonarchAdapter::init(MonarchConfig::new(16, 4, 2).unwrap(), &InitMode::ZeroOut, 1).unwrap();
        let s = weight_stats(&a);
        assert_eq!(s.factors[1].std, 0.0);
        assert_eq!(s.factors[1].histogram.counts, vec![32]);
        assert_eq!(s.total_count(), a.param_count());
    }

    #[test]
    fn uniform_init_kurtosis() {
        let cfg = MonarchConfig::new(256, 4, 64).unwrap();
        let a = MonarchAdapter::init(cfg, &InitMode::ZeroOut, 3).unwrap();
        let s = factor_stats("factor_in", a.factor_in());
        assert!(s.count >= 10_000);
        assert!((s.excess_kurtosis + 1.2).abs() < 0.2, "{}", s.excess_kurtosis);
        assert_eq!(s.histogram.counts.len(), HISTOGRAM_BINS);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), s.count);
    }

    #[test]
    fn gaussian_kurtosis() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = MonarchAdapter::random_normal(MonarchConfig::new(256, 4, 64).unwrap(), 1.0, &mut rng).unwrap();
        let s = weight_stats(&a);
        for f in &s.factors {
            assert!(f.excess_kurtosis.abs() < 0.2, "{}", f.excess_kurtosis);
            assert!((f.std - 1.0).abs() < 0.05);
        }
        assert_eq!(s.total_count(), a.param_count());
    }
}
