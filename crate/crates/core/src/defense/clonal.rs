//! Clonal-selection detector training over the unit cube.
//!
//! Each generation visits every self pattern: antibodies are ranked by
//! affinity, the top subset is cloned in proportion to affinity, clones are
//! mutated inversely to affinity, the population is cut back to its fixed
//! size, the best antibody is remembered for that pattern, and the weakest
//! antibodies are replaced with fresh random ones.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

pub type Pattern = [f64; 3];

const MAX_DISTANCE: f64 = 1.732_050_807_568_877_2; // sqrt(3)

/// `1 - |a - b| / sqrt(3)`; 1 at identity, 0 at opposite cube corners.
pub fn affinity(a: &Pattern, b: &Pattern) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (1.0 - d2.sqrt() / MAX_DISTANCE).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    pub population: usize,
    pub top_subset: usize,
    pub clone_factor: f64,
    pub mutation_scale: f64,
    pub worst_n: usize,
    pub generations: usize,
    pub match_threshold: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            population: 50,
            top_subset: 10,
            clone_factor: 5.0,
            mutation_scale: 0.2,
            worst_n: 5,
            generations: 20,
            match_threshold: 0.8,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("no self patterns to train on")]
    NoPatterns,
    #[error("worst_n ({worst_n}) must be smaller than the population ({population})")]
    WorstTooLarge { worst_n: usize, population: usize },
    #[error("population must be positive")]
    EmptyPopulation,
    #[error("pattern {0:?} lies outside the unit cube")]
    OutOfRange(Pattern),
    #[error("detector set has no memory detectors")]
    EmptyMemory,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Detector {
    pub center: Pattern,
    pub affinity_score: f64,
    pub is_memory: bool,
}

impl Detector {
    fn random(rng: &mut RngStream) -> Self {
        Detector {
            center: [rng.uniform(), rng.uniform(), rng.uniform()],
            affinity_score: 0.0,
            is_memory: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectorSet {
    pub population: Vec<Detector>,
    pub memory: Vec<Detector>,
    pub params: DetectorParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub matched_self: bool,
    pub best_affinity: f64,
}

impl DetectorSet {
    pub fn classify(&self, pattern: &Pattern) -> Result<Verdict, DetectorError> {
        if self.memory.is_empty() {
            return Err(DetectorError::EmptyMemory);
        }
        let best_affinity = self
            .memory
            .iter()
            .map(|d| affinity(&d.center, pattern))
            .fold(0.0, f64::max);
        Ok(Verdict {
            matched_self: best_affinity >= self.params.match_threshold,
            best_affinity,
        })
    }
}

fn mutate(parent: &Detector, aff: f64, scale: f64, rng: &mut RngStream) -> Detector {
    let sd = scale * (1.0 - aff);
    let mut center = parent.center;
    if sd > 0.0 {
        for c in center.iter_mut() {
            *c = (*c + rng.gaussian(0.0, sd).unwrap_or(0.0)).clamp(0.0, 1.0);
        }
    }
    Detector {
        center,
        affinity_score: 0.0,
        is_memory: false,
    }
}

pub fn train_detectors(
    self_patterns: &[Pattern],
    params: &DetectorParams,
    rng: &mut RngStream,
) -> Result<DetectorSet, DetectorError> {
    if self_patterns.is_empty() {
        return Err(DetectorError::NoPatterns);
    }
    if params.population == 0 {
        return Err(DetectorError::EmptyPopulation);
    }
    if params.worst_n >= params.population {
        return Err(DetectorError::WorstTooLarge {
            worst_n: params.worst_n,
            population: params.population,
        });
    }
    if let Some(p) = self_patterns
        .iter()
        .find(|p| p.iter().any(|c| !(0.0..=1.0).contains(c)))
    {
        return Err(DetectorError::OutOfRange(*p));
    }

    let mut population: Vec<Detector> = (0..params.population).map(|_| Detector::random(rng)).collect();
    let mut memory: Vec<Option<Detector>> = vec![None; self_patterns.len()];

    for _ in 0..params.generations {
        for (slot, pattern) in self_patterns.iter().enumerate() {
            for d in population.iter_mut() {
                d.affinity_score = affinity(&d.center, pattern);
            }
            rank(&mut population);

            let mut clones = Vec::new();
            for parent in population.iter().take(params.top_subset) {
                let aff = parent.affinity_score;
                let n = (params.clone_factor * aff).ceil().max(0.0) as usize;
                for _ in 0..n {
                    let mut c = mutate(parent, aff, params.mutation_scale, rng);
                    c.affinity_score = affinity(&c.center, pattern);
                    clones.push(c);
                }
            }
            population.extend(clones);
            rank(&mut population);
            population.truncate(params.population);

            let best = population[0];
            if memory[slot].is_none_or(|m| best.affinity_score > m.affinity_score) {
                memory[slot] = Some(Detector {
                    is_memory: true,
                    ..best
                });
            }

            let keep = params.population - params.worst_n;
            for d in population[keep..].iter_mut() {
                *d = Detector::random(rng);
                d.affinity_score = affinity(&d.center, pattern);
            }
        }
    }

    Ok(DetectorSet {
        population,
        memory: memory.into_iter().flatten().collect(),
        params: *params,
    })
}

/// Stable sort by affinity, highest first.
fn rank(pop: &mut [Detector]) {
    pop.sort_by(|a, b| b.affinity_score.total_cmp(&a.affinity_score));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, StreamId::AisMutation)
    }

    #[test]
    fn affinity_extremes() {
        assert_eq!(affinity(&[0.3, 0.3, 0.3], &[0.3, 0.3, 0.3]), 1.0);
        assert!(affinity(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).abs() < 1e-12);
    }

    #[test]
    fn empty_patterns_rejected() {
        assert_eq!(
            train_detectors(&[], &DetectorParams::default(), &mut rng(1)),
            Err(DetectorError::NoPatterns)
        );
    }

    #[test]
    fn worst_n_must_be_below_population() {
        let params = DetectorParams {
            worst_n: 50,
            ..DetectorParams::default()
        };
        assert!(matches!(
            train_detectors(&[[0.5; 3]], &params, &mut rng(1)),
            Err(DetectorError::WorstTooLarge { .. })
        ));
    }

    #[test]
    fn converges_on_single_pattern() {
        let v = [0.8, 0.15, 0.4];
        let params = DetectorParams {
            generations: 60,
            ..DetectorParams::default()
        };
        let set = train_detectors(&[v], &params, &mut rng(11)).unwrap();
        let best = set
            .memory
            .iter()
            .map(|d| {
                let d2: f64 = d.center.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
                d2.sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.05, "closest memory detector at {best}");
    }

    #[test]
    fn zero_mutation_keeps_best_initial_antibody() {
        let patterns = [[0.2, 0.7, 0.1], [0.9, 0.9, 0.5]];
        let params = DetectorParams {
            mutation_scale: 0.0,
            generations: 1,
            ..DetectorParams::default()
        };
        // Oracle: regenerate the same initial population and scan it exhaustively.
        let mut r = rng(5);
        let initial: Vec<Pattern> = (0..params.population)
            .map(|_| [r.uniform(), r.uniform(), r.uniform()])
            .collect();
        let set = train_detectors(&patterns, &params, &mut rng(5)).unwrap();
        // The second pattern is visited after the worst antibodies of the
        // first pass were replaced; only the first pattern sees the pristine
        // initial population.
        let expected = initial
            .iter()
            .copied()
            .max_by(|a, b| affinity(a, &patterns[0]).total_cmp(&affinity(b, &patterns[0])))
            .unwrap();
        assert_eq!(set.memory[0].center, expected);
    }

    #[test]
    fn zero_mutation_no_replacement_many_generations() {
        let p = [0.4, 0.4, 0.9];
        let params = DetectorParams {
            mutation_scale: 0.0,
            worst_n: 0,
            ..DetectorParams::default()
        };
        let mut r = rng(8);
        let initial: Vec<Pattern> = (0..params.population)
            .map(|_| [r.uniform(), r.uniform(), r.uniform()])
            .collect();
        let expected = initial
            .iter()
            .copied()
            .max_by(|a, b| affinity(a, &p).total_cmp(&affinity(b, &p)))
            .unwrap();
        let set = train_detectors(&[p], &params, &mut rng(8)).unwrap();
        assert_eq!(set.memory[0].center, expected);
    }

    #[test]
    fn population_size_and_bounds_hold() {
        let params = DetectorParams::default();
        let set = train_detectors(&[[0.1, 0.2, 0.3], [1.0, 0.0, 0.5]], &params, &mut rng(2)).unwrap();
        assert_eq!(set.population.len(), params.population);
        assert_eq!(set.memory.len(), 2);
        for d in set.population.iter().chain(&set.memory) {
            assert!(d.center.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn classification_extremes() {
        let set = DetectorSet {
            population: Vec::new(),
            memory: vec![Detector {
                center: [0.0, 0.0, 0.0],
                affinity_score: 1.0,
                is_memory: true,
            }],
            params: DetectorParams::default(),
        };
        let v = set.classify(&[0.0, 0.0, 0.0]).unwrap();
        assert!(v.matched_self && v.best_affinity == 1.0);
        let v = set.classify(&[1.0, 1.0, 1.0]).unwrap();
        assert!(!v.matched_self && v.best_affinity.abs() < 1e-12);
        let empty = DetectorSet {
            memory: Vec::new(),
            ..set
        };
        assert_eq!(empty.classify(&[0.5; 3]), Err(DetectorError::EmptyMemory));
    }

    #[test]
    fn trained_set_rejects_far_pattern() {
        let mut r = rng(21);
        let selfs: Vec<Pattern> = (0..15)
            .map(|_| {
                [
                    (0.5 + r.gaussian(0.0, 0.05).unwrap()).clamp(0.0, 1.0),
                    (0.2 + r.gaussian(0.0, 0.05).unwrap()).clamp(0.0, 1.0),
                    r.gaussian(0.0, 0.05).unwrap().clamp(0.0, 1.0),
                ]
            })
            .collect();
        let set = train_detectors(&selfs, &DetectorParams::default(), &mut rng(22)).unwrap();
        let probe = [0.1, 0.9, 1.0];
        // Brute-force oracle over the trained memory.
        let oracle = set
            .memory
            .iter()
            .map(|d| 1.0 - d.center.iter().zip(&probe).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / 3f64.sqrt())
            .fold(f64::NEG_INFINITY, f64::max);
        let v = set.classify(&probe).unwrap();
        assert!((v.best_affinity - oracle.max(0.0)).abs() < 1e-12);
        assert!(!v.matched_self);
    }
}
