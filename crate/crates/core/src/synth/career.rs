//! Career trajectories as (G, Z, W) triples.
//!
//! A career is the sequence of agency labels over the panel horizon, with a
//! reserved not-working pseudo-agency (label 0) for years out of the
//! workforce. The triple is a lossless encoding:
//!
//! * `W` — the run-length-collapsed sequence of visited labels;
//! * `Z` — the 1-based years at which the label changes (first year excluded);
//! * `G` — the number of distinct labels appearing in `W`, counting the
//!   not-working pseudo-agency.
//!
//! The fitted model samples the triple sequentially: G from its empirical
//! distribution; Z given G from a smoothed empirical pattern distribution
//! (mass `alpha` spread uniformly over valid unseen patterns so unobserved
//! transition-year patterns stay reachable); W from an order-one Markov
//! chain, rejection-constrained to have exactly G distinct labels.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;

use super::SynthError;
use crate::panel::PanelDataset;
use crate::schema::VariableKind;

/// Agency label; 0 is the reserved not-working pseudo-agency.
pub type Label = u32;

pub const NOT_WORKING: Label = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CareerTriple {
    /// Distinct labels in `w`, including not-working.
    pub g: u32,
    /// Strictly increasing 1-based transition years, each in 2..=horizon.
    pub z: Vec<u32>,
    /// Visited labels, no two consecutive equal; `w.len() == z.len() + 1`.
    pub w: Vec<Label>,
}

/// Collapse a full-horizon label sequence into its triple.
pub fn career_decompose(seq: &[Label]) -> CareerTriple {
    assert!(!seq.is_empty(), "career sequence must be non-empty");
    let mut w = vec![seq[0]];
    let mut z = Vec::new();
    for (i, &label) in seq.iter().enumerate().skip(1) {
        if label != seq[i - 1] {
            z.push(i as u32 + 1); // 1-based year of the move
            w.push(label);
        }
    }
    let g = w.iter().collect::<HashSet<_>>().len() as u32;
    CareerTriple { g, z, w }
}

/// Exact inverse of [`career_decompose`].
pub fn career_reconstruct(triple: &CareerTriple, horizon: usize) -> Result<Vec<Label>, SynthError> {
    if triple.w.len() != triple.z.len() + 1 {
        return Err(SynthError::InvalidTriple(format!(
            "|W| = {} but |Z| + 1 = {}",
            triple.w.len(),
            triple.z.len() + 1
        )));
    }
    let distinct = triple.w.iter().collect::<HashSet<_>>().len() as u32;
    if distinct != triple.g {
        return Err(SynthError::InvalidTriple(format!(
            "G = {} but W holds {} distinct labels",
            triple.g, distinct
        )));
    }
    for pair in triple.w.windows(2) {
        if pair[0] == pair[1] {
            return Err(SynthError::InvalidTriple(
                "consecutive W labels equal".into(),
            ));
        }
    }
    let mut prev = 1u32;
    for &zy in &triple.z {
        if zy <= prev || zy as usize > horizon {
            return Err(SynthError::InvalidTriple(format!(
                "transition year {zy} out of order or beyond horizon {horizon}"
            )));
        }
        prev = zy;
    }
    let mut seq = Vec::with_capacity(horizon);
    let mut wi = 0;
    for year in 1..=horizon as u32 {
        if wi < triple.z.len() && triple.z[wi] == year {
            wi += 1;
        }
        seq.push(triple.w[wi]);
    }
    Ok(seq)
}

#[derive(Debug, Clone, Copy)]
pub struct CareerModelConfig {
    /// Mass reserved for unobserved Z|G patterns.
    pub alpha: f64,
    /// Rejection attempts per career before giving up.
    pub rejection_cap: u32,
}

impl Default for CareerModelConfig {
    fn default() -> Self {
        CareerModelConfig {
            alpha: 0.05,
            rejection_cap: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CareerModel {
    pub horizon: usize,
    /// Number of agency levels (labels run 0..=n_agencies).
    pub n_agencies: u32,
    g_dist: Vec<(u32, f64)>,
    z_given_g: BTreeMap<u32, Vec<(Vec<u32>, f64)>>,
    init: Vec<(Label, f64)>,
    trans: BTreeMap<Label, Vec<(Label, f64)>>,
    config: CareerModelConfig,
}

impl CareerModel {
    pub fn g_probability(&self, g: u32) -> f64 {
        self.g_dist
            .iter()
            .find(|(v, _)| *v == g)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    pub fn transition_probability(&self, from: Label, to: Label) -> f64 {
        self.trans
            .get(&from)
            .and_then(|row| row.iter().find(|(l, _)| *l == to).map(|(_, p)| *p))
            .unwrap_or(0.0)
    }
}

/// Extract per-entity label sequences over the panel horizon. Years without a
/// row for the entity (and rows with a missing agency cell) map to the
/// not-working label.
pub fn career_sequences(
    data: &PanelDataset,
    agency_var: &str,
) -> Result<Vec<Vec<Label>>, SynthError> {
    let col = data
        .schema()
        .index_of(agency_var)
        .ok_or_else(|| SynthError::UnknownVariable(agency_var.to_string()))?;
    if data.schema().variables()[col].kind != VariableKind::Categorical {
        return Err(SynthError::KindMismatch(agency_var.to_string()));
    }
    let (t_min, t_max) = data.year_range();
    let horizon = (t_max - t_min + 1) as usize;
    let mut sequences = Vec::with_capacity(data.n_entities());
    for e in 0..data.n_entities() as u32 {
        let mut seq = vec![NOT_WORKING; horizon];
        for &row in data.rows_of_entity(e) {
            let slot = (data.year_of_row(row) - t_min) as usize;
            seq[slot] = match data.level_at(col, row) {
                Some(level) => level + 1,
                None => NOT_WORKING,
            };
        }
        sequences.push(seq);
    }
    Ok(sequences)
}

/// Fit the sequential (G, Z, W) model from a confidential panel.
pub fn fit_career_model(
    data: &PanelDataset,
    agency_var: &str,
    config: CareerModelConfig,
) -> Result<CareerModel, SynthError> {
    let col = data.schema().index_of(agency_var).unwrap_or(usize::MAX);
    let n_agencies = data
        .schema()
        .variables()
        .get(col)
        .map(|v| v.levels.len() as u32)
        .unwrap_or(0);
    let sequences = career_sequences(data, agency_var)?;
    let horizon = sequences[0].len();

    let mut g_counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut z_counts: BTreeMap<u32, BTreeMap<Vec<u32>, usize>> = BTreeMap::new();
    let mut init_counts: BTreeMap<Label, usize> = BTreeMap::new();
    let mut trans_counts: BTreeMap<Label, BTreeMap<Label, usize>> = BTreeMap::new();

    for seq in &sequences {
        let triple = career_decompose(seq);
        *g_counts.entry(triple.g).or_insert(0) += 1;
        *z_counts
            .entry(triple.g)
            .or_default()
            .entry(triple.z.clone())
            .or_insert(0) += 1;
        *init_counts.entry(triple.w[0]).or_insert(0) += 1;
        for pair in triple.w.windows(2) {
            *trans_counts
                .entry(pair[0])
                .or_default()
                .entry(pair[1])
                .or_insert(0) += 1;
        }
    }

    let n = sequences.len() as f64;
    let g_dist = g_counts
        .into_iter()
        .map(|(g, c)| (g, c as f64 / n))
        .collect();
    let z_given_g = z_counts
        .into_iter()
        .map(|(g, patterns)| {
            let total: usize = patterns.values().sum();
            let list = patterns
                .into_iter()
                .map(|(z, c)| (z, c as f64 / total as f64))
                .collect();
            (g, list)
        })
        .collect();
    let init_total: usize = init_counts.values().sum();
    let init = init_counts
        .into_iter()
        .map(|(l, c)| (l, c as f64 / init_total as f64))
        .collect();
    let trans = trans_counts
        .into_iter()
        .map(|(from, row)| {
            let total: usize = row.values().sum();
            let list = row
                .into_iter()
                .map(|(to, c)| (to, c as f64 / total as f64))
                .collect();
            (from, list)
        })
        .collect();

    Ok(CareerModel {
        horizon,
        n_agencies,
        g_dist,
        z_given_g,
        init,
        trans,
        config,
    })
}

fn pick<'a, T, R: Rng + ?Sized>(dist: &'a [(T, f64)], rng: &mut R) -> &'a T {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (item, p) in dist {
        cum += p;
        if u < cum {
            return item;
        }
    }
    &dist.last().expect("non-empty distribution").0
}

/// Draw full-horizon career sequences from a fitted model.
///
/// Each career rejects jointly on (Z, W): a fresh Z pattern is drawn per
/// attempt, a single chain walk tries to realize it, and the draw is kept
/// only when the walk has exactly G distinct labels. This conditions the
/// sequential model on self-consistency; patterns the fitted chain cannot
/// realize are simply never emitted.
pub fn sample_careers<R: Rng + ?Sized>(
    model: &CareerModel,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Label>>, SynthError> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let g = *pick(&model.g_dist, rng);
        let mut done = false;
        let mut last_len = 0usize;
        for _ in 0..model.config.rejection_cap {
            let z = sample_z(model, g, rng);
            last_len = z.len();
            if let Some(w) = try_chain(model, g, z.len() + 1, rng) {
                let triple = CareerTriple { g, z, w };
                out.push(career_reconstruct(&triple, model.horizon)?);
                done = true;
                break;
            }
        }
        if !done {
            return Err(SynthError::SamplingStalled {
                g,
                z_len: last_len,
                attempts: model.config.rejection_cap,
            });
        }
    }
    Ok(out)
}

fn sample_z<R: Rng + ?Sized>(model: &CareerModel, g: u32, rng: &mut R) -> Vec<u32> {
    let observed = model.z_given_g.get(&g);
    let use_observed = match observed {
        Some(patterns) if !patterns.is_empty() => rng.gen::<f64>() >= model.config.alpha,
        _ => false,
    };
    if use_observed {
        return pick(observed.unwrap(), rng).clone();
    }
    // Uniform valid pattern, preferring one not already observed.
    let horizon = model.horizon as u32;
    let observed_set: HashSet<&Vec<u32>> = observed
        .map(|ps| ps.iter().map(|(z, _)| z).collect())
        .unwrap_or_default();
    for attempt in 0..50 {
        let len = if g <= 1 {
            0
        } else {
            rng.gen_range((g - 1)..=(horizon - 1)) as usize
        };
        // distinct years from {2..=horizon}
        let mut pool: Vec<u32> = (2..=horizon).collect();
        for i in 0..len.min(pool.len()) {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut z: Vec<u32> = pool[..len].to_vec();
        z.sort_unstable();
        if !observed_set.contains(&z) || attempt == 49 {
            return z;
        }
    }
    unreachable!("loop returns on final attempt");
}

/// One chain walk of the requested length; `None` when the walk dead-ends or
/// misses the distinct-label constraint.
fn try_chain<R: Rng + ?Sized>(
    model: &CareerModel,
    g: u32,
    len: usize,
    rng: &mut R,
) -> Option<Vec<Label>> {
    let mut w = Vec::with_capacity(len);
    w.push(*pick(&model.init, rng));
    while w.len() < len {
        let current = *w.last().unwrap();
        match model.trans.get(&current) {
            Some(row) if !row.is_empty() => w.push(*pick(row, rng)),
            _ => return None,
        }
    }
    let distinct = w.iter().collect::<HashSet<_>>().len() as u32;
    (distinct == g).then_some(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{CellValue, PanelBuilder};
    use crate::schema::{Schema, VariableSchema};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Labels for readability: 0 = not working, 1 = A, 2 = B, 3 = C.
    const A: Label = 1;
    const B: Label = 2;
    const C: Label = 3;

    #[test]
    fn decompose_worked_examples() {
        // "0 0 A A 0 0 C C C C"
        let e1 = vec![0, 0, A, A, 0, 0, C, C, C, C];
        let t = career_decompose(&e1);
        assert_eq!(t.g, 3);
        assert_eq!(t.z, vec![3, 5, 7]);
        assert_eq!(t.w, vec![0, A, 0, C]);

        // "0 0 0 0 0 0 0 0 0 B"
        let e2 = vec![0, 0, 0, 0, 0, 0, 0, 0, 0, B];
        let t = career_decompose(&e2);
        assert_eq!(t.g, 2);
        assert_eq!(t.z, vec![10]);
        assert_eq!(t.w, vec![0, B]);

        // "A 0 B C C A A A 0 0"
        let e3 = vec![A, 0, B, C, C, A, A, A, 0, 0];
        let t = career_decompose(&e3);
        assert_eq!(t.g, 4);
        assert_eq!(t.z, vec![2, 3, 4, 6, 9]);
        assert_eq!(t.w, vec![A, 0, B, C, A, 0]);
    }

    #[test]
    fn reconstruct_worked_examples() {
        let t = CareerTriple {
            g: 3,
            z: vec![3, 5, 7],
            w: vec![0, A, 0, C],
        };
        assert_eq!(
            career_reconstruct(&t, 10).unwrap(),
            vec![0, 0, A, A, 0, 0, C, C, C, C]
        );
        let constant = CareerTriple {
            g: 1,
            z: vec![],
            w: vec![A],
        };
        assert_eq!(career_reconstruct(&constant, 5).unwrap(), vec![A; 5]);
    }

    #[test]
    fn reconstruct_validates_triple() {
        let bad_len = CareerTriple {
            g: 2,
            z: vec![2, 3],
            w: vec![A, B],
        };
        assert!(career_reconstruct(&bad_len, 5).is_err());
        let bad_g = CareerTriple {
            g: 3,
            z: vec![2],
            w: vec![A, B],
        };
        assert!(career_reconstruct(&bad_g, 5).is_err());
        let bad_repeat = CareerTriple {
            g: 1,
            z: vec![2],
            w: vec![A, A],
        };
        assert!(career_reconstruct(&bad_repeat, 5).is_err());
        let beyond = CareerTriple {
            g: 2,
            z: vec![7],
            w: vec![A, B],
        };
        assert!(career_reconstruct(&beyond, 5).is_err());
    }

    #[test]
    fn roundtrip_random_careers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let horizon = rng.gen_range(1..=24usize);
            let mut seq = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                seq.push(rng.gen_range(0..5u32));
            }
            let triple = career_decompose(&seq);
            assert_eq!(career_reconstruct(&triple, horizon).unwrap(), seq);
        }
    }

    fn panel_from_careers(careers: &[Vec<Label>]) -> PanelDataset {
        let schema = Schema::new(vec![
            VariableSchema::entity("id"),
            VariableSchema::year("year"),
            VariableSchema::categorical("agency", &["A", "B", "C"]),
        ])
        .unwrap();
        let mut b = PanelBuilder::new(schema);
        for (e, seq) in careers.iter().enumerate() {
            for (slot, &label) in seq.iter().enumerate() {
                if label != NOT_WORKING {
                    let name = ["A", "B", "C"][label as usize - 1];
                    b.push_row(
                        &format!("e{e}"),
                        slot as i32 + 1,
                        &[CellValue::Cat(name.into())],
                    )
                    .unwrap();
                }
            }
        }
        b.finish().unwrap()
    }

    #[test]
    fn degenerate_training_reproduces_exactly() {
        // One career repeated; alpha = 0 keeps the empirical distributions
        // pure. The career spans the whole panel window (someone must work
        // in the first and last years for the horizon to be observable).
        let career = vec![A, A, 0, 0, C, C, C, C];
        let careers: Vec<Vec<Label>> = (0..20).map(|_| career.clone()).collect();
        let data = panel_from_careers(&careers);
        let model = fit_career_model(
            &data,
            "agency",
            CareerModelConfig {
                alpha: 0.0,
                rejection_cap: 1000,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples = sample_careers(&model, 200, &mut rng).unwrap();
        for s in samples {
            assert_eq!(s, career);
        }
    }

    #[test]
    fn sampled_g_matches_fitted_distribution() {
        // Mix of careers with G = 1 and G = 2.
        let mut careers = Vec::new();
        for i in 0..100 {
            if i % 4 == 0 {
                careers.push(vec![A; 6]); // G = 1
            } else {
                careers.push(vec![A, A, A, B, B, B]); // G = 2
            }
        }
        let data = panel_from_careers(&careers);
        let model = fit_career_model(
            &data,
            "agency",
            CareerModelConfig {
                alpha: 0.0,
                rejection_cap: 1000,
            },
        )
        .unwrap();
        assert!((model.g_probability(1) - 0.25).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = sample_careers(&model, 50_000, &mut rng).unwrap();
        let g1 = samples
            .iter()
            .filter(|s| career_decompose(s).g == 1)
            .count() as f64
            / samples.len() as f64;
        // chi-square sanity at p > 0.01 for a binomial is ~3 sigma
        let sigma = (0.25 * 0.75 / 50_000f64).sqrt();
        assert!((g1 - 0.25).abs() < 3.0 * sigma + 1e-9, "freq {g1}");
    }

    #[test]
    fn markov_transitions_recovered() {
        // Careers alternating A->B and A->C with known proportions.
        let mut careers = Vec::new();
        for i in 0..300 {
            if i % 3 == 0 {
                careers.push(vec![A, A, A, B, B, B]);
            } else {
                careers.push(vec![A, A, A, C, C, C]);
            }
        }
        let data = panel_from_careers(&careers);
        let model = fit_career_model(&data, "agency", CareerModelConfig::default()).unwrap();
        assert!((model.transition_probability(A, B) - 1.0 / 3.0).abs() < 1e-9);
        assert!((model.transition_probability(A, C) - 2.0 / 3.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples = sample_careers(&model, 30_000, &mut rng).unwrap();
        let mut ab = 0usize;
        let mut ac = 0usize;
        for s in samples {
            let w = career_decompose(&s).w;
            for pair in w.windows(2) {
                if pair[0] == A && pair[1] == B {
                    ab += 1;
                }
                if pair[0] == A && pair[1] == C {
                    ac += 1;
                }
            }
        }
        let frac = ab as f64 / (ab + ac) as f64;
        assert!((frac - 1.0 / 3.0).abs() < 0.02, "A->B fraction {frac}");
    }

    #[test]
    fn no_consecutive_repeats_in_samples() {
        let careers = vec![
            vec![0, A, 0, B, B, 0],
            vec![A, A, B, B, 0, 0],
            vec![B, B, B, A, A, C],
            vec![0, 0, C, C, A, A],
        ];
        let data = panel_from_careers(&careers);
        let model = fit_career_model(&data, "agency", CareerModelConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let samples = sample_careers(&model, 10_000, &mut rng).unwrap();
        for s in samples {
            let w = career_decompose(&s).w;
            for pair in w.windows(2) {
                assert_ne!(pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn alpha_mass_reaches_unobserved_transition_patterns() {
        // training shows only z = (3); with alpha > 0 the sampler must also
        // emit valid unseen patterns like (2) and (4)
        let careers: Vec<Vec<Label>> = (0..50).map(|_| vec![A, A, B, B]).collect();
        let data = panel_from_careers(&careers);
        let model = fit_career_model(
            &data,
            "agency",
            CareerModelConfig {
                alpha: 0.9,
                rejection_cap: 1000,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let samples = sample_careers(&model, 2000, &mut rng).unwrap();
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            seen.insert(career_decompose(s).z);
        }
        assert!(seen.contains(&vec![3]), "observed pattern still present");
        assert!(
            seen.len() > 1,
            "smoothing must give unobserved Z patterns positive probability"
        );
    }

    #[test]
    fn unsatisfiable_constraint_reports_stall() {
        // Hand-built model whose G is unreachable: the chain alternates two
        // labels, so no walk ever visits three distinct ones.
        let model = CareerModel {
            horizon: 6,
            n_agencies: 3,
            g_dist: vec![(3, 1.0)],
            z_given_g: BTreeMap::from([(3, vec![(vec![2, 4], 1.0)])]),
            init: vec![(A, 1.0)],
            trans: BTreeMap::from([(A, vec![(B, 1.0)]), (B, vec![(A, 1.0)])]),
            config: CareerModelConfig {
                alpha: 0.0,
                rejection_cap: 50,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match sample_careers(&model, 1, &mut rng) {
            Err(SynthError::SamplingStalled { g, attempts, .. }) => {
                assert_eq!(g, 3);
                assert_eq!(attempts, 50);
            }
            other => panic!("expected SamplingStalled, got {other:?}"),
        }
    }
}
