//! Shared simulation generators and independent numerical oracles for the
//! verification test suites.
#![allow(dead_code)]

use paneldp_core::panel::{CellValue, PanelBuilder, PanelDataset};
use paneldp_core::schema::{Schema, VariableSchema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn sim_schema() -> Schema {
    Schema::new(vec![
        VariableSchema::entity("id"),
        VariableSchema::year("year"),
        VariableSchema::numeric("x"),
        VariableSchema::numeric("y"),
    ])
    .unwrap()
}

/// Panel with an entity-level binary regressor and a constant gap:
/// y_it = 0.5 + gap * x_i + sigma * noise.
pub fn gap_panel(n_entities: usize, years: i32, gap: f64, sigma: f64, seed: u64) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut b = PanelBuilder::new(sim_schema());
    for e in 0..n_entities {
        let x = if rng.gen::<bool>() { 1.0 } else { 0.0 };
        for t in 1..=years {
            let y = 0.5 + gap * x + normal.sample(&mut rng);
            b.push_row(&format!("e{e}"), t, &[CellValue::Num(x), CellValue::Num(y)])
                .unwrap();
        }
    }
    b.finish().unwrap()
}

/// Panel whose coefficient on x follows a year path beta(t):
/// y_it = 0.5 + beta(t) * x_i + sigma * noise.
pub fn trend_panel(
    n_entities: usize,
    years: i32,
    beta: impl Fn(i32) -> f64,
    sigma: f64,
    seed: u64,
) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut b = PanelBuilder::new(sim_schema());
    for e in 0..n_entities {
        let x = if rng.gen::<bool>() { 1.0 } else { 0.0 };
        for t in 1..=years {
            let y = 0.5 + beta(t) * x + normal.sample(&mut rng);
            b.push_row(&format!("e{e}"), t, &[CellValue::Num(x), CellValue::Num(y)])
                .unwrap();
        }
    }
    b.finish().unwrap()
}

pub const SIM_MODEL: &str = "response y\npredictor x\n";

// ---- independent regression oracles ------------------------------------

/// Solve A x = b by Gauss-Jordan with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        for x in aug[col].iter_mut() {
            *x /= p;
        }
        for i in 0..n {
            if i != col {
                let f = aug[i][col];
                for j in 0..=n {
                    aug[i][j] -= f * aug[col][j];
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n]).collect()
}

/// Normal-equations OLS with one iterative-refinement pass.
pub fn normal_equations_beta(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = cols.len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for a in 0..k {
        for b in 0..k {
            xtx[a][b] = cols[a].iter().zip(&cols[b]).map(|(x, z)| x * z).sum();
        }
        xty[a] = cols[a].iter().zip(y).map(|(x, z)| x * z).sum();
    }
    let mut beta = solve(&xtx, &xty);
    let mut residual = xty.clone();
    for a in 0..k {
        for b in 0..k {
            residual[a] -= xtx[a][b] * beta[b];
        }
    }
    let corr = solve(&xtx, &residual);
    for (b, c) in beta.iter_mut().zip(corr) {
        *b += c;
    }
    beta
}

/// Direct CR1 clustered sandwich from first principles.
pub fn sandwich_oracle(cols: &[Vec<f64>], y: &[f64], beta: &[f64], cluster: &[u32]) -> Vec<f64> {
    let n = y.len();
    let k = cols.len();
    let resid: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..k).map(|j| beta[j] * cols[j][i]).sum::<f64>())
        .collect();
    let mut xtx = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            xtx[a][b] = cols[a].iter().zip(&cols[b]).map(|(x, z)| x * z).sum();
        }
    }
    let mut inv = vec![vec![0.0; k]; k];
    for j in 0..k {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        let col = solve(&xtx, &e);
        for i in 0..k {
            inv[i][j] = col[i];
        }
    }
    use std::collections::BTreeMap;
    let mut scores: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for i in 0..n {
        let s = scores.entry(cluster[i]).or_insert_with(|| vec![0.0; k]);
        for a in 0..k {
            s[a] += resid[i] * cols[a][i];
        }
    }
    let g = scores.len() as f64;
    let mut meat = vec![vec![0.0; k]; k];
    for s in scores.values() {
        for a in 0..k {
            for b in 0..k {
                meat[a][b] += s[a] * s[b];
            }
        }
    }
    let c = (g / (g - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));
    let mut v = vec![0.0; k];
    for j in 0..k {
        let mut acc = 0.0;
        for a in 0..k {
            for b in 0..k {
                acc += inv[j][a] * meat[a][b] * inv[b][j];
            }
        }
        v[j] = (c * acc).max(0.0).sqrt();
    }
    v
}

/// Random well-conditioned regression instance: intercept plus standard
/// normal columns, Gaussian response.
pub fn random_regression_instance(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
) -> (Vec<(String, Vec<f64>)>, Vec<f64>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut cols = vec![("(Intercept)".to_string(), vec![1.0; n])];
    for j in 1..k {
        let v: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        cols.push((format!("x{j}"), v));
    }
    let beta: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, (_, col)) in cols.iter().enumerate() {
                acc += beta[j] * col[i];
            }
            acc + 0.5 * normal.sample(rng)
        })
        .collect();
    (cols, y)
}

/// Rebuild a simulation panel with one entity's responses negated — an
/// entity-level neighboring database.
pub fn flip_entity_response(data: &PanelDataset, entity: u32) -> PanelDataset {
    let ycol = data.schema().index_of("y").unwrap();
    let mut b = PanelBuilder::new(sim_schema());
    for e in 0..data.n_entities() as u32 {
        for &row in data.rows_of_entity(e) {
            let mut cells = data.row_cells(row);
            if e == entity {
                if let CellValue::Num(v) = cells[ycol - 2] {
                    cells[ycol - 2] = CellValue::Num(-v);
                }
            }
            b.push_row(data.entity_label(e), data.year_of_row(row), &cells)
                .unwrap();
        }
    }
    b.finish().unwrap()
}
