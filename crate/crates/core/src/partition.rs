//! Entity-level random partitioning for sub-sample and aggregate.
//!
//! Entities (never individual entity-year rows) are split into `M` disjoint,
//! near-equal partitions: a seeded Fisher–Yates shuffle followed by
//! round-robin assignment. The ChaCha stream underneath is counter-based, so
//! plans reproduce exactly across platforms given the same seed. Seeds come
//! from server configuration or a test harness only — never from clients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::panel::PanelDataset;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("M = {m} exceeds entity count {entities}")]
    TooManyPartitions { m: u32, entities: usize },
    #[error("M must be at least 2, got {0}")]
    InvalidM(u32),
}

/// Immutable assignment of every entity to exactly one partition.
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    m: u32,
    /// Entity id -> partition index in 0..m.
    assignment: Vec<u32>,
    seed: u64,
}

impl PartitionPlan {
    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn partition_of(&self, entity: u32) -> u32 {
        self.assignment[entity as usize]
    }

    pub fn entities_in(&self, partition: u32) -> Vec<u32> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == partition)
            .map(|(e, _)| e as u32)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.m as usize];
        for &p in &self.assignment {
            sizes[p as usize] += 1;
        }
        sizes
    }
}

/// Uniform random split of `data`'s entities into `m` partitions.
pub fn partition_entities(
    data: &PanelDataset,
    m: u32,
    seed: u64,
) -> Result<PartitionPlan, PartitionError> {
    if m < 2 {
        return Err(PartitionError::InvalidM(m));
    }
    let n = data.n_entities();
    if m as usize > n {
        return Err(PartitionError::TooManyPartitions { m, entities: n });
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher–Yates: unbiased permutation.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut assignment = vec![0u32; n];
    for (pos, &entity) in order.iter().enumerate() {
        assignment[entity as usize] = (pos % m as usize) as u32;
    }
    Ok(PartitionPlan {
        m,
        assignment,
        seed,
    })
}
