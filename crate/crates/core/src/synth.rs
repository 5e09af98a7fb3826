//! Synthetic packet streams and the two packet samplers.
//!
//! A stream is a sequence of flow identifiers, one per packet, built from a
//! list of flow sizes by an [`Interleaver`]. Deterministic 1-out-of-k
//! sampling keeps the packets whose 0-based index is congruent to the phase
//! modulo `k`; Bernoulli thinning keeps every packet independently with
//! probability `p` and serves as the probabilistic reference.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{check_probability, Error, Result};
use crate::registry::{Named, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketStream {
    packets: Vec<FlowId>,
    flow_sizes: Vec<u64>,
}

impl PacketStream {
    pub fn packets(&self) -> &[FlowId] {
        &self.packets
    }

    /// Sizes of the generating flows, indexed by flow id.
    pub fn flow_sizes(&self) -> &[u64] {
        &self.flow_sizes
    }

    pub fn total_packets(&self) -> u64 {
        self.packets.len() as u64
    }

    pub fn flow_count(&self) -> usize {
        self.flow_sizes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingConfig {
    k: u64,
    phase: u64,
    seed: u64,
}

impl SamplingConfig {
    pub fn new(k: u64, phase: u64, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("k", "sampling period must be at least 1"));
        }
        if phase >= k {
            return Err(Error::param("phase", format!("{phase} is not in [0, {k})")));
        }
        Ok(Self { k, phase, seed })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn phase(&self) -> u64 {
        self.phase
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sampling rate `1/k`.
    pub fn p(&self) -> f64 {
        1.0 / self.k as f64
    }
}

/// Streaming form of the 1-out-of-k index rule, for inputs that are never
/// held in memory.
#[derive(Debug, Clone)]
pub struct IndexSampler {
    k: u64,
    phase: u64,
    index: u64,
}

impl IndexSampler {
    pub fn new(config: &SamplingConfig) -> Self {
        Self {
            k: config.k,
            phase: config.phase,
            index: 0,
        }
    }

    /// Advances past one packet and reports whether it is selected.
    pub fn select(&mut self) -> bool {
        let keep = self.index % self.k == self.phase;
        self.index += 1;
        keep
    }
}

pub trait Interleaver: Named + Send + Sync {
    fn interleave(&self, flow_sizes: &[u64], seed: u64) -> Result<PacketStream>;
}

/// Uniformly random permutation of the packet multiset.
pub struct Shuffle;

impl Named for Shuffle {
    fn name(&self) -> &'static str {
        "shuffle"
    }
}

impl Interleaver for Shuffle {
    fn interleave(&self, flow_sizes: &[u64], seed: u64) -> Result<PacketStream> {
        check_sizes(flow_sizes)?;
        let total: u64 = flow_sizes.iter().sum();
        let mut packets = Vec::with_capacity(total as usize);
        for (i, &size) in flow_sizes.iter().enumerate() {
            packets.extend(std::iter::repeat_n(FlowId(i as u32), size as usize));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        packets.shuffle(&mut rng);
        Ok(PacketStream {
            packets,
            flow_sizes: flow_sizes.to_vec(),
        })
    }
}

/// One packet from every still-live flow per round, in flow order.
pub struct RoundRobin;

impl Named for RoundRobin {
    fn name(&self) -> &'static str {
        "round_robin"
    }
}

impl Interleaver for RoundRobin {
    fn interleave(&self, flow_sizes: &[u64], _seed: u64) -> Result<PacketStream> {
        check_sizes(flow_sizes)?;
        let total: u64 = flow_sizes.iter().sum();
        let mut packets = Vec::with_capacity(total as usize);
        let mut live: Vec<(u32, u64)> = flow_sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| (i as u32, s))
            .collect();
        while !live.is_empty() {
            for (id, left) in live.iter_mut() {
                packets.push(FlowId(*id));
                *left -= 1;
            }
            live.retain(|&(_, left)| left > 0);
        }
        Ok(PacketStream {
            packets,
            flow_sizes: flow_sizes.to_vec(),
        })
    }
}

fn check_sizes(flow_sizes: &[u64]) -> Result<()> {
    if flow_sizes.is_empty() {
        return Err(Error::EmptyInput("no flows to interleave"));
    }
    if flow_sizes.len() > u32::MAX as usize {
        return Err(Error::param("flow_sizes", "more than 2^32 flows"));
    }
    if let Some(i) = flow_sizes.iter().position(|&s| s == 0) {
        return Err(Error::param("flow_sizes", format!("flow {i} has size 0")));
    }
    Ok(())
}

pub fn interleavers() -> Registry<dyn Interleaver> {
    let mut reg: Registry<dyn Interleaver> = Registry::new("interleaver");
    reg.register(Box::new(Shuffle))
        .register(Box::new(RoundRobin));
    reg
}

/// Interleaves with the strategy registered under `mode`.
pub fn interleave(flow_sizes: &[u64], mode: &str, seed: u64) -> Result<PacketStream> {
    interleavers().get(mode)?.interleave(flow_sizes, seed)
}

/// Packets at 0-based indices congruent to `phase` modulo `k`, in stream order.
pub fn deterministic_sample(stream: &PacketStream, config: &SamplingConfig) -> Vec<FlowId> {
    stream
        .packets
        .iter()
        .skip(config.phase as usize)
        .step_by(config.k as usize)
        .copied()
        .collect()
}

/// Independent per-packet retention with probability `p`; returns the
/// retained count of every flow, zeros included.
pub fn bernoulli_thin(flow_sizes: &[u64], p: f64, seed: u64) -> Result<Vec<u64>> {
    check_probability("p", p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    flow_sizes
        .iter()
        .map(|&size| {
            if p == 1.0 {
                return Ok(size);
            }
            let law = Binomial::new(size, p).map_err(|e| Error::param("p", e.to_string()))?;
            Ok(law.sample(&mut rng))
        })
        .collect()
}

/// Per-flow sampled counts (zeros included) for a list of flow sizes.
pub trait PacketSampler: Named + Send + Sync {
    fn sampled_counts(&self, flow_sizes: &[u64], config: &SamplingConfig) -> Result<Vec<u64>>;
}

/// Interleave, then apply the 1-out-of-k index rule.
pub struct DeterministicSampling {
    interleaver: Box<dyn Interleaver>,
}

impl DeterministicSampling {
    pub fn new(interleaver: Box<dyn Interleaver>) -> Self {
        Self { interleaver }
    }
}

impl Default for DeterministicSampling {
    fn default() -> Self {
        Self::new(Box::new(Shuffle))
    }
}

impl Named for DeterministicSampling {
    fn name(&self) -> &'static str {
        "deterministic"
    }
}

impl PacketSampler for DeterministicSampling {
    fn sampled_counts(&self, flow_sizes: &[u64], config: &SamplingConfig) -> Result<Vec<u64>> {
        let stream = self.interleaver.interleave(flow_sizes, config.seed)?;
        let mut counts = vec![0u64; flow_sizes.len()];
        for id in deterministic_sample(&stream, config) {
            counts[id.0 as usize] += 1;
        }
        Ok(counts)
    }
}

pub struct BernoulliThinning;

impl Named for BernoulliThinning {
    fn name(&self) -> &'static str {
        "bernoulli"
    }
}

impl PacketSampler for BernoulliThinning {
    fn sampled_counts(&self, flow_sizes: &[u64], config: &SamplingConfig) -> Result<Vec<u64>> {
        bernoulli_thin(flow_sizes, config.p(), config.seed)
    }
}

pub fn samplers() -> Registry<dyn PacketSampler> {
    let mut reg: Registry<dyn PacketSampler> = Registry::new("packet sampler");
    reg.register(Box::new(DeterministicSampling::default()))
        .register(Box::new(BernoulliThinning));
    reg
}
