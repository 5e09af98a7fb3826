//! Packet-to-flow aggregation and flow-size histograms.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Canonical flow identifier. Opaque tokens are used verbatim; 5-tuples are
/// lowercased and joined with `|`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey(String);

impl FlowKey {
    pub fn new(token: impl Into<String>) -> Result<Self> {
        let token = token.into();
        if token.is_empty() {
            return Err(Error::param("flow_key", "empty key"));
        }
        Ok(Self(token))
    }

    /// Unidirectional 5-tuple key; `(a, b, ...)` and `(b, a, ...)` differ.
    pub fn from_five_tuple(
        src: &str,
        dst: &str,
        sport: &str,
        dport: &str,
        proto: &str,
    ) -> Result<Self> {
        let fields = [src, dst, sport, dport, proto];
        if let Some(i) = fields.iter().position(|f| f.trim().is_empty()) {
            return Err(Error::param(
                "flow_key",
                format!("5-tuple field {i} is empty"),
            ));
        }
        let joined = fields
            .iter()
            .map(|f| f.trim().to_lowercase())
            .collect::<Vec<_>>()
            .join("|");
        Ok(Self(joined))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// 64-bit digest used for table lookup and shard assignment.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.0.hash(&mut h);
        h.finish()
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub flow_key: FlowKey,
}

/// Number of flows of each size. For sampled traffic the count at `j` is
/// the number of flows sampled exactly `j` times and `total_flows` is the
/// number of sampled flows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowHistogram {
    counts: BTreeMap<u64, u64>,
    total_flows: u64,
    total_packets: u64,
}

impl FlowHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a histogram from `size -> count` pairs; zero counts are dropped.
    pub fn from_counts(pairs: impl IntoIterator<Item = (u64, u64)>) -> Result<Self> {
        let mut hist = Self::new();
        for (size, count) in pairs {
            if size == 0 {
                return Err(Error::param("size", "flow sizes start at 1"));
            }
            hist.add(size, count);
        }
        Ok(hist)
    }

    /// Histogram of per-flow sizes; flows of size zero (never observed) are
    /// skipped.
    pub fn from_flow_sizes<'a>(sizes: impl IntoIterator<Item = &'a u64>) -> Self {
        let mut hist = Self::new();
        for &s in sizes {
            if s > 0 {
                hist.add(s, 1);
            }
        }
        hist
    }

    fn add(&mut self, size: u64, count: u64) {
        if count == 0 {
            return;
        }
        *self.counts.entry(size).or_default() += count;
        self.total_flows += count;
        self.total_packets += size * count;
    }

    pub fn merge(&mut self, other: &FlowHistogram) {
        for (&size, &count) in &other.counts {
            self.add(size, count);
        }
    }

    /// Number of flows of exactly `size` packets.
    pub fn count(&self, size: u64) -> u64 {
        self.counts.get(&size).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn total_flows(&self) -> u64 {
        self.total_flows
    }

    pub fn total_packets(&self) -> u64 {
        self.total_packets
    }

    pub fn max_size(&self) -> Option<u64> {
        self.counts.keys().next_back().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.total_flows == 0
    }

    /// Flows with size in `[lo, hi)` (`hi = None` for unbounded).
    pub fn range(&self, lo: u64, hi: Option<u64>) -> impl Iterator<Item = (u64, u64)> + '_ {
        let upper = hi.unwrap_or(u64::MAX);
        self.counts.range(lo..upper).map(|(&s, &c)| (s, c))
    }

    /// One flow key per flow, repeated once per packet: the packet records
    /// this histogram would aggregate from.
    pub fn expand_records(&self) -> Vec<FlowKey> {
        let mut out = Vec::with_capacity(self.total_packets as usize);
        for (&size, &count) in &self.counts {
            for i in 0..count {
                let key = FlowKey(format!("s{size}n{i}"));
                out.extend(std::iter::repeat_n(key, size as usize));
            }
        }
        out
    }

    /// Writes `size<TAB>count` lines in ascending size order, no header.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (size, count) in &self.counts {
            writeln!(out, "{size}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut hist = Self::new();
        let mut last = 0u64;
        for (i, line) in input.lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |reason: &str| Error::Parse {
                line: line_no,
                reason: format!("{reason}: {line:?}"),
            };
            let mut fields = line.split('\t');
            let (Some(size), Some(count), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(parse_err("expected `size<TAB>count`"));
            };
            let size: u64 = size.trim().parse().map_err(|_| parse_err("bad size"))?;
            let count: u64 = count.trim().parse().map_err(|_| parse_err("bad count"))?;
            if size == 0 {
                return Err(parse_err("size must be at least 1"));
            }
            if size <= last {
                return Err(parse_err("sizes must be strictly ascending"));
            }
            last = size;
            hist.add(size, count);
        }
        Ok(hist)
    }
}

/// Complementary cdf `P(size >= j)` at tabulated sizes, optionally with
/// the number of flows it was estimated from.
#[derive(Debug, Clone, PartialEq)]
pub struct Ccdf {
    points: BTreeMap<u64, f64>,
    flows: Option<u64>,
}

impl Ccdf {
    /// Exact ccdf values, without sampling noise.
    pub fn from_map(points: BTreeMap<u64, f64>) -> Self {
        Self {
            points,
            flows: None,
        }
    }

    pub fn flows(&self) -> Option<u64> {
        self.flows
    }

    /// Binomial standard deviation of `ln P(size >= j)`; zero for exact
    /// ccdfs and untabulated points.
    pub fn log_sd(&self, j: u64) -> f64 {
        match (self.flows, self.get(j)) {
            (Some(n), Some(c)) if c > 0.0 && n > 0 => ((1.0 - c).max(0.0) / (n as f64 * c)).sqrt(),
            _ => 0.0,
        }
    }

    /// Value at `j`, or `None` if `j` is not a tabulated point.
    pub fn get(&self, j: u64) -> Option<f64> {
        self.points.get(&j).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.points.iter().map(|(&j, &v)| (j, v))
    }

    pub fn max_point(&self) -> Option<u64> {
        self.points.keys().next_back().copied()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest tabulated `j` with `P(size > j) <= 1 - q`.
    pub fn quantile(&self, q: f64) -> Option<u64> {
        self.points.keys().copied().find(|&j| {
            let above = self.points.get(&(j + 1)).copied().unwrap_or(0.0);
            above <= 1.0 - q + 1e-12
        })
    }
}

pub fn histogram_ccdf(hist: &FlowHistogram) -> Result<Ccdf> {
    let Some(max) = hist.max_size() else {
        return Err(Error::EmptyInput("histogram has no flows"));
    };
    let total = hist.total_flows() as f64;
    let mut points = BTreeMap::new();
    let mut at_least = hist.total_flows();
    for j in 1..=max {
        points.insert(j, at_least as f64 / total);
        at_least -= hist.count(j);
    }
    Ok(Ccdf {
        points,
        flows: Some(hist.total_flows()),
    })
}

/// Single-pass packet counter keyed by flow-key digest. Digest collisions
/// are resolved by comparing the canonical keys.
#[derive(Debug, Default)]
pub struct FlowAggregator {
    table: HashMap<u64, Vec<(FlowKey, u64)>>,
    malformed: u64,
}

impl FlowAggregator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: FlowKey) {
        let bucket = self.table.entry(key.digest()).or_default();
        match bucket.iter_mut().find(|(k, _)| *k == key) {
            Some((_, n)) => *n += 1,
            None => bucket.push((key, 1)),
        }
    }

    /// Counts a record that could not be parsed.
    pub fn push_malformed(&mut self) {
        self.malformed += 1;
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    pub fn distinct_flows(&self) -> usize {
        self.table.values().map(Vec::len).sum()
    }

    pub fn finish(self) -> FlowHistogram {
        let mut hist = FlowHistogram::new();
        for bucket in self.table.values() {
            for (_, n) in bucket {
                hist.add(*n, 1);
            }
        }
        hist
    }
}

pub fn aggregate(records: impl IntoIterator<Item = FlowKey>) -> FlowHistogram {
    let mut agg = FlowAggregator::new();
    for key in records {
        agg.push(key);
    }
    agg.finish()
}

/// Partitions records by key digest, aggregates the shards in parallel and
/// merges them in shard order. Equal to [`aggregate`] for any shard count.
pub fn aggregate_sharded(records: &[FlowKey], shards: usize) -> FlowHistogram {
    let shards = shards.max(1) as u64;
    let parts: Vec<FlowHistogram> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            aggregate(
                records
                    .iter()
                    .filter(|k| k.digest() % shards == shard)
                    .cloned(),
            )
        })
        .collect();
    let mut hist = FlowHistogram::new();
    for part in &parts {
        hist.merge(part);
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(tokens: &[&str]) -> Vec<FlowKey> {
        tokens.iter().map(|t| FlowKey::new(*t).unwrap()).collect()
    }

    #[test]
    fn counts_two_flows() {
        let hist = aggregate(keys(&["A", "A", "B"]));
        assert_eq!(hist.count(2), 1);
        assert_eq!(hist.count(1), 1);
        assert_eq!(hist.total_flows(), 2);
        assert_eq!(hist.total_packets(), 3);
    }

    #[test]
    fn empty_input() {
        let hist = aggregate(Vec::new());
        assert!(hist.is_empty());
        assert_eq!(hist.total_packets(), 0);
        assert!(matches!(histogram_ccdf(&hist), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn five_tuple_canonical() {
        let k = FlowKey::from_five_tuple("10.0.0.1", "10.0.0.2", "80", "443", "TCP").unwrap();
        assert_eq!(k.as_str(), "10.0.0.1|10.0.0.2|80|443|tcp");
        let rev = FlowKey::from_five_tuple("10.0.0.2", "10.0.0.1", "443", "80", "tcp").unwrap();
        assert_ne!(k, rev);
        assert!(FlowKey::from_five_tuple("a", "", "1", "2", "udp").is_err());
        assert!(FlowKey::new("").is_err());
    }

    #[test]
    fn ccdf_small_cases() {
        let h = FlowHistogram::from_counts([(1, 1), (2, 1)]).unwrap();
        let c = histogram_ccdf(&h).unwrap();
        assert_eq!(c.get(1), Some(1.0));
        assert_eq!(c.get(2), Some(0.5));

        let h = FlowHistogram::from_counts([(5, 4)]).unwrap();
        let c = histogram_ccdf(&h).unwrap();
        for j in 1..=5 {
            assert_eq!(c.get(j), Some(1.0));
        }
        assert_eq!(c.get(6), None);
        assert_eq!(c.len(), 5);
    }

    #[test]
    fn quantile_of_ccdf() {
        let h = FlowHistogram::from_counts([(1, 90), (2, 9), (10, 1)]).unwrap();
        let c = histogram_ccdf(&h).unwrap();
        assert_eq!(c.quantile(0.9), Some(1));
        assert_eq!(c.quantile(0.99), Some(2));
        assert_eq!(c.quantile(0.999), Some(10));
    }

    #[test]
    fn collisions_resolved_by_key() {
        // force two keys into one bucket
        let mut agg = FlowAggregator::new();
        let a = FlowKey::new("a").unwrap();
        let b = FlowKey::new("b").unwrap();
        agg.table.entry(7).or_default().push((a.clone(), 2));
        agg.table.get_mut(&7).unwrap().push((b.clone(), 1));
        let hist = agg.finish();
        assert_eq!(hist.count(2), 1);
        assert_eq!(hist.count(1), 1);
    }

    #[test]
    fn tsv_round_trip_and_errors() {
        let h = FlowHistogram::from_counts([(1, 10), (3, 2), (40, 1)]).unwrap();
        let mut buf = Vec::new();
        h.write_tsv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "1\t10\n3\t2\n40\t1\n"
        );
        assert_eq!(FlowHistogram::read_tsv(buf.as_slice()).unwrap(), h);

        for bad in ["1 10\n", "0\t3\n", "2\t1\n1\t1\n", "x\t1\n", "1\t2\t3\n"] {
            let err = FlowHistogram::read_tsv(bad.as_bytes()).unwrap_err();
            assert!(
                matches!(err, Error::Parse { .. }),
                "{bad:?}: {err}"
            );
        }
        let err = FlowHistogram::read_tsv("1\t1\n2\tz\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn sharded_equals_single_pass() {
        let records = keys(&["a", "b", "a", "c", "c", "c", "d", "a", "e"]);
        let single = aggregate(records.clone());
        for shards in [1, 2, 3, 8] {
            assert_eq!(aggregate_sharded(&records, shards), single);
        }
    }
}
