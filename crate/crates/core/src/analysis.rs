//! Closed-form performance and attack models with Monte-Carlo checks.
//!
//! Sizes are in bytes, times in seconds and bandwidths in bytes per second;
//! [`Bandwidth`] converts from bit rates at the edges.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::sharding::{Salt, ShardId, Sharder};
use crate::types::{sha256_concat, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum AnalysisError {
    #[error("at least two subchains are required")]
    DegenerateN,
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("occupancy ratio must lie strictly between 0 and 1")]
    RatioOutOfRange,
}

/// A link rate. Infinite bandwidth makes transfers instantaneous.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
pub struct Bandwidth {
    bytes_per_sec: f64,
}

impl Bandwidth {
    pub const INFINITE: Bandwidth = Bandwidth {
        bytes_per_sec: f64::INFINITY,
    };

    pub fn bytes_per_sec(v: f64) -> Self {
        Self { bytes_per_sec: v }
    }

    pub fn bits_per_sec(v: f64) -> Self {
        Self { bytes_per_sec: v / 8.0 }
    }

    pub fn kbit(v: f64) -> Self {
        Self::bits_per_sec(v * 1e3)
    }

    pub fn mbit(v: f64) -> Self {
        Self::bits_per_sec(v * 1e6)
    }

    pub fn as_bytes_per_sec(self) -> f64 {
        self.bytes_per_sec
    }

    pub fn as_bits_per_sec(self) -> f64 {
        self.bytes_per_sec * 8.0
    }

    pub fn is_infinite(self) -> bool {
        self.bytes_per_sec.is_infinite()
    }

    /// Seconds needed to move `bytes`.
    pub fn transfer_time(self, bytes: f64) -> f64 {
        if self.is_infinite() {
            0.0
        } else {
            bytes / self.bytes_per_sec
        }
    }
}

impl fmt::Debug for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{} bit/s", self.as_bits_per_sec())
        }
    }
}

/// Serialized as bits per second, or the string `"inf"`.
impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.as_bits_per_sec())
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bandwidth::bits_per_sec(v)),
            Raw::Text(t) => parse_bandwidth(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Parses `inf`, a plain bit rate, or a number with a `k`, `K`, `m` or `M`
/// suffix (decimal kilo/mega bits per second).
pub fn parse_bandwidth(text: &str) -> Result<Bandwidth, String> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinite") {
        return Ok(Bandwidth::INFINITE);
    }
    let (num, scale) = match t.chars().last() {
        Some('k' | 'K') => (&t[..t.len() - 1], 1e3),
        Some('m' | 'M') => (&t[..t.len() - 1], 1e6),
        Some('g' | 'G') => (&t[..t.len() - 1], 1e9),
        _ => (t, 1.0),
    };
    let v: f64 = num.parse().map_err(|_| format!("invalid bandwidth `{text}`"))?;
    if v <= 0.0 || !v.is_finite() {
        return Err(format!("bandwidth must be positive: `{text}`"));
    }
    Ok(Bandwidth::bits_per_sec(v * scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfParams {
    pub block_size: f64,
    pub tx_size: f64,
    /// Transactions one shard validates per second.
    pub shard_tps: f64,
    pub shard_count: u32,
    pub total_bw: Bandwidth,
    /// Per-shard bandwidth towards sibling shards.
    pub intra_bw: Bandwidth,
    /// Bytes exchanged with siblings per remotely owned input.
    pub tx_out_size: f64,
}

impl Default for PerfParams {
    fn default() -> Self {
        Self {
            block_size: 1e6,
            tx_size: 250.0,
            shard_tps: 1700.0,
            shard_count: 1,
            total_bw: Bandwidth::INFINITE,
            intra_bw: Bandwidth::INFINITE,
            tx_out_size: 112.0,
        }
    }
}

impl PerfParams {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let checks = [
            ("block_size", self.block_size),
            ("tx_size", self.tx_size),
            ("shard_tps", self.shard_tps),
            ("shard_count", self.shard_count as f64),
            ("total_bw", self.total_bw.as_bytes_per_sec()),
            ("intra_bw", self.intra_bw.as_bytes_per_sec()),
            ("tx_out_size", self.tx_out_size),
        ];
        match checks.iter().find(|(_, v)| v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
            Some((name, _)) => Err(AnalysisError::NonPositive(name)),
            None => Ok(()),
        }
    }

    pub fn txs_per_block(&self) -> f64 {
        self.block_size / self.tx_size
    }

    pub fn with_shards(self, shard_count: u32) -> Self {
        Self { shard_count, ..self }
    }
}

/// Probability that a transaction touching `k + 1` uniformly chosen subchains
/// out of `n` touches one particular subchain.
///
/// # Panics
///
/// If `n == 0`.
pub fn affected_fraction(n: u32, k: u32) -> f64 {
    assert!(n >= 1, "at least one subchain");
    1.0 - ((n as f64 - 1.0) / n as f64).powi(k as i32 + 1)
}

/// Expected number of occupied subchains after `alpha * n * s` shares land
/// uniformly on `n` subchains.
pub fn expected_occupancy(n: u32, s: f64, alpha: f64) -> f64 {
    let n = n as f64;
    n * (1.0 - ((n - 1.0) / n).powf(alpha * n * s))
}

/// Smallest miner fraction whose shares are expected to occupy a fraction `r`
/// of the `n` subchains when each subchain has `s` nodes.
pub fn miner_alpha(n: u32, s: f64, r: f64) -> Result<f64, AnalysisError> {
    if n < 2 {
        return Err(AnalysisError::DegenerateN);
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(AnalysisError::RatioOutOfRange);
    }
    if s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(AnalysisError::NonPositive("s"));
    }
    let n_f = n as f64;
    Ok((1.0 - r).ln() / (s * n_f * (1.0 - 1.0 / n_f).ln()))
}

/// Block transmission time over the node's total bandwidth.
pub fn btt(p: &PerfParams) -> f64 {
    p.total_bw.transfer_time(p.block_size)
}

/// Block processing time with free sibling communication.
pub fn bpt(p: &PerfParams) -> f64 {
    p.txs_per_block() / (p.shard_tps * p.shard_count as f64)
}

/// Transactions per second one node can receive and validate.
pub fn capacity(p: &PerfParams) -> f64 {
    1.0 / (p.total_bw.transfer_time(p.tx_size) + 1.0 / (p.shard_tps * p.shard_count as f64))
}

/// Block processing time when each shard fetches the outputs owned by its
/// siblings over its intra-node link before validating.
pub fn bpt_intra(p: &PerfParams) -> f64 {
    let l = p.shard_count as f64;
    p.txs_per_block() / l * (1.0 / p.shard_tps + (l - 1.0) / l * p.intra_bw.transfer_time(p.tx_out_size))
}

/// Expected number of per-shard references to outputs owned by a sibling.
pub fn expected_sibling_outputs(p: &PerfParams) -> f64 {
    let l = p.shard_count as f64;
    p.txs_per_block() / l * (l - 1.0) / l
}

/// Expected hash attempts to make one transaction land on a chosen shard at
/// each of `peers` nodes with `shard_count` shards.
pub fn grinding_attempts(shard_count: u32, peers: u32) -> f64 {
    (shard_count as f64).powi(peers as i32)
}

/// Years of hashing at `hash_rate` hashes per second to grind one such
/// transaction.
pub fn grinding_years(shard_count: u32, peers: u32, hash_rate: f64) -> f64 {
    const SECONDS_PER_YEAR: f64 = 365.25 * 24.0 * 3600.0;
    grinding_attempts(shard_count, peers) / hash_rate / SECONDS_PER_YEAR
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: u64,
}

impl Estimate {
    /// Distance from `expected` in standard errors.
    pub fn z_score(&self, expected: f64) -> f64 {
        if self.std_err == 0.0 {
            if (self.mean - expected).abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - expected) / self.std_err
        }
    }
}

/// Seed for one Monte-Carlo point, independent of evaluation order.
pub fn point_seed(seed: u64, tag: &str, coords: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(8 * coords.len());
    for c in coords {
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    let h = sha256_concat(&[&seed.to_le_bytes(), tag.as_bytes(), &bytes]);
    u64::from_le_bytes(h[..8].try_into().unwrap())
}

/// Fraction of trials in which at least one of `k + 1` uniform slots hits
/// subchain 0.
pub fn mc_affected_fraction(n: u32, k: u32, trials: u64, seed: u64) -> Estimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..trials {
        if (0..=k).any(|_| rng.random_range(0..n) == 0) {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    Estimate {
        mean: p,
        std_err: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
    }
}

/// Miner fraction at which placing shares uniformly reaches an average
/// occupied ratio `r`, found by simulating share placement and interpolating
/// between integer share counts.
pub fn mc_miner_alpha(n: u32, s: f64, r: f64, trials: u64, seed: u64) -> Result<f64, AnalysisError> {
    let closed = miner_alpha(n, s, r)?;
    let horizon = (closed * n as f64 * s).ceil() as usize * 2 + 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut occupied_sum = vec![0u64; horizon + 1];
    let mut seen = vec![false; n as usize];
    for _ in 0..trials {
        seen.iter_mut().for_each(|x| *x = false);
        let mut occupied = 0u64;
        for sum in occupied_sum.iter_mut().skip(1) {
            let c = rng.random_range(0..n) as usize;
            if !seen[c] {
                seen[c] = true;
                occupied += 1;
            }
            *sum += occupied;
        }
    }
    let ratio = |m: usize| occupied_sum[m] as f64 / (trials as f64 * n as f64);
    let Some(m) = (1..=horizon).find(|&m| ratio(m) >= r) else {
        return Ok(f64::INFINITY);
    };
    let (lo, hi) = (ratio(m - 1), ratio(m));
    let shares = (m - 1) as f64 + if hi > lo { (r - lo) / (hi - lo) } else { 1.0 };
    Ok(shares / (n as f64 * s))
}

/// Average per-shard count of transactions whose input is owned by another
/// shard, with transaction and input owners drawn uniformly.
pub fn mc_sibling_outputs(shard_count: u32, txs: u64, trials: u64, seed: u64) -> Estimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(trials as usize);
    for _ in 0..trials {
        let mut remote = 0u64;
        for _ in 0..txs {
            let tx_shard = rng.random_range(0..shard_count);
            let input_shard = rng.random_range(0..shard_count);
            if tx_shard == 0 && input_shard != 0 {
                remote += 1;
            }
        }
        samples.push(remote as f64);
    }
    mean_estimate(&samples)
}

pub fn mean_estimate(samples: &[f64]) -> Estimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate {
        mean,
        std_err: (var / n).sqrt(),
        trials: samples.len() as u64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrindTarget {
    pub salt: Salt,
    pub shard_count: u32,
    pub shard: ShardId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrindResult {
    pub txs: Vec<Transaction>,
    /// Hash attempts spent on each returned transaction.
    pub attempts: Vec<u64>,
}

impl GrindResult {
    pub fn total_attempts(&self) -> u64 {
        self.attempts.iter().sum()
    }
}

/// Searches nonces of `template` until `count` transactions map to the
/// chosen shard at every target. Nonces are tried in increasing order from
/// `start_nonce`.
pub fn grind_transactions(template: &Transaction, targets: &[GrindTarget], count: usize, start_nonce: u64) -> GrindResult {
    let sharders: Vec<(Sharder, ShardId)> = targets
        .iter()
        .map(|t| (Sharder::new(t.salt, t.shard_count).expect("target has at least one shard"), t.shard))
        .collect();
    let mut tx = template.clone();
    let mut nonce = start_nonce;
    let mut result = GrindResult {
        txs: Vec::with_capacity(count),
        attempts: Vec::with_capacity(count),
    };
    while result.txs.len() < count {
        let mut attempts = 0u64;
        loop {
            tx.nonce = nonce.to_le_bytes();
            nonce = nonce.wrapping_add(1);
            attempts += 1;
            let h = tx.hash();
            if sharders.iter().all(|(s, want)| s.shard_of(&h) == *want) {
                break;
            }
        }
        result.txs.push(tx.clone());
        result.attempts.push(attempts);
    }
    result
}

/// Standard error of the mean attempts per transaction when each attempt
/// succeeds with probability `shard_count^-peers`.
pub fn grinding_std_err(shard_count: u32, peers: u32, txs: usize) -> f64 {
    let p = 1.0 / grinding_attempts(shard_count, peers);
    ((1.0 - p) / (p * p) / txs as f64).sqrt()
}

/// One row per subchain count `n` with a closed-form and a Monte-Carlo column
/// for every `k`.
pub fn affected_fraction_csv(ns: &[u32], ks: &[u32], trials: u64, seed: u64) -> String {
    let points: Vec<(u32, u32)> = ns.iter().flat_map(|&n| ks.iter().map(move |&k| (n, k))).collect();
    let estimates: Vec<Estimate> = points
        .par_iter()
        .map(|&(n, k)| mc_affected_fraction(n, k, trials, point_seed(seed, "affected", &[n as u64, k as u64])))
        .collect();
    let mut out = String::from("n");
    for k in ks {
        write!(out, ",k{k}_closed,k{k}_mc").unwrap();
    }
    out.push('\n');
    for (row, &n) in ns.iter().enumerate() {
        write!(out, "{n}").unwrap();
        for (col, &k) in ks.iter().enumerate() {
            let est = estimates[row * ks.len() + col];
            write!(out, ",{:.6},{:.6}", affected_fraction(n, k), est.mean).unwrap();
        }
        out.push('\n');
    }
    out
}

/// One row per subchain count `n >= 2` with closed-form and Monte-Carlo miner
/// fractions for every `S`.
pub fn miner_alpha_csv(ns: &[u32], ss: &[f64], r: f64, trials: u64, seed: u64) -> Result<String, AnalysisError> {
    let mut out = String::from("n");
    for s in ss {
        write!(out, ",s{s}_closed,s{s}_mc").unwrap();
    }
    out.push('\n');
    for &n in ns.iter().filter(|&&n| n >= 2) {
        write!(out, "{n}").unwrap();
        for &s in ss {
            let mc = mc_miner_alpha(n, s, r, trials, point_seed(seed, "alpha", &[n as u64, s.to_bits()]))?;
            write!(out, ",{:.6},{:.6}", miner_alpha(n, s, r)?, mc).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn bandwidth_label(bw: Bandwidth) -> String {
    if bw.is_infinite() {
        "inf".to_string()
    } else {
        format!("{}", bw.as_bits_per_sec())
    }
}

/// Capacity for every (total bandwidth, shard count) pair.
pub fn capacity_csv(base: &PerfParams, bws: &[Bandwidth], shard_counts: &[u32]) -> String {
    let mut out = String::from("bandwidth_bps,shards,capacity_tps\n");
    for &bw in bws {
        for &l in shard_counts {
            let p = PerfParams {
                total_bw: bw,
                shard_count: l,
                ..*base
            };
            writeln!(out, "{},{l},{:.3}", bandwidth_label(bw), capacity(&p)).unwrap();
        }
    }
    out
}

/// Block processing time and implied throughput for every (intra-node
/// bandwidth, shard count) pair.
pub fn intra_bw_csv(base: &PerfParams, bws: &[Bandwidth], shard_counts: &[u32]) -> String {
    let mut out = String::from("intra_bw_bps,shards,bpt_s,throughput_tps\n");
    for &bw in bws {
        for &l in shard_counts {
            let p = PerfParams {
                intra_bw: bw,
                shard_count: l,
                ..*base
            };
            let t = bpt_intra(&p);
            writeln!(out, "{},{l},{:.6},{:.3}", bandwidth_label(bw), t, p.txs_per_block() / t).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_units() {
        assert_eq!(Bandwidth::mbit(8.0).as_bytes_per_sec(), 1e6);
        assert_eq!(parse_bandwidth("256k").unwrap(), Bandwidth::kbit(256.0));
        assert_eq!(parse_bandwidth("40M").unwrap(), Bandwidth::mbit(40.0));
        assert_eq!(parse_bandwidth("1G").unwrap(), Bandwidth::mbit(1000.0));
        assert!(parse_bandwidth("inf").unwrap().is_infinite());
        assert!(parse_bandwidth("-3").is_err());
        assert_eq!(Bandwidth::INFINITE.transfer_time(1e9), 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(PerfParams::default().validate().is_ok());
        let bad = PerfParams {
            tx_size: 0.0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(AnalysisError::NonPositive("tx_size")));
    }

    #[test]
    fn degenerate_alpha() {
        assert_eq!(miner_alpha(1, 300.0, 0.9), Err(AnalysisError::DegenerateN));
        assert_eq!(miner_alpha(4, 300.0, 1.0), Err(AnalysisError::RatioOutOfRange));
    }

    #[test]
    fn grind_without_constraints_takes_one_attempt() {
        let template = Transaction::new(Vec::new(), Vec::new(), 0);
        let r = grind_transactions(&template, &[], 5, 0);
        assert_eq!(r.attempts, vec![1; 5]);
    }

    #[test]
    fn csv_shapes() {
        let csv = affected_fraction_csv(&[1, 2], &[1, 3], 1000, 1);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,k1_closed,k1_mc,k3_closed,k3_mc");
        assert!(lines[2].starts_with("2,0.750000,"));
        let cap = capacity_csv(&PerfParams::default(), &[Bandwidth::INFINITE], &[1, 2]);
        assert_eq!(cap.lines().nth(1), Some("inf,1,1700.000"));
    }
}
