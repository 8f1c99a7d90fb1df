use crate::error::{Error, Result};
use crate::rng::Rng;

/// Sizes of `k` near-equal parts of `n`: the first `n % k` parts get one more.
fn part_sizes(n: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..k).map(move |i| n / k + usize::from(i < n % k))
}

/// Random disjoint near-equal partitions of `0..n` (sizes differ by at most
/// one). Each partition is returned sorted.
pub fn partition_iid(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if n < k {
        return Err(Error::Data(format!("{n} samples cannot fill {k} clients")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derived(seed, "partition/iid", 0).shuffle(&mut order);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for size in part_sizes(n, k) {
        let mut part = order[start..start + size].to_vec();
        part.sort_unstable();
        out.push(part);
        start += size;
    }
    Ok(out)
}

/// Label-skewed partitions: indices sorted by `(label, index)` are cut into
/// `k * shards_per_client` contiguous near-equal shards, the shard order is
/// shuffled, and client `i` receives shards `i*s .. (i+1)*s`.
pub fn partition_label_skew(labels: &[usize], k: usize, shards_per_client: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || shards_per_client == 0 {
        return Err(Error::InvalidArgument("clients and shards per client must be positive".into()));
    }
    let shards = k * shards_per_client;
    if labels.len() < shards {
        return Err(Error::Data(format!("{} samples cannot fill {shards} shards", labels.len())));
    }
    let mut by_label: Vec<usize> = (0..labels.len()).collect();
    by_label.sort_by_key(|&i| (labels[i], i));
    let mut cuts = Vec::with_capacity(shards);
    let mut start = 0;
    for size in part_sizes(labels.len(), shards) {
        cuts.push(&by_label[start..start + size]);
        start += size;
    }
    let mut shard_order: Vec<usize> = (0..shards).collect();
    Rng::derived(seed, "partition/label_skew", 0).shuffle(&mut shard_order);
    Ok(shard_order
        .chunks(shards_per_client)
        .map(|ids| {
            let mut part: Vec<usize> = ids.iter().flat_map(|&s| cuts[s].iter().copied()).collect();
            part.sort_unstable();
            part
        })
        .collect())
}

/// Ascending ids of the `ceil(k * fraction)` clients taking part in `round`.
pub fn select_clients(k: usize, fraction: f64, seed: u64, round: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("participation fraction must be in (0, 1], got {fraction}")));
    }
    let m = ((k as f64 * fraction).ceil() as usize).clamp(1, k.max(1));
    let mut ids: Vec<usize> = (0..k).collect();
    if m < k {
        Rng::derived(seed, "select", round).shuffle(&mut ids);
        ids.truncate(m);
        ids.sort_unstable();
    }
    Ok(ids)
}
