use crate::error::{Error, Result};
use crate::rng::Rng;

/// Train, validation and test indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder rounding of `total * weights[i]`; ties go to the
/// lower index.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut left = total.saturating_sub(counts.iter().sum());
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Seeded stratified three-way split. Overall split sizes are the rounded
/// fractions of the sample count; each class's share of every split is
/// within one sample of its exact proportion.
pub fn stratified_split(labels: &[usize], fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must be in [0, 1] and sum to 1, got {fractions:?}")));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let totals = apportion(labels.len(), &fractions);
    // Floors of every class quota, then one extra sample per (class, split)
    // cell until every class and split total is met, preferring cells with a
    // fractional remainder. Augmenting paths let later classes reroute
    // earlier choices.
    let quota = |c: usize, s: usize| by_class[c].len() as f64 * fractions[s];
    let mut counts: Vec<[usize; 3]> =
        (0..k).map(|c| std::array::from_fn(|s| quota(c, s).floor() as usize)).collect();
    let split_need: [usize; 3] =
        std::array::from_fn(|s| totals[s].saturating_sub((0..k).map(|c| counts[c][s]).sum()));
    let mut extra = vec![[false; 3]; k];
    for strict in [true, false] {
        let allowed = |c: usize, s: usize| fractions[s] > 0.0 && (!strict || quota(c, s) > quota(c, s).floor());
        for c in 0..k {
            loop {
                let placed = extra[c].iter().filter(|&&e| e).count();
                let need = by_class[c].len() - counts[c].iter().sum::<usize>() - placed;
                if need == 0 {
                    break;
                }
                let mut seen = [false; 3];
                if !augment(c, &mut extra, &split_need, &allowed, &mut seen) {
                    break;
                }
            }
        }
    }
    for (c, row) in extra.iter().enumerate() {
        for s in 0..3 {
            counts[c][s] += usize::from(row[s]);
        }
    }
    let mut out = SplitIndices::default();
    for (c, members) in by_class.iter().enumerate() {
        let mut members = members.clone();
        Rng::derived(seed, "split", c as u64).shuffle(&mut members);
        let [a, b, _] = counts[c];
        out.train.extend_from_slice(&members[..a]);
        out.val.extend_from_slice(&members[a..a + b]);
        out.test.extend_from_slice(&members[a + b..]);
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_unstable();
    }
    Ok(out)
}

/// Tries to give class `c` one more extra sample, moving other classes'
/// extras to different splits if needed. `seen` marks splits already
/// visited on this path.
fn augment(
    c: usize,
    extra: &mut [[bool; 3]],
    split_need: &[usize; 3],
    allowed: &dyn Fn(usize, usize) -> bool,
    seen: &mut [bool; 3],
) -> bool {
    for s in 0..3 {
        if seen[s] || extra[c][s] || !allowed(c, s) {
            continue;
        }
        seen[s] = true;
        if extra.iter().filter(|row| row[s]).count() < split_need[s] {
            extra[c][s] = true;
            return true;
        }
        for d in 0..extra.len() {
            if d != c && extra[d][s] && augment(d, extra, split_need, allowed, seen) {
                extra[d][s] = false;
                extra[c][s] = true;
                return true;
            }
        }
    }
    false
}
