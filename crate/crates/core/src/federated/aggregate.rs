use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::tensor::Scalar;

/// One client's contribution to an aggregation step.
#[derive(Debug, Clone, Copy)]
pub struct Contribution<'a, T> {
    pub client_id: usize,
    pub weights: &'a ParamSet<T>,
    pub n_k: usize,
}

fn ordered<'a, 'b, T: Scalar>(updates: &'b [Contribution<'a, T>]) -> Result<Vec<&'b Contribution<'a, T>>> {
    let first = updates.first().ok_or_else(|| Error::InvalidArgument("nothing to aggregate".into()))?;
    let mut sorted: Vec<_> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    for pair in sorted.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::InvalidArgument(format!("client {} contributes twice", pair[0].client_id)));
        }
    }
    for u in &sorted {
        if !u.weights.same_layout(first.weights) {
            return Err(Error::shape("aggregate", format!("client {} has a different layout", u.client_id)));
        }
        if u.n_k == 0 {
            return Err(Error::InvalidArgument(format!("client {} reports no samples", u.client_id)));
        }
    }
    Ok(sorted)
}

/// `sum_k n_k * x_k`, summed in ascending client id order.
fn weighted_sum<T: Scalar>(sorted: &[&Contribution<'_, T>]) -> ParamSet<T> {
    let mut acc = sorted[0].weights.clone();
    for (_, t) in acc.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = T::zero());
    }
    for u in sorted {
        let n = T::lit(u.n_k as f64);
        for ((_, a), (_, w)) in acc.iter_mut().zip(u.weights.iter()) {
            for (x, &y) in a.data_mut().iter_mut().zip(w.data()) {
                *x += n * y;
            }
        }
    }
    acc
}

/// Sample-weighted mean `sum_k n_k w_k / sum_k n_k` over the given clients.
/// A single client's weights are returned unchanged.
pub fn aggregate<T: Scalar>(updates: &[Contribution<'_, T>]) -> Result<ParamSet<T>> {
    let sorted = ordered(updates)?;
    if let [only] = sorted.as_slice() {
        return Ok(only.weights.clone());
    }
    let total = T::lit(sorted.iter().map(|u| u.n_k).sum::<usize>() as f64);
    let mut acc = weighted_sum(&sorted);
    for (_, t) in acc.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x /= total);
    }
    Ok(acc)
}

/// `base + (1/total) * sum_k n_k dw_k`, where `total` counts the samples of
/// every client, selected or not.
pub fn aggregate_delta<T: Scalar>(base: &ParamSet<T>, deltas: &[Contribution<'_, T>], total: usize) -> Result<ParamSet<T>> {
    let sorted = ordered(deltas)?;
    if !base.same_layout(sorted[0].weights) {
        return Err(Error::shape("aggregate_delta", "deltas do not match the base layout"));
    }
    let selected: usize = sorted.iter().map(|u| u.n_k).sum();
    if total < selected {
        return Err(Error::InvalidArgument(format!("total {total} smaller than selected samples {selected}")));
    }
    let n = T::lit(total as f64);
    let sum = weighted_sum(&sorted);
    let mut out = base.clone();
    for ((_, w), (_, d)) in out.iter_mut().zip(sum.iter()) {
        for (x, &y) in w.data_mut().iter_mut().zip(d.data()) {
            *x += y / n;
        }
    }
    Ok(out)
}

/// `w_k - base`, slot by slot.
pub fn delta<T: Scalar>(w_k: &ParamSet<T>, base: &ParamSet<T>) -> Result<ParamSet<T>> {
    if !w_k.same_layout(base) {
        return Err(Error::shape("delta", "layouts differ"));
    }
    let mut out = w_k.clone();
    for ((_, a), (_, b)) in out.iter_mut().zip(base.iter()) {
        for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
            *x -= y;
        }
    }
    Ok(out)
}
