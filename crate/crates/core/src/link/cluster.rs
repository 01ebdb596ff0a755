use crate::error::{Error, Result};
use crate::phy::CRow;

/// `|h1ᴴ h2| / (‖h1‖‖h2‖)`.
pub fn channel_correlation(h1: &CRow, h2: &CRow) -> Result<f64> {
    if h1.len() != h2.len() {
        return Err(Error::Dimension(format!("correlation of 1×{} and 1×{}", h1.len(), h2.len())));
    }
    let n1 = h1.norm();
    let n2 = h2.norm();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidArgument("correlation with a zero channel".into()));
    }
    let inner: num_complex::Complex64 = h1.iter().zip(h2.iter()).map(|(a, b)| a.conj() * b).sum();
    Ok((inner.norm() / (n1 * n2)).min(1.0))
}

/// Correlation that treats a zero channel as uncorrelated with everything.
fn correlation_or_zero(h1: &CRow, h2: &CRow) -> f64 {
    channel_correlation(h1, h2).unwrap_or(0.0)
}

/// One NOMA cluster: the head user plus the other members in the order
/// they joined (decode order is derived later).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Cluster {
    pub head: usize,
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        1 + self.members.len()
    }
}

/// Groups users into one cluster per head. `channels[u]` is user `u`'s
/// effective channel from the serving AP.
///
/// Members are placed in a canonical order (best head correlation first,
/// ties by user index) so the result does not depend on the order of
/// `members`. Each joins the admissible head with the highest correlation,
/// the lowest cluster index winning ties.
pub fn cluster_users(
    channels: &[CRow],
    heads: &[usize],
    members: &[usize],
    rf_chains: usize,
    max_cluster_size: usize,
) -> Result<Vec<Cluster>> {
    if heads.len() > rf_chains {
        return Err(Error::InvalidArgument(format!(
            "{} cluster heads for {rf_chains} RF chains",
            heads.len()
        )));
    }
    if heads.is_empty() && !members.is_empty() {
        return Err(Error::InvalidArgument("users to cluster but no cluster heads".into()));
    }
    if max_cluster_size < 1 || heads.len() * (max_cluster_size - 1) < members.len() {
        return Err(Error::InvalidArgument(format!(
            "{} users do not fit {} clusters of size {max_cluster_size}",
            members.len() + heads.len(),
            heads.len()
        )));
    }
    for &u in heads.iter().chain(members) {
        if u >= channels.len() {
            return Err(Error::InvalidArgument(format!("user {u} has no channel")));
        }
    }

    let corr: Vec<Vec<f64>> = members
        .iter()
        .map(|&u| heads.iter().map(|&h| correlation_or_zero(&channels[u], &channels[h])).collect())
        .collect();
    let mut order: Vec<usize> = (0..members.len()).collect();
    let best = |i: usize| corr[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    order.sort_by(|&a, &b| best(b).total_cmp(&best(a)).then(members[a].cmp(&members[b])));

    let mut clusters: Vec<Cluster> = heads.iter().map(|&h| Cluster { head: h, members: Vec::new() }).collect();
    for i in order {
        let mut choice: Option<usize> = None;
        for (n, c) in clusters.iter().enumerate() {
            if c.size() >= max_cluster_size {
                continue;
            }
            if choice.is_none_or(|best| corr[i][n] > corr[i][best]) {
                choice = Some(n);
            }
        }
        // Capacity was checked above, so some cluster always has room.
        let n = choice.expect("cluster capacity");
        clusters[n].members.push(members[i]);
    }
    Ok(clusters)
}

/// Channel-based heads for the conventional benchmark: the `count` users
/// with the strongest channels (ties by index), returned in index order.
pub fn strongest_users(channels: &[CRow], users: &[usize], count: usize) -> Vec<usize> {
    let mut ranked: Vec<usize> = users.to_vec();
    ranked.sort_by(|&a, &b| channels[b].norm().total_cmp(&channels[a].norm()).then(a.cmp(&b)));
    ranked.truncate(count);
    ranked.sort_unstable();
    ranked
}

/// Orders non-head members by effective gain, strongest first, ties by user
/// index. The head is decoded after all of them.
pub fn decoding_order(members: &[usize], gains: &[f64]) -> Result<Vec<usize>> {
    if members.len() != gains.len() {
        return Err(Error::Dimension(format!("{} members, {} gains", members.len(), gains.len())));
    }
    let mut idx: Vec<usize> = (0..members.len()).collect();
    idx.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(members[a].cmp(&members[b])));
    Ok(idx.into_iter().map(|i| members[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn row(v: &[(f64, f64)]) -> CRow {
        CRow::from_iterator(v.len(), v.iter().map(|&(r, i)| Complex64::new(r, i)))
    }

    #[test]
    fn correlation_cases() {
        let h = row(&[(1.0, 2.0), (-0.5, 0.3)]);
        assert!((channel_correlation(&h, &h).unwrap() - 1.0).abs() < 1e-15);
        let scaled = &h * Complex64::new(-2.0, 0.7);
        assert!((channel_correlation(&h, &scaled).unwrap() - 1.0).abs() < 1e-12);
        let a = row(&[(1.0, 0.0), (0.0, 0.0)]);
        let b = row(&[(0.0, 0.0), (0.0, 3.0)]);
        assert_eq!(channel_correlation(&a, &b).unwrap(), 0.0);
        assert!(channel_correlation(&a, &CRow::zeros(2)).is_err());
    }

    #[test]
    fn no_members_gives_singletons() {
        let ch = vec![row(&[(1.0, 0.0)]), row(&[(0.0, 1.0)])];
        let c = cluster_users(&ch, &[0, 1], &[], 2, 3).unwrap();
        assert_eq!(c, vec![Cluster { head: 0, members: vec![] }, Cluster { head: 1, members: vec![] }]);
    }

    #[test]
    fn aligned_member_joins_that_head() {
        let ch = vec![
            row(&[(1.0, 0.0), (0.0, 0.0)]),
            row(&[(0.0, 0.0), (1.0, 0.0)]),
            row(&[(0.1, 0.0), (2.0, 1.0)]),
        ];
        let c = cluster_users(&ch, &[0, 1], &[2], 2, 3).unwrap();
        assert_eq!(c[1].members, vec![2]);
    }

    #[test]
    fn ties_go_to_lowest_cluster() {
        let ch = vec![row(&[(1.0, 0.0), (0.0, 0.0)]), row(&[(0.0, 0.0), (1.0, 0.0)]), row(&[(1.0, 0.0), (1.0, 0.0)])];
        let c = cluster_users(&ch, &[0, 1], &[2], 2, 3).unwrap();
        assert_eq!(c[0].members, vec![2]);
    }

    #[test]
    fn too_many_heads_rejected() {
        let ch = vec![row(&[(1.0, 0.0)]); 3];
        assert!(cluster_users(&ch, &[0, 1, 2], &[], 2, 3).is_err());
    }

    #[test]
    fn capacity_limits_respected() {
        let ch = vec![
            row(&[(1.0, 0.0), (0.0, 0.0)]),
            row(&[(0.0, 0.0), (1.0, 0.0)]),
            row(&[(1.0, 0.0), (0.1, 0.0)]),
            row(&[(1.0, 0.0), (0.2, 0.0)]),
        ];
        let c = cluster_users(&ch, &[0, 1], &[2, 3], 2, 2).unwrap();
        assert_eq!(c[0].members, vec![2]);
        assert_eq!(c[1].members, vec![3]);
    }

    #[test]
    fn decode_order_cases() {
        assert_eq!(decoding_order(&[10, 11, 12], &[3.0, 1.0, 2.0]).unwrap(), vec![10, 12, 11]);
        assert_eq!(decoding_order(&[4], &[0.5]).unwrap(), vec![4]);
        assert_eq!(decoding_order(&[9, 2, 5], &[1.0, 1.0, 1.0]).unwrap(), vec![2, 5, 9]);
    }
}
