use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Train share of a group of `n`, keeping at least one item on each side.
fn train_count(n: usize, fraction: f64) -> usize {
    let k = (fraction * n as f64).round() as usize;
    k.clamp(1, n - 1)
}

/// Splits item indices into `(train, validation)`, both in ascending order.
///
/// Stratified mode splits each class separately; a class with a single
/// member is placed in train with a warning.
pub fn split_indices(labels: &[usize], fraction: f64, stratified: bool, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.len() < 2 {
        return Err(Error::contract("a split needs at least 2 items"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::contract(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    if stratified {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        for (class, mut members) in groups {
            if members.len() == 1 {
                log::warn!("class {class} has a single member; it goes to the training split");
                train.push(members[0]);
                continue;
            }
            members.shuffle(&mut rng);
            let k = train_count(members.len(), fraction);
            train.extend_from_slice(&members[..k]);
            validation.extend_from_slice(&members[k..]);
        }
    } else {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        let k = train_count(all.len(), fraction);
        train.extend_from_slice(&all[..k]);
        validation.extend_from_slice(&all[k..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok((train, validation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn count(idx: &[usize], labels: &[usize], class: usize) -> usize {
        idx.iter().filter(|&&i| labels[i] == class).count()
    }

    #[test]
    fn stratified_ten() {
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let (train, val) = split_indices(&labels, 0.8, true, 3).unwrap();
        assert_eq!((count(&train, &labels, 0), count(&train, &labels, 1)), (4, 4));
        assert_eq!((count(&val, &labels, 0), count(&val, &labels, 1)), (1, 1));
    }

    #[test]
    fn unstratified_sizes_and_determinism() {
        let labels = vec![0; 100];
        let (train, val) = split_indices(&labels, 0.8, false, 11).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));
        assert_eq!(split_indices(&labels, 0.8, false, 11).unwrap(), (train, val));
    }

    #[test]
    fn singleton_class_goes_to_train() {
        let labels = [0, 0, 0, 0, 1];
        let (train, val) = split_indices(&labels, 0.8, true, 0).unwrap();
        assert!(train.contains(&4));
        assert_eq!(train.len() + val.len(), 5);
    }

    #[test]
    fn rejects_tiny_input() {
        assert!(split_indices(&[0], 0.8, false, 0).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_exhaustive_proportional(
            labels in prop::collection::vec(0usize..4, 2..120),
            seed in any::<u64>(),
        ) {
            let (train, val) = split_indices(&labels, 0.8, true, seed).unwrap();
            let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for c in 0..4 {
                let n = labels.iter().filter(|&&l| l == c).count();
                let t = count(&train, &labels, c) as f64;
                prop_assert!((t - 0.8 * n as f64).abs() <= 1.0);
            }
        }
    }
}
