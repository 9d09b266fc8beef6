//! Cohen's kappa over per-turn coded sets.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{IMSet, IMType, TurnAnnotation};

/// Agreement must exceed this value to count as reliable.
pub const RELIABILITY_BAR: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KappaError {
    #[error("raters annotated different turns")]
    IndexMismatch,
    #[error("kappa is undefined: expected agreement is 1 or there are no items")]
    Degenerate,
}

/// Kappa for two equally long label sequences; item `i` of each rater is
/// compared for exact equality.
pub fn kappa_from_labels<T: Ord>(a: &[T], b: &[T]) -> Result<f64, KappaError> {
    if a.len() != b.len() {
        return Err(KappaError::IndexMismatch);
    }
    if a.is_empty() {
        return Err(KappaError::Degenerate);
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut marginals: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for x in a {
        marginals.entry(x).or_default().0 += 1;
    }
    for y in b {
        marginals.entry(y).or_default().1 += 1;
    }
    let expected: f64 = marginals
        .values()
        .map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();
    if (1.0 - expected).abs() < 1e-12 {
        return Err(KappaError::Degenerate);
    }
    Ok((observed - expected) / (1.0 - expected))
}

fn by_turn(annotations: &[TurnAnnotation]) -> Result<BTreeMap<u32, &IMSet>, KappaError> {
    let mut map = BTreeMap::new();
    for a in annotations {
        if map.insert(a.turn_index(), a.coded_types()).is_some() {
            return Err(KappaError::IndexMismatch);
        }
    }
    Ok(map)
}

fn aligned<'a>(
    a: &'a [TurnAnnotation],
    b: &'a [TurnAnnotation],
) -> Result<Vec<(&'a IMSet, &'a IMSet)>, KappaError> {
    let (ma, mb) = (by_turn(a)?, by_turn(b)?);
    if ma.keys().ne(mb.keys()) {
        return Err(KappaError::IndexMismatch);
    }
    Ok(ma.into_values().zip(mb.into_values()).collect())
}

/// Agreement on the full coded set of each turn.
pub fn cohens_kappa(a: &[TurnAnnotation], b: &[TurnAnnotation]) -> Result<f64, KappaError> {
    let pairs = aligned(a, b)?;
    let (la, lb): (Vec<&IMSet>, Vec<&IMSet>) = pairs.into_iter().unzip();
    kappa_from_labels(&la, &lb)
}

/// Presence/absence agreement for each IM type separately.
pub fn per_type_kappa(
    a: &[TurnAnnotation],
    b: &[TurnAnnotation],
) -> Result<BTreeMap<IMType, Result<f64, KappaError>>, KappaError> {
    let pairs = aligned(a, b)?;
    Ok(IMType::ALL
        .into_iter()
        .map(|t| {
            let la: Vec<bool> = pairs.iter().map(|(x, _)| x.contains(&t)).collect();
            let lb: Vec<bool> = pairs.iter().map(|(_, y)| y.contains(&t)).collect();
            (t, kappa_from_labels(&la, &lb))
        })
        .collect())
}

pub fn meets_reliability_bar(kappa: f64) -> bool {
    kappa > RELIABILITY_BAR
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y, n) in [
            (true, true, 20),
            (false, false, 15),
            (true, false, 5),
            (false, true, 10),
        ] {
            for _ in 0..n {
                a.push(x);
                b.push(y);
            }
        }
        let k = kappa_from_labels(&a, &b).unwrap();
        assert!((k - 0.4).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_mismatch() {
        assert_eq!(
            kappa_from_labels::<u8>(&[], &[]),
            Err(KappaError::Degenerate)
        );
        assert_eq!(
            kappa_from_labels(&[1, 1], &[1, 1]),
            Err(KappaError::Degenerate)
        );
        assert_eq!(
            kappa_from_labels(&[1], &[1, 2]),
            Err(KappaError::IndexMismatch)
        );
        let a = [TurnAnnotation::none(1)];
        let b = [TurnAnnotation::none(2)];
        assert_eq!(cohens_kappa(&a, &b), Err(KappaError::IndexMismatch));
    }

    #[test]
    fn bar() {
        assert!(meets_reliability_bar(0.76));
        assert!(!meets_reliability_bar(0.74));
        assert!(!meets_reliability_bar(0.75));
    }
}
