use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Paper id → fold index. Serialized as a flat `{paper_id: fold}` object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FoldAssignment {
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, paper_id: &str) -> Option<usize> {
        self.folds.get(paper_id).copied()
    }

    pub fn num_folds(&self) -> usize {
        self.folds.values().max().map_or(0, |m| m + 1)
    }

    /// Paper ids of fold `k`, sorted.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.as_str())
            .collect()
    }
}

/// Shuffles paper ids with a seeded generator and deals them round-robin into
/// `k` folds, so fold sizes differ by at most one.
pub fn split_kfold<S: AsRef<str>>(
    paper_ids: &[S],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, CorpusError> {
    if k < 2 {
        return Err(CorpusError::BadFoldCount(k));
    }
    if paper_ids.len() < k {
        return Err(CorpusError::TooFewPapers {
            papers: paper_ids.len(),
            folds: k,
        });
    }
    let mut ids: Vec<&str> = paper_ids.iter().map(AsRef::as_ref).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut folds = BTreeMap::new();
    for (i, id) in ids.into_iter().enumerate() {
        if folds.insert(id.to_string(), i % k).is_some() {
            return Err(CorpusError::Validation {
                field: "id".into(),
                message: format!("duplicate paper id {id:?}"),
            });
        }
    }
    Ok(FoldAssignment { folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("paper-{i:02}")).collect()
    }

    #[test]
    fn twenty_papers_ten_folds() {
        let a = split_kfold(&ids(20), 10, 3).unwrap();
        for f in 0..10 {
            assert_eq!(a.members(f).len(), 2);
        }
        assert_eq!(a.num_folds(), 10);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = split_kfold(&ids(23), 5, 9).unwrap();
        assert_eq!(a, split_kfold(&ids(23), 5, 9).unwrap());
        assert_ne!(a, split_kfold(&ids(23), 5, 10).unwrap());
        let sizes: Vec<_> = (0..5).map(|f| a.members(f).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn errors() {
        assert!(matches!(split_kfold(&ids(3), 4, 0), Err(CorpusError::TooFewPapers { .. })));
        assert!(matches!(split_kfold(&ids(3), 1, 0), Err(CorpusError::BadFoldCount(1))));
        assert!(split_kfold(&["a", "a", "b"], 2, 0).is_err());
    }

    #[test]
    fn serializes_as_flat_map() {
        let a = split_kfold(&["x", "y"], 2, 0).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.starts_with("{\"x\":"));
        assert_eq!(serde_json::from_str::<FoldAssignment>(&s).unwrap(), a);
    }
}
