//! Subject-level train/test assignment and the five cross-validation folds.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Set {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubjectInfo {
    pub id: &'static str,
    pub gender: Gender,
    pub glasses: bool,
    pub set: Set,
    pub samples: usize,
}

const fn s(id: &'static str, gender: Gender, glasses: bool, set: Set, samples: usize) -> SubjectInfo {
    SubjectInfo {
        id,
        gender,
        glasses,
        set,
        samples,
    }
}

use Gender::{Female, Male};
use Set::{Test, Train};

pub const SUBJECTS: [SubjectInfo; 12] = [
    s("p000", Male, false, Test, 9487),
    s("p001", Female, false, Train, 9464),
    s("p002", Male, true, Train, 18833),
    s("p003", Female, true, Train, 9812),
    s("p004", Male, true, Train, 10477),
    s("p005", Female, true, Test, 8666),
    s("p006", Male, true, Test, 9603),
    s("p007", Male, false, Train, 9688),
    s("p008", Male, false, Train, 8652),
    s("p009", Male, false, Train, 9469),
    s("p010", Male, true, Train, 19593),
    s("p011", Male, false, Train, 9230),
];

/// Validation subjects of folds 1 to 5; the remaining training subjects
/// form each fold's training subset.
pub const FOLD_VALIDATION: [&[&str]; 5] = [
    &["p001", "p002"],
    &["p004", "p009"],
    &["p007", "p008"],
    &["p003", "p011"],
    &["p010"],
];

pub fn subject(id: &str) -> Option<&'static SubjectInfo> {
    SUBJECTS.iter().find(|s| s.id == id)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub set: Set,
    /// 1-based fold whose validation subset holds the subject.
    pub validation_fold: Option<usize>,
}

pub fn split_assign(id: &str) -> Option<Membership> {
    let info = subject(id)?;
    let validation_fold = FOLD_VALIDATION.iter().position(|f| f.contains(&id)).map(|i| i + 1);
    Some(Membership {
        set: info.set,
        validation_fold,
    })
}

/// Training subjects of fold `k` (1-based).
pub fn fold_training(k: usize) -> Vec<&'static str> {
    let val = FOLD_VALIDATION[k - 1];
    SUBJECTS
        .iter()
        .filter(|s| s.set == Train && !val.contains(&s.id))
        .map(|s| s.id)
        .collect()
}

pub fn samples_in(ids: &[&str]) -> usize {
    ids.iter().filter_map(|id| subject(id)).map(|s| s.samples).sum()
}

/// Tables as JSON, for export.
pub fn tables_json() -> serde_json::Value {
    serde_json::json!({
        "subjects": SUBJECTS,
        "folds": FOLD_VALIDATION.iter().enumerate().map(|(i, v)| serde_json::json!({
            "fold": i + 1,
            "validation": v,
            "train": fold_training(i + 1),
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_assignments() {
        assert_eq!(split_assign("p000").unwrap().set, Test);
        assert_eq!(split_assign("p000").unwrap().validation_fold, None);
        assert_eq!(split_assign("p009").unwrap().validation_fold, Some(2));
        assert!(split_assign("p012").is_none());
    }

    #[test]
    fn fold_sizes_match_sample_totals() {
        let train: Vec<&str> = SUBJECTS.iter().filter(|s| s.set == Train).map(|s| s.id).collect();
        assert_eq!(samples_in(&train), 105_218);
        let test: Vec<&str> = SUBJECTS.iter().filter(|s| s.set == Test).map(|s| s.id).collect();
        assert_eq!(samples_in(&test), 27_756);
        let expected = [76_921, 85_272, 86_878, 86_176, 85_625];
        for (k, want) in expected.iter().enumerate() {
            assert_eq!(samples_in(&fold_training(k + 1)), *want, "fold {}", k + 1);
        }
    }
}
