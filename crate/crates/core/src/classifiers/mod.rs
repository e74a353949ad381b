//! The two classifiers of the search space behind one trained-model type.

pub mod lda;
pub mod svm;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use lda::{train_lda_mahal, LdaMahalModel};
pub use svm::{train_svm, train_svm_rbf, Kernel, SvmModel, SvmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "LDAMahal")]
    LdaMahal,
    #[serde(rename = "SVM")]
    Svm,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 2] = [ClassifierKind::LdaMahal, ClassifierKind::Svm];

    pub fn id(self) -> &'static str {
        match self {
            ClassifierKind::LdaMahal => "LDAMahal",
            ClassifierKind::Svm => "SVM",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.id().eq_ignore_ascii_case(id))
            .ok_or_else(|| Error::UnsupportedMethod(format!("unknown classifier '{id}'")))
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedClassifier {
    LdaMahal(LdaMahalModel),
    Svm(SvmModel),
}

impl TrainedClassifier {
    pub fn fit(kind: ClassifierKind, x: &Matrix, y: &[usize], num_classes: usize) -> Result<Self> {
        Ok(match kind {
            ClassifierKind::LdaMahal => Self::LdaMahal(train_lda_mahal(x, y, num_classes, None)?),
            ClassifierKind::Svm => Self::Svm(train_svm_rbf(x, y, num_classes, &SvmParams::default())?),
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Self::LdaMahal(_) => ClassifierKind::LdaMahal,
            Self::Svm(_) => ClassifierKind::Svm,
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            Self::LdaMahal(m) => m.num_features,
            Self::Svm(m) => m.num_features,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Self::LdaMahal(m) => m.num_classes(),
            Self::Svm(m) => m.num_classes,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        match self {
            Self::LdaMahal(m) => m.predict_row(x),
            Self::Svm(m) => m.score_row(x).winner(),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        self.check(x)?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    /// Per-class scores whose argmax is the prediction: posterior-like
    /// probabilities for LDA, votes plus squashed margins for the SVM.
    pub fn scores_row(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::LdaMahal(m) => m.score_row(x),
            Self::Svm(m) => m.score_row(x).combined(),
        }
    }

    pub fn scores(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        self.check(x)?;
        Ok(x.iter_rows().map(|r| self.scores_row(r)).collect())
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.num_features() {
            return Err(Error::dim(self.num_features(), x.cols()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for k in ClassifierKind::ALL {
            assert_eq!(ClassifierKind::from_id(k.id()).unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.id()));
        }
        assert!(ClassifierKind::from_id("knn").is_err());
    }

    #[test]
    fn scores_argmax_matches_prediction() {
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0], vec![0.3, 0.1], vec![0.1, 0.4],
            vec![3.0, 3.0], vec![3.2, 2.9], vec![2.8, 3.1],
        ]).unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        for k in ClassifierKind::ALL {
            let m = TrainedClassifier::fit(k, &x, &y, 2).unwrap();
            for r in x.iter_rows() {
                let s = m.scores_row(r);
                let arg = (0..s.len()).fold(0, |b, c| if s[c] > s[b] { c } else { b });
                assert_eq!(arg, m.predict_row(r));
            }
            assert_eq!(m.predict(&x).unwrap(), y);
        }
    }
}
