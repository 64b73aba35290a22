use crate::error::{data_err, dim_err, Result};

/// Counts with rows indexed by the true class and columns by the prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(dim_err!("confusion matrix must be square"));
        }
        Ok(Self {
            classes: n,
            counts: rows.concat(),
        })
    }

    pub fn from_pairs(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(dim_err!("{} truths for {} predictions", truth.len(), pred.len()));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(data_err!("class pair ({truth}, {pred}) outside {} classes", self.classes));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.classes).map(|i| (0..self.classes).map(|j| self.get(i, j)).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes).map(|j| (0..self.classes).map(|i| self.get(i, j)).sum()).collect()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }
}

impl std::fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let width = self.counts.iter().map(|c| c.to_string().len()).max().unwrap_or(1).max(4);
        write!(f, "{:>8}", "true\\pred")?;
        for j in 0..self.classes {
            write!(f, " {:>width$}", j)?;
        }
        writeln!(f)?;
        for i in 0..self.classes {
            write!(f, "{:>9}", i)?;
            for j in 0..self.classes {
                write!(f, " {:>width$}", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// `trace / total`
pub fn micro_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(data_err!("accuracy of an empty confusion matrix"));
    }
    Ok(cm.trace() as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kappa {
    pub value: f64,
    /// Chance agreement was 1, so kappa is undefined and reported as 0.
    pub degenerate: bool,
}

/// Cohen's kappa from the empirical marginals.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<Kappa> {
    let total = cm.total();
    if total == 0 {
        return Err(data_err!("kappa of an empty confusion matrix"));
    }
    let n = total as f64;
    let p_o = cm.trace() as f64 / n;
    let p_e: f64 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| (r as f64 / n) * (c as f64 / n))
        .sum();
    if p_e == 1.0 {
        return Ok(Kappa {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Kappa {
        value: (p_o - p_e) / (1.0 - p_e),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let cm = ConfusionMatrix::from_counts(&[vec![25, 5], vec![10, 60]]).unwrap();
        assert_eq!(micro_accuracy(&cm).unwrap(), 0.85);
        let k = cohen_kappa(&cm).unwrap();
        assert!((k.value - 0.29 / 0.44).abs() < 1e-12);
        assert!((k.value - 0.65909).abs() < 1e-5);
    }

    #[test]
    fn extremes() {
        let diag = ConfusionMatrix::from_counts(&[vec![5, 0], vec![0, 7]]).unwrap();
        assert_eq!(micro_accuracy(&diag).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&diag).unwrap().value, 1.0);
        let off = ConfusionMatrix::from_counts(&[vec![0, 3], vec![4, 0]]).unwrap();
        assert_eq!(micro_accuracy(&off).unwrap(), 0.0);
        let single = ConfusionMatrix::from_counts(&[vec![9, 0], vec![0, 0]]).unwrap();
        assert_eq!(
            cohen_kappa(&single).unwrap(),
            Kappa {
                value: 0.0,
                degenerate: true
            }
        );
        let empty = ConfusionMatrix::new(3);
        assert!(micro_accuracy(&empty).is_err());
        assert!(cohen_kappa(&empty).is_err());
    }

    #[test]
    fn pairs_fill_rows_by_truth() {
        let cm = ConfusionMatrix::from_pairs(&[0, 0, 1, 2], &[0, 1, 1, 0], 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 0]]);
        assert_eq!(cm.row_sums(), vec![2, 1, 1]);
        assert!(ConfusionMatrix::from_pairs(&[3], &[0], 3).is_err());
        assert!(cm.to_string().contains("true\\pred"));
    }

    #[test]
    fn kappa_is_permutation_invariant() {
        let cm = ConfusionMatrix::from_counts(&[vec![4, 1, 2], vec![0, 6, 3], vec![2, 2, 9]]).unwrap();
        let perm = [2, 0, 1];
        let rows: Vec<Vec<u64>> = (0..3).map(|i| (0..3).map(|j| cm.get(perm[i], perm[j])).collect()).collect();
        let pm = ConfusionMatrix::from_counts(&rows).unwrap();
        assert!((cohen_kappa(&cm).unwrap().value - cohen_kappa(&pm).unwrap().value).abs() < 1e-15);
    }
}
