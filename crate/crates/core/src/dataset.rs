use crate::error::{Error, Result};
use crate::loss::Obs;

/// Right-censored data: a column-major feature matrix with observed times and
/// event indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    names: Vec<String>,
    y: Vec<f64>,
    delta: Vec<bool>,
}

impl Dataset {
    pub fn new(columns: Vec<Vec<f64>>, names: Vec<String>, y: Vec<f64>, delta: Vec<bool>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::BadInput("dataset has no rows".into()));
        }
        if delta.len() != n {
            return Err(Error::BadInput("event indicator length differs from y".into()));
        }
        if names.len() != columns.len() {
            return Err(Error::BadInput("column names differ in count from columns".into()));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::BadInput(format!("column {name} has {} rows, expected {n}", col.len())));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::BadInput(format!("column {name} row {i} is not finite")));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadInput(format!("y row {i} is not finite")));
        }
        Ok(Self { columns, names, y, delta })
    }

    /// Row-major convenience constructor with generated names `x_1..x_p`.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, delta: Vec<bool>) -> Result<Self> {
        let p = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::BadInput("ragged feature rows".into()));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        let names = (1..=p).map(|j| format!("x_{j}")).collect();
        Self::new(columns, names, y, delta)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn obs(&self, i: usize) -> Obs {
        Obs::new(self.y[i], self.delta[i])
    }

    pub fn n_uncensored(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
            names: self.names.clone(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            delta: rows.iter().map(|&i| self.delta[i]).collect(),
        }
    }

    /// Copy without the listed columns.
    pub fn drop_columns(&self, cols: &[usize]) -> Dataset {
        let keep = |j: &usize| !cols.contains(j);
        Dataset {
            columns: (0..self.p()).filter(keep).map(|j| self.columns[j].clone()).collect(),
            names: (0..self.p()).filter(keep).map(|j| self.names[j].clone()).collect(),
            y: self.y.clone(),
            delta: self.delta.clone(),
        }
    }

    pub fn column_mut(&mut self, j: usize) -> &mut Vec<f64> {
        &mut self.columns[j]
    }

    /// Copy with every event indicator set to 1.
    pub fn ignoring_censoring(&self) -> Dataset {
        Dataset {
            delta: vec![true; self.n()],
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_ragged() {
        assert!(Dataset::from_rows(&[vec![1.0], vec![f64::NAN]], vec![1.0, 2.0], vec![true, true]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0], vec![1.0, 2.0]], vec![1.0, 2.0], vec![true, true]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0]], vec![1.0], vec![true, false]).is_err());
    }

    #[test]
    fn drop_and_select() {
        let d = Dataset::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], vec![1.0, 2.0], vec![true, false]).unwrap();
        let dropped = d.drop_columns(&[0, 2]);
        assert_eq!(dropped.p(), 1);
        assert_eq!(dropped.names(), &["x_2".to_string()]);
        assert_eq!(dropped.column(0), &[2.0, 5.0]);
        let s = d.select_rows(&[1]);
        assert_eq!(s.row(0), vec![4.0, 5.0, 6.0]);
        assert_eq!(s.delta(), &[false]);
    }
}
