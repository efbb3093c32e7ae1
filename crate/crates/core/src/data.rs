use crate::error::{Error, Result};

/// A complete table of continuous columns plus a group label per row.
///
/// Values are stored column-major; group labels are indices into `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    groups: Vec<usize>,
    labels: Vec<String>,
}

impl GroupedDataset {
    pub fn new(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        groups: Vec<usize>,
        labels: Vec<String>,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Data(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name) {
                return Err(Error::Data(format!("duplicate column {name:?}")));
            }
        }
        let n = groups.len();
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Data(format!(
                    "column {name:?} has {} values, expected {n}",
                    col.len()
                )));
            }
            if let Some(k) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("column {name:?} row {k}: non-finite value")));
            }
        }
        if labels.is_empty() {
            return Err(Error::Data("at least one group label is required".into()));
        }
        if let Some(k) = groups.iter().position(|&g| g >= labels.len()) {
            return Err(Error::Data(format!("row {k}: group index out of range")));
        }
        Ok(Self {
            names,
            columns,
            groups,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.groups.len()
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn value(&self, row: usize, var: usize) -> f64 {
        self.columns[var][row]
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[k]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for &g in &self.groups {
            counts[g] += 1;
        }
        counts
    }

    /// Empirical group frequencies.
    pub fn group_frequencies(&self) -> Vec<f64> {
        let n = self.n_rows().max(1) as f64;
        self.group_counts().into_iter().map(|c| c as f64 / n).collect()
    }

    /// Rows belonging to each group, in row order.
    pub fn rows_by_group(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.labels.len()];
        for (k, &g) in self.groups.iter().enumerate() {
            rows[g].push(k);
        }
        rows
    }

    /// The same data with group indices permuted: row group `g` becomes `perm[g]`.
    pub fn relabel_groups(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_groups() {
            return Err(Error::Data("permutation length mismatch".into()));
        }
        let mut labels = vec![String::new(); perm.len()];
        for (g, &p) in perm.iter().enumerate() {
            labels[p] = self.labels[g].clone();
        }
        Self::new(
            self.names.clone(),
            self.columns.clone(),
            self.groups.iter().map(|&g| perm[g]).collect(),
            labels,
        )
    }
}
