//! Classification task descriptions: the task name and its label mapping.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("a label mapping needs at least two labels, got {0}")]
    TooFewLabels(usize),
    #[error("label values must be a permutation of 0..{0}")]
    NotAPermutation(usize),
    #[error("duplicate label name {0:?}")]
    DuplicateLabel(String),
    #[error("label {0:?} is not in the mapping")]
    UnknownLabel(String),
}

/// Ordered label name → integer mapping, e.g. `negative: 0, neutral: 1, positive: 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    entries: Vec<(String, u32)>,
}

impl LabelMapping {
    pub fn new(entries: Vec<(String, u32)>) -> Result<Self, TaskError> {
        let n = entries.len();
        if n < 2 {
            return Err(TaskError::TooFewLabels(n));
        }
        let mut seen = vec![false; n];
        for (name, value) in &entries {
            let idx = *value as usize;
            if idx >= n || seen[idx] {
                return Err(TaskError::NotAPermutation(n));
            }
            seen[idx] = true;
            if entries.iter().filter(|(other, _)| other == name).count() > 1 {
                return Err(TaskError::DuplicateLabel(name.clone()));
            }
        }
        Ok(Self { entries })
    }

    /// Labels numbered by position.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, TaskError> {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.as_ref().to_string(), i as u32))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, u32)] {
        &self.entries
    }

    pub fn value_of(&self, name: &str) -> Result<u32, TaskError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| TaskError::UnknownLabel(name.to_string()))
    }

    pub fn name_of(&self, value: u32) -> Option<&str> {
        self.entries.iter().find(|(_, v)| *v == value).map(|(n, _)| n.as_str())
    }

    /// `{negative: 0, neutral: 1, positive: 2}`
    pub fn render_mapping(&self) -> String {
        let body: Vec<String> = self.entries.iter().map(|(n, v)| format!("{n}: {v}")).collect();
        format!("{{{}}}", body.join(", "))
    }

    /// `0 or 1 or 2`
    pub fn render_candidates(&self) -> String {
        let mut values: Vec<u32> = self.entries.iter().map(|(_, v)| *v).collect();
        values.sort_unstable();
        values.iter().map(u32::to_string).collect::<Vec<_>>().join(" or ")
    }

    /// `positive(2)`
    pub fn render_label(&self, name: &str) -> Result<String, TaskError> {
        Ok(format!("{name}({})", self.value_of(name)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub name: String,
    pub labels: LabelMapping,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, labels: LabelMapping) -> Self {
        Self {
            name: name.into(),
            labels,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }
}
