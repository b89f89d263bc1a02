use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which supervision a batch trains against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Match the teacher distribution (KL divergence).
    #[default]
    Kd,
    /// Gold labels (cross-entropy).
    Ft,
}

/// `KL(teacher || student) = sum_j t_j ln(t_j / s_j)`; zero-probability
/// teacher entries contribute nothing.
pub fn kd_loss(teacher: &[f64], student: &[f64]) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::structural(format!(
            "teacher has {} classes, student {}",
            teacher.len(),
            student.len()
        )));
    }
    Ok(teacher
        .iter()
        .zip(student)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &s)| t * (t.ln() - s.ln()))
        .sum())
}

/// `-ln student[label]`.
pub fn ft_loss(label: usize, student: &[f64]) -> Result<f64> {
    match student.get(label) {
        Some(&p) => Ok(-p.ln()),
        None => Err(Error::LabelOutOfRange {
            label,
            n_classes: student.len(),
        }),
    }
}

pub fn one_hot(label: usize, n_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_classes];
    v[label] = 1.0;
    v
}
