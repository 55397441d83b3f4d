use serde::{Deserialize, Serialize};

use super::ValidateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeKind {
    #[default]
    AdjacentDiff,
    AnchorFirst,
    TsvalMinusTsecr,
}

/// Values that support exact subtraction with an invalid result on
/// overflow.
pub trait RelValue: Copy + PartialEq {
    const ZERO: Self;
    fn minus(self, other: Self) -> Option<Self>;
}

impl RelValue for i64 {
    const ZERO: Self = 0;
    fn minus(self, other: Self) -> Option<Self> {
        self.checked_sub(other)
    }
}

impl RelValue for f64 {
    const ZERO: Self = 0.0;
    fn minus(self, other: Self) -> Option<Self> {
        Some(self - other)
    }
}

fn transform_one<T: RelValue>(v: &[Option<T>], kind: RelativeKind, other: Option<&[Option<T>]>) -> Vec<Option<T>> {
    match kind {
        RelativeKind::AdjacentDiff => (0..v.len())
            .map(|i| if i == 0 { v[0].map(|_| T::ZERO) } else { v[i]?.minus(v[i - 1]?) })
            .collect(),
        RelativeKind::AnchorFirst => v.iter().map(|x| x.and_then(|x| x.minus(v[0]?))).collect(),
        RelativeKind::TsvalMinusTsecr => {
            let other = other.expect("checked by caller");
            v.iter().zip(other).map(|(a, b)| a.and_then(|a| a.minus((*b)?))).collect()
        }
    }
}

/// Applies a relative transform to per-session, time-ordered values. The
/// timestamp-echo transform subtracts `secondary` packet by packet.
pub fn relative_transform_values<T: RelValue>(
    sessions: &[Vec<Option<T>>],
    kind: RelativeKind,
    secondary: Option<&[Vec<Option<T>>]>,
) -> Result<Vec<Vec<Option<T>>>, ValidateError> {
    if kind == RelativeKind::TsvalMinusTsecr {
        let Some(sec) = secondary else {
            return Err(ValidateError::Invalid("tsval_minus_tsecr needs the echo values".into()));
        };
        if sec.len() != sessions.len() || sec.iter().zip(sessions).any(|(a, b)| a.len() != b.len()) {
            return Err(ValidateError::Invalid("echo values do not align with sessions".into()));
        }
    }
    Ok(sessions
        .iter()
        .enumerate()
        .map(|(i, s)| transform_one(s, kind, secondary.map(|sec| sec[i].as_slice())))
        .collect())
}
