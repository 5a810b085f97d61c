//! Reporting decision grid: selected MSM crossed with the outcome of the
//! delta-margin test on theta.

use serde::{Deserialize, Serialize};

/// Where the bootstrap interval for theta sits relative to the margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    /// Interval reaches the lower margin: theta <= delta is not ruled out.
    FailLow,
    /// Interval reaches the upper margin: theta >= 1 - delta is not ruled out.
    FailHigh,
    /// Interval lies strictly inside (delta, 1 - delta).
    Reject,
    /// Interval reaches both margins.
    Inconclusive,
}

impl TestOutcome {
    pub fn classify(lower: f64, upper: f64, delta: f64) -> Self {
        let low = lower <= delta;
        let high = upper >= 1.0 - delta;
        match (low, high) {
            (false, false) => TestOutcome::Reject,
            (true, false) => TestOutcome::FailLow,
            (false, true) => TestOutcome::FailHigh,
            (true, true) => TestOutcome::Inconclusive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub selected: String,
    pub constant_selected: bool,
    pub test_outcome: TestOutcome,
    pub theta_lower: f64,
    pub theta_upper: f64,
    pub delta: f64,
    /// Study-population calendar time-varying effect supported.
    pub varying_study_population: bool,
    /// Fixed-population calendar time-varying effect possible.
    pub varying_fixed_population: bool,
    pub reason: String,
    pub action: Vec<String>,
}

pub const COMMON: &str = "Report common effect";
pub const VARYING: &str = "Report calendar time-varying effect";
pub const ACKNOWLEDGE: &str = "Acknowledge changes across time driven by changes in underlying populations";
pub const STANDARDIZE_COMMON: &str =
    "Consider standardization to fixed population and reporting common effect in that population";
pub const STANDARDIZE_TREND: &str =
    "Consider standardization to fixed population to further study changes in treatment efficacy";
pub const INCONCLUSIVE: &str =
    "Decomposition inconclusive: the theta interval reaches both margins, so population shift and changes in efficacy cannot be separated";

/// Map (selected MSM, theta interval, delta) to a reporting decision.
pub fn recommend(selected: &str, constant_selected: bool, lower: f64, upper: f64, delta: f64) -> Recommendation {
    let outcome = TestOutcome::classify(lower, upper, delta);
    let (study, fixed, reason, action): (bool, bool, &str, Vec<&str>) = match (constant_selected, outcome) {
        (true, TestOutcome::FailLow) => (false, false, "No variation", vec![COMMON]),
        (true, _) => (false, true, "Variation not clinically meaningful", vec![COMMON]),
        (false, TestOutcome::FailLow) => {
            (true, false, "Covariate shift in effect modifiers", vec![ACKNOWLEDGE, STANDARDIZE_COMMON])
        }
        (false, TestOutcome::FailHigh) => (true, true, "Possible changes in treatment efficacy", vec![VARYING]),
        (false, TestOutcome::Reject) => (
            true,
            true,
            "Covariate shift in effect modifiers, possible changes in treatment efficacy",
            vec![VARYING, STANDARDIZE_TREND],
        ),
        (false, TestOutcome::Inconclusive) => (
            true,
            true,
            "Covariate shift in effect modifiers or changes in treatment efficacy",
            vec![VARYING, INCONCLUSIVE, STANDARDIZE_TREND],
        ),
    };
    Recommendation {
        selected: selected.to_string(),
        constant_selected,
        test_outcome: outcome,
        theta_lower: lower,
        theta_upper: upper,
        delta,
        varying_study_population: study,
        varying_fixed_population: fixed,
        reason: reason.to_string(),
        action: action.into_iter().map(String::from).collect(),
    }
}

/// "estimate (lower, upper)" on the native scale, or in percent.
pub fn format_interval(estimate: f64, lower: f64, upper: f64, percent: bool) -> String {
    if percent {
        format!("{:.1}% ({:.1}%, {:.1}%)", 100.0 * estimate, 100.0 * lower, 100.0 * upper)
    } else {
        format!("{estimate:.4} ({lower:.4}, {upper:.4})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_intervals() {
        assert_eq!(TestOutcome::classify(0.979, 0.992, 0.05), TestOutcome::FailHigh);
        assert_eq!(TestOutcome::classify(0.0, 0.03, 0.05), TestOutcome::FailLow);
        assert_eq!(TestOutcome::classify(0.2, 0.7, 0.05), TestOutcome::Reject);
        assert_eq!(TestOutcome::classify(0.01, 0.99, 0.05), TestOutcome::Inconclusive);
    }

    #[test]
    fn interval_format() {
        assert_eq!(format_interval(-0.198, -0.199, -0.196, true), "-19.8% (-19.9%, -19.6%)");
    }
}
