use std::fmt;

/// Outcome of one property check.
///
/// `passed` holds exactly when `max_violation <= tolerance`; a NaN violation
/// counts as a failure.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub property: String,
    pub passed: bool,
    pub max_violation: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub witness: Option<String>,
    /// Additional measured quantities, in insertion order.
    pub metrics: Vec<(String, f64)>,
}

impl VerificationReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    /// Folds several reports into one whose violation is the largest
    /// violation-to-tolerance ratio and whose tolerance is 1.
    pub fn combine(property: &str, parts: &[VerificationReport]) -> VerificationReport {
        let mut b = ReportBuilder::new(property, 1.0);
        for part in parts {
            let ratio = if part.tolerance > 0.0 {
                part.max_violation / part.tolerance
            } else if part.max_violation > 0.0 || part.max_violation.is_nan() {
                f64::INFINITY
            } else {
                0.0
            };
            let ratio = if part.passed { ratio.min(1.0) } else { ratio.max(1.0 + 1e-9) };
            b.observe_many(ratio, part.samples, || {
                format!("{}: {}", part.property, part.witness.clone().unwrap_or_default())
            });
            for (k, v) in &part.metrics {
                b.metric(&format!("{}.{k}", part.property), *v);
            }
        }
        b.finish()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: max violation {:.3e} (tolerance {:.3e}, {} samples)",
            if self.passed { "PASS" } else { "FAIL" },
            self.property,
            self.max_violation,
            self.tolerance,
            self.samples
        )?;
        if let Some(w) = &self.witness {
            write!(f, "; witness {w}")?;
        }
        Ok(())
    }
}

/// Accumulates violations and keeps the witness of the worst failing sample.
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    property: String,
    tolerance: f64,
    samples: usize,
    max_violation: f64,
    witness: Option<String>,
    metrics: Vec<(String, f64)>,
}

impl ReportBuilder {
    pub fn new(property: &str, tolerance: f64) -> Self {
        Self {
            property: property.to_string(),
            tolerance,
            samples: 0,
            max_violation: 0.0,
            witness: None,
            metrics: Vec::new(),
        }
    }

    pub fn observe(&mut self, violation: f64, witness: impl FnOnce() -> String) {
        self.observe_many(violation, 1, witness);
    }

    pub fn observe_many(&mut self, violation: f64, samples: usize, witness: impl FnOnce() -> String) {
        self.samples += samples;
        let v = if violation.is_nan() { f64::INFINITY } else { violation };
        if v > self.max_violation {
            self.max_violation = v;
            if v > self.tolerance {
                self.witness = Some(witness());
            }
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.push((name.to_string(), value));
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn finish(self) -> VerificationReport {
        VerificationReport {
            passed: self.max_violation <= self.tolerance,
            property: self.property,
            max_violation: self.max_violation,
            tolerance: self.tolerance,
            samples: self.samples,
            witness: self.witness,
            metrics: self.metrics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_violation_and_tolerance() {
        let mut b = ReportBuilder::new("p", 0.5);
        b.observe(0.2, || "a".into());
        let r = b.clone().finish();
        assert!(r.passed && r.witness.is_none());
        b.observe(0.7, || "b".into());
        let r = b.finish();
        assert!(!r.passed);
        assert_eq!(r.witness.as_deref(), Some("b"));
        assert_eq!(r.samples, 2);
    }

    #[test]
    fn nan_fails() {
        let mut b = ReportBuilder::new("p", 1.0);
        b.observe(f64::NAN, || "nan".into());
        assert!(!b.finish().passed);
    }

    #[test]
    fn combined_report_fails_if_any_part_fails() {
        let ok = ReportBuilder::new("a", 1.0).finish();
        let mut bad = ReportBuilder::new("b", 1e-12);
        bad.observe(1e-11, || "w".into());
        let all = VerificationReport::combine("all", &[ok.clone(), bad.finish()]);
        assert!(!all.passed);
        assert!(VerificationReport::combine("all", &[ok]).passed);
    }
}
