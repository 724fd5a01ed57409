//! JUnit XML output for CI.

use std::fmt::Write as _;

use quick_xml::escape::escape;

use crate::scenario::ScenarioResult;

pub fn render(results: &[ScenarioResult]) -> String {
    let tests: usize = results.iter().map(|r| r.assertions.len()).sum();
    let failures: usize = results
        .iter()
        .map(|r| r.assertions.iter().filter(|a| !a.check.passed).count())
        .sum();
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<testsuites tests=\"{tests}\" failures=\"{failures}\">");
    for r in results {
        let failed = r.assertions.iter().filter(|a| !a.check.passed).count();
        let _ = writeln!(
            out,
            "  <testsuite name=\"{}\" tests=\"{}\" failures=\"{failed}\" time=\"{:.3}\">",
            escape(&r.name),
            r.assertions.len(),
            r.duration.as_secs_f64()
        );
        let _ = writeln!(out, "    <properties><property name=\"seed\" value=\"{}\"/></properties>", r.seed);
        for a in &r.assertions {
            let _ = write!(out, "    <testcase classname=\"{}\" name=\"{}\"", escape(&r.name), escape(&a.name));
            if a.check.passed {
                out.push_str("/>\n");
            } else {
                let _ = writeln!(out, ">\n      <failure message=\"{}\"/>\n    </testcase>", escape(&a.check.detail));
            }
        }
        let _ = writeln!(out, "    <system-out>{}</system-out>", escape(&r.trace()));
        out.push_str("  </testsuite>\n");
    }
    out.push_str("</testsuites>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AssertionResult, Check};
    use std::time::Duration;

    #[test]
    fn escapes_and_counts_failures() {
        let r = ScenarioResult {
            name: "x<y".into(),
            seed: 3,
            steps: Vec::new(),
            assertions: vec![
                AssertionResult { name: "a".into(), check: Check::pass("ok", vec![]) },
                AssertionResult { name: "b".into(), check: Check::fail("\"bad\" & worse") },
            ],
            head: "00".into(),
            cited: Default::default(),
            duration: Duration::from_millis(5),
        };
        let xml = render(&[r]);
        assert!(xml.contains("tests=\"2\" failures=\"1\""));
        assert!(xml.contains("name=\"x&lt;y\""));
        assert!(xml.contains("&quot;bad&quot; &amp; worse"));
    }
}
