//! Average accuracy, forgetting and the per-run report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

fn check_range(acc: &[f64]) -> Result<()> {
    if let Some((t, v)) = acc.iter().enumerate().find(|(_, v)| !(0.0..=100.0).contains(*v)) {
        return Err(Error::invalid(format!("accuracy of task {t} is {v}, outside [0, 100]")));
    }
    Ok(())
}

/// Mean of all task accuracies, base task included.
pub fn avg_accuracy(acc: &[f64]) -> Result<f64> {
    if acc.is_empty() {
        return Err(Error::invalid("accuracy list is empty"));
    }
    check_range(acc)?;
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

/// `Δ_A = 100/(T−1) · Σ_{t<T−1} |Acc_t − Acc_{t+1}| / Acc_t`, in percent.
pub fn forgetting(acc: &[f64]) -> Result<f64> {
    if acc.len() < 2 {
        return Err(Error::invalid(format!("forgetting needs at least 2 tasks, got {}", acc.len())));
    }
    check_range(acc)?;
    let mut sum = 0.0;
    for (t, w) in acc.windows(2).enumerate() {
        if w[0] == 0.0 {
            return Err(Error::DivisionByZero { task: t });
        }
        sum += (w[0] - w[1]).abs() / w[0];
    }
    Ok(100.0 * sum / (acc.len() - 1) as f64)
}

/// Half-up rounding to one decimal, for display only.
pub fn round1(v: f64) -> f64 {
    // the tiny bias keeps values like 0.25 written as 0.2499999… rounding up
    ((v * 10.0) + 0.5 + 1e-9).floor() / 10.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// `Acc_t` in percent, one per task.
    pub acc: Vec<f64>,
    /// Active class count at each task.
    pub num_classes: Vec<usize>,
    pub aa: f64,
    /// Undefined for a single task.
    pub delta_a: Option<f64>,
}

impl MetricsReport {
    pub fn new(acc: Vec<f64>, num_classes: Vec<usize>) -> Result<Self> {
        if num_classes.len() != acc.len() {
            return Err(Error::invalid("accuracy and class-count lists differ in length"));
        }
        let aa = avg_accuracy(&acc)?;
        let delta_a = if acc.len() >= 2 { Some(forgetting(&acc)?) } else { None };
        Ok(Self { acc, num_classes, aa, delta_a })
    }

    /// Task count `T`.
    pub fn tasks(&self) -> usize {
        self.acc.len()
    }

    pub fn summary(&self) -> String {
        match self.delta_a {
            Some(d) => format!("AA={:.1}\nΔ_A={:.1}", round1(self.aa), round1(d)),
            None => format!("AA={:.1}\nΔ_A=n/a", round1(self.aa)),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_index,num_classes,acc\n");
        for (t, (a, c)) in self.acc.iter().zip(&self.num_classes).enumerate() {
            let _ = writeln!(out, "{t},{c},{a}");
        }
        let _ = writeln!(out, "AA,{:.1}", round1(self.aa));
        match self.delta_a {
            Some(d) => {
                let _ = writeln!(out, "delta_A,{:.1}", round1(d));
            }
            None => out.push_str("delta_A,n/a\n"),
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "T = {}", self.tasks());
        for (t, (a, c)) in self.acc.iter().zip(&self.num_classes).enumerate() {
            let _ = writeln!(out, "task.{t}.num_classes = {c}");
            let _ = writeln!(out, "task.{t}.acc = {a}");
        }
        let _ = writeln!(out, "AA = {:.1}", round1(self.aa));
        match self.delta_a {
            Some(d) => {
                let _ = writeln!(out, "delta_A = {:.1}", round1(d));
            }
            None => out.push_str("delta_A = n/a\n"),
        }
        out
    }

    /// Parses [`Self::to_csv`] output. Footer rows must agree with the
    /// recomputed, display-rounded metrics.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, "task_index,num_classes,acc")) => {}
            _ => return Err(Error::Parse { line: 1, message: "expected header 'task_index,num_classes,acc'".into() }),
        }
        let mut acc = Vec::new();
        let mut classes = Vec::new();
        let mut footer = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let err = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
            match cells.as_slice() {
                [key @ ("AA" | "delta_A"), v] => footer.push((i + 1, key.to_string(), v.to_string())),
                [t, c, a] => {
                    if !footer.is_empty() {
                        return Err(err("task row after footer"));
                    }
                    let t: usize = t.parse().map_err(|_| err("bad task index"))?;
                    if t != acc.len() {
                        return Err(err("task indices must count up from 0"));
                    }
                    classes.push(c.parse().map_err(|_| err("bad class count"))?);
                    acc.push(a.parse().map_err(|_| err("bad accuracy"))?);
                }
                _ => return Err(err("expected 3 cells or a footer row")),
            }
        }
        let report = Self::new(acc, classes)?;
        report.check_footer(&footer)?;
        Ok(report)
    }

    /// Parses [`Self::to_text`] output.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut acc: Vec<Option<f64>> = Vec::new();
        let mut classes: Vec<Option<usize>> = Vec::new();
        let mut footer = Vec::new();
        let mut declared = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected 'key = value'"))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "T" => declared = Some(v.parse::<usize>().map_err(|_| err("bad task count"))?),
                "AA" | "delta_A" => footer.push((i + 1, k.to_string(), v.to_string())),
                _ => {
                    let parts: Vec<&str> = k.split('.').collect();
                    let ["task", t, field] = parts.as_slice() else { return Err(err("unknown key")) };
                    let t: usize = t.parse().map_err(|_| err("bad task index"))?;
                    if acc.len() <= t {
                        acc.resize(t + 1, None);
                        classes.resize(t + 1, None);
                    }
                    match *field {
                        "acc" => acc[t] = Some(v.parse().map_err(|_| err("bad accuracy"))?),
                        "num_classes" => classes[t] = Some(v.parse().map_err(|_| err("bad class count"))?),
                        _ => return Err(err("unknown task field")),
                    }
                }
            }
        }
        let missing = || Error::Parse { line: 0, message: "a task is missing its accuracy or class count".into() };
        let acc = acc.into_iter().collect::<Option<Vec<_>>>().ok_or_else(missing)?;
        let classes = classes.into_iter().collect::<Option<Vec<_>>>().ok_or_else(missing)?;
        if declared.is_some_and(|t| t != acc.len()) {
            return Err(Error::Parse { line: 0, message: "declared T disagrees with the task rows".into() });
        }
        let report = Self::new(acc, classes)?;
        report.check_footer(&footer)?;
        Ok(report)
    }

    fn check_footer(&self, footer: &[(usize, String, String)]) -> Result<()> {
        for (line, key, value) in footer {
            let expected = match (key.as_str(), self.delta_a) {
                ("AA", _) => format!("{:.1}", round1(self.aa)),
                (_, Some(d)) => format!("{:.1}", round1(d)),
                (_, None) => "n/a".to_string(),
            };
            if *value != expected {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("{key} is {value} but the task rows give {expected}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Csv,
    Text,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "text" => Ok(Self::Text),
            other => Err(Error::invalid(format!("report format must be 'csv' or 'text', got '{other}'"))),
        }
    }
}

pub fn write_report(report: &MetricsReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Text => report.to_text(),
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<MetricsReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Csv => MetricsReport::parse_csv(&text),
        ReportFormat::Text => MetricsReport::parse_text(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_sequences() {
        assert_eq!(avg_accuracy(&[50.0; 5]).unwrap(), 50.0);
        assert_eq!(forgetting(&[50.0; 5]).unwrap(), 0.0);
        assert!(avg_accuracy(&[]).is_err());
        assert!(forgetting(&[50.0]).is_err());
        assert!(avg_accuracy(&[101.0]).is_err());
    }

    #[test]
    fn zero_accuracy_names_the_task() {
        assert!(matches!(forgetting(&[80.0, 0.0, 10.0]), Err(Error::DivisionByZero { task: 1 })));
        // a zero in the last slot is never a divisor
        assert!(forgetting(&[80.0, 0.0]).is_ok());
    }

    #[test]
    fn hand_computed_forgetting() {
        // |100-50|/100 = 0.5, |50-25|/50 = 0.5
        assert!((forgetting(&[100.0, 50.0, 25.0]).unwrap() - 50.0).abs() < 1e-12);
        // growth counts as change too
        assert!((forgetting(&[50.0, 75.0]).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round1(10.25), 10.3);
        assert_eq!(round1(10.249), 10.2);
        assert_eq!(round1(59.35), 59.4);
        assert_eq!(round1(0.0), 0.0);
    }

    #[test]
    fn single_task_report() {
        let r = MetricsReport::new(vec![90.0], vec![8]).unwrap();
        assert_eq!(r.delta_a, None);
        assert_eq!(MetricsReport::parse_csv(&r.to_csv()).unwrap(), r);
        assert_eq!(MetricsReport::parse_text(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn tampered_footer_is_rejected() {
        let r = MetricsReport::new(vec![90.0, 80.0], vec![8, 10]).unwrap();
        let bad = r.to_csv().replace("AA,85.0", "AA,85.1");
        assert!(matches!(MetricsReport::parse_csv(&bad), Err(Error::Parse { .. })));
        assert!(MetricsReport::parse_csv("task_index,num_classes,acc\n").is_err());
    }

    proptest! {
        #[test]
        fn forgetting_is_scale_invariant(acc in prop::collection::vec(1.0f64..50.0, 2..12), k in 0.1f64..2.0) {
            let scaled: Vec<f64> = acc.iter().map(|a| a * k).collect();
            let a = forgetting(&acc).unwrap();
            let b = forgetting(&scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn mean_ignores_order(mut acc in prop::collection::vec(0.0f64..100.0, 1..12)) {
            let a = avg_accuracy(&acc).unwrap();
            acc.reverse();
            prop_assert!((a - avg_accuracy(&acc).unwrap()).abs() < 1e-9);
        }
    }
}
