use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::FlatConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleConfig {
    /// Number of base classes in task 0.
    pub base_count: usize,
    /// Number of incremental tasks after the base task.
    pub tasks: usize,
    /// Training samples per novel class.
    pub shots: usize,
    /// Novel classes per incremental task. Derived from the class count when `None`.
    pub novel_per_task: Option<usize>,
    /// Held-out samples per class, taken before any training split.
    pub test_per_class: usize,
}

/// One class's sample ids within a task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSplit {
    pub class: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub index: usize,
    pub splits: Vec<ClassSplit>,
}

impl Task {
    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.splits.iter().map(|s| s.class.as_str())
    }

    pub fn train_len(&self) -> usize {
        self.splits.iter().map(|s| s.train.len()).sum()
    }

    pub fn test_len(&self) -> usize {
        self.splits.iter().map(|s| s.test.len()).sum()
    }
}

/// Ordered tasks with pairwise-disjoint class sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncrementalSchedule {
    pub tasks: Vec<Task>,
    pub shots: usize,
}

impl IncrementalSchedule {
    /// Total task count including the base task.
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn base_classes(&self) -> Vec<String> {
        self.tasks[0].classes().map(str::to_string).collect()
    }

    /// Every class seen in tasks `0..=upto`, in schedule order.
    pub fn classes_upto(&self, upto: usize) -> Vec<String> {
        self.tasks[..=upto.min(self.tasks.len() - 1)]
            .iter()
            .flat_map(|t| t.classes().map(str::to_string))
            .collect()
    }

    pub fn all_classes(&self) -> Vec<String> {
        self.classes_upto(self.tasks.len() - 1)
    }

    /// The task that introduced `class`.
    pub fn task_of(&self, class: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.classes().any(|c| c == class))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("schedule.tasks = {}\n", self.tasks.len()));
        out.push_str(&format!("schedule.shots = {}\n", self.shots));
        for t in &self.tasks {
            let names: Vec<&str> = t.classes().collect();
            out.push_str(&format!("task.{}.classes = {}\n", t.index, names.join(",")));
            for s in &t.splits {
                out.push_str(&format!("task.{}.train.{} = {}\n", t.index, s.class, s.train.join(",")));
                out.push_str(&format!("task.{}.test.{} = {}\n", t.index, s.class, s.test.join(",")));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg = FlatConfig::parse(text)?;
        let n: usize = cfg.require("schedule.tasks")?;
        let shots: usize = cfg.require("schedule.shots")?;
        let ids = |key: String| -> Vec<String> {
            cfg.get_str(&key)
                .map(|v| v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
                .unwrap_or_default()
        };
        let mut tasks = Vec::with_capacity(n);
        for t in 0..n {
            let classes: String = cfg.require(&format!("task.{t}.classes"))?;
            let splits = classes
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|c| ClassSplit {
                    class: c.to_string(),
                    train: ids(format!("task.{t}.train.{c}")),
                    test: ids(format!("task.{t}.test.{c}")),
                })
                .collect();
            tasks.push(Task { index: t, splits });
        }
        let schedule = Self { tasks, shots };
        schedule.check_disjoint()?;
        Ok(schedule)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.tasks {
            for c in t.classes() {
                if !seen.insert(c) {
                    return Err(Error::invalid(format!("class '{c}' appears in more than one task")));
                }
            }
        }
        Ok(())
    }
}

/// Partitions `classes` (name, sample ids) into a base task holding the first
/// `base_count` classes with all their training samples, followed by
/// incremental tasks with exactly `shots` training samples per novel class.
/// The seed controls which samples land in the test and few-shot splits.
pub fn build_schedule(
    classes: &[(String, Vec<String>)],
    cfg: &ScheduleConfig,
    seed: u64,
) -> Result<IncrementalSchedule> {
    if cfg.shots == 0 {
        return Err(Error::invalid("shots must be at least 1"));
    }
    if cfg.base_count == 0 {
        return Err(Error::invalid("base task needs at least one class"));
    }
    let names: HashSet<&str> = classes.iter().map(|(n, _)| n.as_str()).collect();
    if names.len() != classes.len() {
        return Err(Error::invalid("class names must be unique"));
    }
    let novel_per_task = match (cfg.novel_per_task, cfg.tasks) {
        (Some(k), _) => k,
        (None, 0) => 0,
        (None, t) => classes.len().saturating_sub(cfg.base_count) / t,
    };
    if cfg.tasks > 0 && novel_per_task == 0 {
        return Err(Error::invalid("not enough classes for any incremental task"));
    }
    let needed = cfg.base_count + cfg.tasks * novel_per_task;
    if needed > classes.len() {
        return Err(Error::invalid(format!(
            "schedule needs {needed} classes but only {} are available",
            classes.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |name: &str, ids: &[String], train_cap: Option<usize>| -> Result<ClassSplit> {
        let mut ids = ids.to_vec();
        ids.shuffle(&mut rng);
        if ids.len() < cfg.test_per_class + train_cap.unwrap_or(1) {
            return Err(Error::invalid(format!(
                "class '{name}' has {} samples, too few for the requested split",
                ids.len()
            )));
        }
        let rest = ids.split_off(cfg.test_per_class);
        let train = match train_cap {
            Some(k) => rest[..k].to_vec(),
            None => rest,
        };
        Ok(ClassSplit { class: name.to_string(), train, test: ids })
    };

    let mut tasks = Vec::with_capacity(cfg.tasks + 1);
    let base = classes[..cfg.base_count]
        .iter()
        .map(|(n, ids)| split(n, ids, None))
        .collect::<Result<Vec<_>>>()?;
    tasks.push(Task { index: 0, splits: base });
    for t in 0..cfg.tasks {
        let start = cfg.base_count + t * novel_per_task;
        let splits = classes[start..start + novel_per_task]
            .iter()
            .map(|(n, ids)| split(n, ids, Some(cfg.shots)))
            .collect::<Result<Vec<_>>>()?;
        tasks.push(Task { index: t + 1, splits });
    }
    let schedule = IncrementalSchedule { tasks, shots: cfg.shots };
    let base_len = schedule.tasks[0].train_len();
    if let Some(t) = schedule.tasks[1..].iter().find(|t| t.train_len() >= base_len) {
        return Err(Error::invalid(format!(
            "base task ({base_len} samples) must be larger than task {} ({} samples)",
            t.index,
            t.train_len()
        )));
    }
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn classes(n: usize, per: usize) -> Vec<(String, Vec<String>)> {
        (0..n)
            .map(|c| (format!("c{c}"), (0..per).map(|i| format!("c{c}_{i}")).collect()))
            .collect()
    }

    fn cfg(base: usize, tasks: usize, shots: usize) -> ScheduleConfig {
        ScheduleConfig { base_count: base, tasks, shots, novel_per_task: None, test_per_class: 0 }
    }

    #[test]
    fn ten_class_counting() {
        let s = build_schedule(&classes(10, 20), &cfg(6, 2, 5), 0).unwrap();
        assert_eq!(s.num_tasks(), 3);
        assert_eq!(s.tasks[0].splits.len(), 6);
        assert_eq!(s.tasks[1].splits.len(), 2);
        assert_eq!(s.tasks[2].splits.len(), 2);
        assert!(s.tasks[1..].iter().all(|t| t.splits.iter().all(|c| c.train.len() == 5)));
        assert!(s.tasks[0].splits.iter().all(|c| c.train.len() == 20));
    }

    #[test]
    fn full_scale_cross_domain_ratio() {
        let s = build_schedule(&classes(89, 30), &cfg(39, 10, 5), 1).unwrap();
        let base = s.tasks[0].splits.len();
        let novel: usize = s.tasks[1..].iter().map(|t| t.splits.len()).sum();
        assert_eq!((base, novel), (39, 50));
        assert!(s.tasks[1..].iter().all(|t| t.splits.len() == 5));
    }

    #[test]
    fn insufficient_classes_rejected() {
        let c = ScheduleConfig { novel_per_task: Some(3), ..cfg(6, 2, 5) };
        assert!(matches!(build_schedule(&classes(10, 20), &c, 0), Err(Error::InvalidArgument(_))));
        assert!(build_schedule(&classes(10, 20), &cfg(6, 2, 0), 0).is_err());
    }

    #[test]
    fn test_split_is_held_out() {
        let c = ScheduleConfig { test_per_class: 4, ..cfg(6, 2, 5) };
        let s = build_schedule(&classes(10, 20), &c, 3).unwrap();
        for t in &s.tasks {
            for sp in &t.splits {
                assert_eq!(sp.test.len(), 4);
                assert!(sp.train.iter().all(|id| !sp.test.contains(id)));
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let c = ScheduleConfig { test_per_class: 2, ..cfg(3, 2, 2) };
        let s = build_schedule(&classes(7, 10), &c, 9).unwrap();
        assert_eq!(IncrementalSchedule::from_text(&s.to_text()).unwrap(), s);
    }

    fn disjoint_fuzz(seed: u64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(4..40);
        let base = rng.gen_range(1..n - 1);
        let tasks = rng.gen_range(1..=(n - base));
        let shots = rng.gen_range(1..4);
        // keep every incremental task smaller than the base task
        let npt = ((n - base) / tasks).min((base * 12 - 1) / shots).max(1);
        let c = ScheduleConfig { novel_per_task: Some(npt), ..cfg(base, tasks, shots) };
        let s = build_schedule(&classes(n, 12), &c, seed).unwrap();
        for i in 0..s.tasks.len() {
            for j in i + 1..s.tasks.len() {
                let a: HashSet<&str> = s.tasks[i].classes().collect();
                assert!(s.tasks[j].classes().all(|c| !a.contains(c)), "tasks {i},{j} overlap");
            }
        }
    }

    #[test]
    fn hundred_random_schedules_are_disjoint() {
        for seed in 0..100 {
            disjoint_fuzz(seed);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn schedules_disjoint_for_any_seed(seed in any::<u64>()) {
            disjoint_fuzz(seed);
        }
    }
}
