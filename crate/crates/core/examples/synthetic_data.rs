//! Generates a small shape dataset, splits it into an incremental schedule
//! and writes one cloud as `.xyz`.

use cmgr::pointset::{build_schedule, generate_dataset, save_xyz, DatasetConfig, ScheduleConfig};

fn main() -> cmgr::Result<()> {
    let cfg = DatasetConfig::with_classes(6, 30, 7)?;
    let data = generate_dataset(&cfg)?;
    println!("{} clouds, {} classes", data.len(), data.classes.len());

    let schedule = build_schedule(
        &data.class_ids(),
        &ScheduleConfig { base_count: 4, tasks: 1, shots: 5, novel_per_task: Some(2), test_per_class: 10 },
        7,
    )?;
    schedule.check_disjoint()?;
    for (t, task) in schedule.tasks.iter().enumerate() {
        let classes: Vec<&str> = task.classes().collect();
        println!("task {t}: {classes:?}, {} train / {} test", task.train_len(), task.test_len());
    }

    let pc = &data.classes[0].1[0];
    let path = std::env::temp_dir().join(format!("{}.xyz", pc.id));
    save_xyz(pc, &path)?;
    println!("wrote {} ({} points, max norm {:.3})", path.display(), pc.len(), pc.max_norm());
    Ok(())
}
