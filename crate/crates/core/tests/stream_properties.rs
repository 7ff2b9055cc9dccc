use std::collections::BTreeMap;

use drift_core::corpus::{
    generate_synthetic_corpus, group_by_task, Instance, SyntheticSpec, TaskId,
};
use drift_core::stream::{
    build_stream, propose_schedule, stream_order, OrderPolicy, Stream, TaskSchedule,
};

fn default_stream(seed: u64) -> (TaskSchedule, BTreeMap<TaskId, Vec<Instance>>, Stream) {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 0).unwrap();
    let pools = group_by_task(&corpus.train);
    let schedule = propose_schedule(&pools, OrderPolicy::Random { seed }).unwrap();
    let stream = build_stream(&schedule, &pools, seed, 32).unwrap();
    (schedule, pools, stream)
}

fn key(i: &Instance) -> String {
    format!("{:?}", (i.task_id.as_str(), &i.tokens, &i.object_features))
}

#[test]
fn stream_conserves_the_instance_multiset() {
    let (_, pools, stream) = default_stream(3);
    let mut expected: Vec<String> = pools.values().flatten().map(key).collect();
    let mut got: Vec<String> = stream.instances.iter().map(key).collect();
    expected.sort();
    got.sort();
    assert_eq!(got, expected);
}

#[test]
fn per_task_mean_slot_tracks_mu() {
    for seed in 0..3 {
        let (schedule, _, stream) = default_stream(seed);
        for (i, task) in schedule.order.iter().enumerate() {
            let pos: Vec<usize> = stream
                .instances
                .iter()
                .enumerate()
                .filter(|(_, x)| &x.task_id == task)
                .map(|(p, _)| p)
                .collect();
            let mean = pos.iter().sum::<usize>() as f64 / pos.len() as f64;
            let tol = f64::max(2.0, 0.1 * schedule.sigma[i]);
            assert!(
                (mean - schedule.mu[i]).abs() <= tol,
                "task {task}: mean {mean} vs mu {} (tol {tol})",
                schedule.mu[i]
            );
        }
    }
}

#[test]
fn adjacent_tasks_overlap_without_hard_boundaries() {
    let (schedule, _, stream) = default_stream(5);
    let tasks: Vec<&TaskId> = stream.instances.iter().map(|i| &i.task_id).collect();
    for i in 0..schedule.len() - 1 {
        let overlaps = schedule.mu[i] + 2.0 * schedule.sigma[i]
            > schedule.mu[i + 1] - 2.0 * schedule.sigma[i + 1];
        if !overlaps {
            continue;
        }
        let (a, b) = (&schedule.order[i], &schedule.order[i + 1]);
        let found = tasks.windows(10).any(|w| w.contains(&a) && w.contains(&b));
        assert!(found, "no mixed 10-slot window between {a} and {b}");
    }
}

#[test]
fn same_inputs_same_stream() {
    let (_, _, a) = default_stream(7);
    let (_, _, b) = default_stream(7);
    assert_eq!(a.instances, b.instances);
    let (_, _, c) = default_stream(8);
    assert_ne!(a.instances, c.instances);
}

fn index_pools(sizes: &[(&str, usize)]) -> BTreeMap<TaskId, Vec<usize>> {
    sizes
        .iter()
        .map(|&(t, n)| (TaskId::new(t), (0..n).collect()))
        .collect()
}

#[test]
fn one_task_is_a_shuffle() {
    let s = propose_schedule(&index_pools(&[("A", 50)]), OrderPolicy::AscSize).unwrap();
    let order = stream_order(&s, 2);
    assert!(order.iter().all(|&(t, _)| t == 0));
    let items: Vec<usize> = order.iter().map(|&(_, i)| i).collect();
    assert_ne!(items, (0..50).collect::<Vec<_>>());
}

#[test]
fn two_equal_tasks_split_into_halves() {
    let s = propose_schedule(
        &index_pools(&[("A", 400), ("B", 400)]),
        OrderPolicy::AscSize,
    )
    .unwrap();
    let order = stream_order(&s, 0);
    let first_task = order[..400].iter().filter(|&&(t, _)| t == 0).count();
    assert!(first_task as f64 >= 0.9 * 400.0, "{first_task}");
}

#[test]
fn small_task_mean_within_one_sigma() {
    let s = propose_schedule(
        &index_pools(&[("A", 100), ("B", 300)]),
        OrderPolicy::AscSize,
    )
    .unwrap();
    for seed in 0..5 {
        let order = stream_order(&s, seed);
        let pos: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, &(t, _))| t == 0)
            .map(|(p, _)| p)
            .collect();
        let mean = pos.iter().sum::<usize>() as f64 / pos.len() as f64;
        assert!((mean - 50.0).abs() <= 50.0, "{mean}");
    }
}

#[test]
fn windows_are_monotone_in_fraction() {
    let (_, _, stream) = default_stream(1);
    let w95 = stream.task_windows(0.95);
    let w50 = stream.task_windows(0.5);
    for (t, &w) in &w95 {
        assert!(w50[t] <= w && w <= stream.num_batches());
    }
}
