use ringbody::harness::*;
use ringbody::perf_model::{fixtures, MachineConstants};
use ringbody::ring::Phase;
use ringbody::transport::Backend;

fn config(s: usize, theta: f64, steps: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.run.sites = fixtures::das3_sites().into_iter().cycle().take(s).collect();
    c.run.p_total = 4 * s as u64;
    if theta > 0.0 {
        c.run.theta = theta;
    } else {
        // the model needs theta > 0; the engine takes any theta from the schedule
        c.theta_schedule = Some(ringbody::nbody::ThetaSchedule::new(vec![(0, theta)]));
    }
    c.steps = steps;
    c
}

fn max_relative_position_gap(a: &ExperimentResult, b: &ExperimentResult) -> f64 {
    let (pa, pb) = (&a.snapshot.particles, &b.snapshot.particles);
    assert_eq!(pa.ids, pb.ids);
    let l = pa.box_len;
    pa.positions
        .iter()
        .zip(&pb.positions)
        .flat_map(|(x, y)| (0..3).map(move |k| ringbody::nbody::min_image(x[k] - y[k], l).abs() / l))
        .fold(0.0, f64::max)
}

#[test]
fn multi_site_matches_single_site() {
    let single = run_experiment(&config(1, 0.0, 10)).unwrap();
    for s in [2, 3] {
        let multi = run_experiment(&config(s, 0.0, 10)).unwrap();
        let gap = max_relative_position_gap(&single, &multi);
        assert!(gap <= 1e-10, "s={s}: {gap}");
    }
}

#[test]
fn exchange_count_per_step() {
    let r = run_experiment(&config(3, 0.5, 10)).unwrap();
    assert!(r.records.iter().all(|x| x.wan_exchanges == 18));
    let r = run_experiment(&config(1, 0.5, 10)).unwrap();
    assert!(r.records.iter().all(|x| x.wan_exchanges == 0));
}

#[test]
fn virtual_accounting_reproduces_model_terms() {
    let c = config(3, 0.5, 4);
    let r = run_experiment(&c).unwrap();
    let cmp = compare_with_model(&r.records, &c.run).unwrap();
    let w_l = cmp.get("w_l").unwrap();
    assert!((w_l.measured - c.run.network.lambda_wan * 18.0).abs() < 1e-15);
    assert!(w_l.relative_error() < 1e-12);
    assert!(cmp.get("w_b_measured_volume").unwrap().relative_error() < 1e-12);
    assert_eq!(cmp.get("mesh_bytes").unwrap().relative_error(), 0.0);
    let samples = cmp.get("sample_bytes").unwrap();
    assert!((samples.measured - samples.predicted).abs() <= 4.0, "{samples:?}");
    assert!(cmp.to_csv().starts_with("term,measured,predicted\n"));
}

#[test]
fn let_volume_grows_as_theta_shrinks() {
    let at = |theta| {
        // with two sites every exported node sits within half a slab of the
        // requester; four sites and single-body leaves let distance matter
        let mut c = config(4, theta, 1);
        c.n_leaf = 1;
        let r = run_experiment(&c).unwrap();
        r.records[0].phase_bytes(Phase::Let)
    };
    let (a, b) = (at(0.3), at(0.5));
    assert!(a > b, "{a} vs {b}");
}

#[test]
fn heterogeneous_sites_equalize_force_time() {
    let mut c = config(2, 0.5, 20);
    c.run.sites = vec![
        MachineConstants::new("fast", 2.5e-9, 5e-9, 2e-6).unwrap(),
        MachineConstants::new("slow", 5.0e-9, 5e-9, 2e-6).unwrap(),
    ];
    let r = run_experiment(&c).unwrap();
    let t = &r.records.last().unwrap().t_calc;
    let imbalance = (t[0] - t[1]).abs() / t[0].max(t[1]);
    assert!(imbalance < 0.05, "{t:?}");
}

#[test]
fn averaged_window_over_a_run() {
    let r = run_experiment(&config(2, 0.5, 10)).unwrap();
    let avg = average_window(&r.records, 10).unwrap();
    assert_eq!(avg.get("wan_exchanges").unwrap().mean, 13.0);
    assert_eq!(avg.get("wan_exchanges").unwrap().std, 0.0);
}

#[test]
fn tcp_backend_runs_the_same_pipeline() {
    let mut c = config(2, 0.0, 3);
    c.backend = Backend::Tcp;
    let tcp = run_experiment(&c).unwrap();
    let sim = run_experiment(&config(2, 0.0, 3)).unwrap();
    assert_eq!(tcp.records[0].clock, ClockKind::Wall);
    assert_eq!(tcp.snapshot, sim.snapshot);
    assert!(tcp.records.iter().all(|x| x.wan_exchanges == 13));
}

#[test]
fn plummer_sphere_runs_across_sites() {
    let mut c = config(2, 0.5, 3);
    c.initial = InitialConditions::Plummer { a: 0.05 };
    c.run.n_particles = 2000.0;
    let r = run_experiment(&c).unwrap();
    assert_eq!(r.snapshot.particles.len(), 2000);
}
