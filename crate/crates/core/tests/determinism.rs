use condexit::config::parse_config;
use condexit::costing::{compute_cost, CostSpec};
use condexit::dynamics::{
    simulate_ensemble, ControlSpec, ParticleEnsemble, SimulationParams, TimeGrid,
};
use condexit::experiments::run_mimicking;
use condexit::geometry::Domain;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn ensemble(control: &ControlSpec) -> ParticleEnsemble {
    let p = SimulationParams::new(
        Domain::unit_ball(2).unwrap(),
        TimeGrid::new(0.5, 1e-3).unwrap(),
        vec![0.2, -0.1],
        3_000,
        99,
    );
    simulate_ensemble(control, &p).unwrap()
}

fn assert_bitwise_equal(a: &ParticleEnsemble, b: &ParticleEnsemble) {
    assert_eq!(a.len(), b.len());
    for i in 0..a.len() {
        assert_eq!(a.exit_time(i).to_bits(), b.exit_time(i).to_bits());
        assert_eq!(a.death_step(i), b.death_step(i));
        for k in 0..=a.grid().steps() {
            let (x, y) = (a.state(i, k), b.state(i, k));
            assert!(
                x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()),
                "particle {i} node {k}"
            );
            let (u, v) = (a.control(i, k).unwrap(), b.control(i, k).unwrap());
            assert!(u.iter().zip(v).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    for control in [
        ControlSpec::coin_flip(1.0),
        ControlSpec::running_max_centering(1.0),
    ] {
        let one = in_pool(1, || ensemble(&control));
        let four = in_pool(4, || ensemble(&control));
        assert_bitwise_equal(&one, &four);
        let c1 = in_pool(1, || {
            compute_cost(&one, &CostSpec::control_energy()).unwrap()
        });
        let c4 = in_pool(4, || {
            compute_cost(&four, &CostSpec::control_energy()).unwrap()
        });
        assert_eq!(c1.total.to_bits(), c4.total.to_bits());
        assert_eq!(c1.stderr_total.to_bits(), c4.stderr_total.to_bits());
    }
}

#[test]
fn experiment_reports_do_not_depend_on_thread_count() {
    let cfg = parse_config(
        r#"{"domain":{"kind":"interval","a":-1,"b":1},"horizon":0.5,"dt":0.005,"n_particles":3000,
        "control":{"variant":"coin_flip","scale":1},"checkpoints":[0.1,0.5]}"#,
    )
    .unwrap();
    let one = in_pool(1, || run_mimicking(&cfg).unwrap());
    let three = in_pool(3, || run_mimicking(&cfg).unwrap());
    assert_eq!(one, three);
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&three).unwrap()
    );
}
