use pdmp_ergo::analysis::compute_constants;
use pdmp_ergo::coupling::simulate_coupled;
use pdmp_ergo::fm::fm_distance_between;
use pdmp_ergo::jump::{AdditiveBurst, JumpKernel};
use pdmp_ergo::pdmp::{sample_chain_at, simulate_chain, ModelSpec};
use pdmp_ergo::{
    build_preset, BaseMetric, EmpiricalMeasure, HybridMetric, HybridState, Overrides, PresetId, Purpose, Real,
    RngStream, SemiflowSpec,
};

fn gene_model<T: Real>() -> ModelSpec<T> {
    let flows = SemiflowSpec::affine(vec![T::of(-1.0), T::of(-2.0)], vec![vec![T::zero()], vec![T::zero()]]).unwrap();
    let jump = JumpKernel::Burst(AdditiveBurst::exponential(T::one()).unwrap());
    let half = T::of(0.5);
    let metric = HybridMetric::new(T::of(8.0), BaseMetric::Euclidean).unwrap();
    ModelSpec::new(flows, jump, vec![vec![half, half], vec![half, half]], T::one(), vec![T::zero()], metric)
        .unwrap()
        .with_nonnegative_domain()
}

#[test]
fn f32_and_f64_chains_share_their_random_draws() {
    let (m32, m64) = (gene_model::<f32>(), gene_model::<f64>());
    let x32 = HybridState::new(vec![1.0f32], 0).unwrap();
    let x64 = HybridState::new(vec![1.0f64], 0).unwrap();
    let t32 = simulate_chain(&m32, &x32, 20, &mut RngStream::for_task(7, 0, Purpose::Chain)).unwrap();
    let t64 = simulate_chain(&m64, &x64, 20, &mut RngStream::for_task(7, 0, Purpose::Chain)).unwrap();
    for (a, b) in t32.states.iter().zip(&t64.states) {
        assert_eq!(a.regime, b.regime);
        assert!((f64::from(a.y[0]) - b.y[0]).abs() <= 1e-4 * (1.0 + b.y[0].abs()));
    }
}

#[test]
fn f32_fm_distance_matches_f64() {
    let (m32, m64) = (gene_model::<f32>(), gene_model::<f64>());
    let s32 = |r| HybridState::new(vec![0.0f32], r).unwrap();
    let s64 = |r| HybridState::new(vec![0.0f64], r).unwrap();
    let a32 = sample_chain_at(&m32, &s32(0), 5, 300, 3).unwrap();
    let b32 = sample_chain_at(&m32, &s32(1), 5, 300, 4).unwrap();
    let a64 = sample_chain_at(&m64, &s64(0), 5, 300, 3).unwrap();
    let b64 = sample_chain_at(&m64, &s64(1), 5, 300, 4).unwrap();
    let d32 = fm_distance_between(
        &EmpiricalMeasure::from_samples(a32).unwrap(),
        &EmpiricalMeasure::from_samples(b32).unwrap(),
        m32.metric(),
    )
    .unwrap();
    let d64 = fm_distance_between(
        &EmpiricalMeasure::from_samples(a64).unwrap(),
        &EmpiricalMeasure::from_samples(b64).unwrap(),
        m64.metric(),
    )
    .unwrap();
    assert!((f64::from(d32) - d64).abs() < 1e-3, "{d32} vs {d64}");
}

#[test]
fn hand_built_gene_model_matches_the_preset() {
    let p = build_preset(PresetId::GeneExpression, &Overrides::default()).unwrap();
    let by_hand = gene_model::<f64>();
    let x = HybridState::new(vec![2.0], 1).unwrap();
    let a = simulate_chain(&p.model, &x, 15, &mut RngStream::for_task(11, 0, Purpose::Chain)).unwrap();
    let b = simulate_chain(&by_hand, &x, 15, &mut RngStream::for_task(11, 0, Purpose::Chain)).unwrap();
    assert_eq!(a.states, b.states);
}

#[test]
fn preset_pipeline_from_constants_to_coupling() {
    let p = build_preset(PresetId::ExampleTwoFlows, &Overrides::default()).unwrap();
    let k = compute_constants(&p.model, &p.flow_cert, &p.jump_cert).unwrap();
    assert!((k.a - p.expected.a).abs() < 1e-12);
    let (x1, x2) = &p.pair;
    let mut met = 0;
    for run in 0..200 {
        let mut rng = RngStream::for_task(5, run, Purpose::Coupled);
        let t = simulate_coupled(&p.model, x1, x2, 40, &mut rng, true).unwrap();
        let last = &t.states[40];
        if last.x1.regime == last.x2.regime {
            met += 1;
        }
    }
    // With π having full support every step has a fixed chance to meet.
    assert!(met > 190, "{met} of 200 coupled");
}
